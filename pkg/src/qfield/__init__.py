"""qfield: gauge-isotropic Gaussian random fields.

Construction of the d-dimensional gauge Brownian sheet, exact and
approximate samplers, numerical verification of its covariance and
conditional-variance bounds, and empirical estimation of the uniform
modulus of continuity of its sample paths.
"""

__version__ = "0.1.0"

from . import covar, gauge, modulus, verify  # noqa: E402,F401
from .covar import FieldModel, GridSample  # noqa: F401
from .gauge import GaugeSpec  # noqa: F401
