"""Acceptance criteria, one test per criterion.

Each test prints a single PASS/FAIL line (visible with ``pytest -s`` or in
failure output) and asserts the criterion at its stated tolerance and
runtime budget.

Criterion 4 is expected to fail: the claimed conditional-variance lower
bound with prefactor q(t)^(2(d-1)) is genuinely violated at d=2, nu=0.25
for finite separations (verified independently with 30-digit arithmetic;
see the d=2 counterexample pinned in test_verify).  The criterion is
implemented faithfully and left red rather than weakened.
"""

import json
import time
import warnings

import numpy as np
import pytest

from oracle_utils import lattice_min_quadratic
from qfield import streams
from qfield.covar import (FieldModel, canonical_metric, cov, cov1d, gram,
                          make_dyadic_grid)
from qfield.gauge import (GaugeSpec, check_kernel_monotone, check_q1,
                          check_q2, check_q3)
from qfield.modulus import entropy_integral_parts, run_modulus_pipeline
from qfield.verify import (anderson_check, anderson_instance,
                           condvar_report, conditional_variance_lsq,
                           conditional_variance_schur)


def _report(k, ok, elapsed, detail):
    line = f"CRITERION {k}: {'PASS' if ok else 'FAIL'} " \
           f"({elapsed:.1f}s) - {detail}"
    print("\n" + line)
    return line


def _unit_model(nu, d=1, **kw):
    return FieldModel(GaugeSpec("powerlaw", nu=nu), d,
                      (np.zeros(d), np.ones(d)), **kw)


def test_criterion_1_brownian_reduction():
    t0 = time.time()
    m = _unit_model(0.5)
    rng = np.random.default_rng(101)
    worst_cov = worst_met = 0.0
    for s, t in rng.random((1000, 2)):
        worst_cov = max(worst_cov, abs(cov1d(m, s, t) - min(s, t)))
    for s, t in rng.random((300, 2)):
        worst_met = max(worst_met, abs(
            canonical_metric(m, [s], [t]) - np.sqrt(abs(s - t))))
    el = time.time() - t0
    ok = worst_cov <= 1e-10 and worst_met <= 1e-10 and el < 5.0
    _report(1, ok, el, f"max |cov-min| = {worst_cov:.2e}, "
                       f"max |metric-sqrt| = {worst_met:.2e}")
    assert worst_cov <= 1e-10
    assert worst_met <= 1e-10
    assert el < 5.0


def test_criterion_2_diagonal_identity():
    t0 = time.time()
    rng = np.random.default_rng(202)
    gauges = [GaugeSpec("powerlaw", nu=round(0.1 * k, 1))
              for k in range(1, 11)]
    gauges += [GaugeSpec("logmodulated", nu=nu, gamma=ga)
               for nu in (0.25, 0.5) for ga in (0.5, 1.0)]
    worst = 0.0
    for g in gauges:
        m = FieldModel(g, 2, (np.zeros(2), np.full(2, g.T)))
        xs = rng.random((100, 2)) * g.T
        for x in xs:
            expected = float(np.prod(g.q2(x)))
            got = cov(m, x, x)
            if expected > 0:
                worst = max(worst, abs(got - expected) / expected)
    el = time.time() - t0
    ok = worst <= 1e-12 and el < 5.0
    _report(2, ok, el, f"max relative deviation = {worst:.2e} "
                       f"over {len(gauges)} gauges x 100 points")
    assert worst <= 1e-12
    assert el < 5.0


def test_criterion_3_condvar_oracle_equivalence():
    t0 = time.time()
    rng = np.random.default_rng(303)
    worst = 0.0
    lattice_checked = 0
    for _ in range(200):
        d = int(rng.integers(1, 4))
        nu = float(rng.choice([0.25, 0.5]))
        m = _unit_model(nu, d)
        x = 0.3 + 0.7 * rng.random(d)
        n = int(rng.integers(1, 7))
        preds = 0.3 + (x - 0.3)[None, :] * rng.random((n, d))
        a = conditional_variance_schur(m, x, preds)
        b = conditional_variance_lsq(m, x, preds)
        worst = max(worst, abs(a - b) / max(a, 1e-12))
        if n <= 3 and lattice_checked < 12:
            sigma2 = cov(m, x, x)
            k = np.array([cov(m, x, p) for p in preds])
            G = gram(m, preds)
            a_star = np.linalg.solve(G + 1e-12 * np.eye(n), k)
            if np.max(np.abs(a_star)) <= 2.5:
                lat_min, bound = lattice_min_quadratic(sigma2, k, G)
                assert b <= lat_min + 1e-12
                assert lat_min - b <= bound + 1e-10
                lattice_checked += 1
    el = time.time() - t0
    ok = worst <= 1e-8 and el < 60.0
    _report(3, ok, el, f"max relative route disagreement = {worst:.2e}; "
                       f"{lattice_checked} lattice cross-checks")
    assert worst <= 1e-8
    assert lattice_checked >= 8
    assert el < 60.0


def test_criterion_4_lnd_bound():
    t0 = time.time()
    strata = [(nu, d) for nu in (0.25, 0.5) for d in (1, 2)]
    minima = {}
    for nu, d in strata:
        m = _unit_model(nu, d)
        worst = np.inf
        for trial in range(125):
            rng = streams.stream(404, streams.TAG_LND, d * 1000 + trial)
            x = 0.5 + 0.5 * rng.random(d)
            n = int(rng.integers(1, 7))
            preds = 0.5 + (x - 0.5)[None, :] * rng.random((n, d))
            rep = condvar_report(m, x, preds, t=0.5)
            worst = min(worst, rep.ratio)
        minima[(nu, d)] = worst
    overall = min(minima.values())
    el = time.time() - t0
    ok = overall >= 1.0 - 1e-6 and el < 120.0
    detail = ", ".join(f"nu={nu} d={d}: {v:.6f}"
                       for (nu, d), v in minima.items())
    _report(4, ok, el, f"min ratios by stratum: {detail}")
    assert el < 120.0
    assert overall >= 1.0 - 1e-6, (
        "conditional-variance lower bound violated; per-stratum minima: "
        f"{detail} (the d=2, nu=0.25 violation is mathematically genuine; "
        "see tests/test_verify.py and the frozen counterexample)")


def test_criterion_5_metric_upper_bound():
    t0 = time.time()
    worst_slack = -np.inf
    for nu in (0.25, 0.5):
        for d in (1, 2, 3):
            g = GaugeSpec("powerlaw", nu=nu)
            m = _unit_model(nu, d)
            rng = np.random.default_rng(505 + d)
            prefactor = 2 * d * float(g.q2(1.0)) ** (d - 1)
            checked = 0
            while checked < 1000:
                x, y = rng.random((2, d))
                dist = float(np.linalg.norm(x - y))
                if dist == 0.0 or dist > 1.0:
                    continue
                dd2 = canonical_metric(m, x, y) ** 2
                cap = prefactor * float(g.q2(dist))
                worst_slack = max(worst_slack, dd2 / cap - 1.0)
                checked += 1
    el = time.time() - t0
    ok = worst_slack <= 1e-9 and el < 60.0
    _report(5, ok, el, f"max dd^2/cap - 1 = {worst_slack:.2e}")
    assert worst_slack <= 1e-9
    assert el < 60.0


def test_criterion_6_condition_checkers():
    t0 = time.time()
    for nu in (0.1, 0.25, 0.5, 1.0):
        g = GaugeSpec("powerlaw", nu=nu)
        assert check_q1(g).passed and check_q2(g).passed \
            and check_q3(g).passed, f"powerlaw nu={nu}"
    for nu in (0.25, 0.5):
        for ga in (0.5, 1.0):
            g = GaugeSpec("logmodulated", nu=nu, gamma=ga)
            assert check_q1(g).passed and check_q2(g).passed \
                and check_q3(g).passed, f"logmodulated nu={nu} gamma={ga}"
    dichotomy = all(
        check_kernel_monotone(GaugeSpec("powerlaw",
                                        nu=round(0.1 * k, 1))).passed
        == (round(0.1 * k, 1) <= 0.5)
        for k in range(1, 10))
    el = time.time() - t0
    ok = dichotomy and el < 30.0
    _report(6, ok, el, "both families certified; kernel dichotomy at "
                       "nu = 0.5 reproduced")
    assert dichotomy
    assert el < 30.0


def test_criterion_7_entropy_identity():
    t0 = time.time()
    triples = []
    for nu in (0.25, 0.5, 1.0):
        g = GaugeSpec("powerlaw", nu=nu)
        for frac in (0.5, 0.1, 0.02):
            triples.append((g, 1.0, frac * float(g.q(1.0))))
        triples.append((g, 0.7, 0.25 * float(g.q(0.7))))
    for nu, ga in ((0.5, 1.0), (0.25, 0.5)):
        g = GaugeSpec("logmodulated", nu=nu, gamma=ga)
        for frac in (0.6, 0.3, 0.1, 0.05):
            triples.append((g, g.T, frac * float(g.q(g.T))))
    assert len(triples) == 20
    worst = 0.0
    for g, diam, eps in triples:
        bp, direct = entropy_integral_parts(g, diam, eps)
        worst = max(worst, abs(bp - direct) / max(abs(bp), 1e-300))
    # the bound with the measured gauge constant
    g = GaugeSpec("powerlaw", nu=0.5)
    c1 = check_q3(g, 1.0).constant_estimate
    bound_ok = True
    for eps in (0.1, 0.03, 0.01):
        val, _ = entropy_integral_parts(g, 1.0, eps)
        qinv = float(g.q_inverse(eps))
        cap = (c1 + 1.0) * eps * np.sqrt(np.log(1.0 / qinv))
        bound_ok &= val <= cap * (1 + 1e-9)
    el = time.time() - t0
    ok = worst <= 1e-6 and bound_ok and el < 30.0
    _report(7, ok, el, f"max identity deviation = {worst:.2e}; "
                       f"bound with C1 = {c1:.3f} holds: {bound_ok}")
    assert worst <= 1e-6
    assert bound_ok
    assert el < 30.0


def test_criterion_8_conditioning_inequality():
    t0 = time.time()
    total_violations = 0
    for n in (2, 3, 4):
        rep = anderson_check(n, trials=20, mc_samples=100_000, seed=808,
                             strict=False)
        total_violations += rep.violations
    # independent-increment instance: equality within 4 SE
    A = np.array([[1.0, 0.0], [0.3, 0.8]])
    S01 = A @ A.T
    Sigma = np.zeros((3, 3))
    Sigma[:2, :2] = S01
    Sigma[2, :2] = Sigma[:2, 2] = S01[1, :]
    Sigma[2, 2] = S01[1, 1] + 0.7
    inst = anderson_instance(Sigma, 200_000, streams.stream(808, 999))
    equality_ok = abs(inst.diff) <= 4.0 * inst.se
    el = time.time() - t0
    ok = total_violations == 0 and equality_ok and el < 600.0
    _report(8, ok, el, f"violations: {total_violations}/60; independent "
                       f"case |diff| = {abs(inst.diff):.5f} "
                       f"<= 4 SE = {4 * inst.se:.5f}: {equality_ok}")
    assert total_violations == 0
    assert equality_ok
    assert el < 600.0


# shared by criteria 9 and 10
_MODULUS_RESOLUTIONS = [10, 12, 14]


def test_criterion_9_modulus_concentration_and_band():
    t0 = time.time()
    m = _unit_model(0.5, grid_limit=20000)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, rep = run_modulus_pipeline(m, _MODULUS_RESOLUTIONS, 20,
                                      seed=909, strict=False)
    med = rep.medians[-1]
    spread = rep.iqrs[-1] / med
    step = abs(rep.medians[-1] - rep.medians[-2]) / rep.medians[-2]
    el = time.time() - t0
    in_band = 1.15 <= med <= 1.60
    ok = in_band and spread <= 0.35 and step <= 0.15 and el < 900.0
    _report(9, ok, el, f"median = {med:.4f} in [1.15, 1.60]; "
                       f"IQR/median = {spread:.3f} <= 0.35; "
                       f"step 12->14 = {step:.3%} <= 15%")
    assert in_band
    assert spread <= 0.35
    assert step <= 0.15
    assert el < 900.0


def test_criterion_10_end_to_end_reproducibility(tmp_path):
    from qfield.cli import main

    t0 = time.time()
    cfg = tmp_path / "mod.ini"
    cfg.write_text(
        "[gauge]\nfamily = powerlaw\nnu = 0.5\n"
        "[field]\nd = 1\nbox_min = 0.0\nbox_max = 1.0\n"
        "grid_limit = 20000\n"
        "[run]\nresolutions = " +
        ",".join(map(str, _MODULUS_RESOLUTIONS)) +
        "\nreplicates = 20\nmaster_seed = 909\n")
    outs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        assert main(["modulus", "--config", str(cfg),
                     "--out", str(out)]) == 0
        outs.append(out)
    identical = (outs[0] / "traces.csv").read_bytes() == \
        (outs[1] / "traces.csv").read_bytes()
    report_identical = (outs[0] / "modulus_report.json").read_bytes() == \
        (outs[1] / "modulus_report.json").read_bytes()
    el = time.time() - t0
    ok = identical and report_identical
    _report(10, ok, el, f"traces byte-identical: {identical}; "
                        f"report byte-identical: {report_identical}")
    assert identical
    assert report_identical
