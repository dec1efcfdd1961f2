"""Command-line front end.

Commands: ``gauge-check``, ``simulate``, ``verify``, ``modulus``,
``entropy-integral``.  Every command reads one INI-style configuration
file with flat sections ``gauge`` / ``field`` / ``run`` / ``output``;
command-line flags override file keys.  Runs with a fixed master seed are
bit-reproducible: the same configuration produces byte-identical primary
outputs, and every output embeds the configuration hash and build
identifier in its sidecar.

Exit codes: 0 all assertions pass, 1 a mathematical assertion failed,
2 configuration or I/O error.  Logging verbosity comes from the
``QFIELD_LOG`` environment variable (error, warn, info, debug).
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import pathlib
import sys
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import __version__
from .covar import (FieldModel, QuadSettings, CholeskySampler,
                    make_dyadic_grid, sample_moving_average, sample_spectral,
                    write_grid_sample)
from .errors import (ConfigError, DomainError, FactorizationError,
                     InsufficientDataError, NumericalError, QFieldError,
                     StarvedScaleWarning, VerificationError)
from .gauge import (GaugeSpec, check_kernel_monotone, check_q1, check_q2,
                    check_q3)
from .modulus import (entropy_integral_parts, run_modulus_pipeline,
                      write_traces_csv)
from .verify import anderson_check, isotropy_bounds, lnd_check

log = logging.getLogger("qfield.cli")

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_CONFIG = 2


@dataclass
class RunConfig:
    gauge: GaugeSpec
    field: Optional[FieldModel]
    run: dict
    out_dir: pathlib.Path
    formats: tuple
    config_hash: str
    master_seed: int
    threads: int

    def sidecar(self) -> dict:
        return {"config_hash": self.config_hash, "build": __version__}


# ---------------------------------------------------------------------------
# configuration parsing

def _parse_floats(text: str) -> list:
    return [float(v) for v in text.replace(",", " ").split()]


def _parse_ints(text: str) -> list:
    return [int(v) for v in text.replace(",", " ").split()]


def _gauge_from_section(sec) -> GaugeSpec:
    family = sec.get("family", "powerlaw").strip().lower()
    kwargs = {"family": family}
    if "nu" in sec:
        kwargs["nu"] = float(sec["nu"])
    if "gamma" in sec:
        kwargs["gamma"] = float(sec["gamma"])
    if "t" in sec:
        kwargs["T"] = float(sec["t"])
    if family == "tabulated":
        path = sec.get("table_path")
        if not path:
            raise ConfigError("tabulated gauge requires table_path")
        rows = np.loadtxt(path, delimiter=",", dtype=float)
        kwargs["table"] = (rows[:, 0], rows[:, 1])
    return GaugeSpec(**kwargs)


def load_config(path: str, overrides: dict) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        read = parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config file {path!r}: {exc}")
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")
    if "gauge" not in parser:
        raise ConfigError("config must have a [gauge] section")
    try:
        gauge = _gauge_from_section(parser["gauge"])
    except (QFieldError, ValueError, OSError) as exc:
        raise ConfigError(f"invalid gauge section: {exc}") from exc

    field = None
    if "field" in parser:
        sec = parser["field"]
        try:
            d = sec.getint("d", 1)
            lo = _parse_floats(sec.get("box_min", "0"))
            hi = _parse_floats(sec.get("box_max", str(gauge.T)))
            if len(lo) == 1:
                lo = lo * d
            if len(hi) == 1:
                hi = hi * d
            quad = QuadSettings(rtol=sec.getfloat("quad_rtol", 1e-9))
            field = FieldModel(gauge, d, (np.array(lo), np.array(hi)),
                               quad=quad,
                               grid_limit=sec.getint("grid_limit", 16384))
        except (QFieldError, ValueError) as exc:
            raise ConfigError(f"invalid field section: {exc}") from exc

    run = dict(parser["run"]) if "run" in parser else {}
    out_sec = parser["output"] if "output" in parser else {}
    out_dir = pathlib.Path(overrides.get("out")
                           or out_sec.get("dir", "qfield-out"))
    formats = tuple((overrides.get("format")
                     or out_sec.get("formats", "csv,json")).replace(
                         " ", "").split(","))
    if overrides.get("seed") is not None:
        seed = int(overrides["seed"])
    else:
        seed = int(run.get("master_seed", "0"))
    if seed < 0 or seed >= 2 ** 64:
        raise ConfigError("master_seed must be an unsigned 64-bit integer")
    if overrides.get("threads") is not None:
        threads = int(overrides["threads"])
    else:
        threads = int(run.get("threads", os.cpu_count() or 1))
    if threads < 1:
        raise ConfigError("threads must be positive")

    # the hash covers everything that determines output content; where
    # results land (out dir, format) and the parallelism degree do not
    blob = json.dumps({
        "sections": {s: dict(parser[s]) for s in parser.sections()},
        "seed": seed,
    }, sort_keys=True).encode()
    return RunConfig(gauge=gauge, field=field, run=run, out_dir=out_dir,
                     formats=formats,
                     config_hash=hashlib.sha256(blob).hexdigest()[:16],
                     master_seed=seed, threads=threads)


def _require_field(cfg: RunConfig) -> FieldModel:
    if cfg.field is None:
        raise ConfigError("this command requires a [field] section")
    return cfg.field


def _np_default(obj):
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_json(cfg: RunConfig, name: str, payload: dict) -> pathlib.Path:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    payload = dict(payload)
    payload.update(cfg.sidecar())
    path = cfg.out_dir / name
    path.write_text(json.dumps(payload, indent=2, sort_keys=True,
                               default=_np_default) + "\n")
    return path


# ---------------------------------------------------------------------------
# commands

def cmd_gauge_check(cfg: RunConfig) -> int:
    requested = cfg.run.get("checks", "q1,q2,q3,kernel").replace(
        " ", "").split(",")
    tau0 = float(cfg.run["tau0"]) if "tau0" in cfg.run else None
    q3_T = float(cfg.run["q3_t"]) if "q3_t" in cfg.run else None
    runners = {
        "q1": lambda: check_q1(cfg.gauge, tau0),
        "q2": lambda: check_q2(cfg.gauge, tau0),
        "q3": lambda: check_q3(cfg.gauge, q3_T),
        "kernel": lambda: check_kernel_monotone(cfg.gauge),
    }
    unknown = [c for c in requested if c not in runners]
    if unknown:
        raise ConfigError(f"unknown gauge checks: {unknown}")
    reports = {name: runners[name]() for name in requested}
    all_passed = all(r.passed for r in reports.values())
    _write_json(cfg, "gauge_check.json", {
        "gauge": cfg.gauge.params(),
        "passed": all_passed,
        "reports": {k: v.to_dict() for k, v in reports.items()},
    })
    for name, rep in reports.items():
        log.info("gauge check %s: %s", name,
                 "pass" if rep.passed else "FAIL")
    return EXIT_OK if all_passed else EXIT_ASSERTION


def cmd_simulate(cfg: RunConfig) -> int:
    m = _require_field(cfg)
    n = int(cfg.run.get("resolution", "6"))
    replicates = int(cfg.run.get("replicates", "1"))
    sampler_kind = cfg.run.get("sampler", "cholesky").strip().lower()
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    points, axes = make_dyadic_grid(m, n)
    try:
        if sampler_kind == "cholesky":
            sampler = CholeskySampler(m, points, resolution=n, axes=axes)
            draw = lambda r: sampler.draw(cfg.master_seed, r)  # noqa: E731
        elif sampler_kind == "spectral":
            rank = int(cfg.run.get("rank", str(points.shape[0])))
            draw = lambda r: sample_spectral(  # noqa: E731
                m, points, cfg.master_seed, rank, replicate_index=r,
                axes=axes)
        elif sampler_kind == "moving_average":
            oversample = int(cfg.run.get("oversample", "64"))
            draw = lambda r: sample_moving_average(  # noqa: E731
                m, axes[0], cfg.master_seed, oversample, replicate_index=r)
        else:
            raise ConfigError(f"unknown sampler {sampler_kind!r}")
        # replicates live on independent substreams, so output does not
        # depend on the parallelism degree; files are written in order
        if cfg.threads > 1 and replicates > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                samples = list(pool.map(draw, range(replicates)))
        else:
            samples = [draw(r) for r in range(replicates)]
        for r, sample in enumerate(samples):
            write_grid_sample(sample, cfg.out_dir / f"sample_r{r:04d}.csv",
                              sidecar_extra=cfg.sidecar())
    except DomainError as exc:
        print(f"simulation domain error: {exc}", file=sys.stderr)
        return EXIT_ASSERTION
    except FactorizationError as exc:
        print(f"factorization failed at maximal jitter: {exc}",
              file=sys.stderr)
        return EXIT_ASSERTION
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    m = _require_field(cfg)
    requested = cfg.run.get("checks", "isotropy,lnd,anderson").replace(
        " ", "").split(",")
    unknown = [c for c in requested if c not in ("isotropy", "lnd",
                                                 "anderson")]
    if unknown:
        raise ConfigError(f"unknown verify checks: {unknown}")
    t = float(cfg.run.get("t", "0.5"))
    if not 0.0 < t < m.gauge.T:
        raise ConfigError(f"run.t must lie in (0, {m.gauge.T:g})")
    summary = {}
    status = EXIT_OK
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    try:
        if "isotropy" in requested:
            pairs = int(cfg.run.get("pairs", "400"))
            rep = isotropy_bounds(m, t, pairs, cfg.master_seed,
                                  keep_ratios=True)
            summary["isotropy"] = rep.to_dict()
            np.savetxt(cfg.out_dir / "isotropy_pairs.csv",
                       rep.ratios, fmt="%.17g", header="ratio", comments="")
        if "lnd" in requested:
            trials = int(cfg.run.get("lnd_trials", "200"))
            n_max = int(cfg.run.get("n_max", "6"))
            reports = lnd_check(m, t, n_max, trials, cfg.master_seed)
            ratios = [r.ratio for r in reports]
            summary["lnd"] = {"trials": trials, "min_ratio": min(ratios),
                              "max_ratio": max(ratios)}
            with open(cfg.out_dir / "lnd_trials.csv", "w") as fh:
                fh.write("trial,n_preds,condvar,lnd_bound,ratio\n")
                for i, r in enumerate(reports):
                    fh.write(f"{i},{r.predecessors.shape[0]},"
                             f"{r.condvar_schur:.17g},{r.lnd_bound:.17g},"
                             f"{r.ratio:.17g}\n")
        if "anderson" in requested:
            ns = _parse_ints(cfg.run.get("anderson_n", "2,3,4"))
            trials = int(cfg.run.get("anderson_trials", "20"))
            mc = int(cfg.run.get("mc_samples", "100000"))
            rows = []
            violations = 0
            for n in ns:
                rep = anderson_check(n, trials, mc, cfg.master_seed)
                violations += rep.violations
                rows.extend(rep.instances)
            summary["anderson"] = {"violations": violations,
                                   "instances": len(rows)}
            with open(cfg.out_dir / "anderson_trials.csv", "w") as fh:
                fh.write("n,threshold,p_lhs,p_rhs,diff,se,violated\n")
                for inst in rows:
                    fh.write(f"{inst.n},{inst.threshold:.17g},"
                             f"{inst.p_lhs:.17g},"
                             f"{inst.p_max_head * inst.p_residual:.17g},"
                             f"{inst.diff:.17g},{inst.se:.17g},"
                             f"{int(inst.violated)}\n")
    except VerificationError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        summary["violation"] = str(exc)
        status = EXIT_ASSERTION
    _write_json(cfg, "verify.json", {"summary": summary,
                                     "passed": status == EXIT_OK})
    if "isotropy" in summary:
        iso = summary["isotropy"]
        print(f"isotropy   c_hat={iso['c_hat']:.6f}  "
              f"C_hat={iso['C_hat']:.6f}  cap={iso['upper_cap']:.6f}")
    if "lnd" in summary:
        print(f"lnd        min_ratio={summary['lnd']['min_ratio']:.9f}  "
              f"max_ratio={summary['lnd']['max_ratio']:.4f}  "
              f"trials={summary['lnd']['trials']}")
    if "anderson" in summary:
        print(f"anderson   violations={summary['anderson']['violations']}"
              f"/{summary['anderson']['instances']}")
    return status


def cmd_modulus(cfg: RunConfig) -> int:
    m = _require_field(cfg)
    if "resolutions" not in cfg.run:
        raise ConfigError("modulus requires run.resolutions")
    resolutions = _parse_ints(cfg.run["resolutions"])
    if len(resolutions) < 3 or sorted(set(resolutions)) != sorted(resolutions):
        raise ConfigError("resolutions must be >= 3 strictly increasing values")
    replicates = int(cfg.run.get("replicates", "20"))
    if replicates < 20:
        raise ConfigError("modulus requires at least 20 replicates")
    min_pairs = int(cfg.run.get("min_pairs", "50"))
    c_lower = float(cfg.run["c_lower"]) if "c_lower" in cfg.run else None
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StarvedScaleWarning)
            traces, report = run_modulus_pipeline(
                m, resolutions, replicates, cfg.master_seed,
                c_lower=c_lower, min_pairs=min_pairs, strict=False)
    except (InsufficientDataError, DomainError) as exc:
        print(f"modulus run failed: {exc}", file=sys.stderr)
        return EXIT_ASSERTION
    write_traces_csv(traces, cfg.out_dir / "traces.csv")
    _write_json(cfg, "modulus_report.json", report.to_dict())
    if not (report.concentration_ok and report.boundedness_ok):
        print("modulus convergence assertions failed "
              f"(concentration={report.concentration_ok}, "
              f"boundedness={report.boundedness_ok})", file=sys.stderr)
        return EXIT_ASSERTION
    return EXIT_OK


def cmd_entropy_integral(cfg: RunConfig) -> int:
    g = cfg.gauge
    diam = float(cfg.run.get("diam", str(
        cfg.field.diameter if cfg.field is not None else g.T)))
    if "eps" in cfg.run:
        eps_list = _parse_floats(cfg.run["eps"])
    else:
        top = float(g.q(min(diam, g.T)))
        eps_list = [top / 4, top / 8, top / 16]
    rtol = float(cfg.run.get("rtol", "1e-8"))
    rows = []
    status = EXIT_OK
    for eps in eps_list:
        try:
            by_parts, direct = entropy_integral_parts(g, diam, eps, rtol)
            rel = abs(by_parts - direct) / max(abs(by_parts), 1e-300)
            ok = rel <= 1e-6
            rows.append({"eps": eps, "value": by_parts, "direct": direct,
                         "identity_rel_dev": rel, "ok": ok})
            if not ok:
                status = EXIT_ASSERTION
        except NumericalError as exc:
            rows.append({"eps": eps, "error": str(exc)})
            status = EXIT_ASSERTION
    _write_json(cfg, "entropy.json", {"diam": diam, "results": rows,
                                      "passed": status == EXIT_OK})
    return status


# ---------------------------------------------------------------------------

_COMMANDS = {
    "gauge-check": cmd_gauge_check,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "modulus": cmd_modulus,
    "entropy-integral": cmd_entropy_integral,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qfield",
        description="gauge-isotropic Gaussian field toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="run config file")
        p.add_argument("--seed", type=int, default=None,
                       help="master seed (overrides run.master_seed)")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--format", default=None, choices=["csv", "json",
                                                          "csv,json"])
    return parser


def main(argv=None) -> int:
    level = _LOG_LEVELS.get(os.environ.get("QFIELD_LOG", "warn").lower(),
                            logging.WARNING)
    logging.basicConfig(level=level, format="%(name)s %(levelname)s "
                                            "%(message)s")
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, {
            "seed": args.seed, "out": args.out, "threads": args.threads,
            "format": args.format,
        })
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except QFieldError as exc:
        print(f"assertion failed: {exc}", file=sys.stderr)
        return EXIT_ASSERTION


if __name__ == "__main__":
    sys.exit(main())
