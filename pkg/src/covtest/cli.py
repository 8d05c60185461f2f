"""Command-line driver: calibration, power curves, verification, divergence queries.

Every run resolves its configuration up front, and a run with ``--out``
writes a ``manifest.json`` echoing that resolved configuration next to the
payload files. Payload files carry no timestamps, so re-running a manifest
(``covtest rerun``) reproduces them byte for byte; ``--workers`` (default
from ``COVTEST_WORKERS``) only schedules work and never changes any output.

Exit codes: 0 success, 1 verification failure, 2 invalid configuration.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import mc, oracle, stats
from .covmodels import CovarianceModel, EquiCorrelation, RankOneSpike, Tridiagonal
from .errors import CovTestError, EmptyGrid, ParameterOutOfRange

__all__ = ["main", "entrypoint", "build_parser"]

CSV_SCHEMA = "covtest-power-csv/1"
MANIFEST_SCHEMA = 1

_MODEL_KINDS = ("equicorr", "tridiag", "spike")
_STAT_CHOICES = {"tn": ("tn",), "clr": ("clr",), "both": ("tn", "clr")}


# ---------------------------------------------------------------------------
# Small output helpers
# ---------------------------------------------------------------------------


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _write_outputs(out_dir: Path, subcommand: str, config: dict, derived: dict,
                   payloads: dict[str, str], workers: int) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    hashes = {}
    for name, text in payloads.items():
        with open(out_dir / name, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        hashes[name] = _sha256(text)
    manifest = {
        "tool": "covtest",
        "manifest_schema": MANIFEST_SCHEMA,
        "subcommand": subcommand,
        "config": config,
        "derived": derived,
        "outputs": hashes,
        "workers": workers,
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_json_text(manifest))


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ParameterOutOfRange(message)


def _parse_grid(text: str) -> list[float]:
    """Parse ``lo:step:hi`` into the inclusive arithmetic grid."""
    parts = text.split(":")
    _require(len(parts) == 3, f"--grid must look like lo:step:hi, got {text!r}")
    try:
        lo, step, hi = (float(v) for v in parts)
    except ValueError as exc:
        raise ParameterOutOfRange(f"--grid values must be numbers, got {text!r}") from exc
    _require(step > 0, f"--grid step must be positive, got {step}")
    _require(hi >= lo, f"--grid needs hi >= lo, got {text!r}")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return [lo + i * step for i in range(count)]


def _grid_models(kind: str, params: list[float], n: int, p: int):
    out = []
    for value in params:
        if kind == "equicorr":
            model: CovarianceModel = EquiCorrelation(p, value)
        elif kind == "tridiag":
            model = Tridiagonal(p, value)
        elif kind == "spike":
            model = RankOneSpike(p, n, value)
        else:
            raise ParameterOutOfRange(f"--model must be one of {_MODEL_KINDS}, got {kind!r}")
        out.append((value, model))
    return tuple(out)


# ---------------------------------------------------------------------------
# Subcommand runners (shared by the parser path and `rerun`)
# ---------------------------------------------------------------------------


def _run_calibrate(config: dict, workers: int):
    threshold = mc.calibrate_null_threshold(
        config["statistic"],
        config["n"],
        config["p"],
        config["alpha"],
        config["reps"],
        config["seed"],
        workers,
    )
    payload = {
        "statistic": config["statistic"],
        "n": config["n"],
        "p": config["p"],
        "alpha": config["alpha"],
        "reps": config["reps"],
        "seed": config["seed"],
        "threshold": threshold,
    }
    return {"threshold.json": _json_text(payload)}, {}, 0


def _config_comment(config: dict) -> str:
    return json.dumps(config, sort_keys=True, separators=(",", ":"))


def _power_csv(curve: mc.PowerCurve, config: dict) -> str:
    lines = [f"# schema: {CSV_SCHEMA}"]
    lines.append(f"# config: {_config_comment(config)}")
    lines.append("model,param,frob_dist,stat,reps,rejections,power,se,ci_lo,ci_hi,threshold_source")
    for point in curve.points:
        for stat in config["statistics"]:
            est = point.estimates[stat]
            lo, hi = est.ci95
            lines.append(
                ",".join(
                    [
                        config["model"],
                        repr(point.param),
                        repr(point.frob_dist),
                        stat,
                        str(est.replicates),
                        str(est.rejections),
                        repr(est.estimate),
                        repr(est.se),
                        repr(lo),
                        repr(hi),
                        curve.threshold_source,
                    ]
                )
            )
    return "\n".join(lines) + "\n"


def _power_svg(curve: mc.PowerCurve, config: dict) -> str:
    """Minimal SVG 1.1 line plot: solid pairwise test, dashed corrected LRT."""
    width, height, margin = 640, 440, 70
    xs = [pt.frob_dist for pt in curve.points]
    x0, x1 = min(xs), max(xs)
    span = (x1 - x0) or 1.0

    def sx(x: float) -> float:
        return margin + (x - x0) / span * (width - 2 * margin)

    def sy(y: float) -> float:
        return height - margin - y * (height - 2 * margin)

    styles = {"tn": 'fill="none" stroke="black" stroke-width="1.5"',
              "clr": 'fill="none" stroke="black" stroke-width="1.5" stroke-dasharray="6,4"'}
    labels = {"tn": "pairwise U-statistic test", "clr": "corrected LRT"}
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}">',
        f"<!-- config: {_config_comment(config)} -->",
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 20}" text-anchor="middle" font-size="14">||Sigma - I||_F</text>',
        f'<text x="20" y="{height / 2:.1f}" text-anchor="middle" font-size="14" transform="rotate(-90 20 {height / 2:.1f})">power</text>',
    ]
    for tick in (0.0, 0.5, 1.0):
        parts.append(
            f'<text x="{margin - 8}" y="{sy(tick) + 4:.1f}" text-anchor="end" font-size="11">{tick:.1f}</text>'
        )
        parts.append(
            f'<line x1="{margin - 4}" y1="{sy(tick):.1f}" x2="{margin}" y2="{sy(tick):.1f}" stroke="black"/>'
        )
    for x in (x0, x1):
        parts.append(
            f'<text x="{sx(x):.1f}" y="{height - margin + 16}" text-anchor="middle" font-size="11">{x:.2f}</text>'
        )
    legend_y = margin
    for stat in config["statistics"]:
        pts = " ".join(
            f"{sx(pt.frob_dist):.2f},{sy(pt.estimates[stat].estimate):.2f}" for pt in curve.points
        )
        parts.append(f'<polyline points="{pts}" {styles[stat]}/>')
        parts.append(
            f'<line x1="{width - margin - 160}" y1="{legend_y}" x2="{width - margin - 130}" y2="{legend_y}" {styles[stat]}/>'
        )
        parts.append(
            f'<text x="{width - margin - 124}" y="{legend_y + 4}" font-size="12">{labels[stat]}</text>'
        )
        legend_y += 18
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _run_power(config: dict, workers: int):
    grid = _grid_models(config["model"], config["grid"], config["n"], config["p"])
    if not grid:
        raise EmptyGrid("the power grid is empty")
    plan = mc.SimulationPlan(
        n=config["n"],
        p=config["p"],
        reps=config["reps"],
        seed=config["seed"],
        alpha=config["alpha"],
        statistics=tuple(config["statistics"]),
        threshold_source=config["threshold_source"],
        calibration_reps=config["calibration_reps"],
        workers=workers,
        grid=grid,
    )
    curve = mc.power_curve(plan)
    payloads = {"power.csv": _power_csv(curve, config)}
    if config["svg"]:
        payloads["power.svg"] = _power_svg(curve, config)
    derived = {"thresholds": curve.thresholds}
    if config.get("preset"):
        derived["taus"] = list(mc.PRESET_TAUS)
    return payloads, derived, 0


def _run_verify(config: dict, workers: int):
    reports = oracle.run_all_checks(
        seed=config["seed"],
        reps=config["reps"],
        trm_reps=config["trm_reps"],
        martingale_instances=config["martingale_instances"],
        only=config["only"],
        inject_fault=config["inject_fault"],
    )
    payload = [r.to_dict() for r in reports]
    ok = all(r.passed for r in reports)
    return {"verify.json": _json_text(payload)}, {}, 0 if ok else 1


def _run_divergence(config: dict, workers: int):
    p, n = config["p"], config["n"]
    if config.get("find_b"):
        delta = config["beta_minus_alpha"]
        b = oracle.find_lower_bound_constant(p, n, delta)
        value = oracle.chisq_divergence(p, n, b)
        payload = {
            "p": p,
            "n": n,
            "beta_minus_alpha": delta,
            "bound_4_beta_alpha_sq": 4.0 * delta * delta,
            "feasible_b": b,
            "divergence": value,
            "divergence_minus_one": value - 1.0,
        }
    else:
        b = config["b"]
        value = oracle.chisq_divergence(p, n, b)
        payload = {
            "p": p,
            "n": n,
            "b": b,
            "divergence": value,
            "divergence_minus_one": value - 1.0,
        }
    return {"divergence.json": _json_text(payload)}, {}, 0


def _run_test(config: dict, workers: int):
    data = np.loadtxt(config["data"], ndmin=2)
    n, p = data.shape
    outcomes = {}
    for stat in config["statistics"]:
        threshold = config["thresholds"].get(stat)
        if stat == "tn":
            outcome = stats.test_psi(data, config["alpha"], threshold)
        else:
            outcome = stats.test_clrt(data, config["alpha"], threshold)
        outcomes[stat] = {
            "statistic": outcome.statistic,
            "standardized": outcome.standardized,
            "threshold": outcome.threshold,
            "reject": outcome.reject,
            "threshold_source": outcome.threshold_source,
        }
    payload = {"data": config["data"], "n": n, "p": p, "alpha": config["alpha"], "tests": outcomes}
    return {"outcome.json": _json_text(payload)}, {}, 0


_RUNNERS = {
    "calibrate": _run_calibrate,
    "power": _run_power,
    "verify": _run_verify,
    "divergence": _run_divergence,
    "test": _run_test,
}


# ---------------------------------------------------------------------------
# Argument parsing and config resolution
# ---------------------------------------------------------------------------


def _default_workers() -> int:
    raw = os.environ.get("COVTEST_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    sub.add_argument("--workers", type=int, default=None,
                     help="worker threads; results are identical for any value (default $COVTEST_WORKERS or 1)")
    sub.add_argument("--out", type=Path, default=None, help="output directory (writes a manifest)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="covtest",
        description="Monte Carlo tests of a high-dimensional covariance identity",
    )
    subs = parser.add_subparsers(dest="subcommand", required=True)

    cal = subs.add_parser("calibrate", help="simulate a null critical value")
    cal.add_argument("--stat", choices=["tn", "clr"], required=True)
    cal.add_argument("--n", type=int, required=True)
    cal.add_argument("--p", type=int, required=True)
    cal.add_argument("--alpha", type=float, default=0.05)
    cal.add_argument("--reps", type=int, default=100_000)
    _add_common(cal)

    pow_ = subs.add_parser("power", help="power curve over a model grid")
    pow_.add_argument("--preset", choices=["fig1", "fig2"], default=None,
                      help="equi-correlation or tridiagonal preset (p=40, reps=5000, both tests)")
    pow_.add_argument("--model", choices=list(_MODEL_KINDS), default=None)
    pow_.add_argument("--grid", type=str, default=None, help="model parameter grid lo:step:hi")
    pow_.add_argument("--n", type=int, default=None)
    pow_.add_argument("--p", type=int, default=None)
    pow_.add_argument("--alpha", type=float, default=0.05)
    pow_.add_argument("--reps", type=int, default=5000)
    pow_.add_argument("--stat", choices=list(_STAT_CHOICES), default="both")
    pow_.add_argument("--threshold", choices=["calibrated", "asymptotic"], default="calibrated")
    pow_.add_argument("--calibration-reps", type=int, default=100_000)
    pow_.add_argument("--svg", action="store_true", help="also write an SVG line plot")
    _add_common(pow_)

    ver = subs.add_parser("verify", help="run the closed-form verification suite")
    ver.add_argument("--only", action="append", default=None, choices=list(oracle.CHECK_NAMES),
                     help="run only the named check (repeatable)")
    ver.add_argument("--reps", type=int, default=1_000_000)
    ver.add_argument("--trm-reps", type=int, default=100_000)
    ver.add_argument("--martingale-instances", type=int, default=1000)
    ver.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    _add_common(ver)

    div = subs.add_parser("divergence", help="chi-square divergence of the sign-mixture alternative")
    div.add_argument("--p", type=int, required=True)
    div.add_argument("--n", type=int, required=True)
    div.add_argument("--b", type=float, default=None)
    div.add_argument("--find-b", action="store_true",
                     help="search the largest b meeting the 4(beta-alpha)^2 bound")
    div.add_argument("--beta-minus-alpha", type=float, default=None)
    _add_common(div)

    tst = subs.add_parser("test", help="apply the tests to a whitespace-delimited n x p matrix")
    tst.add_argument("--data", type=str, required=True)
    tst.add_argument("--stat", choices=list(_STAT_CHOICES), default="both")
    tst.add_argument("--alpha", type=float, default=0.05)
    tst.add_argument("--threshold-tn", type=float, default=None,
                     help="calibrated threshold for the pairwise test (default: asymptotic)")
    tst.add_argument("--threshold-clr", type=float, default=None,
                     help="calibrated threshold for the corrected LRT (default: asymptotic)")
    _add_common(tst)

    rer = subs.add_parser("rerun", help="re-execute a previous run from its manifest")
    rer.add_argument("--manifest", type=Path, required=True)
    rer.add_argument("--workers", type=int, default=None)
    rer.add_argument("--out", type=Path, default=None)

    return parser


def _resolve_config(args: argparse.Namespace) -> dict:
    """Turn parsed arguments into the resolved, payload-determining config."""
    sub = args.subcommand
    if sub == "calibrate":
        _require(args.n >= 2, f"--n must be >= 2, got {args.n}")
        _require(args.p >= 1, f"--p must be >= 1, got {args.p}")
        _require(0.0 < args.alpha < 1.0, f"--alpha must lie in (0, 1), got {args.alpha}")
        _require(args.reps >= 100, f"--reps must be >= 100 for calibration, got {args.reps}")
        return {
            "statistic": args.stat,
            "n": args.n,
            "p": args.p,
            "alpha": args.alpha,
            "reps": args.reps,
            "seed": args.seed,
        }
    if sub == "power":
        if args.preset is not None:
            _require(args.model is None and args.grid is None,
                     "--preset and --model/--grid are mutually exclusive")
            n = args.n if args.n is not None else 80
            p = args.p if args.p is not None else mc.PRESET_P
            _require(p == mc.PRESET_P, f"presets pin --p to {mc.PRESET_P}, got {p}")
            grid = mc.preset_tau_grid(args.preset, n)
            kind = "equicorr" if args.preset == "fig1" else "tridiag"
            params = [param for param, _ in grid]
        else:
            _require(args.model is not None, "one of --preset or --model is required")
            _require(args.grid is not None, "--grid is required with --model")
            _require(args.n is not None and args.p is not None,
                     "--n and --p are required with --model")
            n, p, kind = args.n, args.p, args.model
            params = _parse_grid(args.grid)
        _require(n >= 2, f"--n must be >= 2, got {n}")
        _require(p >= 1, f"--p must be >= 1, got {p}")
        _require(0.0 < args.alpha < 1.0, f"--alpha must lie in (0, 1), got {args.alpha}")
        _require(args.reps >= 1, f"--reps must be >= 1, got {args.reps}")
        return {
            "preset": args.preset,
            "model": kind,
            "grid": params,
            "n": n,
            "p": p,
            "alpha": args.alpha,
            "reps": args.reps,
            "seed": args.seed,
            "statistics": list(_STAT_CHOICES[args.stat]),
            "threshold_source": args.threshold,
            "calibration_reps": args.calibration_reps,
            "svg": bool(args.svg),
        }
    if sub == "verify":
        _require(args.reps >= 1000, f"--reps must be >= 1000, got {args.reps}")
        _require(args.trm_reps >= 1000, f"--trm-reps must be >= 1000, got {args.trm_reps}")
        _require(args.martingale_instances >= 1,
                 f"--martingale-instances must be >= 1, got {args.martingale_instances}")
        return {
            "seed": args.seed,
            "reps": args.reps,
            "trm_reps": args.trm_reps,
            "martingale_instances": args.martingale_instances,
            "only": args.only,
            "inject_fault": bool(args.inject_fault),
        }
    if sub == "divergence":
        if args.find_b:
            _require(args.beta_minus_alpha is not None,
                     "--find-b requires --beta-minus-alpha")
            return {
                "p": args.p,
                "n": args.n,
                "find_b": True,
                "beta_minus_alpha": args.beta_minus_alpha,
                "seed": args.seed,
            }
        _require(args.b is not None, "either --b or --find-b is required")
        return {"p": args.p, "n": args.n, "b": args.b, "seed": args.seed}
    if sub == "test":
        if not os.path.exists(args.data):
            raise ParameterOutOfRange(f"--data file not found: {args.data}")
        _require(0.0 < args.alpha < 1.0, f"--alpha must lie in (0, 1), got {args.alpha}")
        return {
            "data": args.data,
            "statistics": list(_STAT_CHOICES[args.stat]),
            "alpha": args.alpha,
            "thresholds": {"tn": args.threshold_tn, "clr": args.threshold_clr},
        }
    raise ParameterOutOfRange(f"unknown subcommand {sub!r}")


def _execute(subcommand: str, config: dict, out: Path | None, workers: int) -> int:
    payloads, derived, code = _RUNNERS[subcommand](config, workers)
    if out is not None:
        _write_outputs(out, subcommand, config, derived, payloads, workers)
    for text in payloads.values():
        sys.stdout.write(text)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.subcommand == "rerun":
            with open(args.manifest, "r", encoding="utf-8") as fh:
                manifest = json.load(fh)
            sub = manifest["subcommand"]
            if sub not in _RUNNERS:
                raise ParameterOutOfRange(f"manifest names unknown subcommand {sub!r}")
            workers = args.workers if args.workers is not None else _default_workers()
            return _execute(sub, manifest["config"], args.out, workers)
        workers = args.workers if args.workers is not None else _default_workers()
        _require(workers >= 1, f"--workers must be >= 1, got {workers}")
        config = _resolve_config(args)
        return _execute(args.subcommand, config, args.out, workers)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CovTestError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    raise SystemExit(main())
