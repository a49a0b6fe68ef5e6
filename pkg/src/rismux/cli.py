"""Command-line front end: ``rismux {sweep,optimize,selftest}``.

Every flag can also come from a JSON file given with ``--config``; flags on
the command line win. A ``manifest.json`` written by ``sweep`` is itself a
valid config file, which is how a sweep is reproduced.
"""

import argparse
import datetime
import json
import os
import re
import sys

import numpy as np

from . import __version__
from .channel import SystemConfig, assemble_effective, sample_channels
from .errors import StructuralError
from .experiment import SweepAborted, SweepSpec, phase_rng, run_sweep
from .optim import OptimizerOptions, optimize_phases
from .receivers import sum_rate
from .selftest import run_checks
from .spectral import effective_rank, gram_offdiag_ratio, svd_thin

MANIFEST_SCHEMA = "rismux.manifest/1"
CSV_SCHEMA = "rismux.results/1"

AXIS_NAMES = {"snr": "snr_db", "snr_db": "snr_db", "L": "L", "alpha": "alpha"}

DEFAULTS = {
    "M": 4, "K": 4, "L": 100, "alpha": 0.5, "snr": 20.0, "seed": 0,
    "max_iterations": 500, "grad_tolerance": 1e-6, "wolfe_c1": 1e-4, "wolfe_c2": 0.9,
    "max_line_search_steps": 25, "restarts": 0,
    # sweep
    "axis": "snr", "values": "-10:2.5:20", "criteria": "er,msv,random,none",
    "receivers": "mmse,mf,joint", "trials": 200, "out": "results", "threads": 1,
    # optimize
    "criterion": "er", "trial": 0, "method": "bfgs",
    # selftest
    "instances": 100, "corrupt_gradient": False,
}

COMMAND_KEYS = {
    "common": ["M", "K", "L", "alpha", "snr", "seed", "max_iterations", "grad_tolerance",
               "wolfe_c1", "wolfe_c2", "max_line_search_steps", "restarts"],
    "sweep": ["axis", "values", "criteria", "receivers", "trials", "out", "threads"],
    "optimize": ["criterion", "trial", "method"],
    "selftest": ["instances", "corrupt_gradient"],
}


class UsageError(Exception):
    pass


def parse_values(text):
    """``"a:b:c"`` is the inclusive range a, a+b, ..., c; otherwise a comma list."""
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    text = str(text).strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"range must be start:step:stop, got {text!r}")
        start, step, stop = (float(p) for p in parts)
        if step <= 0 or stop < start:
            raise UsageError(f"bad range {text!r}")
        n = int(np.floor((stop - start) / step + 1e-9))
        return [start + i * step for i in range(n + 1)]
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad value list {text!r}") from exc


def _split(value):
    if isinstance(value, (list, tuple)):
        return [str(v) for v in value]
    return [v.strip() for v in str(value).split(",") if v.strip()]


def _add_common(p):
    S = argparse.SUPPRESS
    p.add_argument("--config", help="JSON file with flag values (flags override it)")
    p.add_argument("-M", type=int, default=S, help="base-station antennas (4)")
    p.add_argument("-K", type=int, default=S, help="users (4)")
    p.add_argument("-L", type=int, default=S, help="RIS elements (100)")
    p.add_argument("--alpha", type=float, default=S, help="RIS power fraction (0.5)")
    p.add_argument("--snr", type=float, default=S,
                   help="SNR in dB, sigma2 = 10^(-snr/10) (20); ignored on the snr axis")
    p.add_argument("--seed", type=int, default=S, help="master seed (0)")
    p.add_argument("--max-iterations", dest="max_iterations", type=int, default=S)
    p.add_argument("--grad-tol", dest="grad_tolerance", type=float, default=S)
    p.add_argument("--wolfe-c1", dest="wolfe_c1", type=float, default=S)
    p.add_argument("--wolfe-c2", dest="wolfe_c2", type=float, default=S)
    p.add_argument("--max-line-search-steps", dest="max_line_search_steps", type=int, default=S)
    p.add_argument("--restarts", type=int, default=S)


def build_parser():
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="rismux", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rismux {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sw = sub.add_parser("sweep", help="Monte-Carlo sweep over snr, L or alpha")
    _add_common(sw)
    sw.add_argument("--axis", choices=sorted(AXIS_NAMES), default=S)
    sw.add_argument("--values", default=S, help="start:step:stop or comma list")
    sw.add_argument("--criteria", default=S, help="subset of er,msv,random,none")
    sw.add_argument("--receivers", default=S, help="subset of mmse,mf,joint")
    sw.add_argument("--trials", type=int, default=S, help="trials per point (200)")
    sw.add_argument("--out", default=S, help="output directory")
    sw.add_argument("--threads", type=int, default=S,
                    help="worker processes; outputs do not depend on it")
    sw.add_argument("--quiet", action="store_true")

    op = sub.add_parser("optimize", help="optimize one seeded realization, JSON to stdout")
    _add_common(op)
    op.add_argument("--criterion", choices=["er", "msv"], default=S)
    op.add_argument("--trial", type=int, default=S, help="trial index of the realization")
    op.add_argument("--method", choices=["bfgs", "steepest"], default=S)

    st = sub.add_parser("selftest", help="gradient and invariant checks")
    _add_common(st)
    st.add_argument("--instances", type=int, default=S)
    st.add_argument("--corrupt-gradient", dest="corrupt_gradient", action="store_true",
                    default=S, help="flip gradient signs to show the checks can fail")
    return parser


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    if "resolved" in data:
        data = data["resolved"]
    return data


def resolve(args):
    """Defaults, then the config file, then explicit flags."""
    keys = COMMAND_KEYS["common"] + COMMAND_KEYS[args.command]
    resolved = {k: DEFAULTS[k] for k in keys}
    if getattr(args, "config", None):
        for key, value in load_config(args.config).items():
            if key not in DEFAULTS:
                raise UsageError(f"unknown config key {key!r}")
            if key in resolved:
                resolved[key] = value
    for key in keys:
        if hasattr(args, key):
            resolved[key] = getattr(args, key)
    return resolved


def _system(resolved):
    return SystemConfig(M=int(resolved["M"]), K=int(resolved["K"]), L=int(resolved["L"]),
                        alpha=float(resolved["alpha"]),
                        sigma2=SystemConfig.sigma2_from_snr_db(resolved["snr"]),
                        seed=int(resolved["seed"]))


def _options(resolved):
    return OptimizerOptions(
        max_iterations=int(resolved["max_iterations"]),
        grad_tolerance=float(resolved["grad_tolerance"]),
        wolfe_c1=float(resolved["wolfe_c1"]), wolfe_c2=float(resolved["wolfe_c2"]),
        max_line_search_steps=int(resolved["max_line_search_steps"]),
        restarts=int(resolved["restarts"]))


def _normalize_sweep(resolved):
    # canonical JSON-friendly form recorded in the manifest
    resolved = dict(resolved)
    if resolved["axis"] not in AXIS_NAMES:
        raise UsageError(f"unknown axis {resolved['axis']!r}")
    resolved["values"] = parse_values(resolved["values"])
    resolved["criteria"] = _split(resolved["criteria"])
    resolved["receivers"] = _split(resolved["receivers"])
    return resolved


def sweep_spec(resolved):
    try:
        return SweepSpec(
            base=_system(resolved),
            axis=AXIS_NAMES[resolved["axis"]],
            values=resolved["values"],
            criteria=resolved["criteria"],
            receivers=resolved["receivers"],
            trials=int(resolved["trials"]),
            seed=int(resolved["seed"]),
            opts=_options(resolved),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _manifest(resolved, spec, table, error=None):
    counts = {}
    for row in table.rows:
        counts.setdefault(f"{row.axis_value!r}/{row.criterion}", row.trials)
    return {
        "schema": MANIFEST_SCHEMA,
        "csv_schema": CSV_SCHEMA,
        "tool_version": __version__,
        "command": "sweep",
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "seed": spec.seed,
        "resolved": resolved,
        "spec": spec.to_dict(),
        "trials_per_point": counts,
        "complete": error is None and table.complete,
        "error": error,
        "notes": ("NO_RIS and RIS criteria share the D draw at equal trial index (paired). "
                  "SNR in dB maps to sigma2 = 10^(-snr/10); per-user power 1, SINR noise K*sigma2."),
    }


def cmd_sweep(args):
    resolved = _normalize_sweep(resolve(args))
    spec = sweep_spec(resolved)
    out = resolved["out"]
    os.makedirs(out, exist_ok=True)
    threads = int(resolved["threads"])
    if threads < 1:
        raise UsageError("--threads must be positive")

    def progress(event):
        if event["event"] == "point" and not args.quiet:
            print(f"done {spec.axis}={spec.values[event['point']]:g} "
                  f"criterion={event['criterion']}", file=sys.stderr)

    error = None
    try:
        table = run_sweep(spec, workers=threads, on_event=progress)
    except SweepAborted as exc:
        table, error = exc.partial, str(exc)
    _write_text(os.path.join(out, "results.csv"), table.to_csv())
    _write_text(os.path.join(out, "manifest.json"),
                json.dumps(_manifest(resolved, spec, table, error), indent=2) + "\n")
    if error:
        print(f"error: {error}; partial results in {out}", file=sys.stderr)
        return 1
    return 0


def cmd_optimize(args):
    resolved = resolve(args)
    try:
        config = _system(resolved)
        opts = _options(resolved)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    trial = int(resolved["trial"])
    real = sample_channels(config, trial)
    report = optimize_phases(resolved["criterion"], real, config, opts,
                             rng=phase_rng(config, trial, resolved["criterion"]),
                             method=resolved["method"])
    H0 = assemble_effective(real, report.theta0, config.alpha)
    H = assemble_effective(real, report.theta_star, config.alpha)
    lam0, lam = svd_thin(H0).lam, svd_thin(H).lam
    result = {
        "schema": MANIFEST_SCHEMA,
        "tool_version": __version__,
        "command": "optimize",
        "resolved": resolved,
        "objective_trace": report.objective_trace.tolist(),
        "iterations": report.iterations,
        "termination": report.termination.value,
        "final_gradient_norm": report.final_gradient_norm,
        "effective_rank_initial": effective_rank(lam0),
        "effective_rank_final": effective_rank(lam),
        "lambda_initial": lam0.tolist(),
        "lambda_final": lam.tolist(),
        "lambda_min_initial": float(lam0[-1]),
        "lambda_min_final": float(lam[-1]),
        "gram_offdiag_initial": gram_offdiag_ratio(H0),
        "gram_offdiag_final": gram_offdiag_ratio(H),
        "snr_db": float(resolved["snr"]),
        "rates": {rx: sum_rate(rx, H, config.sigma2) for rx in ("mmse", "mf", "joint")},
        "rates_initial": {rx: sum_rate(rx, H0, config.sigma2) for rx in ("mmse", "mf", "joint")},
        "theta_star": report.theta_star.tolist(),
    }
    print(json.dumps(result, indent=2))
    return 0


def cmd_selftest(args):
    resolved = resolve(args)
    checks = run_checks(int(resolved["instances"]), int(resolved["seed"]),
                        corrupt=bool(resolved["corrupt_gradient"]))
    for check in checks:
        print(check.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return 1 if failed else 0


_NEGATIVE_VALUE = re.compile(r"^-\d")


def _join_negative_values(argv):
    # "--values -10:2.5:20" would otherwise be read as an unknown option
    out, i = [], 0
    while i < len(argv):
        if argv[i] == "--values" and i + 1 < len(argv) and _NEGATIVE_VALUE.match(argv[i + 1]):
            out.append(f"--values={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None):
    parser = build_parser()
    argv = _join_negative_values(list(sys.argv[1:] if argv is None else argv))
    args = parser.parse_args(argv)
    if not hasattr(args, "quiet"):
        args.quiet = True
    commands = {"sweep": cmd_sweep, "optimize": cmd_optimize, "selftest": cmd_selftest}
    try:
        return commands[args.command](args)
    except (UsageError, StructuralError, FileNotFoundError, json.JSONDecodeError) as exc:
        parser.error(str(exc))


if __name__ == "__main__":
    sys.exit(main())
