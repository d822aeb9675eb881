"""
cli.py
------
Command-line entry point.

    python run.py generate --layout pair --delta 3.5 --m 2 --n 50 --seed 1 --out i.json
    python run.py solve --instance i.json
    python run.py certify --instance i.json
    python run.py tfn-scan --r 1 --alpha 1.29 --m 2 --grid 1000
    python run.py recovery-rate --config data/campaigns/pair_m2.json --out rate.csv
    python run.py scan-delta --config ... --deltas 2.2,2.6,3.0,3.5,4.0 --out scan.csv --gnuplot
    python run.py counterexample-b --n 3000 --seeds 30
    python run.py order-mismatch-a --n 100,1000,10000 --seeds 20
    python run.py selftest

Exit codes: 0 success, 1 computational failure, 2 usage or config error.
Results go to stdout (JSON or tables), diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from kmr import experiments as exp
from kmr.analytics import write_csv
from kmr.certificate import Certificate, certify_recovery, verify_certificate
from kmr.errors import ConfigError, KmrError, exit_code_for
from kmr.gfunction import TfnParams, tfn_scan
from kmr.instance import Clustering, brute_force_ip
from kmr.lp import LpSettings, build, decide_recovery, solve
from kmr.measures import MeasureSpec, PointMassLaw, annulus, check_counterexample_assumption, uniform_ball, uniform_sphere
from kmr.numerics import angle_cdf, angle_density, crossing_threshold, integrate
from kmr.storage import dumps, load_config_data, load_instance, save_instance, save_solution, verdict_payload

logger = logging.getLogger("kmr")


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _emit(payload: dict) -> None:
    sys.stdout.write(dumps(payload))


def _measure(args, m: int) -> MeasureSpec:
    if args.measure == "ball":
        return uniform_ball(m, args.radius)
    if args.measure == "sphere":
        return uniform_sphere(m, args.sphere_radius or args.radius, args.radius)
    if args.measure == "point":
        return MeasureSpec(m=m, radius=args.radius, law=PointMassLaw())
    return annulus(m, args.eps, args.interior, args.radius)


def _config(args) -> exp.ExperimentConfig:
    """Campaign config from --config, with explicit flags layered on top."""
    base: dict = load_config_data(args.config) if args.config else {}
    overrides = {
        "layout": args.layout, "delta": args.delta, "m": args.m, "k": args.k, "n": args.n,
        "seed_start": args.seed_start, "trials": args.trials, "method": args.method,
        "threshold": args.threshold,
    }
    base.update({key: value for key, value in overrides.items() if value is not None})
    if args.measure is not None:
        base["measure"] = _measure(args, base.get("m", 2)).model_dump()
    if args.weights is not None:
        base["weights"] = args.weights
    if args.counts is not None:
        base["counts"] = args.counts
    if args.size_guard is not None:
        base["lp"] = {**base.get("lp", {}), "size_guard": args.size_guard}
    try:
        return exp.ExperimentConfig.model_validate(base)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def _write_table(frame, out: Optional[str], gnuplot: Optional[tuple[str, str]] = None) -> None:
    if out is None:
        sys.stdout.write(frame.to_csv(index=False, float_format="%.12g", lineterminator="\n"))
        return
    write_csv(frame, out)
    logger.info("wrote %s", out)
    if gnuplot is not None:
        script = Path(out).with_suffix(".gp")
        script.write_text(exp.emit_gnuplot_script(out, *gnuplot), encoding="utf-8")
        logger.info("wrote %s", script)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    config = _config(args)
    instance = config.instance(args.seed)
    save_instance(instance, args.out)
    _emit({"kind": "generated", "out": args.out, "points": instance.size, "counts": list(instance.counts)})
    return 0


def _lp_settings(args) -> LpSettings:
    fields = {"backend": args.backend}
    if args.size_guard is not None:
        fields["size_guard"] = args.size_guard
    return LpSettings(**fields)


def cmd_solve(args) -> int:
    instance = load_instance(args.instance)
    settings = _lp_settings(args)
    verdict = decide_recovery(instance, settings, use_certificate=not args.lp_only)
    if args.out:
        if verdict.lp is None:
            logger.warning("no LP point behind a %s verdict; %s not written", verdict.status, args.out)
        else:
            save_solution(*verdict.lp, args.out, verdict)
            logger.info("wrote %s", args.out)
    _emit({"kind": "verdict", **verdict_payload(verdict)})
    return 0


def cmd_certify(args) -> int:
    instance = load_instance(args.instance)
    certified = certify_recovery(instance, args.gamma)
    _emit({
        "kind":     "certificate",
        "gamma":    certified.recipe.gamma,
        "interval": list(certified.recipe.interval),
        "centers":  list(certified.solution.clustering.centers),
        **certified.verdict.ledger(),
    })
    return 0


def cmd_tfn_scan(args) -> int:
    try:
        params = TfnParams(r=args.r, alpha=args.alpha, m=args.m)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    table = tfn_scan(params, args.grid)
    _write_table(table, args.out, ("t", "T") if args.gnuplot else None)
    logger.info("min T = %.12g at t = %.6g", table["T"].min(), table["t"][table["T"].idxmin()])
    return 0


def cmd_recovery_rate(args) -> int:
    config = _config(args)
    summary = exp.recovery_rate(config, args.threads)
    if args.out:
        _write_table(summary.frame(args.timings), args.out, ("seed", "margin") if args.gnuplot else None)
    _emit({"kind": "recovery_rate", **summary.report()})
    return 0


def cmd_scan_delta(args) -> int:
    if args.delta is None and args.deltas:
        args.delta = args.deltas[0]
    config = _config(args)
    scan = exp.delta_scan(config, args.deltas, args.threads)
    if args.out:
        _write_table(scan.frame(args.timings), args.out)
        table_path = str(Path(args.out).with_name(Path(args.out).stem + "_rates.csv"))
        _write_table(scan.table, table_path, ("delta", "rate") if args.gnuplot else None)
    else:
        _write_table(scan.table, None)
    return 0


def cmd_counterexample_b(args) -> int:
    summary = exp.appendix_b_counterexample(args.n, args.seeds, args.eps, args.interior,
                                            args.lp_n, args.lp_seeds, args.threads)
    if args.out:
        _write_table(summary.frame(args.timings), args.out)
    _emit({"kind": "counterexample_b", **summary.report()})
    return 0


def cmd_order_mismatch_a(args) -> int:
    table, trials = exp.appendix_a_order_mismatch(args.n, args.seeds, args.delta, args.m,
                                                  args.control, args.seed_start, args.threads)
    if args.out:
        write_csv(trials, args.out)
        rates = str(Path(args.out).with_name(Path(args.out).stem + "_rates.csv"))
        _write_table(table, rates, ("n", "rate") if args.gnuplot else None)
    else:
        _write_table(table, None)
    return 0


# ---------------------------------------------------------------------------
# Self test
# ---------------------------------------------------------------------------

def _selftest_checks() -> list[tuple[str, Callable[[], bool]]]:
    line = np.array([[0.0], [1.0], [2.0], [10.0], [11.0], [12.0]])
    clustering = Clustering((1, 4), np.array([0, 0, 0, 1, 1, 1]))

    def collinear_lp() -> bool:
        solution, _ = solve(build(line, 2), LpSettings(backend="simplex"))
        return abs(solution.objective - 4.0) < 1e-7 and brute_force_ip(line, 2).objective == 4.0

    def collinear_certificate() -> bool:
        verdict = verify_certificate(line, clustering, Certificate(np.full(6, 1.5)))
        return verdict.implies == "unique_optimum"

    def angle_law() -> bool:
        mass = integrate(lambda t: angle_density(5, t), 0.0, math.pi)
        return abs(mass - 1.0) < 1e-9 and abs(angle_cdf(5, math.pi / 2) - 0.5) < 1e-12

    def hexagon_constants() -> bool:
        a, b = exp.hexagon_constants()
        return a < 0.279 and b > 0.292

    def threshold_sign() -> bool:
        s = crossing_threshold(3)
        theta = math.asin(s) * 0.5
        return angle_density(3, theta) > angle_density(4, theta)

    def annulus_condition() -> bool:
        return check_counterexample_assumption(annulus(2, exp.COUNTEREXAMPLE_EPS, exp.COUNTEREXAMPLE_INTERIOR),
                                               exp.COUNTEREXAMPLE_EPS).satisfied

    return [
        ("collinear LP objective", collinear_lp),
        ("collinear strict certificate", collinear_certificate),
        ("angle density normalised", angle_law),
        ("hexagon constants", hexagon_constants),
        ("angle density crossing", threshold_sign),
        ("annulus mass condition", annulus_condition),
    ]


def cmd_selftest(args) -> int:
    failures = 0
    for name, check in _selftest_checks():
        try:
            ok = bool(check())
        except KmrError as exc:
            logger.error("%s raised %s", name, exc)
            ok = False
        print(f"[{'PASS' if ok else 'FAIL'}] {name}")
        failures += not ok
    return 0 if failures == 0 else 1


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_campaign_flags(p: argparse.ArgumentParser, with_seed: bool = False) -> None:
    p.add_argument("--config", help="ExperimentConfig JSON file; flags below override it")
    p.add_argument("--layout", choices=["pair", "simplex", "hexagon7", "line", "custom"])
    p.add_argument("--delta", type=float, help="centre distance of the layout")
    p.add_argument("--m", type=int, help="dimension")
    p.add_argument("--k", type=int, help="number of balls (simplex and line layouts)")
    p.add_argument("--n", type=int, help="points per unit weight")
    p.add_argument("--weights", type=_floats, help="per-ball weights beta_i >= 1")
    p.add_argument("--counts", type=_ints, help="explicit per-ball point counts")
    p.add_argument("--measure", choices=["ball", "sphere", "point", "annulus"])
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--sphere-radius", type=float, help="sphere radius s for --measure sphere")
    p.add_argument("--eps", type=float, default=exp.COUNTEREXAMPLE_EPS, help="annulus shell width")
    p.add_argument("--interior", type=float, default=exp.COUNTEREXAMPLE_INTERIOR, help="annulus interior mass")
    p.add_argument("--size-guard", type=int, help="largest instance the LP path accepts")
    if with_seed:
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(seed_start=None, trials=None, method=None, threshold=None)
    else:
        p.add_argument("--seed-start", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--method", choices=["certificate", "lp", "witness", "auto"])
        p.add_argument("--threshold", type=float, help="rate to report against (desk-scale calibration)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kmr", description="k-median LP exact-recovery toolkit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    common.add_argument("--threads", type=int, help="worker processes (default KMR_THREADS or 1)")
    common.add_argument("--timings", action="store_true", help="fill the wall_ms CSV column")
    common.add_argument("--gnuplot", action="store_true", help="write a .gp script next to CSV output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="draw an instance and write it as JSON")
    _add_campaign_flags(p, with_seed=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", parents=[common], help="decide exact recovery for an instance")
    p.add_argument("--instance", required=True)
    p.add_argument("--out", help="write the LP solution JSON here")
    p.add_argument("--backend", choices=["auto", "simplex", "highs"], default="auto")
    p.add_argument("--size-guard", type=int)
    p.add_argument("--lp-only", action="store_true", help="skip the certificate path")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("certify", parents=[common], help="check the ground truth with the recipe certificate")
    p.add_argument("--instance", required=True)
    p.add_argument("--gamma", type=float)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("tfn-scan", parents=[common], help="tabulate T on (0, r]")
    p.add_argument("--r", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=1.29)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--grid", type=int, default=1000)
    p.add_argument("--out")
    p.set_defaults(func=cmd_tfn_scan)

    p = sub.add_parser("recovery-rate", parents=[common], help="recovery rate over a seed range")
    _add_campaign_flags(p)
    p.add_argument("--out", help="per-trial CSV")
    p.set_defaults(func=cmd_recovery_rate)

    p = sub.add_parser("scan-delta", parents=[common], help="recovery rate over a grid of delta")
    _add_campaign_flags(p)
    p.add_argument("--deltas", type=_floats, required=True)
    p.add_argument("--out", help="per-trial CSV; the per-delta table goes to <out>_rates.csv")
    p.set_defaults(func=cmd_scan_delta)

    p = sub.add_parser("counterexample-b", parents=[common], help="witness campaign on seven annulus balls")
    p.add_argument("--n", type=int, default=3000)
    p.add_argument("--seeds", type=int, default=30)
    p.add_argument("--eps", type=float, default=exp.COUNTEREXAMPLE_EPS)
    p.add_argument("--interior", type=float, default=exp.COUNTEREXAMPLE_INTERIOR)
    p.add_argument("--lp-n", type=int, help="also solve the LP at this many points per ball")
    p.add_argument("--lp-seeds", type=int, default=20)
    p.add_argument("--out")
    p.set_defaults(func=cmd_counterexample_b)

    p = sub.add_parser("order-mismatch-a", parents=[common], help="unequal cluster sizes campaign")
    p.add_argument("--n", type=_ints, default=[100, 1000, 10000])
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--seed-start", type=int, default=0)
    p.add_argument("--delta", type=float, default=4.0)
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--control", action="store_true", help="equal cluster sizes")
    p.add_argument("--out")
    p.set_defaults(func=cmd_order_mismatch_a)

    p = sub.add_parser("selftest", parents=[common], help="fast invariant checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="[%(name)s] %(message)s",
        stream=sys.stderr,
    )
    if args.threads is not None and args.threads < 1:
        logger.error("--threads must be >= 1")
        return 2
    try:
        return args.func(args)
    except KmrError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exit_code_for(exc)
    except ValidationError as exc:
        logger.error("invalid parameters: %s", exc)
        return 2
