"""Command-line entry point.

Exit codes: 0 success, 1 invalid scenario or arguments, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional, Sequence

from . import experiments as ex
from .decision import initial_threshold, optimal_peer_count, optimal_threshold, peer_count, threshold
from .scenario import ScenarioError, load_scenario

SWEEPS = ("error-bound", "threshold-fa", "threshold-md", "snr")
SWEEP_DEFAULTS = {
    "error-bound": ([1e-1, 1e-2, 1e-3, 1e-4], 30),
    "threshold-fa": ([0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0], 10_000),
    "threshold-md": ([0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0], 10_000),
    "snr": ([10.0, 20.0, 30.0], 100),
}


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="scenario file, bundled name, or inline text")
    common.add_argument("--seed", type=_seed, default=None, help="override the scenario seed")
    common.add_argument("--out", default=None, help="result file (default: stdout)")
    common.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    common.add_argument("--trials", type=int, default=None, help="seeds or Monte-Carlo trials per cell")

    parser = argparse.ArgumentParser(prog="collabauth", description="Collaborative position authentication simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", parents=[common], help="single authentication round")
    run.add_argument("--trace", default=None, help="write per-iteration peer estimates here")
    run.add_argument("--messages", default=None, help="export the message log here")

    sweep = sub.add_parser("sweep", parents=[common], help="parameter sweep")
    sweep.add_argument("name", choices=SWEEPS)
    sweep.add_argument("--values", type=_floats, default=None, help="comma-separated sweep values")
    sweep.add_argument("--peers", type=_ints, default=list(ex.PEER_COUNTS), help="comma-separated peer counts")

    camp = sub.add_parser("campaign", parents=[common], help="moving user with group maintenance")
    camp.add_argument("--epochs", type=int, default=None)
    camp.add_argument("--messages", default=None, help="export the message log here")

    sub.add_parser("calibrate", parents=[common], help="threshold and peer-count calibration")
    sub.add_parser("baseline", parents=[common], help="centralized fit next to the distributed run")
    return parser


def _load(args, default: str):
    config = load_scenario(args.config or default)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def _write(records, args) -> None:
    if args.out:
        ex.emit_results(records, args.format, args.out)
    else:
        sys.stdout.write(ex.render_results(records, args.format))


def _cmd_run(args):
    config = _load(args, "indoor")
    exp = ex.run_single(config)
    if args.trace:
        rows = []
        ids = exp.outcome.result.peers
        trace = exp.x_trace if exp.x_trace is not None else []
        for k, xs in enumerate(trace, 1):
            for pid, x in zip(ids, xs):
                rows.append({"iteration": k, "peer": pid, "x_1": float(x[0]), "x_2": float(x[1]), "x_3": float(x[2])})
        ex.emit_results(rows, args.format, args.trace)
    if args.messages:
        exp.bus.export(args.messages)
    _write([exp.record], args)


def _cmd_sweep(args):
    config = _load(args, "outdoor")
    values, default_trials = SWEEP_DEFAULTS[args.name]
    values = args.values or values
    trials = args.trials or default_trials
    if args.name == "error-bound":
        rows = ex.sweep_error_bound(config, values, args.peers, trials)
    elif args.name == "threshold-fa":
        rows = ex.sweep_threshold_fa(config, values, args.peers, trials)
    elif args.name == "threshold-md":
        rows = ex.sweep_threshold_md(config, values, config.threshold_params, args.peers, trials)
    else:
        rows = ex.sweep_snr(config, values, args.peers, trials)
    _write(rows, args)


def _cmd_campaign(args):
    config = _load(args, "campaign")
    trace, bus = ex.run_campaign_experiment(config, args.epochs)
    if args.messages:
        bus.export(args.messages)
    _write(ex.campaign_records(trace, config), args)


def _cmd_calibrate(args):
    config = _load(args, "outdoor")
    tp = config.threshold_params
    cost = config.cost_params(0, len(config.pool.available(0, config.user_pos_at(0))))
    row = {
        "nu_opt": optimal_threshold(tp),
        "nu_ini": initial_threshold(tp),
        "nu": threshold(tp),
        "nu_used": config.nu,
        "tau": cost.tau,
        "k_ave": cost.k_ave,
        "n_available": cost.n_available,
        "n_opt": optimal_peer_count(cost.tau, cost.k_ave),
        "peer_count": peer_count(cost),
    }
    _write([row], args)


def _cmd_baseline(args):
    config = _load(args, "outdoor")
    dist = ex.run_single(config).record
    base = ex.baseline_centralized(config)
    rows = [
        {"solver": "distributed", "x0": dist.x0, "detection_error_m": dist.detection_error_m,
         "iterations": dist.iterations, "message_count": dist.message_count, "converged": dist.converged},
        {"solver": "centralized", "x0": base.x0, "detection_error_m": base.detection_error_m,
         "iterations": base.iterations, "message_count": base.message_count, "converged": base.converged},
    ]
    if not base.converged:
        logging.getLogger(__name__).warning("centralized fit hit k_max without converging")
    _write(rows, args)


COMMANDS = {
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "campaign": _cmd_campaign,
    "calibrate": _cmd_calibrate,
    "baseline": _cmd_baseline,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage; that is a validation failure here
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.trials is not None and args.trials < 1:
        print("error: --trials must be at least 1", file=sys.stderr)
        return 1
    try:
        COMMANDS[args.command](args)
    except (ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
