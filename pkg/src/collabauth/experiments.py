"""Experiment runners, sweeps, a centralized baseline, and result files."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .consensus import AdmmConfig, admm_batch
from .core_types import FeatureKind, Position
from .decision import (
    MonteCarloEstimate,
    ThresholdParams,
    attacker_positions,
    comm_instances,
    legitimate_trials,
    rejected,
    simulate_consensus,
)
from .measurement import NoiseModel, sample_ranges
from .messages import MessageBus
from .protocol import CampaignEpoch, LocalizationResult, RoundOutcome, localize_attacker, orchestrate_round, run_campaign
from .scenario import ScenarioConfig

PEER_COUNTS = (3, 4, 5)


@dataclass(frozen=True)
class RunRecord:
    epoch: int
    verdict: str
    x0: Position
    detection_error_m: float
    iterations: int
    message_count: int
    group_members: Tuple[str, ...]
    converged: bool = False
    localization_error_m: Optional[float] = None


@dataclass
class Experiment:
    record: RunRecord
    outcome: RoundOutcome
    localization: Optional[LocalizationResult]
    bus: MessageBus

    @property
    def x_trace(self):
        return self.outcome.result.x_trace


def _record(epoch: int, outcome: RoundOutcome, transmitter: Position, loc: Optional[LocalizationResult]) -> RunRecord:
    result = outcome.result
    return RunRecord(
        epoch=epoch,
        verdict=outcome.decision.verdict.value,
        x0=result.x0,
        detection_error_m=result.x0.distance_to(transmitter),
        iterations=result.iterations,
        message_count=outcome.peer_messages,
        group_members=tuple(sorted(outcome.group.members)),
        converged=result.converged,
        localization_error_m=None if loc is None else loc.residual_error,
    )


def run_single(config: ScenarioConfig, seed: Optional[int] = None, bus: Optional[MessageBus] = None) -> Experiment:
    """One authentication round of the scenario's initial group at epoch 0."""
    if seed is not None:
        config = config.with_seed(seed)
    rng = np.random.default_rng(config.seed)
    bus = bus if bus is not None else MessageBus()
    inputs = config.round_inputs(0)
    outcome = orchestrate_round(config.provider, config.initial_group(), config.pool, inputs, config, rng, bus)
    truth = config.attacker.pos if config.attacker is not None else None
    loc = localize_attacker(outcome.decision, outcome.result, truth)
    return Experiment(_record(0, outcome, inputs.transmitter_pos, loc), outcome, loc, bus)


# the three figure set-ups differ only in their scenario files
experiment_indoor = run_single
experiment_outdoor = run_single
experiment_localization = run_single


def mean_over_seeds(config: ScenarioConfig, seeds: Iterable[int], field: str = "detection_error_m"):
    """Mean and standard error of a RunRecord field over independent seeds."""
    values = np.array([getattr(run_single(config, s).record, field) for s in seeds], dtype=float)
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0


def campaign_records(trace: Sequence[CampaignEpoch], config: ScenarioConfig) -> List[dict]:
    rows = []
    for ep in trace:
        row = {
            "epoch": ep.epoch,
            "user_pos": ep.user_pos,
            "group_members": tuple(sorted(ep.group.members)),
            "target_size": ep.target_size,
            "departed": tuple(d for d, _ in ep.replacements),
            "joined": tuple(j for _, j in ep.replacements if j is not None),
        }
        if ep.outcome is not None:
            rec = _record(ep.epoch, ep.outcome, config.transmitter_pos_at(ep.epoch), None)
            row.update(
                verdict=rec.verdict,
                x0=rec.x0,
                detection_error_m=rec.detection_error_m,
                iterations=rec.iterations,
                message_count=rec.message_count,
                error="",
            )
        else:
            row.update(
                verdict="error",
                x0=Position.unobservable(),
                detection_error_m=math.inf,
                iterations=0,
                message_count=0,
                error=ep.error,
            )
        rows.append(row)
    return rows


def run_campaign_experiment(config: ScenarioConfig, epochs: Optional[int] = None, seed: Optional[int] = None):
    if seed is not None:
        config = config.with_seed(seed)
    rng = np.random.default_rng(config.seed)
    bus = MessageBus()
    trace = run_campaign(config, epochs or config.epochs, rng, bus)
    return trace, bus


# --- sweeps ----------------------------------------------------------------
#
# Every sweep cell draws its trials from np.random.default_rng([seed, cell])
# where ``cell`` indexes the peer count, so cells are independent of each
# other and of evaluation order. Within a peer count, all parameter values
# reuse the same trials.


def _cell_rng(config: ScenarioConfig, cell: int):
    return np.random.default_rng([config.seed, cell])


def sweep_error_bound(
    config: ScenarioConfig, bounds: Sequence[float], peer_counts=PEER_COUNTS, seeds: int = 30
) -> List[dict]:
    """Mean consensus iterations and peer messages versus the stopping bound."""
    if seeds < 30:
        raise ValueError("use at least 30 seeds per cell")
    rows = []
    for cell, n in enumerate(peer_counts):
        sub = config.with_peers(n, FeatureKind.RSSI)
        b = np.array([p.b.as_array() for p in sorted(sub.peers, key=lambda p: p.peer)])
        true_d = np.linalg.norm(b - sub.user_true_pos.as_array(), axis=1)
        h = sample_ranges(np.tile(true_d, (seeds, 1)), True, sub.path_loss, sub.noise, _cell_rng(config, cell))
        bb = np.broadcast_to(b, (seeds,) + b.shape)
        for eps in sorted(bounds):
            run = admm_batch(bb, h, dataclasses.replace(sub.admm, stop_eps=eps))
            msgs = [comm_instances(int(k), n) for k in run.iterations]
            rows.append(
                {
                    "peers": n,
                    "stop_eps": eps,
                    "mean_iterations": float(run.iterations.mean()),
                    "mean_message_count": float(np.mean(msgs)),
                    "converged_fraction": float(run.converged.mean()),
                    "seeds": seeds,
                }
            )
    return rows


def sweep_threshold_fa(
    config: ScenarioConfig, nus: Sequence[float], peer_counts=PEER_COUNTS, trials: int = 10_000
) -> List[dict]:
    """Monte-Carlo false-alarm rate versus threshold, RSSI peers."""
    rows = []
    for cell, n in enumerate(peer_counts):
        sub = config.with_peers(n, FeatureKind.RSSI)
        run = legitimate_trials(sub, trials, _cell_rng(config, cell))
        claimed = sub.user_claimed_pos.as_array()
        for nu in sorted(nus):
            est = MonteCarloEstimate.from_flags(rejected(run.x0, run.converged, claimed, nu))
            rows.append({"peers": n, "nu": nu, "fa": est.estimate, "stderr": est.stderr, "trials": est.trials})
    return rows


def sweep_threshold_md(
    config: ScenarioConfig,
    nus: Sequence[float],
    distance_model: ThresholdParams,
    peer_counts=PEER_COUNTS,
    trials: int = 10_000,
) -> List[dict]:
    """Monte-Carlo missed-detection rate versus threshold for log-normally placed attackers."""
    rows = []
    for cell, n in enumerate(peer_counts):
        sub = config.with_peers(n, FeatureKind.RSSI)
        rng = _cell_rng(config, cell)
        c = attacker_positions(sub, trials, rng, distance_model)
        run = simulate_consensus(sub, c, rng)
        claimed = sub.user_claimed_pos.as_array()
        for nu in sorted(nus):
            est = MonteCarloEstimate.from_flags(~rejected(run.x0, run.converged, claimed, nu))
            rows.append({"peers": n, "nu": nu, "md": est.estimate, "stderr": est.stderr, "trials": est.trials})
    return rows


def sweep_snr(
    config: ScenarioConfig, snrs: Sequence[float], peer_counts=PEER_COUNTS, seeds: int = 100
) -> List[dict]:
    """Mean detection error versus SNR, RSSI peers."""
    if seeds < 100:
        raise ValueError("use at least 100 seeds per cell")
    rows = []
    for cell, n in enumerate(peer_counts):
        for snr in snrs:
            sub = config.with_peers(n, FeatureKind.RSSI).with_noise(NoiseModel(snr, config.noise.tra_sigma_m))
            run = legitimate_trials(sub, seeds, _cell_rng(config, cell))
            err = np.linalg.norm(run.x0 - sub.user_true_pos.as_array(), axis=1)
            rows.append(
                {
                    "peers": n,
                    "snr_db": snr,
                    "mean_error_m": float(err.mean()),
                    "stderr": float(err.std(ddof=1) / math.sqrt(seeds)),
                    "converged_fraction": float(run.converged.mean()),
                    "seeds": seeds,
                }
            )
    return rows


# --- centralized baseline --------------------------------------------------


@dataclass(frozen=True)
class BaselineRecord:
    x0: Position
    detection_error_m: float
    iterations: int
    message_count: int
    converged: bool
    peers: int


def centralized_fit(b, h, x_init, stop_eps: float, k_max: int):
    """Gauss-Newton on sum (‖x - b_n‖ - h_n)² at one aggregator.

    Returns (x, iterations, converged). Directions the geometry cannot
    resolve (e.g. x3 for coplanar peers) are left untouched.
    """
    x = np.array(x_init, dtype=float)
    for k in range(1, k_max + 1):
        diff = x - b
        dist = np.linalg.norm(diff, axis=1)
        dist = np.where(dist > 0, dist, 1e-12)
        jac = diff / dist[:, None]
        step, *_ = np.linalg.lstsq(jac, h - dist, rcond=None)
        x = x + step
        if np.linalg.norm(step) <= stop_eps:
            return x, k, True
    return x, k_max, False


def baseline_centralized(config: ScenarioConfig, seed: Optional[int] = None) -> BaselineRecord:
    """Every peer uploads its range to one aggregator each iteration.

    Uses the same seed-to-noise mapping as :func:`run_single`, so both
    solvers see identical observations for a given seed.
    """
    if seed is not None:
        config = config.with_seed(seed)
    exp = run_single(config)
    peers = sorted(config.peers, key=lambda p: p.peer)
    obs = {o.peer: o for o in exp.outcome.observations}
    b = np.array([p.b.as_array() for p in peers])
    h = np.array([obs[p.peer].distance(p.feature) for p in peers])
    x, k, ok = centralized_fit(b, h, b.mean(axis=0), config.admm.stop_eps, config.admm.k_max)
    x0 = Position(*x)
    return BaselineRecord(
        x0=x0,
        detection_error_m=x0.distance_to(config.transmitter_pos_at(0)),
        iterations=k,
        message_count=k * len(peers),
        converged=ok,
        peers=len(peers),
    )


# --- output ----------------------------------------------------------------


def _fmt_float(v: float) -> str:
    return f"{v:.9g}"


def _flatten(record) -> dict:
    if dataclasses.is_dataclass(record):
        items = [(f.name, getattr(record, f.name)) for f in dataclasses.fields(record)]
    else:
        items = list(record.items())
    flat = {}
    for key, value in items:
        if isinstance(value, Position):
            for i, c in enumerate((value.x1, value.x2, value.x3), 1):
                flat[f"{key}_{i}"] = c
        elif isinstance(value, (tuple, list)):
            flat[key] = ";".join(str(v) for v in value)
        elif isinstance(value, (np.floating, np.integer, np.bool_)):
            flat[key] = value.item()
        else:
            flat[key] = value
    return flat


def _cell(value):
    if isinstance(value, bool) or value is None:
        return "" if value is None else str(value).lower()
    if isinstance(value, float):
        return _fmt_float(value)
    return str(value)


def _json_value(value):
    if isinstance(value, float):
        return float(_fmt_float(value)) if math.isfinite(value) else None
    return value


def render_results(records, fmt: str = "csv") -> str:
    rows = [_flatten(r) for r in records]
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"unknown format {fmt!r}")
    columns: List[str] = []
    for row in rows:
        for key in row:
            if key not in columns:
                columns.append(key)
    buf = io.StringIO()
    if fmt == "csv":
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in columns])
    else:
        for row in rows:
            buf.write(json.dumps({c: _json_value(row.get(c)) for c in columns}) + "\n")
    return buf.getvalue()


def emit_results(records, fmt: str, path) -> None:
    """Write records as CSV or JSON lines; columns keep first-seen field order."""
    text = render_results(records, fmt)
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
