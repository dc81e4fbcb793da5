"""Consensus ADMM over range residuals.

Each peer n holds a local estimate x_n of the device position and a dual
y_n. Per iteration::

    x_n <- argmin_x |‖x - b_n‖ - H_n| + (rho/2)‖x - (xbar - y_n/rho)‖²
    xbar <- mean_n x_n
    y_n <- y_n + rho (x_n - xbar)

The x-step has a closed form along the ray from b_n through the prox
centre, so every iteration is a handful of vector operations. The kernel
works on a batch of independent problems at once; a single authentication
round is a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core_types import ConsensusResult, Observation, PeerState, Position
from .messages import MessageBus, MessageKind

_DEGENERATE_DIR = np.array([1.0, 0.0, 0.0])


@dataclass(frozen=True)
class AdmmConfig:
    rho: float = 2.0
    stop_eps: float = 1e-4
    k_max: int = 10_000

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not self.stop_eps > 0:
            raise ValueError("stop_eps must be positive")
        if int(self.k_max) != self.k_max or self.k_max < 1:
            raise ValueError("k_max must be a positive integer")


def _check_observable(obs: Observation):
    if not obs.observable:
        raise ValueError(f"peer {obs.peer} cannot observe the user; no objective to minimize")


def local_objective(x: Position, peer: PeerState, obs: Observation) -> float:
    _check_observable(obs)
    h = obs.distance(peer.feature)
    return abs(float(np.linalg.norm(x.as_array() - peer.b.as_array())) - h)


def radial_prox(b, h, v, rho):
    """Minimizer of |‖x-b‖-h| + (rho/2)‖x-v‖², broadcast over leading axes.

    With d = ‖v-b‖ the answer lies on the ray b -> v at radius
    d - 1/rho (outside the sphere), d + 1/rho (inside) or exactly h.
    When v == b any sphere point is optimal; +x1 is used.
    """
    diff = v - b
    d = np.linalg.norm(diff, axis=-1)
    step = 1.0 / rho
    r = np.where(d - step > h, d - step, np.where(d + step < h, d + step, h))
    safe = np.where(d > 0, d, 1.0)
    direction = np.where((d > 0)[..., None], diff / safe[..., None], _DEGENERATE_DIR)
    return b + r[..., None] * direction


def x_update(peer: PeerState, obs: Observation, xbar: Position, cfg: AdmmConfig) -> Position:
    _check_observable(obs)
    v = xbar.as_array() - np.asarray(peer.y) / cfg.rho
    x = radial_prox(peer.b.as_array(), obs.distance(peer.feature), v, cfg.rho)
    return Position(*x)


@dataclass
class BatchResult:
    x0: np.ndarray  # (T, 3)
    iterations: np.ndarray  # (T,)
    converged: np.ndarray  # (T,)
    residual_trace: Optional[np.ndarray] = None  # (K,) for a recorded single run
    x_trace: Optional[np.ndarray] = None  # (K, N, 3)
    y_trace: Optional[np.ndarray] = None  # (K, N, 3)


def admm_batch(b, h, cfg: AdmmConfig, record: bool = False) -> BatchResult:
    """Run T independent consensus problems in lockstep.

    ``b`` is (T, N, 3) peer locations and ``h`` (T, N) observed ranges.
    A problem stops once both its largest per-peer step and its largest
    distance to the average drop to ``cfg.stop_eps``; it is then frozen
    while the rest continue. ``record`` keeps per-iteration traces and
    requires T == 1.
    """
    b = np.asarray(b, dtype=float)
    h = np.asarray(h, dtype=float)
    if b.ndim != 3 or b.shape[-1] != 3 or h.shape != b.shape[:2]:
        raise ValueError(f"shape mismatch: b {b.shape}, h {h.shape}")
    T = b.shape[0]
    if record and T != 1:
        raise ValueError("traces are only recorded for a single problem")

    rho, eps = cfg.rho, cfg.stop_eps
    x = b.copy()
    y = np.zeros_like(b)
    xbar = b.mean(axis=1)
    iterations = np.full(T, int(cfg.k_max))
    converged = np.zeros(T, dtype=bool)
    active = np.arange(T)
    res_tr, x_tr, y_tr = [], [], []

    for k in range(1, int(cfg.k_max) + 1):
        xa = radial_prox(b[active], h[active], xbar[active, None, :] - y[active] / rho, rho)
        step = np.linalg.norm(xa - x[active], axis=-1).max(axis=1)
        xbar_a = xa.mean(axis=1)
        ya = y[active] + rho * (xa - xbar_a[:, None, :])
        gap = np.linalg.norm(xa - xbar_a[:, None, :], axis=-1).max(axis=1)
        x[active], xbar[active], y[active] = xa, xbar_a, ya
        if record:
            res_tr.append(step[0])
            x_tr.append(xa[0].copy())
            y_tr.append(ya[0].copy())
        done = (step <= eps) & (gap <= eps)
        if done.any():
            finished = active[done]
            iterations[finished] = k
            converged[finished] = True
            active = active[~done]
            if active.size == 0:
                break

    out = BatchResult(x0=xbar, iterations=iterations, converged=converged)
    if record:
        out.residual_trace = np.array(res_tr)
        out.x_trace = np.array(x_tr)
        out.y_trace = np.array(y_tr)
    return out


def _aligned(peers: Sequence[PeerState], observations: Sequence[Observation]):
    if len(peers) != len(observations):
        raise ValueError(f"{len(peers)} peers but {len(observations)} observations")
    if len(peers) < 3:
        raise ValueError(f"at least 3 peers are needed to fix a position, got {len(peers)}")
    for p, o in zip(peers, observations):
        if p.peer != o.peer:
            raise ValueError(f"peer/observation lists misaligned at {p.peer} vs {o.peer}")
        _check_observable(o)
    if len({p.peer for p in peers}) != len(peers):
        raise ValueError("duplicate peer ids")
    # fixed reduction order, independent of how the caller listed the peers
    order = sorted(range(len(peers)), key=lambda i: peers[i].peer)
    return [peers[i] for i in order], [observations[i] for i in order]


def run_consensus(
    peers: Sequence[PeerState],
    observations: Sequence[Observation],
    cfg: AdmmConfig = AdmmConfig(),
    bus: Optional[MessageBus] = None,
) -> ConsensusResult:
    """Drive the peers to an agreed position.

    Local variables start at the peers' own locations with zero duals. When
    a bus is given, iteration k publishes one ParamShare per ordered peer
    pair, carrying x_n^k, in its own bus round.
    """
    peers, observations = _aligned(peers, observations)
    b = np.array([p.b.as_array() for p in peers])[None]
    h = np.array([[o.distance(p.feature) for p, o in zip(peers, observations)]])
    run = admm_batch(b, h, cfg, record=True)
    K = int(run.iterations[0])

    ids = tuple(p.peer for p in peers)
    if bus is not None:
        for k in range(K):
            rnd = bus.next_round()
            payloads = {pid: tuple(run.x_trace[k, n]) for n, pid in enumerate(ids)}
            bus.broadcast(MessageKind.PARAM_SHARE, ids, rnd, payloads)

    return ConsensusResult(
        x0=Position(*run.x0[0]),
        iterations=K,
        converged=bool(run.converged[0]),
        residual_trace=tuple(float(r) for r in run.residual_trace),
        x_trace=run.x_trace,
        peers=ids,
    )
