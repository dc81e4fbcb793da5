import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from collabauth.consensus import AdmmConfig, admm_batch, local_objective, radial_prox, run_consensus, x_update
from collabauth.core_types import DeviceId, FeatureKind, Observation, PeerState, Position
from collabauth.messages import MessageBus, MessageKind

from oracles import prox_full_objective, prox_oracle, trilaterate


def _peers(points, feature=FeatureKind.RSSI):
    return [PeerState(DeviceId(f"p{i}"), Position.of(p), feature) for i, p in enumerate(points)]


def _exact_obs(peers, target):
    t = Position.of(target)
    return [Observation(p.peer, DeviceId("u"), h1=p.b.distance_to(t)) for p in peers]


INDOOR = [[2, 2], [9, 3], [5, 9.5], [9, 9], [1, 7]]


def test_config_validation():
    for kw in ({"rho": 0}, {"stop_eps": 0}, {"k_max": 0}, {"k_max": 1.5}):
        with pytest.raises(ValueError):
            AdmmConfig(**kw)


def test_local_objective_examples():
    peer = PeerState(DeviceId("a"), Position(0, 0, 0))
    obs = Observation(DeviceId("a"), DeviceId("u"), h1=5.0)
    assert local_objective(Position(3, 4, 0), peer, obs) == 0.0
    assert local_objective(Position(6, 8, 0), peer, obs) == pytest.approx(5.0)


def test_local_objective_random(rng):
    for _ in range(200):
        b, x = rng.normal(size=3) * 10, rng.normal(size=3) * 10
        h = rng.uniform(0.1, 20)
        peer = PeerState(DeviceId("a"), Position(*b), FeatureKind.TRA)
        obs = Observation(DeviceId("a"), DeviceId("u"), h2=h)
        assert local_objective(Position(*x), peer, obs) == pytest.approx(abs(np.sqrt(np.sum((x - b) ** 2)) - h), abs=1e-12)


def test_local_objective_unobservable():
    peer = PeerState(DeviceId("a"), Position(0, 0, 0))
    with pytest.raises(ValueError):
        local_objective(Position(1, 0, 0), peer, Observation(DeviceId("a"), DeviceId("u"), observable=False))


def test_x_update_fixed_point():
    peer = PeerState(DeviceId("a"), Position(0, 0, 0))
    obs = Observation(DeviceId("a"), DeviceId("u"), h1=5.0)
    out = x_update(peer, obs, Position(3, 4, 0), AdmmConfig(rho=1.0))
    assert out.as_array() == pytest.approx([3, 4, 0], abs=1e-12)


def test_x_update_outside_sphere():
    peer = PeerState(DeviceId("a"), Position(0, 0, 0))
    obs = Observation(DeviceId("a"), DeviceId("u"), h1=1.0)
    out = x_update(peer, obs, Position(3, 0, 0), AdmmConfig(rho=1.0))
    assert out.as_array() == pytest.approx([2, 0, 0], abs=1e-12)
    assert out.as_array() == pytest.approx(prox_oracle([0, 0, 0], 1.0, [3, 0, 0], 1.0), abs=1e-6)


def test_x_update_uses_dual():
    peer = PeerState(DeviceId("a"), Position(0, 0, 0), y=(1.0, 0.0, 0.0))
    obs = Observation(DeviceId("a"), DeviceId("u"), h1=10.0)
    # v = xbar - y/rho = [2,0,0]; inside the sphere, so r = 2 + 1/2
    out = x_update(peer, obs, Position(2.5, 0, 0), AdmmConfig(rho=2.0))
    assert out.as_array() == pytest.approx([2.5, 0, 0], abs=1e-12)


def test_x_update_degenerate_direction():
    out = radial_prox(np.zeros(3), 2.0, np.zeros(3), 1.0)
    assert out == pytest.approx([1.0, 0, 0])


@settings(max_examples=300, deadline=None)
@given(
    st.lists(st.floats(-20, 20), min_size=3, max_size=3),
    st.lists(st.floats(-20, 20), min_size=3, max_size=3),
    st.floats(0.0, 30.0),
    st.floats(0.05, 20.0),
)
def test_prox_is_global_minimizer(b, v, h, rho):
    b, v = np.array(b), np.array(v)
    x = radial_prox(b, h, v, rho)
    ref = prox_oracle(b, h, v, rho)
    f = prox_full_objective(x, b, h, v, rho)
    assert f <= prox_full_objective(ref, b, h, v, rho) + 1e-6
    # no nearby 3-D point does better
    rng = np.random.default_rng(0)
    for delta in rng.normal(size=(20, 3)) * 1e-3:
        assert f <= prox_full_objective(x + delta, b, h, v, rho) + 1e-12


def test_indoor_noiseless_converges():
    peers = _peers(INDOOR)
    res = run_consensus(peers, _exact_obs(peers, [6, 6, 0]))
    assert res.converged
    assert res.x0.distance_to(Position(6, 6, 0)) <= 1e-3
    assert res.iterations == len(res.residual_trace)


def test_localization_noiseless():
    peers = _peers([[-16, 12], [-22, -20], [28, 16], [24, -18]])
    res = run_consensus(peers, _exact_obs(peers, [0, 10, 0]))
    assert res.converged
    assert res.x0.distance_to(Position(0, 10, 0)) <= 1e-3


def test_inflated_observation_is_outvoted():
    peers = _peers(INDOOR)
    obs = _exact_obs(peers, [6, 6, 0])
    obs[0] = Observation(obs[0].peer, DeviceId("u"), h1=obs[0].h1 + 1e6)
    res = run_consensus(peers, obs, AdmmConfig(k_max=2000))
    b = np.array([p.b.as_array() for p in peers])
    h = np.array([o.h1 for o in obs])
    gaps = np.abs(np.linalg.norm(res.x0.as_array() - b, axis=1) - h)
    # the absolute residual behaves like L1 regression: one gross outlier is
    # ignored rather than dragging the agreed point
    assert (not res.converged) or gaps[0] > 1.0
    assert res.x0.distance_to(Position(6, 6, 0)) <= 1e-3


def test_noiseless_matches_least_squares():
    peers = _peers([[0, 0], [12, 1], [4, 10], [11, 9]])
    target = np.array([6.0, 5.0, 0.0])
    res = run_consensus(peers, _exact_obs(peers, target))
    b = np.array([p.b.as_array() for p in peers])[:, :2]
    h = np.linalg.norm(b - target[:2], axis=1)
    ref = trilaterate(b, h, [b.mean(axis=0)])
    assert res.x0.as_array()[:2] == pytest.approx(ref, abs=1e-3)


def test_errors():
    peers = _peers(INDOOR)
    obs = _exact_obs(peers, [6, 6, 0])
    with pytest.raises(ValueError, match="at least 3"):
        run_consensus(peers[:2], obs[:2])
    with pytest.raises(ValueError):
        run_consensus(peers, obs[:4])
    with pytest.raises(ValueError, match="misaligned"):
        run_consensus(peers, obs[::-1])
    bad = list(obs)
    bad[2] = Observation(bad[2].peer, DeviceId("u"), observable=False)
    with pytest.raises(ValueError):
        run_consensus(peers, bad)


def test_dual_sum_is_zero(rng):
    peers = _peers(INDOOR)
    b = np.array([p.b.as_array() for p in peers])[None]
    h = (np.linalg.norm(b[0] - [6, 6, 0], axis=1) * (1 + 0.03 * rng.standard_normal(5)))[None]
    run = admm_batch(b, h, AdmmConfig(), record=True)
    assert np.abs(run.y_trace.sum(axis=1)).max() <= 1e-9


def test_consensus_gap_after_convergence(rng):
    peers = _peers(INDOOR)
    b = np.array([p.b.as_array() for p in peers])
    for _ in range(20):
        h = np.linalg.norm(b - [6, 6, 0], axis=1) * (1 + 0.03 * rng.standard_normal(5))
        cfg = AdmmConfig(stop_eps=1e-3)
        run = admm_batch(b[None], h[None], cfg, record=True)
        if run.converged[0]:
            gap = np.linalg.norm(run.x_trace[-1] - run.x0[0], axis=1).max()
            assert gap <= 10 * cfg.stop_eps


def test_deterministic_traces():
    peers = _peers(INDOOR)
    obs = _exact_obs(peers, [5, 5, 0])
    r1 = run_consensus(peers, obs)
    r2 = run_consensus(peers, obs)
    assert np.array_equal(r1.x_trace, r2.x_trace)
    assert r1.residual_trace == r2.residual_trace


def test_peer_order_does_not_matter():
    peers = _peers(INDOOR)
    obs = _exact_obs(peers, [5, 5, 0])
    r1 = run_consensus(peers, obs)
    r2 = run_consensus(peers[::-1], obs[::-1])
    assert r1.x0 == r2.x0 and r1.iterations == r2.iterations


def test_batch_matches_single(rng):
    peers = _peers(INDOOR)
    b = np.array([p.b.as_array() for p in peers])
    h = np.linalg.norm(b - [6, 6, 0], axis=1) * (1 + 0.05 * rng.standard_normal((6, 5)))
    batch = admm_batch(np.broadcast_to(b, (6, 5, 3)), h, AdmmConfig())
    for t in range(6):
        one = admm_batch(b[None], h[t : t + 1], AdmmConfig())
        assert np.array_equal(one.x0[0], batch.x0[t])
        assert one.iterations[0] == batch.iterations[t]


def test_record_needs_single_problem():
    with pytest.raises(ValueError):
        admm_batch(np.zeros((2, 3, 3)), np.ones((2, 3)), AdmmConfig(), record=True)


def test_large_stop_bound_stops_at_once():
    peers = _peers(INDOOR)
    res = run_consensus(peers, _exact_obs(peers, [6, 6, 0]), AdmmConfig(stop_eps=1e3))
    assert res.iterations == 1 and res.converged


def test_param_share_count():
    peers = _peers(INDOOR)
    bus = MessageBus()
    res = run_consensus(peers, _exact_obs(peers, [6, 6, 0]), AdmmConfig(), bus)
    assert bus.count({MessageKind.PARAM_SHARE}) == res.iterations * 5 * 4
