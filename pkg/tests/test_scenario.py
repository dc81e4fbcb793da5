import pytest

from collabauth.core_types import FeatureKind, Position
from collabauth.scenario import BUNDLED, ScenarioError, bundled_path, load_scenario, parse_scenario

MINIMAL = """\
seed = 1
user.true_pos = "6 6"
peers.a.pos = "0 0"
peers.b.pos = "10 0"
peers.c.pos = "0 10"
"""


def _problems(text):
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(text)
    return exc.value.problems


@pytest.mark.parametrize("name", BUNDLED)
def test_bundled_load(name):
    config = load_scenario(name)
    assert len(config.peers) >= 3
    assert config.name == name
    assert bundled_path(name).exists()


def test_indoor_layout():
    config = load_scenario("indoor")
    feats = [p.feature for p in config.peers]
    assert feats.count(FeatureKind.RSSI) == 4 and feats.count(FeatureKind.TRA) == 1
    assert config.user_true_pos == Position(6, 6, 0)
    for p in config.peers:
        x = p.b.as_array()
        assert 0 <= x[0] <= 10 and 0 <= x[1] <= 10


def test_outdoor_layout():
    config = load_scenario("outdoor")
    pts = sorted(tuple(p.b.as_array()[:2]) for p in config.peers)
    assert pts == sorted([(-16, 12), (-22, -20), (28, 16), (24, -18), (12, 14)])
    assert config.noise.snr_db == 30


def test_minimal_defaults():
    config = parse_scenario(MINIMAL)
    assert config.user_claimed_pos == Position(6, 6, 0)
    assert config.seed == 1
    assert config.admm.rho == 2.0


def test_missing_seed():
    assert _problems(MINIMAL.replace("seed = 1\n", "")) == ["seed required"]


def test_two_peers():
    problems = _problems(MINIMAL.replace('peers.c.pos = "0 10"\n', ""))
    assert any("at least 3 peers" in p for p in problems)


def test_unknown_key_has_line():
    assert _problems(MINIMAL + "noise.snr = 30\n") == ["line 6: unknown key 'noise.snr'"]


def test_duplicate_key():
    problems = _problems(MINIMAL + "seed = 2\n")
    assert problems == ["line 6: duplicate key 'seed' (first on line 1)"]


def test_bad_values_are_all_reported():
    text = MINIMAL.replace("seed = 1", "seed = x").replace('"6 6"', '"6 q"') + "peers.a.feature = LIDAR\njunk line\n"
    problems = _problems(text)
    assert len(problems) == 4
    assert any(p.startswith("line 1: seed") for p in problems)
    assert any(p.startswith("line 2: user.true_pos") for p in problems)
    assert any("LIDAR" in p for p in problems)
    assert any("junk line" in p for p in problems)


def test_comments_quotes_and_prefix():
    text = "# header\n" + "\n".join("scenario." + line for line in MINIMAL.splitlines()) + "\nname = \"x\"  # trailing\n"
    config = parse_scenario(text)
    assert config.name == "x"


def test_unobservable_user():
    config = parse_scenario(MINIMAL.replace('"6 6"', "unobservable") + 'user.claimed_pos = "6 6"\n')
    assert not config.user_true_pos.observable


def test_unobservable_needs_claim():
    problems = _problems(MINIMAL.replace('"6 6"', "unobservable"))
    assert any("claimed_pos" in p for p in problems)


def test_seed_range():
    assert any("64-bit" in p for p in _problems(MINIMAL.replace("seed = 1", "seed = -1")))
    parse_scenario(MINIMAL.replace("seed = 1", f"seed = {2**64 - 1}"))


def test_load_from_path(tmp_path):
    path = tmp_path / "s.cfg"
    path.write_text(MINIMAL)
    assert load_scenario(path).seed == 1
    assert load_scenario(str(path)).seed == 1


def test_load_inline():
    assert load_scenario(MINIMAL).seed == 1


def test_load_missing_file():
    with pytest.raises(ScenarioError):
        load_scenario("does/not/exist.cfg")


def test_tau_schedule():
    config = load_scenario("campaign")
    assert config.cost_params(24, 10).tau == 3100
    assert config.cost_params(25, 10).tau == 1300
    assert config.cost_params(40, 7).n_available == 7


def test_user_motion():
    config = load_scenario("campaign")
    assert config.user_pos_at(3).as_array() == pytest.approx([3 * 2.7778, 0, 0])
    assert config.round_inputs(3).claimed_pos == config.user_pos_at(3)


def test_with_peers_forces_feature():
    config = load_scenario("outdoor").with_peers(3, FeatureKind.RSSI)
    assert len(config.peers) == 3
    assert all(p.feature is FeatureKind.RSSI for p in config.peers)
    assert all(config.pool.peer_state(p.peer).feature is FeatureKind.RSSI for p in config.peers)
    with pytest.raises(ValueError):
        config.with_peers(9)


def test_attacker_fooling():
    config = load_scenario("localization")
    inputs = config.round_inputs(0)
    assert all(inputs.perceived_id(p.peer) == "user-7" for p in config.peers)
    partial = parse_scenario(MINIMAL + 'attacker.pos = "0 5"\nattacker.forged_id = user\nattacker.fools = "a b"\n')
    inputs = partial.round_inputs(0)
    assert inputs.perceived_id("a") == "user"
    assert inputs.perceived_id("c") != "user"


def test_nu_override_and_threshold():
    config = parse_scenario(MINIMAL + "threshold.nu = 0.75\n")
    assert config.nu == 0.75
    assert parse_scenario(MINIMAL).nu == pytest.approx(0.5)


def test_seed_override():
    assert load_scenario("indoor").with_seed(99).seed == 99
