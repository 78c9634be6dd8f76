import numpy as np
import pytest

from irsnoma.config import ConfigError, ExperimentConfig, from_dict, load_config, parse_override, substream


def test_defaults():
    c = load_config()
    assert c.scene.users == 5 and c.scene.num_mirrors == 49 and len(c.scene.ap_positions) == 4
    assert c.link.bandwidth == 20e6 and c.link.p_elec == 2.0 and c.link.p_max == 5.0
    assert c.agents.gamma == 0.99 and c.agents.tau == 0.001
    assert load_config("default").to_dict() == c.to_dict()


def test_unknown_key_reports_path():
    with pytest.raises(ConfigError) as exc:
        load_config(None, ["agents.gamam=0.5"])
    assert exc.value.key == "agents.gamam"
    with pytest.raises(ConfigError, match="nosuch"):
        from_dict({"nosuch": {}})


@pytest.mark.parametrize("item", ["scene.users=two", "agents.gamma=[1]", "env.mobility=1", "scene.users=2.5",
                                  "scene.users=0", "agents.gamma=1.5", "run.scheme=magic",
                                  "scene.reflectance=1.2", "link.p_opt=-1"])
def test_invalid_values(item):
    with pytest.raises(ConfigError):
        load_config(None, [item])


def test_override_parsing():
    assert parse_override("a.b=3e-5") == ("a.b", 3e-5)
    assert parse_override("a=[1e6, 2.5e6]") == ("a", [1e6, 2.5e6])
    with pytest.raises(ConfigError):
        parse_override("novalue")
    c = load_config(None, ["agents.lr_actor=3e-5", "env.r_min_range=[1e6,2e6]"])
    assert c.agents.lr_actor == 3e-5 and c.env.r_min_range == [1e6, 2e6]


def test_yaml_file_round_trip(tmp_path):
    c = load_config(None, ["scene.users=3", "agents.lr_critic=1e-4"])
    p = tmp_path / "c.yaml"
    p.write_text(c.dump())
    assert load_config(p).to_dict() == c.to_dict()
    (tmp_path / "partial.yaml").write_text("agents:\n  tau: 5e-3\n")
    assert load_config(tmp_path / "partial.yaml").agents.tau == 5e-3
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    (tmp_path / "bad.yaml").write_text("agents: [unclosed")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")


def test_copy_is_independent():
    c = ExperimentConfig()
    d = c.copy()
    d.scene.irs_rows = 0
    assert c.scene.irs_rows == 7


def test_substreams_independent_and_stable():
    a = substream(1, "env.mobility").random(4)
    np.testing.assert_array_equal(a, substream(1, "env.mobility").random(4))
    assert not np.array_equal(a, substream(1, "env.traffic").random(4))
    assert not np.array_equal(a, substream(2, "env.mobility").random(4))
