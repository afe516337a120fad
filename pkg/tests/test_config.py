import pytest

from tenext.config import SCHEMA, ConfigError, RunConfig
from tenext.model import PRESETS, TINY_CHANNELS


def test_defaults_and_presets():
    c = RunConfig()
    assert c.get("seed") == 0 and c.get("model.preset") == "tiny"
    assert c.model_config().channel_plan == TINY_CHANNELS
    assert c.model_config().kernel_size == PRESETS["tiny"]["kernel_size"]
    c.set("model.preset", "tenext")
    assert c.model_config().kernel_size == 7


def test_parse_comments_types_and_overrides():
    text = """
    # a run
    seed = 7            # trailing comment
    model.kernel_size = 3
    model.skip_levels = 2, 3
    train.target_f1 = none
    rrt.smooth = false
    plan.goal = 4.5,-1
    """
    c = RunConfig.parse(text)
    assert c.get("seed") == 7 and c.get("model.kernel_size") == 3
    assert c.get("model.skip_levels") == (2, 3)
    assert c.get("train.target_f1") is None and c.get("rrt.smooth") is False
    assert c.get("plan.goal") == (4.5, -1.0)
    c.override(["train.lr=0.01", "seed = 9"])
    assert c.train_config().lr == 0.01 and c.train_config().seed == 9
    assert c.rrt_params().seed == 9 and c.model_config().seed == 9


def test_unknown_key_and_bad_value_report_line():
    with pytest.raises(ConfigError, match=r"run.cfg:2: unknown config key 'model.width'"):
        RunConfig.parse("seed = 1\nmodel.width = 3\n", "run.cfg")
    with pytest.raises(ConfigError, match=r"<config>:1: bad value for train.lr"):
        RunConfig.parse("train.lr = fast")
    with pytest.raises(ConfigError, match="key = value"):
        RunConfig.parse("just words")
    with pytest.raises(ConfigError):
        RunConfig().override(["noequals"])


def test_invalid_component_values_are_config_errors():
    with pytest.raises(ConfigError, match="synth"):
        RunConfig({"synth.extent": "0"}).scene_spec()
    with pytest.raises(ConfigError, match="train"):
        RunConfig({"train.patience": "0"}).train_config()
    with pytest.raises(ConfigError, match="preset"):
        RunConfig({"model.preset": "huge"}).model_config()
    with pytest.raises(ConfigError, match="sim"):
        RunConfig({"sim.dt": "0.5"}).sim_params()


def test_dump_round_trip(tmp_path):
    c = RunConfig.parse("seed = 3\nmodel.kernel_size = 3\nplan.start = 1,2\ngrid.cell = 0.2\n")
    c.write(tmp_path / "eff.txt")
    back = RunConfig.load(tmp_path / "eff.txt")
    assert all(back.get(k) == c.get(k) for k in SCHEMA)
    assert back.dumps() == c.dumps()
    assert back.model_config() == c.model_config()
    lines = c.dumps().splitlines()
    assert lines[0].startswith("#") and len(lines) == len(SCHEMA) + 1
