import json

import pytest

from src.dataclass import (AttackConfig, CodecConfig, ConfigError, DataConfig, ExperimentParameter, load_config,
                           parse_flat_config)


def defaults_test():
    params = ExperimentParameter()
    assert params.attack.epsilon == 0.08 and params.attack.steps == 500
    assert params.attack.schedule_period == 100
    assert params.codec.kernel_size == 4
    assert params.codec.learning_rate == 3e-4 and params.codec.initializer == "orthogonal"
    assert params.defense.quality == 90
    assert set(params.dict()) == {"codec", "data", "attack", "diagnostics", "defense", "output"}


def flat_config_test(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\n"
                    "attack.epsilon = 0.1\n"
                    "attack.seeds = [4, 5]   # inline comment\n"
                    "attack.schedule = fixed\n"
                    "output.directory = runs/test\n")
    params = load_config(str(path))
    assert params.attack.epsilon == 0.1
    assert params.attack.seeds == [4, 5]
    assert params.attack.schedule == "fixed"
    assert params.output.directory == "runs/test"


def flat_config_errors_test():
    for text in ("attack.epsilon 0.1", "epsilon = 0.1", "attack.inner.epsilon = 1"):
        with pytest.raises(ConfigError):
            parse_flat_config(text)


def json_config_test(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"attack": {"steps": 40, "period": 8}, "codec": {"lam": 10.}}))
    params = load_config(str(path))
    assert params.attack.steps == 40 and params.attack.schedule_period == 8
    assert params.codec.lam == 10.
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    with pytest.raises(ConfigError):
        load_config(str(broken))
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))


def unknown_keys_warn_test(capsys):
    params = ExperimentParameter({"attack": {"epslion": 0.1}, "extras": {}})
    output = capsys.readouterr().out
    assert "epslion" in output and "extras" in output
    assert params.attack.epslion == 0.1


def validation_test():
    with pytest.raises(ConfigError):
        ExperimentParameter({"attack": {"epsilon": -0.1}})
    with pytest.raises(ConfigError):
        ExperimentParameter({"attack": 3})
    with pytest.raises(ConfigError):
        DataConfig(crop=12)
    with pytest.raises(ConfigError):
        CodecConfig(kernel_size=3)
    with pytest.raises(ConfigError):
        CodecConfig(initializer="xavier")
    assert CodecConfig(initializer="normal").initializer == "normal"
    with pytest.raises(ConfigError):
        AttackConfig(decay_factor=0.5, reciprocal_decay=True)


def config_hash_test():
    first = ExperimentParameter({"attack": {"steps": 10, "epsilon": 0.1}})
    second = ExperimentParameter({"attack": {"epsilon": 0.1, "steps": 10}})
    assert first.config_hash() == second.config_hash()
    assert len(first.config_hash()) == 64
    assert first.config_hash() != ExperimentParameter({"attack": {"steps": 11}}).config_hash()
    assert ExperimentParameter(first).config_hash() == first.config_hash()
