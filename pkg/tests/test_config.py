import pytest

from routine_rl.config import AgentConfig, ExperimentConfig, dump_config, load_config, parse_config_text
from routine_rl.errors import ConfigError


def test_parse_and_dump_round_trip(tiny_config_text, monkeypatch):
    monkeypatch.delenv("ROUTINE_SEED", raising=False)
    cfg = parse_config_text(tiny_config_text)
    assert cfg.seeds == [0, 1] and cfg.agent.hidden_dim == 8 and cfg.total_env_steps == 120
    assert parse_config_text(dump_config(cfg)) == cfg


def test_seed_environment_override(tiny_config_text, monkeypatch):
    monkeypatch.setenv("ROUTINE_SEED", "7,9")
    assert parse_config_text(tiny_config_text).seeds == [7, 9]


@pytest.mark.parametrize("text", [
    "bogus = 1",
    "agent.nonsense = 2",
    "epochs three",
    "agent.L = four",
    "agent.algorithm = ppo",
    "env = cartpole",
    "agent.L = 0",
    "epochs = 0",
])
def test_bad_configs_raise(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.txt")


def test_bool_and_comments():
    cfg = parse_config_text("agent.replan_mode = yes  # single-step execution\n\n# note\n")
    assert cfg.agent.replan_mode is True


def test_effective_L_and_flags():
    assert AgentConfig(algorithm="td3", L=8).effective_L == 1
    assert AgentConfig(algorithm="routine_sac").is_sac and AgentConfig().is_routine
    assert ExperimentConfig().with_agent(L=2).agent.L == 2
