import pytest

from config import ExperimentConfig, config_to_text, load_config, parse_config
from errors import ConfigError


def test_parse_config_values():
    values = parse_config(
        "# pre-training\npretrain_task = dgi\nhidden_dims = 32, 16\nqueries = none\n"
        "no_progress_bar = yes\nlr = 0.005  # tuning\nshots = 5\n"
    )
    assert values == {
        "pretrain_task": "dgi",
        "hidden_dims": (32, 16),
        "queries": None,
        "no_progress_bar": True,
        "lr": 0.005,
        "shots": 5,
    }


@pytest.mark.parametrize(
    "text, message",
    [
        ("shots = 1\nlearning_rate = 0.1\n", "cfg.txt:2: unknown key 'learning_rate'"),
        ("shots = 1\n\nshots = 2\n", "cfg.txt:3: repeated key 'shots'"),
        ("shots\n", "cfg.txt:1: expected 'key = value'"),
        ("seeds = many\n", "cfg.txt:1: invalid value for seeds"),
        ("no_progress_bar = maybe\n", "cfg.txt:1: invalid value"),
    ],
)
def test_parse_config_errors_name_line(text, message):
    with pytest.raises(ConfigError, match=message):
        parse_config(text, "cfg.txt")


@pytest.mark.parametrize(
    "overrides",
    [
        {"variant": "gpf"},
        {"task_kind": "edge"},
        {"pretrain_task": "graphacl"},
        {"encoder": "gat"},
        {"shots": 0},
        {"tau": 0.0},
        {"lr": -1.0},
        {"queries": 0},
        {"hidden_dims": ()},
        {"planted_homophily": 1.5},
        {"edge_drop": 1.0},
        {"beta2": 1.0},
    ],
)
def test_config_validation(overrides):
    with pytest.raises(ConfigError):
        ExperimentConfig(**overrides)


def test_load_config_overrides(tmp_path):
    path = tmp_path / "experiment.cfg"
    path.write_text("variant = node_cond\nresults_path = out/\n")
    cfg = load_config(path, results_path="elsewhere/", no_progress_bar=None)
    assert cfg.variant == "node_cond"
    assert cfg.results_path == "elsewhere/"
    assert cfg.no_progress_bar is False


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read config"):
        load_config(tmp_path / "missing.cfg")


def test_config_text_roundtrip(tmp_path):
    cfg = ExperimentConfig(hidden_dims=(32, 8), queries=4, shots=3, variant="no_sim", no_progress_bar=True)
    path = tmp_path / "roundtrip.cfg"
    path.write_text(config_to_text(cfg))
    assert load_config(path) == cfg
    assert load_config(path).queries == 4


def test_default_config_matches_protocol():
    cfg = ExperimentConfig()
    assert (cfg.num_tasks, cfg.seeds, cfg.seed) == (100, 5, 39)
    assert (cfg.delta, cfg.tau, cfg.condition_hidden) == (2, 0.5, 64)
    assert (cfg.encoder, cfg.pretrain_task, cfg.planted_homophily) == ("sage", "graphcl", 0.3)
