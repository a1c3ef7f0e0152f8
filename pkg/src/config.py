import dataclasses
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from contrastive import PRETRAIN_TASKS
from errors import ConfigError
from model import ENCODER_KINDS
from prompt import VARIANTS

logger = logging.getLogger(__name__)

TASK_KINDS = ("node", "graph")


@dataclass(frozen=True)
class ExperimentConfig:
    """Every field is addressable as `key = value` in a config file."""

    # Data
    dataset: str = "planted"
    task_kind: str = "node"
    planted_nodes: int = 300
    planted_classes: int = 3
    planted_homophily: float = 0.3
    planted_degree: float = 3.0
    ego_delta: int = 2

    # Encoder and pre-training
    encoder: str = "sage"
    hidden_dims: Tuple[int, ...] = (64,)
    encoder_activation: str = "relu"
    pretrain_task: str = "graphcl"
    pretrain_epochs: int = 2000
    pretrain_lr: float = 1e-3
    pretrain_tau: float = 0.5
    edge_drop: float = 0.2
    negatives: int = 1

    # Downstream adaptation
    variant: str = "pronog"
    condition_hidden: int = 64
    delta: int = 2
    tau: float = 0.5
    tune_epochs: int = 2000
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 50

    # Evaluation protocol
    shots: int = 1
    queries: Optional[int] = None
    num_tasks: int = 100
    seeds: int = 5
    seed: int = 39

    # Output
    checkpoint_path: str = "../checkpoints/"
    results_path: str = "../results/"
    no_progress_bar: bool = False

    def __post_init__(self) -> None:
        validate_config(self)


def validate_config(cfg: ExperimentConfig) -> None:
    """
    Checks tags and numeric ranges.

    Raises:
        ConfigError: First violated constraint.
    """

    if cfg.variant not in VARIANTS:
        raise ConfigError(f"Unsupported variant: {cfg.variant}")
    if cfg.task_kind not in TASK_KINDS:
        raise ConfigError(f"Unsupported task kind: {cfg.task_kind}")
    if cfg.pretrain_task not in PRETRAIN_TASKS:
        raise ConfigError(f"Unsupported pre-training task: {cfg.pretrain_task}")
    if cfg.encoder not in ENCODER_KINDS:
        raise ConfigError(f"Unsupported encoder: {cfg.encoder}")

    positive = (
        "planted_nodes", "planted_classes", "planted_degree", "pretrain_epochs", "pretrain_tau",
        "negatives", "condition_hidden", "tau", "tune_epochs", "eps", "patience", "shots",
        "num_tasks", "seeds",
    )
    for name in positive:
        if not getattr(cfg, name) > 0:
            raise ConfigError(f"{name} must be positive, got {getattr(cfg, name)}")
    for name in ("ego_delta", "delta", "lr", "pretrain_lr", "seed"):
        if getattr(cfg, name) < 0:
            raise ConfigError(f"{name} must be non-negative, got {getattr(cfg, name)}")
    if cfg.queries is not None and cfg.queries < 1:
        raise ConfigError(f"queries must be positive, got {cfg.queries}")
    if not cfg.hidden_dims or any(dim < 1 for dim in cfg.hidden_dims):
        raise ConfigError(f"hidden_dims must be positive widths, got {cfg.hidden_dims}")
    if not 0.0 <= cfg.planted_homophily <= 1.0:
        raise ConfigError(f"planted_homophily must lie in [0, 1], got {cfg.planted_homophily}")
    if not 0.0 <= cfg.edge_drop < 1.0:
        raise ConfigError(f"edge_drop must lie in [0, 1), got {cfg.edge_drop}")
    if not (0.0 <= cfg.beta1 < 1.0 and 0.0 <= cfg.beta2 < 1.0):
        raise ConfigError(f"betas must lie in [0, 1), got {cfg.beta1}, {cfg.beta2}")


def _parse_value(name: str, raw: str, annotation: Any) -> Any:
    if annotation in (int, "int"):
        return int(raw)
    if annotation in (float, "float"):
        return float(raw)
    if annotation in (bool, "bool"):
        lowered = raw.lower()
        if lowered in ("true", "yes", "1"):
            return True
        if lowered in ("false", "no", "0"):
            return False
        raise ValueError(f"not a boolean: {raw}")
    if name == "hidden_dims":
        return tuple(int(token) for token in raw.split(",") if token.strip())
    if name == "queries":
        return None if raw.lower() == "none" else int(raw)
    return raw


def parse_config(text: str, source: str = "<config>") -> Dict[str, Any]:
    """
    Parses `key = value` lines; `#` starts a comment.

    Args:
        text (str): Config text.
        source (str, optional): Name used in error messages. Defaults to "<config>".

    Raises:
        ConfigError: Malformed line, unknown or repeated key, unparsable value.

    Returns:
        Dict[str, Any]: Parsed overrides.
    """

    annotations = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
    values: Dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'key = value', got '{line}'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in annotations:
            raise ConfigError(f"{where}: unknown key '{key}'")
        if key in values:
            raise ConfigError(f"{where}: repeated key '{key}'")
        try:
            values[key] = _parse_value(key, raw, annotations[key])
        except ValueError as err:
            raise ConfigError(f"{where}: invalid value for {key}: {err}") from err
    return values


def load_config(path: str | os.PathLike, **overrides: Any) -> ExperimentConfig:
    """
    Loads and validates an experiment config file.

    Args:
        path (str | os.PathLike): Config file.
        **overrides (Any): Values taking precedence over the file (e.g., from command line flags).

    Raises:
        ConfigError: Unreadable file, malformed content or invalid values.

    Returns:
        ExperimentConfig: Config.
    """

    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    values = parse_config(text, str(path))
    values.update({key: value for key, value in overrides.items() if value is not None})
    cfg = ExperimentConfig(**values)
    logger.debug(f"Loaded config {path}: {cfg}")
    return cfg


def config_to_text(cfg: ExperimentConfig) -> str:
    """Serializes a config in the `key = value` format read by `load_config`."""

    lines = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "hidden_dims":
            value = ",".join(str(dim) for dim in value)
        elif value is None:
            value = "none"
        elif isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"
