import dataclasses
import json
import logging
import os
from pathlib import Path
from typing import Dict, List, Tuple

import jax.numpy as jnp
import numpy as np
import pandas as pd

from errors import ConfigError, DataError
from experiment_utils import BucketStat, EvalReport, ParameterCount, RunRecord
from graph import Graph, homophily_buckets, node_homophily_ratios
from model import GcnEncoder
from numerics import Mlp, Param
from prompt import ConditionNet, PromptHead, PromptState
from theory_utils import TheoremReport

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = "pronog-checkpoint"
CHECKPOINT_VERSION = 1
REPORT_FORMATS = ("csv", "json")
RUN_COLUMNS = [
    "row",
    "task",
    "repeat",
    "seed",
    "accuracy",
    "queries",
    "tune_epochs",
    "loss",
    "mean",
    "std",
    "params_with_bias",
    "params_without_bias",
    "variant",
    "dataset",
    "shots",
    "timings",
]
BUCKET_COLUMNS = ["bucket", "correct", "total", "accuracy"]


def save_train_log(train_log: Dict[str, List[float]], checkpoint_path: str) -> None:
    """
    Saves train log as csv file in checkpoint path.

    Args:
        train_log (Dict[str, List[float]]): Train log, containing the loss progression.
        checkpoint_path (str): Checkpoint path.
    """

    # Create results dir, if not existing
    os.makedirs(checkpoint_path, exist_ok=True)

    df = pd.DataFrame.from_dict(train_log, orient='index').transpose()
    df.to_csv(str(Path(checkpoint_path, "train_log.csv")))


def save_checkpoint(
    path: str | os.PathLike,
    kind: str,
    params: Dict[str, np.ndarray],
    meta: Dict[str, str],
) -> None:
    """
    Writes a versioned checkpoint: text header, then the row-major little-endian float64 payload
    of all arrays in header order.

    Args:
        path (str | os.PathLike): Checkpoint file.
        kind (str): Checkpoint kind (encoder, prompt).
        params (Dict[str, np.ndarray]): Named 2-D arrays.
        meta (Dict[str, str]): Metadata; values must not contain whitespace.
    """

    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}", f"kind {kind}"]
    lines += [f"meta {key} {value}" for key, value in meta.items()]
    arrays = []
    for name, value in params.items():
        value = np.ascontiguousarray(np.asarray(value, dtype="<f8"))
        if value.ndim != 2:
            raise DataError(f"checkpoint arrays must be 2-D, got {name} with shape {value.shape}")
        lines.append(f"param {name} {value.shape[0]} {value.shape[1]}")
        arrays.append(value)
    lines.append("end")

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("utf-8"))
        for value in arrays:
            f.write(value.tobytes())


def load_checkpoint(path: str | os.PathLike) -> Tuple[str, Dict[str, str], Dict[str, np.ndarray]]:
    """
    Reads a checkpoint written by `save_checkpoint`.

    Args:
        path (str | os.PathLike): Checkpoint file.

    Raises:
        DataError: Missing file, bad header, unsupported version or truncated payload.

    Returns:
        Tuple[str, Dict[str, str], Dict[str, np.ndarray]]:
            kind,
            metadata,
            named arrays.
    """

    try:
        raw = Path(path).read_bytes()
    except OSError as err:
        raise DataError(f"cannot read checkpoint {path}: {err}") from err
    marker = raw.find(b"\nend\n")
    if marker < 0:
        raise DataError(f"{path}: checkpoint header not terminated by 'end'")
    header = raw[:marker].decode("utf-8").splitlines()
    payload = raw[marker + len(b"\nend\n") :]

    magic = header[0].split() if header else []
    if len(magic) != 2 or magic[0] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}:1: not a checkpoint file")
    if magic[1] != str(CHECKPOINT_VERSION):
        raise DataError(f"{path}:1: unsupported checkpoint version {magic[1]}")

    kind, meta, shapes = "", {}, []
    for lineno, line in enumerate(header[1:], start=2):
        tokens = line.split()
        if len(tokens) == 2 and tokens[0] == "kind":
            kind = tokens[1]
        elif len(tokens) == 3 and tokens[0] == "meta":
            meta[tokens[1]] = tokens[2]
        elif len(tokens) == 4 and tokens[0] == "param":
            shapes.append((tokens[1], (int(tokens[2]), int(tokens[3]))))
        else:
            raise DataError(f"{path}:{lineno}: malformed checkpoint header line '{line}'")

    expected = sum(rows * cols for _, (rows, cols) in shapes) * 8
    if len(payload) != expected:
        raise DataError(f"{path}: payload has {len(payload)} bytes, header announces {expected}")
    params, offset = {}, 0
    for name, (rows, cols) in shapes:
        count = rows * cols
        params[name] = np.frombuffer(payload, dtype="<f8", count=count, offset=offset).reshape(rows, cols)
        offset += count * 8
    return kind, meta, params


def save_encoder(enc: GcnEncoder, path: str | os.PathLike) -> None:
    save_checkpoint(
        path,
        "encoder",
        {f"layer{idx}": np.asarray(p.value) for idx, p in enumerate(enc.layers)},
        {
            "encoder": enc.kind,
            "activations": ",".join(enc.activations) or "none",
            "frozen": str(enc.frozen).lower(),
        },
    )


def load_encoder(path: str | os.PathLike) -> GcnEncoder:
    """
    Loads an encoder checkpoint; the parameter digest equals that of the saved encoder.

    Raises:
        DataError: Not an encoder checkpoint.
    """

    kind, meta, params = load_checkpoint(path)
    if kind != "encoder":
        raise DataError(f"{path}: expected an encoder checkpoint, got '{kind}'")
    activations = [] if meta.get("activations", "none") == "none" else meta["activations"].split(",")
    layers = [Param.create(jnp.asarray(params[f"layer{idx}"])) for idx in range(len(params))]
    try:
        enc = GcnEncoder(layers, activations, meta.get("encoder", "gcn"))
    except ConfigError as err:
        raise DataError(f"{path}: inconsistent encoder checkpoint: {err}") from err
    if meta.get("frozen") == "true":
        enc.frozen = True
        for param in enc.layers:
            param.frozen = True
    return enc


def save_prompt_head(head: PromptHead, path: str | os.PathLike) -> None:
    names = ("w1", "b1", "w2", "b2") if head.condition_net is not None else ("prompt",)
    meta = {"variant": head.variant, "dim": str(head.dim)}
    if head.condition_net is not None:
        meta.update(
            activation=head.condition_net.mlp.activation,
            output_activation=head.condition_net.mlp.output_activation,
            task_id=head.condition_net.task_id.replace(" ", "_"),
        )
    params = {name: np.asarray(p.value) for name, p in zip(names, head.params)}
    save_checkpoint(path, "prompt", params, meta)


def load_prompt_head(path: str | os.PathLike) -> PromptHead:
    """
    Loads a prompt head checkpoint.

    Raises:
        DataError: Not a prompt checkpoint.
    """

    kind, meta, params = load_checkpoint(path)
    if kind != "prompt":
        raise DataError(f"{path}: expected a prompt checkpoint, got '{kind}'")
    variant, dim = meta["variant"], int(meta["dim"])
    if "w1" in params:
        mlp = Mlp(
            *(Param.create(jnp.asarray(params[name])) for name in ("w1", "b1", "w2", "b2")),
            activation=meta["activation"],
            output_activation=meta["output_activation"],
        )
        return PromptHead(variant, dim, condition_net=ConditionNet(mlp, meta.get("task_id", "task")))
    if "prompt" in params:
        return PromptHead(variant, dim, prompt=Param.create(jnp.asarray(params["prompt"])))
    return PromptHead(variant, dim)


def _bucket_frame(buckets: Dict[int, BucketStat]) -> pd.DataFrame:
    rows = [
        {"bucket": idx, "correct": stat.correct, "total": stat.total, "accuracy": stat.accuracy}
        for idx, stat in sorted(buckets.items())
    ]
    return pd.DataFrame(rows, columns=BUCKET_COLUMNS)


def bucket_path(path: str | os.PathLike) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}_buckets.csv")


def emit_report(report: EvalReport, path: str | os.PathLike, fmt: str = "csv") -> None:
    """
    Writes a report. CSV: one row per run plus a final summary row, bucket table in
    `<stem>_buckets.csv`. JSON: all fields.

    Args:
        report (EvalReport): Report.
        path (str | os.PathLike): Output file.
        fmt (str, optional): csv or json. Defaults to "csv".

    Raises:
        ConfigError: Unsupported format.
    """

    if fmt not in REPORT_FORMATS:
        raise ConfigError(f"Unsupported report format: {fmt}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)

    if fmt == "json":
        content = dataclasses.asdict(report)
        content["tunable_parameters"] = report.tunable_parameters._asdict()
        content["buckets"] = {str(idx): dataclasses.asdict(stat) for idx, stat in report.buckets.items()}
        Path(path).write_text(json.dumps(content, indent=2), encoding="utf-8")
        return

    rows = [{"row": "run", **dataclasses.asdict(run)} for run in report.runs]
    rows.append(
        {
            "row": "summary",
            "mean": report.mean,
            "std": report.std,
            "params_with_bias": report.tunable_parameters.with_bias,
            "params_without_bias": report.tunable_parameters.without_bias,
            "variant": report.variant,
            "dataset": report.dataset,
            "shots": report.shots,
            "timings": json.dumps(report.timings),
        }
    )
    pd.DataFrame(rows, columns=RUN_COLUMNS).to_csv(path, index=False)
    _bucket_frame(report.buckets).to_csv(bucket_path(path), index=False)


def load_report(path: str | os.PathLike) -> EvalReport:
    """
    Reads a report written by `emit_report`; the format follows the file suffix.

    Raises:
        DataError: Missing file or summary row.
    """

    path = Path(path)
    if not path.exists():
        raise DataError(f"report {path} does not exist")

    if path.suffix == ".json":
        content = json.loads(path.read_text(encoding="utf-8"))
        return EvalReport(
            runs=[RunRecord(**run) for run in content["runs"]],
            mean=content["mean"],
            std=content["std"],
            buckets={int(idx): BucketStat(**stat) for idx, stat in content["buckets"].items()},
            tunable_parameters=ParameterCount(**content["tunable_parameters"]),
            timings=content["timings"],
            variant=content["variant"],
            dataset=content["dataset"],
            shots=content["shots"],
        )

    df = pd.read_csv(path, keep_default_na=True)
    summary = df[df["row"] == "summary"]
    if len(summary) != 1:
        raise DataError(f"{path}: expected exactly one summary row")
    summary = summary.iloc[0]
    runs = [
        RunRecord(
            int(row.task),
            int(row.repeat),
            int(row.seed),
            float(row.accuracy),
            int(row.queries),
            int(row.tune_epochs),
            float(row.loss),
        )
        for row in df[df["row"] == "run"].itertuples()
    ]
    buckets = {}
    if bucket_path(path).exists():
        for row in pd.read_csv(bucket_path(path)).itertuples():
            buckets[int(row.bucket)] = BucketStat(int(row.correct), int(row.total))
    return EvalReport(
        runs=runs,
        mean=float(summary["mean"]),
        std=float(summary["std"]),
        buckets=buckets,
        tunable_parameters=ParameterCount(
            int(summary["params_with_bias"]), int(summary["params_without_bias"])
        ),
        timings=json.loads(summary["timings"]),
        variant=str(summary["variant"]),
        dataset="" if pd.isna(summary["dataset"]) else str(summary["dataset"]),
        shots=int(summary["shots"]),
    )


def save_theorem_report(report: TheoremReport, path: str | os.PathLike) -> None:
    """Writes the per-trial records of a theorem check as CSV (trial, h, count, violation)."""

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df = pd.DataFrame(
        [(r.trial, r.h, r.count, r.violation) for r in report.records],
        columns=["trial", "h", "count", "violation"],
    )
    df.to_csv(path, index=False)


def save_homophily_analysis(g: Graph, path: str | os.PathLike) -> pd.DataFrame:
    """
    Writes per-node degree, label, homophily ratio (empty for isolated nodes) and bucket.

    Returns:
        pd.DataFrame: Written table.
    """

    labels = g.labels
    if labels is None:
        raise DataError("homophily analysis requires node labels")
    df = pd.DataFrame(
        {
            "node": np.arange(g.num_nodes),
            "degree": g.degrees(),
            "label": labels,
            "ratio": node_homophily_ratios(g),
            "bucket": homophily_buckets(g),
        }
    )
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False)
    return df


def save_prompt_state(state: PromptState, path: str | os.PathLike) -> pd.DataFrame:
    """
    Writes per-node norms of the readout, the prompt and the prompted embedding.

    Returns:
        pd.DataFrame: Written table.
    """

    readouts, prompts, prompted = (np.asarray(m) for m in (state.readouts, state.prompts, state.prompted))
    df = pd.DataFrame(
        {
            "node": np.arange(readouts.shape[0]),
            "readout_norm": np.linalg.norm(readouts, axis=1),
            "prompt_norm": np.linalg.norm(prompts, axis=1),
            "prompt_mean": prompts.mean(axis=1),
            "prompted_norm": np.linalg.norm(prompted, axis=1),
        }
    )
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False)
    return df
