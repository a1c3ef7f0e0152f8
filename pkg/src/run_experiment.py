import logging
import sys
from argparse import ArgumentParser, Namespace
from pathlib import Path
from typing import List, Optional

import numpy as np

from config import ExperimentConfig, load_config
from data_utils import get_dataset
from errors import ConfigError, NumericError, ProNoGError
from experiment_utils import (
    evaluate_task,
    instance_labels,
    load_data,
    phase,
    pretrain_encoder,
    run_variant,
)
from graph import graph_statistics
from log_utils import (
    REPORT_FORMATS,
    emit_report,
    load_encoder,
    load_report,
    save_encoder,
    save_homophily_analysis,
    save_prompt_head,
    save_prompt_state,
    save_theorem_report,
    save_train_log,
)
from model import GcnEncoder, freeze
from prompt import get_prompt_head, prepare_context, prompt_state
from sampler import KShotSampler, derive_seed
from theory_utils import verify_theorem1, verify_theorem2
from train_utils import OptimizerConfig, tune

logger = logging.getLogger(__name__)

ENCODER_CHECKPOINT = "encoder.ckpt"
PROMPT_CHECKPOINT = "prompt.ckpt"
PROMPT_STATE = "prompt_state.csv"
DEFAULT_H_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


class ExperimentParser(ArgumentParser):
    """Argument parser whose usage errors raise ConfigError instead of exiting."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        raise ConfigError(f"{self.prog}: {message}")


def _load_config(args: Namespace) -> ExperimentConfig:
    return load_config(
        args.config, results_path=args.results_path, no_progress_bar=args.no_progress_bar
    )


def _load_encoder(cfg: ExperimentConfig, checkpoint: Path) -> GcnEncoder:
    enc = load_encoder(checkpoint)
    if enc.kind != cfg.encoder:
        raise ConfigError(f"{checkpoint} holds a {enc.kind} encoder, config asks for {cfg.encoder}")
    return enc


def _report_path(cfg: ExperimentConfig, fmt: str) -> Path:
    stem = Path(cfg.dataset).stem or cfg.dataset
    return Path(cfg.results_path, f"{stem}_{cfg.variant}_{cfg.shots}shot.{fmt}")


def cmd_pretrain(args: Namespace) -> None:
    cfg = _load_config(args)
    with phase("load"):
        data = load_data(cfg)
    with phase("pretrain"):
        enc, result = pretrain_encoder(cfg, data)
    freeze(enc)

    checkpoint = Path(cfg.checkpoint_path, ENCODER_CHECKPOINT)
    save_encoder(enc, checkpoint)
    save_train_log(result.as_log(), cfg.checkpoint_path)
    logger.info(f"Saved encoder to {checkpoint} ({len(result.losses)} epochs)")


def cmd_tune(args: Namespace) -> None:
    cfg = _load_config(args)
    with phase("load"):
        data = load_data(cfg)
        enc = _load_encoder(cfg, Path(cfg.checkpoint_path, ENCODER_CHECKPOINT))
    if not enc.frozen:
        freeze(enc)

    with phase("context"):
        context = prepare_context(enc, data, cfg.delta, cfg.variant)
        sampler = KShotSampler(
            instance_labels(data), cfg.shots, cfg.queries, 1, cfg.seed, context.instance_kind
        )
        task = sampler.task(0)
    head = get_prompt_head(
        cfg.variant, enc.out_dim, cfg.condition_hidden, derive_seed(cfg.seed, 0, 0), "task-0"
    )
    with phase("tune task 0"):
        result = tune(
            head,
            enc,
            task,
            tau=cfg.tau,
            epochs=cfg.tune_epochs,
            patience=cfg.patience,
            optimizer=OptimizerConfig(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps),
            delta=cfg.delta,
            context=context,
            no_progress_bar=cfg.no_progress_bar,
        )
    _, accuracy = evaluate_task(head, context, task)

    checkpoint = Path(cfg.checkpoint_path, PROMPT_CHECKPOINT)
    save_prompt_head(head, checkpoint)
    save_train_log(result.as_log(), str(Path(cfg.checkpoint_path, "tune")))
    save_prompt_state(prompt_state(head, context), Path(cfg.checkpoint_path, PROMPT_STATE))
    logger.info(f"Saved {cfg.variant} prompt head to {checkpoint}; query accuracy {accuracy:.4f}")


def cmd_evaluate(args: Namespace) -> None:
    cfg = _load_config(args)
    enc = None
    checkpoint = Path(cfg.checkpoint_path, ENCODER_CHECKPOINT)
    if checkpoint.exists() and not args.pretrain:
        with phase("load"):
            enc = _load_encoder(cfg, checkpoint)
        logger.info(f"Using pre-trained encoder {checkpoint}")
    report = run_variant(cfg, enc=enc)

    path = _report_path(cfg, args.format)
    emit_report(report, path, args.format)
    logger.info(f"{cfg.variant}: {report.mean:.2f} +- {report.std:.2f}, written to {path}")


def cmd_analyze_homophily(args: Namespace) -> None:
    with phase("load"):
        g = get_dataset(args.graph, "node")
    stats = graph_statistics(g)
    logger.info(", ".join(f"{key}={value}" for key, value in stats.items()))

    stem = Path(args.graph).stem or args.graph
    path = Path(args.results_path or "../results/", f"homophily_{stem}.csv")
    df = save_homophily_analysis(g, path)
    counts = df.loc[df["bucket"] >= 0, "bucket"].value_counts().sort_index()
    logger.info(f"Bucket sizes: {counts.to_dict()}, written to {path}")


def cmd_verify_theorems(args: Namespace) -> None:
    results_path = Path(args.results_path or "../results/")
    no_progress_bar = bool(args.no_progress_bar)

    with phase("theorem 1"):
        report1 = verify_theorem1(args.trials, args.seed, no_progress_bar=no_progress_bar)
    save_theorem_report(report1, results_path / "theorem1.csv")
    logger.info(
        f"Theorem 1: {report1.violations} violations in {report1.trials} trials "
        f"({report1.skipped} vacuous attempts skipped)"
    )

    with phase("theorem 2"):
        report2 = verify_theorem2(args.h_grid, args.seeds, args.seed, no_progress_bar=no_progress_bar)
    save_theorem_report(report2, results_path / "theorem2.csv")
    means = ", ".join(f"{h:g}: {count:.2f}" for h, count in report2.mean_counts.items())
    logger.info(f"Theorem 2: rank correlation {report2.rank_correlation}, mean counts {{{means}}}")

    if report1.violations:
        raise NumericError(f"theorem 1: {report1.violations} of {report1.trials} trials violated")


def cmd_report(args: Namespace) -> None:
    with phase("report"):
        report = load_report(args.results)
        path = Path(args.output) if args.output else Path(args.results).with_suffix(f".{args.format}")
        emit_report(report, path, args.format)

    logger.info(
        f"{report.variant} on {report.dataset or '-'} ({report.shots}-shot): "
        f"{report.mean:.2f} +- {report.std:.2f} over {len(report.runs)} runs"
    )
    for bucket, stat in sorted(report.buckets.items()):
        accuracy = "empty" if stat.accuracy is None else f"{stat.accuracy:.4f}"
        logger.info(f"Bucket {bucket}: {stat.correct}/{stat.total} ({accuracy})")
    if report.tunable_parameters.with_bias:
        logger.info(
            f"Tunable parameters: {report.tunable_parameters.with_bias} "
            f"({report.tunable_parameters.without_bias} without biases)"
        )
    if report.runs:
        logger.info(f"Run accuracy range: {np.min([r.accuracy for r in report.runs]):.4f} - "
                    f"{np.max([r.accuracy for r in report.runs]):.4f}")
    logger.info(f"Written to {path}")


def build_parser() -> ArgumentParser:
    parser = ExperimentParser("Graph Pre-Training and Node-Conditioned Prompting")
    parser.add_argument(
        "--log-level", type=str, default="INFO", help="Logging level: INFO (default), DEBUG, ..."
    )
    parser.add_argument(
        "--results-path", type=str, default=None, help="Results path (overrides config)."
    )
    parser.add_argument(
        "--no-progress-bar", default=None, action="store_true", help="Disables progress bar."
    )
    commands = parser.add_subparsers(dest="command", required=True)

    for name, func, help_text in (
        ("pretrain", cmd_pretrain, "Pre-trains and checkpoints the encoder."),
        ("tune", cmd_tune, "Tunes a prompt head on one task with the checkpointed encoder."),
        ("evaluate", cmd_evaluate, "Runs the few-shot evaluation protocol."),
    ):
        command = commands.add_parser(name, help=help_text)
        command.add_argument("config", type=str, help="Config file (key = value lines).")
        command.set_defaults(func=func)
        if name == "evaluate":
            command.add_argument(
                "--format", type=str, default="csv", choices=REPORT_FORMATS, help="Report format."
            )
            command.add_argument(
                "--pretrain",
                default=False,
                action="store_true",
                help="Pre-trains even if an encoder checkpoint exists.",
            )

    command = commands.add_parser("analyze-homophily", help="Per-node homophily ratios and buckets.")
    command.add_argument("graph", type=str, help="Graph file in canonical format.")
    command.set_defaults(func=cmd_analyze_homophily)

    command = commands.add_parser("verify-theorems", help="Checks the homophily-task theorems.")
    command.add_argument("--trials", type=int, default=1000, help="Non-vacuous theorem 1 trials.")
    command.add_argument(
        "--h-grid",
        type=float,
        nargs="+",
        default=list(DEFAULT_H_GRID),
        help="Homophily ratios for theorem 2.",
    )
    command.add_argument("--seeds", type=int, default=10, help="Planted graphs per ratio.")
    command.add_argument("--seed", type=int, default=39, help="RNG seed.")
    command.set_defaults(func=cmd_verify_theorems)

    command = commands.add_parser("report", help="Converts and summarizes a result file.")
    command.add_argument("results", type=str, help="Result file (csv or json).")
    command.add_argument(
        "--format", type=str, default="csv", choices=REPORT_FORMATS, help="Output format."
    )
    command.add_argument("--output", type=str, default=None, help="Output file.")
    command.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as err:
        logger.error(str(err))
        return err.exit_code
    logging.basicConfig(
        level=args.log_level.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except ProNoGError as err:
        logger.error(str(err))
        return err.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
