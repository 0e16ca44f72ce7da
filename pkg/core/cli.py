"""
boxrec command line.

Commands:
    split   ingest (or generate) a dataset and write the split directory
    train   train a box or mf model on a split, checkpoint the best epoch
    eval    full-vocabulary evaluation of a checkpoint
    query   top-k items for one query
    synth   synthetic end-to-end experiment (both families)
    sweep   random hyperparameter search

Every RunConfig key is also a flag: ``--train.learning-rate 0.01``.
"""

from __future__ import annotations

import argparse
import logging
import re
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from db import save_eval_report, save_training_run
from strategies import STRATEGY_KINDS, fit_filter_thresholds, make_strategy

from .box_geometry import QueryShape
from .checkpoint import load_checkpoint
from .config import DEFAULTS, RunConfig, load_run_config
from .errors import BoxRecError, InputError
from .evaluator import EVAL_QUERY_TYPES, EvalReport, evaluate_model
from .experiment import run_spectrum, train_on_split, vocabularies
from .data_source import ingest
from .models import EntityClass
from .splitter import REGIMES, Split, build_split, dataset_statistics, query_statistics, read_split, write_split
from .sweep import run_sweep, write_sweep
from .synthetic import synthetic_generate, write_synthetic
from .utils import setup_logging

logger = logging.getLogger(__name__)

COMMANDS = ("split", "train", "eval", "query", "synth", "sweep")
TRAIN_LOG_NAME = "train_log.tsv"

QUERY_PATTERN = re.compile(r"\s*([^\s&]+)\s*(?:(&!?)\s*([^\s&]+)\s*)?")


def flag_name(key: str) -> str:
    return "--" + key.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="YAML config file (default: built-in defaults)")
    for key, declared in DEFAULTS.items():
        common.add_argument(
            flag_name(key),
            dest=key,
            default=argparse.SUPPRESS,
            metavar=key.split(".")[-1].upper(),
            help=f"{declared.help} (default: {declared.default})" if declared.help else f"(default: {declared.default})",
        )

    parser = argparse.ArgumentParser(
        prog="boxrec",
        description="Set-theoretic recommendation with box embeddings",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Split a dataset, train a box model, evaluate all strategies
  python scripts/boxrec.py split --data.user-item data/user_item.tsv --data.attribute-item data/attribute_item.tsv
  python scripts/boxrec.py train --model.family box
  python scripts/boxrec.py eval --eval.regimes all --eval.compounding true

  # Top 10 items for user u1: comedy but not romance
  python scripts/boxrec.py query u1 "comedy &! romance"

  # Synthetic end-to-end experiment
  python scripts/boxrec.py synth --config config/synthetic.yaml
        """,
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    sub.add_parser("split", parents=[common], help="split a dataset into train/eval and queries")
    sub.add_parser("train", parents=[common], help="train a model on a split")
    sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    query = sub.add_parser("query", parents=[common], help="rank items for one query")
    query.add_argument("tokens", nargs="*", help='USER [ATTR [(&|&!) ATTR]], e.g. u1 "a1 &! a2"')
    sub.add_parser("synth", parents=[common], help="synthetic end-to-end experiment")
    sub.add_parser("sweep", parents=[common], help="random hyperparameter search")
    return parser


def parse_expression(expression: str) -> tuple[list[str], Optional[str]]:
    """
    ``ATTR``, ``ATTR & ATTR`` or ``ATTR &! ATTR`` -> (positive ids, negated id).
    """
    match = QUERY_PATTERN.fullmatch(expression)
    if match is None:
        raise InputError(f"invalid query expression: {expression!r} (expected ATTR, ATTR & ATTR or ATTR &! ATTR)")
    first, operator, second = match.groups()
    if operator is None:
        return [first], None
    if operator == "&":
        return [first, second], None
    return [first], second


def _banner(title: str) -> None:
    logger.info("=" * 60)
    logger.info(title)
    logger.info("=" * 60)


def _print_table(title: str, frame: pd.DataFrame) -> None:
    print(f"\n{title}")
    print(frame.to_string(index=False))


def _regimes(config: RunConfig) -> list[str]:
    regimes = config["eval.regimes"]
    if regimes == ["all"]:
        return list(REGIMES)
    unknown = [r for r in regimes if r not in REGIMES]
    if unknown:
        raise InputError(f"unknown spectrum regimes: {unknown} (expected {', '.join(REGIMES)} or all)")
    return regimes


def _check_eval_options(config: RunConfig) -> None:
    for kind in config["eval.strategies"]:
        if kind not in STRATEGY_KINDS:
            raise InputError(f"unknown strategy: {kind} (expected one of {', '.join(STRATEGY_KINDS)})")
    for query_type in config["eval.query_types"]:
        if query_type not in EVAL_QUERY_TYPES:
            raise InputError(f"unknown query type: {query_type} (expected one of {', '.join(EVAL_QUERY_TYPES)})")


def _check_vocabularies(checkpoint, split: Split, checkpoint_dir: str, split_dir: str) -> None:
    for cls, vocab in vocabularies(split).items():
        if checkpoint.vocabularies[cls] != vocab:
            raise InputError(f"checkpoint {checkpoint_dir} was not trained on split {split_dir} ({cls.value} ids differ)")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _make_split(config: RunConfig) -> Split:
    if config["split.synthetic"]:
        dataset = synthetic_generate(
            config["synth.n_users"],
            config["synth.n_items"],
            config["synth.n_attributes"],
            config["synth.latent_dim"],
            config["synth.seed"],
            config["synth.dropout"],
        )
        write_synthetic(dataset, config["synth.output_dir"])
        d_u, d_a = dataset.d_u, dataset.d_a
    else:
        d_u, d_a = ingest(config["data.user_item"], config["data.attribute_item"], config["data.min_rating"])

    filter_counts = None
    if config["data.filter"]:
        filter_counts = (config["data.min_user_count"], config["data.min_item_count"], config["data.min_attribute_count"])
    return build_split(d_u, d_a, config.split_config(), filter_counts)


def cmd_split(config: RunConfig) -> int:
    _banner("Building split")
    split = _make_split(config)
    write_split(split, config["data.split_dir"])
    _print_table("Dataset statistics:", dataset_statistics(split))
    _print_table("Query statistics:", query_statistics(split))
    print(f"\nSplit written to {config['data.split_dir']}")
    return 0


def _train(config: RunConfig, split: Split, family: str, dim: Optional[int], checkpoint_dir: str):
    result = train_on_split(
        split,
        config.model_config(family, dim),
        config.train_config(family),
        config["train.eval_negatives"],
        config["train.eval_seed"],
        checkpoint_dir=checkpoint_dir,
        log_path=Path(checkpoint_dir) / TRAIN_LOG_NAME,
    )
    if config["train.persist"]:
        model_config = config.model_config(family, dim)
        save_training_run(
            family=family,
            dim=model_config.dim,
            best_ndcg=result.best_ndcg,
            best_epoch=result.best_epoch,
            initial_ndcg=result.initial_ndcg,
            epochs_run=len(result.log),
            seed=config["train.seed"],
            split_dir=config["data.split_dir"],
            checkpoint_dir=checkpoint_dir,
            config=config.to_dict(),
            db_url=config["data.db_url"],
        )
    return result


def cmd_train(config: RunConfig) -> int:
    split = read_split(config["data.split_dir"])
    _banner(f"Training {config.family} model")
    result = _train(config, split, config.family, None, config["data.checkpoint_dir"])
    print(
        f"\nBest eval NDCG: {result.best_ndcg:.4f} at epoch {result.best_epoch} "
        f"(initial {result.initial_ndcg:.4f}, {len(result.log)} epochs)"
    )
    print(f"Checkpoint: {config['data.checkpoint_dir']}")
    return 0


def _evaluate(config: RunConfig, model, split: Split, report_dir: str, checkpoint_dir: str) -> EvalReport:
    report = evaluate_model(
        model,
        split,
        strategies=config["eval.strategies"],
        query_types=config["eval.query_types"],
        k_values=config["eval.k_values"],
        max_queries=config["eval.max_queries"],
        seed=config["eval.seed"],
        mask_train=config["eval.mask_train"],
        pessimistic=config["eval.pessimistic"],
        workers=config["eval.workers"],
        compounding=config["eval.compounding"] and model.family == "box",
        compounding_k=config["eval.compounding_k"],
    )
    regimes = _regimes(config)
    if regimes:
        spectrum, _ = run_spectrum(
            split,
            config.model_config(model.family, model.config.dim),
            config.train_config(model.family),
            regimes=regimes,
            strategies=[s for s in config["eval.strategies"] if s != "filter"] or ["geometric"],
            k_values=config["eval.k_values"],
            max_queries=config["eval.max_queries"],
            eval_negatives=config["train.eval_negatives"],
            eval_seed=config["train.eval_seed"],
        )
        report.spectrum = spectrum
    report.write(report_dir, dump_queries=config["eval.dump_queries"])
    if config["eval.persist"]:
        save_eval_report(
            report.to_frame(),
            family=model.family,
            dim=model.config.dim,
            split_dir=config["data.split_dir"],
            checkpoint_dir=checkpoint_dir,
            seed=config["eval.seed"],
            config=config.to_dict(),
            db_url=config["data.db_url"],
        )
    return report


def cmd_eval(config: RunConfig) -> int:
    _check_eval_options(config)
    split = read_split(config["data.split_dir"])
    checkpoint = load_checkpoint(config["data.checkpoint_dir"])
    _check_vocabularies(checkpoint, split, config["data.checkpoint_dir"], config["data.split_dir"])
    _banner(f"Evaluating {checkpoint.model.family} checkpoint")
    report = _evaluate(config, checkpoint.model, split, config["data.report_dir"], config["data.checkpoint_dir"])
    print(report.summary())
    print(f"Report: {config['data.report_dir']}")
    return 0


def resolve_query(checkpoint, user_id: Optional[str], expression: Optional[str]) -> QueryShape:
    """External ids -> QueryShape; unknown ids raise LookupFailure with suggestions."""
    positives, negated = parse_expression(expression) if expression else ([], None)
    vocab = checkpoint.vocabularies
    user = vocab[EntityClass.USER].index(user_id) if user_id is not None else None
    return QueryShape(
        user=user,
        positive_attributes=tuple(vocab[EntityClass.ATTRIBUTE].index(a) for a in positives),
        negated_attribute=vocab[EntityClass.ATTRIBUTE].index(negated) if negated is not None else None,
    )


def top_items(strategy, shape: QueryShape, top_k: int) -> pd.DataFrame:
    """Ranking of every item (tier, score desc, index asc), cut at ``top_k``."""
    result = strategy.score_items(shape)
    scores = result.scores
    tiers = np.zeros(scores.size, dtype=np.int64) if result.tiers is None else result.tiers
    order = np.lexsort((np.arange(scores.size), -scores, tiers))[:top_k]
    frame = pd.DataFrame({"rank": np.arange(1, order.size + 1), "item": order, "score": scores[order]})
    if result.tiers is not None:
        frame["in_filter"] = tiers[order] == 0
    return frame


def cmd_query(config: RunConfig, tokens: Sequence[str]) -> int:
    user_id = config["query.user"]
    expression = config["query.expression"]
    if tokens:
        user_id = tokens[0]
        if len(tokens) > 1:
            expression = " ".join(tokens[1:])
    if user_id is None and not expression:
        raise InputError("query needs a user id and/or an attribute expression")
    if config["query.top_k"] < 1:
        raise InputError(f"query.top_k must be >= 1, got {config['query.top_k']}")

    checkpoint = load_checkpoint(config["data.checkpoint_dir"])
    shape = resolve_query(checkpoint, user_id, expression)
    kind = config["query.strategy"]
    thresholds = None
    if kind == "filter":
        split = read_split(config["data.split_dir"])
        _check_vocabularies(checkpoint, split, config["data.checkpoint_dir"], config["data.split_dir"])
        logger.info("Fitting filter thresholds on D_A train")
        thresholds = fit_filter_thresholds(checkpoint.model, *split.train_attribute_pairs())
    strategy = make_strategy(kind, checkpoint.model, thresholds)

    frame = top_items(strategy, shape, config["query.top_k"])
    items = checkpoint.vocabularies[EntityClass.ITEM]
    frame["item"] = [items.external(int(i)) for i in frame["item"]]
    label = " ".join(t for t in (user_id, expression) if t)
    _print_table(f"Top {len(frame)} for [{label}] ({strategy.label}):", frame)
    return 0


def cmd_synth(config: RunConfig) -> int:
    """Generate, split, train box and mf, evaluate both."""
    _banner("Synthetic experiment")
    split = _make_split(config)
    split_dir = config["data.split_dir"]
    write_split(split, split_dir)
    _print_table("Dataset statistics:", dataset_statistics(split))
    _print_table("Query statistics:", query_statistics(split))

    _check_eval_options(config)
    base = Path(config["data.checkpoint_dir"])
    reports = Path(config["data.report_dir"])
    frames = []
    for family, dim in (("box", config["synth.box_dim"]), ("mf", config["synth.mf_dim"])):
        _banner(f"Synthetic experiment: {family} (D={dim})")
        result = _train(config, split, family, dim, str(base / family))
        report = _evaluate(config, result.best_model, split, str(reports / family), str(base / family))
        print(f"\n{family}: eval NDCG {result.initial_ndcg:.4f} -> {result.best_ndcg:.4f} (epoch {result.best_epoch})")
        print(report.summary())
        frames.append(report.to_frame())

    comparison = pd.concat(frames, ignore_index=True)
    _print_table("Box vs MF:", comparison)
    return 0


def cmd_sweep(config: RunConfig) -> int:
    split = read_split(config["data.split_dir"])
    _banner(f"Hyperparameter sweep: {config['sweep.n_runs']} {config.family} runs")
    table = run_sweep(
        split,
        config.model_config(),
        config.train_config(),
        n_runs=config["sweep.n_runs"],
        seed=config["sweep.seed"],
        eval_negatives=config["train.eval_negatives"],
        eval_seed=config["train.eval_seed"],
    )
    path = Path(config["data.report_dir"]) / "sweep.tsv"
    path.parent.mkdir(parents=True, exist_ok=True)
    write_sweep(table, path)
    _print_table("Sweep results (best first):", table)
    print(f"\nSweep table: {path}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command; returns the process exit code."""
    parser = build_parser()
    args, unknown = parser.parse_known_args(argv)
    arguments = vars(args)
    command = arguments.pop("command")
    config_path = arguments.pop("config", None)
    tokens = arguments.pop("tokens", [])

    try:
        if unknown:
            raise InputError(f"unknown arguments: {' '.join(unknown)}")
        config = load_run_config(config_path, arguments)
        setup_logging(config["logging.level"], config["logging.format"])
        logger.debug(f"Resolved configuration: {config.to_dict()}")

        if command == "split":
            return cmd_split(config)
        if command == "train":
            return cmd_train(config)
        if command == "eval":
            return cmd_eval(config)
        if command == "query":
            return cmd_query(config, tokens)
        if command == "synth":
            return cmd_synth(config)
        return cmd_sweep(config)
    except BoxRecError as e:
        logger.error(str(e))
        suggestions = getattr(e, "suggestions", None)
        if suggestions:
            logger.error(f"Did you mean: {', '.join(suggestions)}")
        return e.exit_code
    except KeyboardInterrupt:
        logger.warning("Interrupted")
        return 130
    except Exception:
        logger.exception("Unexpected error")
        return 1
