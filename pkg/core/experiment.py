"""
Experiment runners: train a model on a split, and the spectrum study.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import pandas as pd

from .checkpoint import save_checkpoint
from .evaluator import EvalReport, evaluate_model, make_eval_hook, spectrum_report
from .metrics import K_VALUES
from .models import EntityClass, ModelConfig, init_model
from .splitter import REGIMES, Split, spectrum_variants
from .trainer import TrainConfig, TrainingPairs, TrainResult, train, write_training_log

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def entity_counts(split: Split) -> dict[EntityClass, int]:
    return {
        EntityClass.USER: len(split.users),
        EntityClass.ATTRIBUTE: len(split.attributes),
        EntityClass.ITEM: len(split.items),
    }


def vocabularies(split: Split) -> dict:
    return {
        EntityClass.USER: split.users,
        EntityClass.ATTRIBUTE: split.attributes,
        EntityClass.ITEM: split.items,
    }


def training_pairs(split: Split) -> TrainingPairs:
    user_rows, user_items = split.train_user_pairs()
    attribute_rows, attribute_items = split.train_attribute_pairs()
    return TrainingPairs(user_rows, user_items, attribute_rows, attribute_items)


def train_on_split(
    split: Split,
    model_config: ModelConfig,
    train_config: TrainConfig,
    eval_negatives: int = 100,
    eval_seed: int = 0,
    checkpoint_dir: Optional[PathLike] = None,
    log_path: Optional[PathLike] = None,
) -> TrainResult:
    """
    Fresh model, NCE training with sampled-eval model selection. Every
    improvement is checkpointed to ``checkpoint_dir`` when given.
    """
    model = init_model(model_config, entity_counts(split))
    on_improvement = None
    if checkpoint_dir is not None:
        vocab = vocabularies(split)

        def on_improvement(best, epoch, score):
            save_checkpoint(best, vocab, checkpoint_dir)
            logger.info(f"Checkpoint updated (epoch {epoch}, NDCG={score:.4f})")

    result = train(
        model,
        training_pairs(split),
        train_config,
        make_eval_hook(split.d_u, eval_negatives, eval_seed),
        on_improvement,
    )
    if log_path is not None:
        write_training_log(result.log, log_path)
    return result


def run_spectrum(
    split: Split,
    model_config: ModelConfig,
    train_config: TrainConfig,
    regimes: Sequence[str] = REGIMES,
    strategies: Sequence[str] = ("geometric",),
    k_values: Sequence[int] = K_VALUES,
    max_queries: Optional[int] = None,
    eval_negatives: int = 100,
    eval_seed: int = 0,
) -> tuple[pd.DataFrame, dict[str, EvalReport]]:
    """
    Train one model per regime and rank the simple queries with each.
    Returns the spectrum table and the per-regime reports.
    """
    per_regime: dict[str, dict[str, dict[int, float]]] = {}
    reports = {}
    for regime in regimes:
        logger.info("=" * 60)
        logger.info(f"Spectrum regime: {regime}")
        logger.info("=" * 60)
        variant = spectrum_variants(split, regime, kind="simple")
        result = train_on_split(variant, model_config, train_config, eval_negatives, eval_seed)
        report = evaluate_model(
            result.best_model,
            variant,
            strategies=strategies,
            query_types=("simple",),
            k_values=k_values,
            max_queries=max_queries,
            seed=eval_seed,
        )
        reports[regime] = report
        per_regime[regime] = {r.strategy: dict(r.hit_rate) for r in report.results}
    return spectrum_report(per_regime), reports
