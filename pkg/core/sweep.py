"""
Random hyperparameter sweep.

Samples configurations from a discrete search space, trains each on the
same split and ranks them by model-selection NDCG on D_U eval.
"""

from __future__ import annotations

import logging
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from .box_geometry import GumbelTemps
from .errors import ContractViolation
from .experiment import train_on_split
from .models import ModelConfig
from .splitter import Split
from .trainer import TrainConfig
from .utils import atomic_write_text

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SEARCH_SPACE: dict[str, Sequence] = {
    "learning_rate": (1e-1, 1e-2, 1e-3, 1e-4, 1e-5),
    "batch_size": (64, 128, 256, 512, 1024),
    "num_negatives": (1, 5, 10, 20),
    "attribute_loss_weight": (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
    "tau": (10.0, 2.0, 1.0, 1e-1, 1e-2, 1e-3, 1e-5),
    "nu": (10.0, 5.0, 1.0, 0.1, 0.01, 0.001),
}

TRAIN_KEYS = ("learning_rate", "batch_size", "num_negatives", "attribute_loss_weight")
TEMP_KEYS = ("tau", "nu")


def sample_configs(
    grid: dict[str, Sequence],
    n_runs: int,
    seed: int = 0,
    family: str = "box",
) -> list[dict]:
    """
    ``n_runs`` draws, each picking one value per hyperparameter.
    Temperatures are only drawn for the box family.
    """
    unknown = set(grid) - set(SEARCH_SPACE)
    if unknown:
        raise ContractViolation(f"unknown sweep hyperparameters: {sorted(unknown)}")
    if n_runs < 1:
        raise ContractViolation("n_runs must be >= 1")
    rng = np.random.default_rng(seed)
    names = [n for n in SEARCH_SPACE if n in grid and (family == "box" or n not in TEMP_KEYS)]
    draws = []
    for _ in range(n_runs):
        draws.append({name: grid[name][int(rng.integers(len(grid[name])))] for name in names})
    return draws


def apply_draw(model_config: ModelConfig, train_config: TrainConfig, draw: dict) -> tuple[ModelConfig, TrainConfig]:
    train_config = replace(train_config, **{k: v for k, v in draw.items() if k in TRAIN_KEYS})
    if "tau" in draw or "nu" in draw:
        temps = GumbelTemps(
            float(draw.get("tau", model_config.temps.intersection_temp)),
            float(draw.get("nu", model_config.temps.volume_temp)),
        )
        model_config = replace(model_config, temps=temps)
    return model_config, train_config


def run_sweep(
    split: Split,
    model_config: ModelConfig,
    train_config: TrainConfig,
    grid: Optional[dict[str, Sequence]] = None,
    n_runs: int = 10,
    seed: int = 0,
    eval_negatives: int = 100,
    eval_seed: int = 0,
) -> pd.DataFrame:
    """
    Train one model per sampled configuration.

    Returns:
        One row per run (hyperparameters, best/initial NDCG, best epoch),
        sorted by best NDCG descending; ties keep draw order.
    """
    grid = SEARCH_SPACE if grid is None else grid
    rows = []
    for run, draw in enumerate(sample_configs(grid, n_runs, seed, model_config.family), start=1):
        logger.info("=" * 60)
        logger.info(f"Sweep run {run}/{n_runs}: {draw}")
        logger.info("=" * 60)
        m_cfg, t_cfg = apply_draw(model_config, train_config, draw)
        result = train_on_split(split, m_cfg, t_cfg, eval_negatives, eval_seed)
        rows.append(
            {
                "run": run,
                "family": m_cfg.family,
                "dim": m_cfg.dim,
                "learning_rate": t_cfg.learning_rate,
                "batch_size": t_cfg.batch_size,
                "num_negatives": t_cfg.num_negatives,
                "attribute_loss_weight": t_cfg.attribute_loss_weight,
                "tau": m_cfg.temps.intersection_temp,
                "nu": m_cfg.temps.volume_temp,
                "best_ndcg": result.best_ndcg,
                "best_epoch": result.best_epoch,
                "initial_ndcg": result.initial_ndcg,
            }
        )
    table = pd.DataFrame(rows)
    return table.sort_values("best_ndcg", ascending=False, kind="mergesort").reset_index(drop=True)


def write_sweep(table: pd.DataFrame, path: PathLike) -> None:
    atomic_write_text(path, table.to_csv(sep="\t", index=False, float_format="%.6g", lineterminator="\n"))
