"""
Noise-contrastive training of box and MF models.

Per positive pair (e, m) with k uniformly sampled items m~:

    loss = E(e, m) - mean_i log(1 - exp(-E(e, m~_i)))

User and attribute terms are averaged separately and mixed as
w * users + (1 - w) * attributes. After every epoch the eval hook scores
the model (sampled NDCG on D_U eval); the best epoch is kept and training
stops after ``patience`` epochs without a strict improvement.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
import pandas as pd

from .errors import ContractViolation
from .models import EmbeddingModel, EntityClass
from .optimizer import AdamOptimizer
from .utils import atomic_write_text

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

ENERGY_CLAMP = 1e-7
LOG_COLUMNS = ["epoch", "train_loss", "eval_ndcg", "eval_hr10", "elapsed_ms"]

EvalHook = Callable[[EmbeddingModel], tuple[float, float]]
ImprovementCallback = Callable[[EmbeddingModel, int, float], None]


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 128
    num_negatives: int = 20
    attribute_loss_weight: float = 0.7
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    exclude_positives: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.attribute_loss_weight <= 1.0:
            raise ContractViolation(f"attribute_loss_weight must lie in [0, 1], got {self.attribute_loss_weight}")
        if self.num_negatives < 1:
            raise ContractViolation(f"num_negatives must be >= 1, got {self.num_negatives}")
        if self.patience < 1:
            raise ContractViolation(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1:
            raise ContractViolation(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ContractViolation(f"max_epochs must be >= 1, got {self.max_epochs}")


@dataclass
class TrainState:
    optimizer: AdamOptimizer
    rng: np.random.Generator
    epoch: int = 0
    best_ndcg: float = -math.inf
    best_epoch: int = 0
    stale_epochs: int = 0


@dataclass
class PairBatch:
    """Positive (row, item) pairs of one entity class and their negatives (B, k)."""

    entity_class: EntityClass
    rows: np.ndarray
    items: np.ndarray
    negatives: np.ndarray

    def __len__(self) -> int:
        return int(self.rows.size)

    @classmethod
    def empty(cls, entity_class: EntityClass, k: int = 1) -> "PairBatch":
        none = np.zeros(0, dtype=np.int64)
        return cls(entity_class, none, none, np.zeros((0, k), dtype=np.int64))


@dataclass
class TrainResult:
    best_model: EmbeddingModel
    best_ndcg: float
    best_epoch: int
    initial_ndcg: float
    log: pd.DataFrame
    state: TrainState = field(repr=False)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

def log1mexp(energy: np.ndarray) -> np.ndarray:
    """log(1 - exp(-E)) for E clamped to >= ENERGY_CLAMP."""
    e = np.maximum(np.asarray(energy, dtype=np.float64), ENERGY_CLAMP)
    small = e < math.log(2.0)
    out = np.empty_like(e)
    out[small] = np.log(-np.expm1(-e[small]))
    out[~small] = np.log1p(-np.exp(-e[~small]))
    return out


def _d_log1mexp(energy: np.ndarray) -> np.ndarray:
    """d/dE log(1 - exp(-E)) = exp(-E) / (1 - exp(-E)); zero below the clamp."""
    e = np.asarray(energy, dtype=np.float64)
    live = e >= ENERGY_CLAMP
    clamped = np.maximum(e, ENERGY_CLAMP)
    return np.where(live, np.exp(-clamped) / -np.expm1(-clamped), 0.0)


def _nce_terms(
    model: EmbeddingModel,
    batch: PairBatch,
    weight: float,
    grads: Optional[dict[str, np.ndarray]],
) -> np.ndarray:
    """Per-pair NCE losses; adds weight * d(mean loss) into ``grads``."""
    need_grad = grads is not None and weight != 0.0
    n, k = batch.negatives.shape
    positive = model.energy(batch.entity_class, batch.rows, batch.items, need_grad)
    negative = model.energy(batch.entity_class, batch.rows[:, None], batch.negatives, need_grad)
    losses = positive.energy - log1mexp(negative.energy).mean(axis=1)

    if need_grad:
        scale = weight / n
        model.accumulate_grad(positive, np.full(n, scale), grads)
        model.accumulate_grad(negative, -scale / k * _d_log1mexp(negative.energy), grads)
    return losses


def nce_loss_term(model: EmbeddingModel, entity_class: EntityClass, row: int, item: int, negatives) -> float:
    """NCE loss of one positive pair against its sampled negatives."""
    negatives = np.asarray(negatives, dtype=np.int64).reshape(1, -1)
    if negatives.size == 0:
        raise ContractViolation("nce_loss_term needs at least one negative")
    batch = PairBatch(entity_class, np.array([row], dtype=np.int64), np.array([item], dtype=np.int64), negatives)
    return float(_nce_terms(model, batch, 1.0, None)[0])


def batch_loss(
    model: EmbeddingModel,
    user_batch: PairBatch,
    attribute_batch: PairBatch,
    attribute_loss_weight: float,
    grads: Optional[dict[str, np.ndarray]] = None,
) -> float:
    """
    w * mean(user terms) + (1 - w) * mean(attribute terms). A group with
    no pairs contributes 0. Gradients are added into ``grads`` when given.
    """
    if len(user_batch) == 0 and len(attribute_batch) == 0:
        raise ContractViolation("batch_loss needs at least one pair")
    w = attribute_loss_weight
    total = 0.0
    if len(user_batch):
        total += w * float(_nce_terms(model, user_batch, w, grads).mean())
    if len(attribute_batch):
        total += (1.0 - w) * float(_nce_terms(model, attribute_batch, 1.0 - w, grads).mean())
    return total


# ---------------------------------------------------------------------------
# Negative sampling
# ---------------------------------------------------------------------------

def sample_negatives(
    rng: np.random.Generator,
    k: int,
    item_vocab_size: int,
    exclude=None,
) -> np.ndarray:
    """k i.i.d. uniform item indices, optionally redrawing excluded items."""
    if k < 1:
        raise ContractViolation(f"k must be >= 1, got {k}")
    draws = rng.integers(0, item_vocab_size, size=k)
    if exclude is None:
        return draws
    excluded = np.unique(np.asarray(list(exclude), dtype=np.int64))
    if excluded.size >= item_vocab_size:
        raise ContractViolation("every item is excluded; no negative can be drawn")
    hit = np.isin(draws, excluded)
    while hit.any():
        draws[hit] = rng.integers(0, item_vocab_size, size=int(hit.sum()))
        hit = np.isin(draws, excluded)
    return draws


def sample_batch_negatives(
    rng: np.random.Generator,
    rows: np.ndarray,
    k: int,
    item_vocab_size: int,
    known_keys: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    (len(rows), k) uniform draws. With ``known_keys`` (sorted
    ``row * n_items + item``) draws that hit a positive of their row are
    redrawn.
    """
    draws = rng.integers(0, item_vocab_size, size=(rows.size, k))
    if known_keys is None or known_keys.size == 0:
        return draws
    full = np.bincount(known_keys // item_vocab_size, minlength=int(rows.max(initial=0)) + 1)
    if rows.size and (full[rows] >= item_vocab_size).any():
        raise ContractViolation("a row interacts with every item; no negative can be drawn")

    def hits(d):
        keys = rows[:, None] * item_vocab_size + d
        pos = np.minimum(np.searchsorted(known_keys, keys), known_keys.size - 1)
        return known_keys[pos] == keys

    hit = hits(draws)
    while hit.any():
        draws[hit] = rng.integers(0, item_vocab_size, size=int(hit.sum()))
        hit = hits(draws)
    return draws


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainingPairs:
    """Training relation of one epoch: users and attributes against items."""

    user_rows: np.ndarray
    user_items: np.ndarray
    attribute_rows: np.ndarray
    attribute_items: np.ndarray

    def __len__(self) -> int:
        return int(self.user_rows.size + self.attribute_rows.size)

    def known_keys(self, n_items: int) -> tuple[np.ndarray, np.ndarray]:
        return (
            np.unique(self.user_rows * n_items + self.user_items),
            np.unique(self.attribute_rows * n_items + self.attribute_items),
        )


def _epoch_batches(pairs: TrainingPairs, rng: np.random.Generator, batch_size: int):
    n_user = pairs.user_rows.size
    order = rng.permutation(len(pairs))
    for start in range(0, order.size, batch_size):
        chunk = order[start : start + batch_size]
        yield chunk[chunk < n_user], chunk[chunk >= n_user] - n_user


def train(
    model: EmbeddingModel,
    pairs: TrainingPairs,
    config: TrainConfig,
    eval_hook: EvalHook,
    on_improvement: Optional[ImprovementCallback] = None,
) -> TrainResult:
    """
    Train ``model`` in place and return the best-NDCG snapshot with the
    per-epoch log.
    """
    if len(pairs) == 0:
        raise ContractViolation("training split is empty")

    n_items = model.n_items
    k = config.num_negatives
    w = config.attribute_loss_weight
    state = TrainState(
        optimizer=AdamOptimizer(config.learning_rate, config.beta1, config.beta2, config.epsilon),
        rng=np.random.default_rng(config.seed),
    )
    user_known, attribute_known = (None, None)
    if config.exclude_positives:
        user_known, attribute_known = pairs.known_keys(n_items)

    initial_ndcg, initial_hr = eval_hook(model)
    logger.info("=" * 60)
    logger.info(f"Training {model.family} model: {len(pairs)} pairs, k={k}, w={w}, lr={config.learning_rate}")
    logger.info(f"Initial eval NDCG={initial_ndcg:.4f} HR@10={initial_hr:.4f}")
    logger.info("=" * 60)

    params = model.parameters()
    best_model = model.copy()
    rows = []
    started = time.perf_counter()
    while state.epoch < config.max_epochs:
        state.epoch += 1
        batch_losses = []
        for user_idx, attr_idx in _epoch_batches(pairs, state.rng, config.batch_size):
            u_rows = pairs.user_rows[user_idx]
            a_rows = pairs.attribute_rows[attr_idx]
            user_batch = PairBatch(
                EntityClass.USER,
                u_rows,
                pairs.user_items[user_idx],
                sample_batch_negatives(state.rng, u_rows, k, n_items, user_known),
            )
            attribute_batch = PairBatch(
                EntityClass.ATTRIBUTE,
                a_rows,
                pairs.attribute_items[attr_idx],
                sample_batch_negatives(state.rng, a_rows, k, n_items, attribute_known),
            )
            grads = model.zero_grads()
            batch_losses.append(batch_loss(model, user_batch, attribute_batch, w, grads))
            state.optimizer.step(params, grads)

        eval_ndcg, eval_hr10 = eval_hook(model)
        elapsed_ms = int(round((time.perf_counter() - started) * 1000.0))
        train_loss = float(np.mean(batch_losses))
        rows.append(
            {
                "epoch": state.epoch,
                "train_loss": train_loss,
                "eval_ndcg": eval_ndcg,
                "eval_hr10": eval_hr10,
                "elapsed_ms": elapsed_ms,
            }
        )
        logger.info(
            f"epoch {state.epoch:3d} loss={train_loss:.5f} ndcg={eval_ndcg:.4f} hr@10={eval_hr10:.4f}"
        )

        if eval_ndcg > state.best_ndcg:
            state.best_ndcg = eval_ndcg
            state.best_epoch = state.epoch
            state.stale_epochs = 0
            best_model = model.copy()
            if on_improvement is not None:
                on_improvement(best_model, state.epoch, eval_ndcg)
        else:
            state.stale_epochs += 1
            if state.stale_epochs >= config.patience:
                logger.info(f"No improvement for {config.patience} epochs, stopping at epoch {state.epoch}")
                break

    logger.info(f"Best eval NDCG={state.best_ndcg:.4f} at epoch {state.best_epoch}")
    return TrainResult(
        best_model=best_model,
        best_ndcg=state.best_ndcg,
        best_epoch=state.best_epoch,
        initial_ndcg=initial_ndcg,
        log=pd.DataFrame(rows, columns=LOG_COLUMNS),
        state=state,
    )


def write_training_log(log: pd.DataFrame, path: PathLike) -> None:
    atomic_write_text(path, log.to_csv(sep="\t", index=False, lineterminator="\n"))
