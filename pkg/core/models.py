"""
Embedding models: parameter tables and scoring front-ends.

Two families share one interface:
  - BoxModel: every user, attribute and item is a box. Scores are soft
    containment of the item box in the (intersection of) query boxes.
  - MFModel:  logistic matrix factorisation, sigma(e . m); queries are
    composed by vector addition/subtraction before the dot product.

Energies E(e, m) feed the trainer: box energy is -log containment,
MF energy is -log sigma(e . m).

Tables are read-shared during scoring; only the trainer mutates them.
"""

from __future__ import annotations

import copy
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy.special import expit

from .box_geometry import (
    Box,
    GumbelTemps,
    QueryShape,
    energy_from_log_score,
    log_containment,
    query_scores,
)
from .errors import ContractViolation, LookupFailure

logger = logging.getLogger(__name__)


class EntityClass(Enum):
    USER = "user"
    ATTRIBUTE = "attribute"
    ITEM = "item"


ENTITY_ORDER = (EntityClass.USER, EntityClass.ATTRIBUTE, EntityClass.ITEM)

# Same number of reals per entity: a box stores two D-vectors.
DEFAULT_DIMS = {"box": 64, "mf": 128}

DEFAULT_TEMPS = GumbelTemps(intersection_temp=2.0, volume_temp=0.01)


@dataclass
class ModelConfig:
    """Model family, embedding dimension, temperatures and init seed."""

    family: str = "box"
    dim: Optional[int] = None
    temps: GumbelTemps = DEFAULT_TEMPS
    seed: int = 0

    def __post_init__(self) -> None:
        if self.family not in DEFAULT_DIMS:
            raise ContractViolation(f"unknown model family: {self.family} (expected box or mf)")
        if self.dim is None:
            self.dim = DEFAULT_DIMS[self.family]
        if self.dim < 1:
            raise ContractViolation(f"model dim must be >= 1, got {self.dim}")


# ---------------------------------------------------------------------------
# Parameter tables
# ---------------------------------------------------------------------------

def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def inverse_softplus(y: np.ndarray) -> np.ndarray:
    return np.log(np.expm1(y))


@dataclass
class BoxParameterTable:
    """
    Box parameters of one entity class. Realised boxes are
    [min, min + softplus(width_param)], so max > min always holds.
    """

    entity_class: EntityClass
    min_params: np.ndarray
    width_params: np.ndarray

    @property
    def count(self) -> int:
        return int(self.min_params.shape[0])

    @property
    def dim(self) -> int:
        return int(self.min_params.shape[1])

    def realize(self, index=None) -> tuple[np.ndarray, np.ndarray]:
        """(mins, maxs) for ``index`` (any int array shape) or for every row."""
        if index is None:
            lo, w = self.min_params, self.width_params
        else:
            lo, w = self.min_params[index], self.width_params[index]
        return lo, lo + softplus(w)

    def box(self, index: int) -> Box:
        lo, hi = self.realize(int(index))
        return Box(lo, hi)


@dataclass
class VectorParameterTable:
    """Latent factors of one entity class."""

    entity_class: EntityClass
    vectors: np.ndarray

    @property
    def count(self) -> int:
        return int(self.vectors.shape[0])

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])


@dataclass
class EnergyBatch:
    """
    Energies of (row entity, item) pairs with their partial derivatives
    per parameter kind, ready to be scattered into table gradients.
    """

    entity_class: EntityClass
    rows: np.ndarray
    items: np.ndarray
    energy: np.ndarray
    d_row: dict[str, np.ndarray] = field(default_factory=dict)
    d_item: dict[str, np.ndarray] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Model interface
# ---------------------------------------------------------------------------

class EmbeddingModel(ABC):
    """Common interface of the box and MF families."""

    family: str = ""

    def __init__(self, config: ModelConfig):
        self.config = config

    # -- parameters -------------------------------------------------------

    @abstractmethod
    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable arrays keyed ``<kind>.<class>`` (e.g. ``min.user``)."""

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(value) for name, value in self.parameters().items()}

    @abstractmethod
    def count(self, entity_class: EntityClass) -> int:
        ...

    @property
    def n_items(self) -> int:
        return self.count(EntityClass.ITEM)

    def copy(self) -> "EmbeddingModel":
        return copy.deepcopy(self)

    def check_index(self, entity_class: EntityClass, index) -> None:
        index = np.asarray(index)
        if index.size == 0:
            return
        n = self.count(entity_class)
        if index.min() < 0 or index.max() >= n:
            raise LookupFailure(f"{entity_class.value} index out of range [0, {n}): {index.min()}..{index.max()}")

    def check_shape(self, shape: QueryShape) -> None:
        if shape.user is not None:
            self.check_index(EntityClass.USER, shape.user)
        attrs = list(shape.positive_attributes)
        if shape.negated_attribute is not None:
            attrs.append(shape.negated_attribute)
        self.check_index(EntityClass.ATTRIBUTE, np.asarray(attrs, dtype=np.int64))

    # -- training ---------------------------------------------------------

    @abstractmethod
    def energy(self, entity_class: EntityClass, rows, items, need_grad: bool = False) -> EnergyBatch:
        """Energies of broadcast (rows, items) pairs."""

    def accumulate_grad(self, batch: EnergyBatch, upstream: np.ndarray, grads: dict[str, np.ndarray]) -> None:
        """Add upstream * dE/dparams into ``grads`` (fixed summation order)."""
        rows = batch.rows.ravel()
        items = batch.items.ravel()
        weight = np.asarray(upstream, dtype=np.float64).reshape(-1, 1)
        for kind, partial in batch.d_row.items():
            np.add.at(grads[f"{kind}.{batch.entity_class.value}"], rows, weight * partial.reshape(rows.size, -1))
        for kind, partial in batch.d_item.items():
            np.add.at(grads[f"{kind}.{EntityClass.ITEM.value}"], items, weight * partial.reshape(items.size, -1))

    # -- scoring ----------------------------------------------------------

    @abstractmethod
    def entity_scores(self, entity_class: EntityClass, row: int) -> np.ndarray:
        """Normalised per-entity score in [0, 1] for every item."""

    @abstractmethod
    def geometric_scores(self, shape: QueryShape) -> np.ndarray:
        """Query score computed in embedding space, for every item."""

    def score(self, entity_class: EntityClass, row: int, item: int) -> float:
        self.check_index(EntityClass.ITEM, item)
        return float(self.entity_scores(entity_class, row)[item])


# ---------------------------------------------------------------------------
# Box family
# ---------------------------------------------------------------------------

class BoxModel(EmbeddingModel):
    """Box embeddings for users, attributes and items in one space."""

    family = "box"

    def __init__(self, config: ModelConfig, tables: dict[EntityClass, BoxParameterTable]):
        super().__init__(config)
        self.tables = tables

    @property
    def temps(self) -> GumbelTemps:
        return self.config.temps

    def parameters(self) -> dict[str, np.ndarray]:
        params = {}
        for cls in ENTITY_ORDER:
            params[f"min.{cls.value}"] = self.tables[cls].min_params
            params[f"width.{cls.value}"] = self.tables[cls].width_params
        return params

    def count(self, entity_class: EntityClass) -> int:
        return self.tables[entity_class].count

    def box(self, entity_class: EntityClass, index: int) -> Box:
        self.check_index(entity_class, index)
        return self.tables[entity_class].box(index)

    def energy(self, entity_class: EntityClass, rows, items, need_grad: bool = False) -> EnergyBatch:
        rows, items = np.broadcast_arrays(np.asarray(rows, dtype=np.int64), np.asarray(items, dtype=np.int64))
        self.check_index(entity_class, rows)
        self.check_index(EntityClass.ITEM, items)
        row_table = self.tables[entity_class]
        item_table = self.tables[EntityClass.ITEM]
        c_min, c_max = row_table.realize(rows)
        t_min, t_max = item_table.realize(items)
        terms = log_containment(c_min[..., None, :], c_max[..., None, :], t_min, t_max, self.temps, need_grad)
        value, live = energy_from_log_score(terms.log_score)
        batch = EnergyBatch(entity_class=entity_class, rows=rows, items=items, energy=value)
        if not need_grad:
            return batch

        # dE/dL = -1 where the score floor is not active
        sign = np.where(live, -1.0, 0.0)[..., None]
        d_cmin = sign * terms.d_container_min[..., 0, :]
        d_cmax = sign * terms.d_container_max[..., 0, :]
        d_tmin = sign * terms.d_target_min
        d_tmax = sign * terms.d_target_max
        # max = min + softplus(w): d/dmin_param = d/dmin + d/dmax, d/dw = d/dmax * sigmoid(w)
        batch.d_row = {
            "min": d_cmin + d_cmax,
            "width": d_cmax * expit(row_table.width_params[rows]),
        }
        batch.d_item = {
            "min": d_tmin + d_tmax,
            "width": d_tmax * expit(item_table.width_params[items]),
        }
        return batch

    def entity_scores(self, entity_class: EntityClass, row: int) -> np.ndarray:
        self.check_index(entity_class, row)
        c_min, c_max = self.tables[entity_class].realize(np.array([int(row)]))
        t_min, t_max = self.tables[EntityClass.ITEM].realize()
        return np.exp(log_containment(c_min, c_max, t_min, t_max, self.temps).log_score)

    def _positive_boxes(self, shape: QueryShape) -> tuple[np.ndarray, np.ndarray]:
        mins, maxs = [], []
        if shape.user is not None:
            lo, hi = self.tables[EntityClass.USER].realize(int(shape.user))
            mins.append(lo)
            maxs.append(hi)
        for a in shape.positive_attributes:
            lo, hi = self.tables[EntityClass.ATTRIBUTE].realize(int(a))
            mins.append(lo)
            maxs.append(hi)
        return np.stack(mins), np.stack(maxs)

    def geometric_scores(self, shape: QueryShape) -> np.ndarray:
        self.check_shape(shape)
        pos_min, pos_max = self._positive_boxes(shape)
        t_min, t_max = self.tables[EntityClass.ITEM].realize()
        neg_min = neg_max = None
        if shape.negated_attribute is not None:
            neg_min, neg_max = self.tables[EntityClass.ATTRIBUTE].realize(int(shape.negated_attribute))
        return query_scores(pos_min, pos_max, t_min, t_max, self.temps, neg_min, neg_max)

    def query_score(self, shape: QueryShape, item: int) -> float:
        """Box query score of one target item."""
        self.check_index(EntityClass.ITEM, item)
        return float(self.geometric_scores(shape)[item])


# ---------------------------------------------------------------------------
# Logistic matrix factorisation
# ---------------------------------------------------------------------------

class MFModel(EmbeddingModel):
    """Dot-product model with a sigmoid link."""

    family = "mf"

    def __init__(self, config: ModelConfig, tables: dict[EntityClass, VectorParameterTable]):
        super().__init__(config)
        self.tables = tables

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"vec.{cls.value}": self.tables[cls].vectors for cls in ENTITY_ORDER}

    def count(self, entity_class: EntityClass) -> int:
        return self.tables[entity_class].count

    def vector(self, entity_class: EntityClass, index: int) -> np.ndarray:
        self.check_index(entity_class, index)
        return self.tables[entity_class].vectors[int(index)]

    def energy(self, entity_class: EntityClass, rows, items, need_grad: bool = False) -> EnergyBatch:
        rows, items = np.broadcast_arrays(np.asarray(rows, dtype=np.int64), np.asarray(items, dtype=np.int64))
        self.check_index(entity_class, rows)
        self.check_index(EntityClass.ITEM, items)
        e = self.tables[entity_class].vectors[rows]
        m = self.tables[EntityClass.ITEM].vectors[items]
        logits = np.einsum("...d,...d->...", e, m)
        # -log sigmoid(s) = softplus(-s)
        batch = EnergyBatch(entity_class=entity_class, rows=rows, items=items, energy=softplus(-logits))
        if need_grad:
            slope = -expit(-logits)[..., None]
            batch.d_row = {"vec": slope * m}
            batch.d_item = {"vec": slope * e}
        return batch

    def entity_scores(self, entity_class: EntityClass, row: int) -> np.ndarray:
        return expit(self.tables[EntityClass.ITEM].vectors @ self.vector(entity_class, row))

    def compose(self, shape: QueryShape) -> np.ndarray:
        """q = u + sum(positive attributes) - negated attribute."""
        self.check_shape(shape)
        attrs = self.tables[EntityClass.ATTRIBUTE].vectors
        q = np.zeros(self.config.dim)
        if shape.user is not None:
            q = q + self.tables[EntityClass.USER].vectors[int(shape.user)]
        for a in shape.positive_attributes:
            q = q + attrs[int(a)]
        if shape.negated_attribute is not None:
            q = q - attrs[int(shape.negated_attribute)]
        return q

    def geometric_scores(self, shape: QueryShape) -> np.ndarray:
        return expit(self.tables[EntityClass.ITEM].vectors @ self.compose(shape))

    def geometric_score(self, shape: QueryShape, item: int) -> float:
        self.check_index(EntityClass.ITEM, item)
        return float(expit(self.compose(shape) @ self.tables[EntityClass.ITEM].vectors[int(item)]))


# ---------------------------------------------------------------------------
# Initialisation
# ---------------------------------------------------------------------------

def init_model(config: ModelConfig, counts: dict[EntityClass, int]) -> EmbeddingModel:
    """
    Fresh parameter tables for every entity class, deterministic in
    ``config.seed``.

    box: min ~ U[0, 0.8], realised width ~ U[0.1, 0.3]
    mf:  vectors ~ N(0, 0.1^2)
    """
    for cls in ENTITY_ORDER:
        if counts.get(cls, 0) < 1:
            raise ContractViolation(f"vocabulary of {cls.value} must be non-empty")

    rng = np.random.default_rng(config.seed)
    dim = config.dim
    if config.family == "box":
        box_tables = {}
        for cls in ENTITY_ORDER:
            n = counts[cls]
            mins = rng.uniform(0.0, 0.8, size=(n, dim))
            widths = rng.uniform(0.1, 0.3, size=(n, dim))
            box_tables[cls] = BoxParameterTable(cls, mins, inverse_softplus(widths))
        sizes = ", ".join(f"{c.value}={counts[c]}" for c in ENTITY_ORDER)
        logger.info(f"Initialised box model D={dim} ({sizes})")
        return BoxModel(config, box_tables)

    vec_tables = {
        cls: VectorParameterTable(cls, rng.normal(0.0, 0.1, size=(counts[cls], dim)))
        for cls in ENTITY_ORDER
    }
    sizes = ", ".join(f"{c.value}={counts[c]}" for c in ENTITY_ORDER)
    logger.info(f"Initialised MF model D={dim} ({sizes})")
    return MFModel(config, vec_tables)
