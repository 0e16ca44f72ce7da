"""
Synthetic ground truth for desk-scale experiments.

Items are uniform points in [0, 1]^L. Every attribute and every user owns
an axis-parallel region; D_A is exact point-in-region membership and D_U
is membership with random dropout. The oracle answers any set-theoretic
query exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd

from .box_geometry import QueryShape
from .data_source import InteractionSet, Vocabulary
from .errors import ContractViolation
from .models import EntityClass

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# Fraction of the unit cube covered by a region
ATTRIBUTE_COVERAGE = (0.08, 0.6)
USER_COVERAGE = (0.03, 0.2)
DEFAULT_DROPOUT = 0.1


def _random_regions(rng: np.random.Generator, n: int, dim: int, coverage: tuple[float, float]) -> tuple[np.ndarray, np.ndarray]:
    volume = rng.uniform(coverage[0], coverage[1], size=n)
    side = volume ** (1.0 / dim)
    lower = rng.uniform(0.0, 1.0, size=(n, dim)) * (1.0 - side)[:, None]
    return lower, lower + side[:, None]


def _inside(points: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """(regions, points) membership matrix."""
    return np.all((points[None, :, :] >= lower[:, None, :]) & (points[None, :, :] <= upper[:, None, :]), axis=-1)


@dataclass
class SyntheticOracle:
    """Exact membership of every item in every user and attribute region."""

    user_members: np.ndarray  # (n_users, n_items) bool
    attribute_members: np.ndarray  # (n_attributes, n_items) bool

    family = "oracle"

    @property
    def n_items(self) -> int:
        return int(self.user_members.shape[1])

    def count(self, entity_class: EntityClass) -> int:
        if entity_class is EntityClass.USER:
            return int(self.user_members.shape[0])
        if entity_class is EntityClass.ATTRIBUTE:
            return int(self.attribute_members.shape[0])
        return self.n_items

    def members(self, entity_class: EntityClass, row: int) -> np.ndarray:
        table = self.user_members if entity_class is EntityClass.USER else self.attribute_members
        return table[int(row)]

    def answer(self, shape: QueryShape) -> np.ndarray:
        """Items satisfying the query, as a boolean mask."""
        mask = np.ones(self.n_items, dtype=bool)
        if shape.user is not None:
            mask &= self.user_members[shape.user]
        for a in shape.positive_attributes:
            mask &= self.attribute_members[a]
        if shape.negated_attribute is not None:
            mask &= ~self.attribute_members[shape.negated_attribute]
        return mask

    # Scoring interface shared with the embedding models

    def entity_scores(self, entity_class: EntityClass, row: int) -> np.ndarray:
        return self.members(entity_class, row).astype(np.float64)

    def geometric_scores(self, shape: QueryShape) -> np.ndarray:
        return self.answer(shape).astype(np.float64)

    def aligned(self, users: Vocabulary, attributes: Vocabulary, items: Vocabulary) -> "SyntheticOracle":
        """Re-index onto (filtered) vocabularies of synthetic ids."""
        u = np.array([int(i[1:]) for i in users.ids], dtype=np.int64)
        a = np.array([int(i[1:]) for i in attributes.ids], dtype=np.int64)
        m = np.array([int(i[1:]) for i in items.ids], dtype=np.int64)
        return SyntheticOracle(self.user_members[np.ix_(u, m)], self.attribute_members[np.ix_(a, m)])


@dataclass
class SyntheticDataset:
    d_u: InteractionSet
    d_a: InteractionSet
    oracle: SyntheticOracle


def _relation(name: str, members: np.ndarray, row_vocab: Vocabulary, item_vocab: Vocabulary) -> InteractionSet:
    rows, items = np.nonzero(members)
    return InteractionSet(name, row_vocab, item_vocab, rows, items)


def synthetic_generate(
    n_users: int,
    n_items: int,
    n_attributes: int,
    latent_dim: int,
    seed: int,
    dropout: float = DEFAULT_DROPOUT,
) -> SyntheticDataset:
    """
    Draw a synthetic world. Ids are ``u<i>``, ``m<i>`` and ``a<i>``; every
    index equals the numeric suffix of its id.
    """
    if min(n_users, n_items, n_attributes, latent_dim) < 1:
        raise ContractViolation("synthetic sizes must be positive")
    if not 0.0 <= dropout < 1.0:
        raise ContractViolation(f"dropout must lie in [0, 1), got {dropout}")

    rng = np.random.default_rng(seed)
    points = rng.uniform(0.0, 1.0, size=(n_items, latent_dim))
    attr_lo, attr_hi = _random_regions(rng, n_attributes, latent_dim, ATTRIBUTE_COVERAGE)
    user_lo, user_hi = _random_regions(rng, n_users, latent_dim, USER_COVERAGE)
    attribute_members = _inside(points, attr_lo, attr_hi)
    user_members = _inside(points, user_lo, user_hi)
    observed = user_members & (rng.uniform(size=user_members.shape) >= dropout)

    users = Vocabulary("user", [f"u{i}" for i in range(n_users)]).freeze()
    items = Vocabulary("item", [f"m{i}" for i in range(n_items)]).freeze()
    attributes = Vocabulary("attribute", [f"a{i}" for i in range(n_attributes)]).freeze()

    d_u = _relation("D_U", observed, users, items)
    d_a = _relation("D_A", attribute_members, attributes, items)
    logger.info(
        f"Synthetic world: {n_users} users, {n_items} items, {n_attributes} attributes, "
        f"L={latent_dim}, D_U={len(d_u)}, D_A={len(d_a)}"
    )
    return SyntheticDataset(d_u=d_u, d_a=d_a, oracle=SyntheticOracle(user_members, attribute_members))


def write_synthetic(dataset: SyntheticDataset, directory: PathLike) -> tuple[Path, Path]:
    """Write ``user_item.tsv`` and ``attribute_item.tsv`` for the ingest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for relation, name in ((dataset.d_u, "user_item.tsv"), (dataset.d_a, "attribute_item.tsv")):
        path = directory / name
        relation.to_frame().to_csv(path, sep="\t", header=False, index=False, lineterminator="\n")
        paths.append(path)
    truth = pd.DataFrame(
        {
            "kind": ["user"] * dataset.oracle.user_members.shape[0]
            + ["attribute"] * dataset.oracle.attribute_members.shape[0],
            "members": [int(r.sum()) for r in dataset.oracle.user_members]
            + [int(r.sum()) for r in dataset.oracle.attribute_members],
        }
    )
    truth.to_csv(directory / "region_sizes.tsv", sep="\t", index=False, lineterminator="\n")
    return paths[0], paths[1]
