"""
Train/eval splitting and query generation.

Pipeline:
  1. filter_min_frequency  - iterate the frequency thresholds to a fixpoint
  2. split_simple          - joint sampler for (u, a, m) queries; moves the
                             (u, m) and (a, m) pairs out of training
  3. viable_pairs          - non-trivial attribute pairs for u & a1 & a2 and
                             u & a1 & !a2
  4. generate_complex      - personalised complex queries from the eval pairs
  5. spectrum_variants     - add a query's pairs back into training

A Split directory holds the partitions, the query sets, the vocabularies
and a ``split_manifest.txt``.
"""

from __future__ import annotations

import logging
import math
import shutil
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd

from .box_geometry import QueryShape
from .data_source import InteractionSet, Vocabulary
from .errors import ContractViolation, InputError
from .utils import read_manifest, replace_directory, staging_directory, write_manifest

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MIN_USER_COUNT = 5
MIN_ITEM_COUNT = 5
MIN_ATTRIBUTE_COUNT = 20

EPSILON_MODES = ("independence_expectation", "fixed")
REGIMES = ("weakest", "weak_user", "weak_attribute", "set_theoretic")
QUERY_KINDS = ("simple", "inter", "neg")

STALL_FACTOR = 100
SPLIT_FORMAT_VERSION = 1


@dataclass
class SplitConfig:
    """Joint-split and viability parameters."""

    max_sample_size: Optional[int] = None  # None -> floor(0.1 * |D_U|)
    epsilon_mode: str = "independence_expectation"
    epsilon_fixed: int = 0
    alpha: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.epsilon_mode not in EPSILON_MODES:
            raise ContractViolation(f"unknown epsilon mode: {self.epsilon_mode}")
        if not 0.0 < self.alpha < 1.0:
            raise ContractViolation(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.max_sample_size is not None and self.max_sample_size < 1:
            raise ContractViolation(f"max_sample_size must be >= 1, got {self.max_sample_size}")

    def sample_size(self, n_user_pairs: int) -> int:
        if self.max_sample_size is not None:
            return self.max_sample_size
        return max(1, int(math.floor(0.1 * n_user_pairs)))


@dataclass(frozen=True)
class QueryRecord:
    """A query shape together with the item it must retrieve."""

    shape: QueryShape
    target_item: int

    @property
    def kind(self) -> str:
        return self.shape.kind


@dataclass
class ViablePairs:
    """
    Boolean attribute x attribute masks. ``intersection[a1, a2]`` is set
    for unordered pairs with a1 < a2; ``difference[a1, a2]`` is ordered
    (a1 positive, a2 negated).
    """

    intersection: np.ndarray
    difference: np.ndarray

    def intersection_pairs(self) -> list[tuple[int, int]]:
        return [(int(a), int(b)) for a, b in zip(*np.nonzero(self.intersection))]

    def difference_pairs(self) -> list[tuple[int, int]]:
        return [(int(a), int(b)) for a, b in zip(*np.nonzero(self.difference))]


@dataclass
class Split:
    """
    Partitioned relations plus their query sets.

    ``added_u`` / ``added_a`` mark eval pairs that a spectrum regime puts
    back into training; the eval partition itself is never changed.
    """

    d_u: InteractionSet
    d_a: InteractionSet
    simple: list[QueryRecord] = field(default_factory=list)
    inter: list[QueryRecord] = field(default_factory=list)
    neg: list[QueryRecord] = field(default_factory=list)
    config: SplitConfig = field(default_factory=SplitConfig)
    regime: str = "set_theoretic"
    added_u: Optional[np.ndarray] = None
    added_a: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.added_u is None:
            self.added_u = np.zeros(len(self.d_u), dtype=bool)
        if self.added_a is None:
            self.added_a = np.zeros(len(self.d_a), dtype=bool)

    @property
    def users(self) -> Vocabulary:
        return self.d_u.row_vocab

    @property
    def attributes(self) -> Vocabulary:
        return self.d_a.row_vocab

    @property
    def items(self) -> Vocabulary:
        return self.d_u.item_vocab

    def queries(self, kind: str) -> list[QueryRecord]:
        if kind not in QUERY_KINDS:
            raise ContractViolation(f"unknown query kind: {kind}")
        return getattr(self, kind)

    def train_mask_u(self) -> np.ndarray:
        return ~self.d_u.is_eval | self.added_u

    def train_mask_a(self) -> np.ndarray:
        return ~self.d_a.is_eval | self.added_a

    def train_user_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        mask = self.train_mask_u()
        return self.d_u.rows[mask], self.d_u.items[mask]

    def train_attribute_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        mask = self.train_mask_a()
        return self.d_a.rows[mask], self.d_a.items[mask]

    def eval_user_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        return self.d_u.eval_pairs()


# ---------------------------------------------------------------------------
# Frequency filtering
# ---------------------------------------------------------------------------

def filter_min_frequency(
    d_u: InteractionSet,
    d_a: InteractionSet,
    min_user_count: int = MIN_USER_COUNT,
    min_item_count: int = MIN_ITEM_COUNT,
    min_attribute_count: int = MIN_ATTRIBUTE_COUNT,
) -> tuple[InteractionSet, InteractionSet]:
    """
    Drop users and items with fewer than ``min_user_count`` /
    ``min_item_count`` interactions in D_U and attributes with fewer than
    ``min_attribute_count`` in D_A, repeating until nothing changes.
    Vocabularies are re-indexed densely.
    """
    if len(d_u) == 0 or len(d_a) == 0:
        raise ContractViolation("filter_min_frequency needs non-empty relations")

    keep_user = np.ones(d_u.n_rows, dtype=bool)
    keep_item = np.ones(d_u.n_items, dtype=bool)
    keep_attr = np.ones(d_a.n_rows, dtype=bool)

    sweeps = 0
    while True:
        sweeps += 1
        live_u = keep_user[d_u.rows] & keep_item[d_u.items]
        live_a = keep_attr[d_a.rows] & keep_item[d_a.items]
        user_counts = np.bincount(d_u.rows[live_u], minlength=d_u.n_rows)
        item_counts = np.bincount(d_u.items[live_u], minlength=d_u.n_items)
        attr_counts = np.bincount(d_a.rows[live_a], minlength=d_a.n_rows)

        new_user = keep_user & (user_counts >= min_user_count)
        new_item = keep_item & (item_counts >= min_item_count)
        new_attr = keep_attr & (attr_counts >= min_attribute_count)
        if (
            np.array_equal(new_user, keep_user)
            and np.array_equal(new_item, keep_item)
            and np.array_equal(new_attr, keep_attr)
        ):
            break
        keep_user, keep_item, keep_attr = new_user, new_item, new_attr

    live_u = keep_user[d_u.rows] & keep_item[d_u.items]
    live_a = keep_attr[d_a.rows] & keep_item[d_a.items]
    if not live_u.any() or not live_a.any():
        raise ContractViolation("frequency filtering removed every interaction")

    users = d_u.row_vocab.subset(keep_user)
    attributes = d_a.row_vocab.subset(keep_attr)
    items = d_u.item_vocab.subset(keep_item)
    user_map = np.cumsum(keep_user) - 1
    item_map = np.cumsum(keep_item) - 1
    attr_map = np.cumsum(keep_attr) - 1

    filtered_u = InteractionSet(
        d_u.name, users, items, user_map[d_u.rows[live_u]], item_map[d_u.items[live_u]], d_u.is_eval[live_u]
    )
    filtered_a = InteractionSet(
        d_a.name, attributes, items, attr_map[d_a.rows[live_a]], item_map[d_a.items[live_a]], d_a.is_eval[live_a]
    )
    logger.info(
        f"Frequency filter converged after {sweeps} sweeps: "
        f"{len(users)} users, {len(items)} items, {len(attributes)} attributes, "
        f"D_U={len(filtered_u)}, D_A={len(filtered_a)}"
    )
    return filtered_u, filtered_a


# ---------------------------------------------------------------------------
# Joint split
# ---------------------------------------------------------------------------

def split_simple(d_u: InteractionSet, d_a: InteractionSet, config: SplitConfig) -> Split:
    """
    Joint sampler for personalised simple queries (u & a -> m).

    Marginals P(a), P(u), P(m) come from the full relations and stay
    fixed. Each draw picks a ~ P(a), then m among a's items weighted by
    P(m), then u among m's users weighted by P(u), and moves (u, m) and
    (a, m) to eval. A draw whose (u, m) pair is already in eval is
    skipped; an (a, m) pair may serve several queries. Sampling stops at
    ``max_sample_size`` queries or after STALL_FACTOR * max attempts.
    """
    target = config.sample_size(len(d_u))
    rng = np.random.default_rng(config.seed)

    user_matrix = d_u.matrix()
    attr_matrix = d_a.matrix()
    users_by_item = user_matrix.tocsc()

    p_attr = np.asarray(attr_matrix.sum(axis=1)).ravel().astype(np.float64)
    p_attr /= p_attr.sum()
    p_user = np.asarray(user_matrix.sum(axis=1)).ravel().astype(np.float64)
    p_user /= p_user.sum()
    p_item = np.asarray(user_matrix.sum(axis=0)).ravel().astype(np.float64)
    p_item /= p_item.sum()

    eval_u = np.zeros(len(d_u), dtype=bool)
    eval_a = np.zeros(len(d_a), dtype=bool)
    queries: list[QueryRecord] = []

    attempts = 0
    max_attempts = STALL_FACTOR * target
    while len(queries) < target and attempts < max_attempts:
        attempts += 1
        a = int(rng.choice(d_a.n_rows, p=p_attr))
        candidates = attr_matrix.indices[attr_matrix.indptr[a] : attr_matrix.indptr[a + 1]]
        weights = p_item[candidates]
        if weights.sum() <= 0.0:
            continue
        m = int(rng.choice(candidates, p=weights / weights.sum()))
        raters = users_by_item.indices[users_by_item.indptr[m] : users_by_item.indptr[m + 1]]
        weights = p_user[raters]
        u = int(rng.choice(raters, p=weights / weights.sum()))

        pos_u = int(np.searchsorted(d_u.keys, u * d_u.n_items + m))
        if eval_u[pos_u]:
            continue
        pos_a = int(np.searchsorted(d_a.keys, a * d_a.n_items + m))
        eval_u[pos_u] = True
        eval_a[pos_a] = True
        queries.append(QueryRecord(QueryShape(user=u, positive_attributes=(a,)), m))

    if not queries:
        raise ContractViolation(f"joint split produced no query within {max_attempts} attempts")
    if len(queries) < target:
        logger.warning(f"Joint split stalled: {len(queries)}/{target} queries after {attempts} attempts")
    else:
        logger.info(f"Joint split: {len(queries)} simple queries in {attempts} attempts")

    return Split(
        d_u=d_u.with_partition(eval_u),
        d_a=d_a.with_partition(eval_a),
        simple=queries,
        config=config,
    )


# ---------------------------------------------------------------------------
# Complex queries
# ---------------------------------------------------------------------------

def viable_pairs(d_a: InteractionSet, config: SplitConfig) -> ViablePairs:
    """
    Non-trivial attribute pairs over the full D_A item sets.

    intersection: eps < |a1 & a2| < alpha * min(|a1|, |a2|)
    difference:   eps < |a1 - a2| < alpha * min(|a1|, |M - a2|)

    eps is the size expected under independence (|a1||a2|/|M| and
    |a1||M - a2|/|M|) or ``config.epsilon_fixed``.
    """
    matrix = d_a.matrix()
    n_items = d_a.n_items
    sizes = np.asarray(matrix.sum(axis=1)).ravel().astype(np.float64)
    overlap = (matrix @ matrix.T).toarray().astype(np.float64)
    size_1 = sizes[:, None]
    size_2 = sizes[None, :]
    complement_2 = n_items - size_2
    difference = size_1 - overlap

    if config.epsilon_mode == "fixed":
        eps_inter = eps_diff = float(config.epsilon_fixed)
    else:
        eps_inter = size_1 * size_2 / n_items
        eps_diff = size_1 * complement_2 / n_items

    alpha = config.alpha
    inter = (overlap > eps_inter) & (overlap < alpha * size_1) & (overlap < alpha * size_2)
    inter = np.triu(inter, k=1)
    diff = (difference > eps_diff) & (difference < alpha * size_1) & (difference < alpha * complement_2)
    np.fill_diagonal(diff, False)

    logger.info(f"Viable attribute pairs: {int(inter.sum())} intersection, {int(diff.sum())} difference")
    return ViablePairs(intersection=inter, difference=diff)


def generate_complex(split: Split, viable: ViablePairs) -> tuple[list[QueryRecord], list[QueryRecord]]:
    """
    For every eval (u, m): u & a1 & a2 for viable pairs with both (a, m)
    in D_A eval, and u & a1 & !a2 for viable pairs with (a1, m) in D_A
    eval and a2 not on m in the full D_A.
    """
    eval_attrs = split.d_a.matrix("eval").tocsc()
    full_attrs = split.d_a.matrix().tocsc()
    n_attr = split.d_a.n_rows

    inter: list[QueryRecord] = []
    neg: list[QueryRecord] = []
    users, items = split.eval_user_pairs()
    for u, m in zip(users.tolist(), items.tolist()):
        on_m = eval_attrs.indices[eval_attrs.indptr[m] : eval_attrs.indptr[m + 1]]
        if on_m.size == 0:
            continue
        on_m = np.sort(on_m)
        absent = np.ones(n_attr, dtype=bool)
        absent[full_attrs.indices[full_attrs.indptr[m] : full_attrs.indptr[m + 1]]] = False

        for i, a1 in enumerate(on_m.tolist()):
            for a2 in on_m[i + 1 :].tolist():
                if viable.intersection[a1, a2]:
                    inter.append(QueryRecord(QueryShape(user=u, positive_attributes=(a1, a2)), m))
            for a2 in np.flatnonzero(viable.difference[a1] & absent).tolist():
                neg.append(QueryRecord(QueryShape(user=u, positive_attributes=(a1,), negated_attribute=a2), m))

    logger.info(f"Complex queries: {len(inter)} intersection, {len(neg)} negation")
    return inter, neg


def build_split(
    d_u: InteractionSet,
    d_a: InteractionSet,
    config: SplitConfig,
    filter_counts: Optional[tuple[int, int, int]] = (MIN_USER_COUNT, MIN_ITEM_COUNT, MIN_ATTRIBUTE_COUNT),
) -> Split:
    """Filter (unless ``filter_counts`` is None), split and generate every query set."""
    if filter_counts is not None:
        d_u, d_a = filter_min_frequency(d_u, d_a, *filter_counts)
    split = split_simple(d_u, d_a, config)
    split.inter, split.neg = generate_complex(split, viable_pairs(split.d_a, config))
    return split


# ---------------------------------------------------------------------------
# Generalisation spectrum
# ---------------------------------------------------------------------------

def spectrum_variants(split: Split, regime: str, kind: str = "simple") -> Split:
    """
    Training set for a spectrum regime, built from the queries of ``kind``:

      weakest         both the (u, m) and the (a, m) pairs go back to training
      weak_user       (u, m) goes back, (a, m) stays held out
      weak_attribute  (a, m) goes back, (u, m) stays held out
      set_theoretic   identity
    """
    if regime not in REGIMES:
        raise ContractViolation(f"unknown regime: {regime} (expected one of {', '.join(REGIMES)})")

    added_u = np.zeros(len(split.d_u), dtype=bool)
    added_a = np.zeros(len(split.d_a), dtype=bool)
    if regime != "set_theoretic":
        queries = split.queries(kind)
        if regime in ("weakest", "weak_user"):
            users = [q.shape.user for q in queries if q.shape.user is not None]
            targets = [q.target_item for q in queries if q.shape.user is not None]
            if users:
                added_u |= np.isin(split.d_u.keys, split.d_u.pair_keys(users, targets))
        if regime in ("weakest", "weak_attribute"):
            attrs = [a for q in queries for a in q.shape.positive_attributes]
            targets = [q.target_item for q in queries for _ in q.shape.positive_attributes]
            if attrs:
                added_a |= np.isin(split.d_a.keys, split.d_a.pair_keys(attrs, targets))

    added_u &= split.d_u.is_eval
    added_a &= split.d_a.is_eval
    logger.info(f"Spectrum regime {regime}: +{int(added_u.sum())} user pairs, +{int(added_a.sum())} attribute pairs")
    return replace(split, regime=regime, added_u=added_u, added_a=added_a)


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

def dataset_statistics(split: Split) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "users": len(split.users),
                "items": len(split.items),
                "attributes": len(split.attributes),
                "train_du": split.d_u.n_train,
                "eval_du": split.d_u.n_eval,
                "train_da": split.d_a.n_train,
                "eval_da": split.d_a.n_eval,
            }
        ]
    )


def query_statistics(split: Split) -> pd.DataFrame:
    return pd.DataFrame([{f"q_{kind}": len(split.queries(kind)) for kind in QUERY_KINDS}])


# ---------------------------------------------------------------------------
# Split directory IO
# ---------------------------------------------------------------------------

PAIR_FILES = {
    "du_train.tsv": ("d_u", "train"),
    "du_eval.tsv": ("d_u", "eval"),
    "da_train.tsv": ("d_a", "train"),
    "da_eval.tsv": ("d_a", "eval"),
}
VOCAB_FILES = {"user": "vocab_users.tsv", "item": "vocab_items.tsv", "attribute": "vocab_attributes.tsv"}
QUERY_COLUMNS = {
    "simple": ["user", "attribute", "item"],
    "inter": ["user", "attribute_1", "attribute_2", "item"],
    "neg": ["user", "attribute_1", "attribute_2", "item"],
}


def _write_tsv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, sep="\t", header=False, index=False, lineterminator="\n")


def _query_frame(split: Split, kind: str) -> pd.DataFrame:
    users = split.users.ids
    attrs = split.attributes.ids
    items = split.items.ids
    rows = []
    for q in split.queries(kind):
        row = [users[q.shape.user]] + [attrs[a] for a in q.shape.positive_attributes]
        if q.shape.negated_attribute is not None:
            row.append(attrs[q.shape.negated_attribute])
        row.append(items[q.target_item])
        rows.append(row)
    return pd.DataFrame(rows, columns=QUERY_COLUMNS[kind])


def write_split(split: Split, directory: PathLike) -> Path:
    """Write every split artefact to a staging directory, then swap it in."""
    directory = Path(directory)
    staging = staging_directory(directory)
    try:
        for kind, name in VOCAB_FILES.items():
            vocab = {"user": split.users, "item": split.items, "attribute": split.attributes}[kind]
            vocab.write(staging / name)
        for name, (relation, partition) in PAIR_FILES.items():
            _write_tsv(getattr(split, relation).to_frame(partition), staging / name)
        for kind in QUERY_KINDS:
            _write_tsv(_query_frame(split, kind), staging / f"queries_{kind}.tsv")

        stats = dataset_statistics(split)
        queries = query_statistics(split)
        stats.to_csv(staging / "dataset_stats.tsv", sep="\t", index=False, lineterminator="\n")
        queries.to_csv(staging / "query_stats.tsv", sep="\t", index=False, lineterminator="\n")

        manifest = {
            "version": SPLIT_FORMAT_VERSION,
            "seed": split.config.seed,
            "epsilon_mode": split.config.epsilon_mode,
            "epsilon_fixed": split.config.epsilon_fixed,
            "alpha": split.config.alpha,
            "max_sample_size": split.config.sample_size(len(split.d_u)),
        }
        manifest.update({f"count.{k}": int(v) for k, v in stats.iloc[0].items()})
        manifest.update({f"count.{k}": int(v) for k, v in queries.iloc[0].items()})
        write_manifest(staging / "split_manifest.txt", manifest)
        replace_directory(staging, directory)
    except BaseException:
        if staging.exists():
            shutil.rmtree(staging, ignore_errors=True)
        raise
    logger.info(f"Split written to {directory}")
    return directory


def _read_pairs(path: Path, row_vocab: Vocabulary, item_vocab: Vocabulary) -> tuple[np.ndarray, np.ndarray]:
    if not path.exists():
        raise InputError(f"split file not found: {path}")
    if path.stat().st_size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    frame = pd.read_csv(path, sep="\t", header=None, dtype=str, keep_default_na=False)
    rows = np.array([row_vocab.index(r) for r in frame[0]], dtype=np.int64)
    items = np.array([item_vocab.index(m) for m in frame[1]], dtype=np.int64)
    return rows, items


def _read_queries(path: Path, kind: str, split: Split) -> list[QueryRecord]:
    if not path.exists():
        raise InputError(f"split file not found: {path}")
    if path.stat().st_size == 0:
        return []
    frame = pd.read_csv(path, sep="\t", header=None, dtype=str, keep_default_na=False)
    records = []
    for row in frame.itertuples(index=False, name=None):
        user = split.users.index(row[0])
        item = split.items.index(row[-1])
        if kind == "simple":
            shape = QueryShape(user=user, positive_attributes=(split.attributes.index(row[1]),))
        elif kind == "inter":
            shape = QueryShape(
                user=user,
                positive_attributes=(split.attributes.index(row[1]), split.attributes.index(row[2])),
            )
        else:
            shape = QueryShape(
                user=user,
                positive_attributes=(split.attributes.index(row[1]),),
                negated_attribute=split.attributes.index(row[2]),
            )
        records.append(QueryRecord(shape, item))
    return records


def read_split(directory: PathLike) -> Split:
    """Load a split directory written by ``write_split``."""
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f"split directory not found: {directory}")
    manifest = read_manifest(directory / "split_manifest.txt")
    config = SplitConfig(
        max_sample_size=int(manifest["max_sample_size"]),
        epsilon_mode=manifest["epsilon_mode"],
        epsilon_fixed=int(manifest["epsilon_fixed"]),
        alpha=float(manifest["alpha"]),
        seed=int(manifest["seed"]),
    )
    users = Vocabulary.read("user", directory / VOCAB_FILES["user"])
    items = Vocabulary.read("item", directory / VOCAB_FILES["item"])
    attributes = Vocabulary.read("attribute", directory / VOCAB_FILES["attribute"])

    relations = {}
    for relation, row_vocab, name in (("d_u", users, "D_U"), ("d_a", attributes, "D_A")):
        prefix = "du" if relation == "d_u" else "da"
        tr_rows, tr_items = _read_pairs(directory / f"{prefix}_train.tsv", row_vocab, items)
        ev_rows, ev_items = _read_pairs(directory / f"{prefix}_eval.tsv", row_vocab, items)
        relations[relation] = InteractionSet(
            name,
            row_vocab,
            items,
            np.concatenate([tr_rows, ev_rows]),
            np.concatenate([tr_items, ev_items]),
            np.concatenate([np.zeros(tr_rows.size, dtype=bool), np.ones(ev_rows.size, dtype=bool)]),
        )

    split = Split(d_u=relations["d_u"], d_a=relations["d_a"], config=config)
    for kind in QUERY_KINDS:
        setattr(split, kind, _read_queries(directory / f"queries_{kind}.tsv", kind, split))
    logger.info(
        f"Loaded split {directory}: D_U {split.d_u.n_train}/{split.d_u.n_eval}, "
        f"D_A {split.d_a.n_train}/{split.d_a.n_eval}, "
        + ", ".join(f"{k}={len(split.queries(k))}" for k in QUERY_KINDS)
    )
    return split
