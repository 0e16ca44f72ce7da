"""
Interaction data: vocabularies, binary interaction sets and TSV ingestion.

Input files are UTF-8 TSV with lines ``row_id<TAB>item_id[<TAB>value]``.
Every retained line is a binary positive; the optional value column is
only used for the ``min_rating`` cut.

An InteractionSet holds one relation (D_U or D_A) as sorted, unique
(row, item) index pairs plus a train/eval tag per pair.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .errors import ContractViolation, InputError, LookupFailure, ParseError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MAX_SUGGESTIONS = 5


class Vocabulary:
    """
    External id <-> dense index map. Indices are assigned by first
    appearance; after ``freeze()`` unknown ids raise LookupFailure.
    """

    def __init__(self, kind: str, ids: Optional[Iterable[str]] = None):
        self.kind = kind
        self.ids: list[str] = []
        self._index: dict[str, int] = {}
        self.frozen = False
        for ext_id in ids or []:
            self.add(ext_id)

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, ext_id: str) -> bool:
        return ext_id in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.kind == other.kind and self.ids == other.ids

    def __repr__(self) -> str:
        return f"<Vocabulary {self.kind} n={len(self)}>"

    def add(self, ext_id: str) -> int:
        idx = self._index.get(ext_id)
        if idx is not None:
            return idx
        if self.frozen:
            raise LookupFailure(f"unknown {self.kind} id: {ext_id}", self.suggest(ext_id))
        idx = len(self.ids)
        self.ids.append(ext_id)
        self._index[ext_id] = idx
        return idx

    def freeze(self) -> "Vocabulary":
        self.frozen = True
        return self

    def index(self, ext_id: str) -> int:
        idx = self._index.get(ext_id)
        if idx is None:
            raise LookupFailure(f"unknown {self.kind} id: {ext_id}", self.suggest(ext_id))
        return idx

    def external(self, index: int) -> str:
        if index < 0 or index >= len(self.ids):
            raise LookupFailure(f"{self.kind} index out of range [0, {len(self.ids)}): {index}")
        return self.ids[index]

    def suggest(self, ext_id: str) -> list[str]:
        """Known ids sharing the longest exact prefix with ``ext_id``."""
        for cut in range(len(ext_id), 0, -1):
            prefix = ext_id[:cut]
            hits = [known for known in self.ids if known.startswith(prefix)]
            if hits:
                return sorted(hits)[:MAX_SUGGESTIONS]
        return []

    def subset(self, keep: np.ndarray) -> "Vocabulary":
        """Dense re-indexing of the kept indices, order preserved."""
        return Vocabulary(self.kind, [self.ids[i] for i in np.flatnonzero(keep)]).freeze()

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"external_id": self.ids, "index": np.arange(len(self.ids))})

    def write(self, path: PathLike) -> None:
        self.to_frame().to_csv(path, sep="\t", header=False, index=False, lineterminator="\n")

    @classmethod
    def read(cls, kind: str, path: PathLike) -> "Vocabulary":
        path = Path(path)
        if not path.exists():
            raise InputError(f"vocabulary file not found: {path}")
        frame = pd.read_csv(path, sep="\t", header=None, dtype=str, keep_default_na=False)
        vocab = cls(kind)
        for line_number, (ext_id, idx) in enumerate(frame.itertuples(index=False, name=None), start=1):
            if vocab.add(ext_id) != int(idx):
                raise ParseError(str(path), line_number, f"index {idx} out of order for {ext_id}")
        return vocab.freeze()


@dataclass
class InteractionSet:
    """
    A binary relation between row entities (users or attributes) and
    items. Pairs are sorted by (row, item) and unique; ``is_eval`` tags
    each pair with its partition.
    """

    name: str
    row_vocab: Vocabulary
    item_vocab: Vocabulary
    rows: np.ndarray
    items: np.ndarray
    is_eval: np.ndarray = field(default=None)

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.int64)
        items = np.asarray(self.items, dtype=np.int64)
        if self.is_eval is None:
            self.is_eval = np.zeros(rows.size, dtype=bool)
        is_eval = np.asarray(self.is_eval, dtype=bool)
        if not (rows.shape == items.shape == is_eval.shape):
            raise ContractViolation(f"{self.name}: rows, items and tags must have one entry per pair")
        if rows.size and (rows.min() < 0 or rows.max() >= len(self.row_vocab)):
            raise LookupFailure(f"{self.name}: row index outside vocabulary")
        if items.size and (items.min() < 0 or items.max() >= len(self.item_vocab)):
            raise LookupFailure(f"{self.name}: item index outside vocabulary")

        keys = rows * len(self.item_vocab) + items
        keys, first = np.unique(keys, return_index=True)
        self.rows = rows[first]
        self.items = items[first]
        self.is_eval = is_eval[first]
        self._keys = keys

    def __len__(self) -> int:
        return int(self.rows.size)

    @property
    def n_rows(self) -> int:
        return len(self.row_vocab)

    @property
    def n_items(self) -> int:
        return len(self.item_vocab)

    @property
    def keys(self) -> np.ndarray:
        """Sorted pair keys ``row * n_items + item``."""
        return self._keys

    def pair_keys(self, rows, items) -> np.ndarray:
        return np.asarray(rows, dtype=np.int64) * self.n_items + np.asarray(items, dtype=np.int64)

    def contains(self, rows, items) -> np.ndarray:
        keys = self.pair_keys(rows, items)
        pos = np.searchsorted(self._keys, keys)
        pos = np.minimum(pos, max(self._keys.size - 1, 0))
        return (self._keys.size > 0) & (self._keys[pos] == keys)

    def train_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        mask = ~self.is_eval
        return self.rows[mask], self.items[mask]

    def eval_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        return self.rows[self.is_eval], self.items[self.is_eval]

    @property
    def n_train(self) -> int:
        return int((~self.is_eval).sum())

    @property
    def n_eval(self) -> int:
        return int(self.is_eval.sum())

    def matrix(self, partition: Optional[str] = None) -> sp.csr_matrix:
        """Row x item 0/1 matrix of ``partition`` ('train', 'eval' or all)."""
        if partition is None:
            mask = np.ones(len(self), dtype=bool)
        elif partition == "train":
            mask = ~self.is_eval
        elif partition == "eval":
            mask = self.is_eval
        else:
            raise ContractViolation(f"unknown partition: {partition}")
        data = np.ones(int(mask.sum()), dtype=np.int64)
        return sp.csr_matrix((data, (self.rows[mask], self.items[mask])), shape=(self.n_rows, self.n_items))

    def row_counts(self) -> np.ndarray:
        return np.bincount(self.rows, minlength=self.n_rows)

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.n_items)

    def with_partition(self, is_eval: np.ndarray) -> "InteractionSet":
        return InteractionSet(self.name, self.row_vocab, self.item_vocab, self.rows, self.items, is_eval)

    def select(self, mask: np.ndarray) -> "InteractionSet":
        return InteractionSet(
            self.name, self.row_vocab, self.item_vocab, self.rows[mask], self.items[mask], self.is_eval[mask]
        )

    def to_frame(self, partition: Optional[str] = None) -> pd.DataFrame:
        """External-id pairs of a partition, in (row, item) index order."""
        if partition == "train":
            rows, items = self.train_pairs()
        elif partition == "eval":
            rows, items = self.eval_pairs()
        else:
            rows, items = self.rows, self.items
        row_ids = np.asarray(self.row_vocab.ids, dtype=object)
        item_ids = np.asarray(self.item_vocab.ids, dtype=object)
        return pd.DataFrame({"row_id": row_ids[rows], "item_id": item_ids[items]})


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def read_pairs(path: PathLike, min_rating: Optional[float] = None) -> list[tuple[str, str]]:
    """
    Parse ``row_id<TAB>item_id[<TAB>value]`` lines.

    Blank lines and lines starting with ``#`` are ignored. With
    ``min_rating`` set, lines whose value is below it are dropped; lines
    without a value column are always kept.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"input file not found: {path}")

    pairs = []
    dropped = 0
    with open(path, "r", encoding="utf-8") as f:
        for line_number, raw in enumerate(f, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) not in (2, 3):
                raise ParseError(str(path), line_number, f"expected 2 or 3 tab-separated fields, got {len(fields)}")
            row_id, item_id = fields[0].strip(), fields[1].strip()
            if not row_id or not item_id:
                raise ParseError(str(path), line_number, "empty id")
            if len(fields) == 3:
                try:
                    value = float(fields[2])
                except ValueError:
                    raise ParseError(str(path), line_number, f"value is not a number: {fields[2]!r}")
                if math.isnan(value):
                    raise ParseError(str(path), line_number, "value is NaN")
                if min_rating is not None and value < min_rating:
                    dropped += 1
                    continue
            pairs.append((row_id, item_id))

    if dropped:
        logger.info(f"{path.name}: dropped {dropped} lines below min_rating={min_rating}")
    return pairs


def build_interactions(
    name: str,
    pairs: list[tuple[str, str]],
    row_vocab: Vocabulary,
    item_vocab: Vocabulary,
) -> InteractionSet:
    rows = np.fromiter((row_vocab.add(r) for r, _ in pairs), dtype=np.int64, count=len(pairs))
    items = np.fromiter((item_vocab.add(m) for _, m in pairs), dtype=np.int64, count=len(pairs))
    return InteractionSet(name, row_vocab, item_vocab, rows, items)


def ingest(
    user_item_path: PathLike,
    attribute_item_path: PathLike,
    min_rating: Optional[float] = None,
) -> tuple[InteractionSet, InteractionSet]:
    """
    Load D_U and D_A. Users, attributes and items get indices by first
    appearance (the item vocabulary is shared, user file first); all
    vocabularies are frozen on return.
    """
    user_pairs = read_pairs(user_item_path, min_rating)
    attribute_pairs = read_pairs(attribute_item_path, min_rating)

    users = Vocabulary("user")
    attributes = Vocabulary("attribute")
    items = Vocabulary("item")
    d_u = build_interactions("D_U", user_pairs, users, items)
    d_a = build_interactions("D_A", attribute_pairs, attributes, items)
    for vocab in (users, attributes, items):
        vocab.freeze()

    if len(d_u) == 0 or len(d_a) == 0:
        raise ContractViolation(
            f"ingest produced an empty relation (D_U={len(d_u)}, D_A={len(d_a)} pairs)"
        )
    logger.info(
        f"Ingested D_U={len(d_u)} pairs ({len(users)} users), "
        f"D_A={len(d_a)} pairs ({len(attributes)} attributes), {len(items)} items"
    )
    return d_u, d_a
