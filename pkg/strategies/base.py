"""
Base aggregation components: ItemScores and AggregationStrategy.

An aggregation strategy turns per-entity scores of a model into one
ranking of all items for a query shape.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from core.box_geometry import QueryShape


@dataclass
class ItemScores:
    """
    Scores of every item for one query.

    Attributes:
        scores: (n_items,) aggregated score, higher is better
        tiers: optional (n_items,) rank tier, lower tiers rank first
            (the filter strategy puts items passing every threshold in tier 0)
    """
    scores: np.ndarray
    tiers: Optional[np.ndarray] = None


class AggregationStrategy:
    """
    Base class for query aggregation strategies.

    The model is any scorer exposing ``family``, ``n_items``,
    ``entity_scores(entity_class, row)`` and ``geometric_scores(shape)``.
    """

    kind: str = ""

    def __init__(self, model):
        self.model = model

    @property
    def label(self) -> str:
        return f"{self.model.family}-{self.kind}"

    def score_items(self, shape: QueryShape) -> ItemScores:
        """
        Score every item for ``shape``.

        Args:
            shape: Query shape with resolved entity indices

        Returns:
            ItemScores over the full item vocabulary
        """
        raise NotImplementedError("Subclasses must implement score_items()")

    def aggregate_score(self, shape: QueryShape, item: int) -> tuple[float, Optional[bool]]:
        """
        Aggregated score of one item, plus the in/out flag for strategies
        that filter (None otherwise).
        """
        result = self.score_items(shape)
        flag = None if result.tiers is None else bool(result.tiers[item] == 0)
        return float(result.scores[item]), flag
