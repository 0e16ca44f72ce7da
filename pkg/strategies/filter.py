"""
Filter aggregation: threshold attribute scores into item lists, then
rank by the user score.

Items passing every positive-attribute threshold and failing the
negated-attribute threshold rank first (by user score), all other items
follow (by user score). Thresholds are fitted per attribute to maximise
F1 against the training attribute-item pairs.
"""

import logging
import math
from typing import Optional

import numpy as np

from core.box_geometry import QueryShape
from core.errors import ContractViolation
from core.models import EntityClass

from .base import AggregationStrategy, ItemScores

logger = logging.getLogger(__name__)


def best_f1_threshold(scores: np.ndarray, positives: np.ndarray) -> tuple[float, float]:
    """
    Threshold t maximising F1 of ``scores >= t`` against ``positives``.

    Candidates are -inf and the midpoints between consecutive distinct
    scores; the smallest maximiser wins. Returns (threshold, f1).
    """
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    n_pos = int(positives.sum())
    if n_pos == 0:
        return math.inf, 0.0

    values, inverse = np.unique(scores, return_inverse=True)
    count = np.bincount(inverse, minlength=values.size)
    hits = np.bincount(inverse, weights=positives.astype(np.float64), minlength=values.size)
    # predicted set for candidate j: every score >= values[j]
    predicted = np.cumsum(count[::-1])[::-1]
    true_pos = np.cumsum(hits[::-1])[::-1]
    f1 = 2.0 * true_pos / (predicted + n_pos)

    thresholds = np.concatenate([[-math.inf], 0.5 * (values[:-1] + values[1:])])
    best = int(np.argmax(f1))
    return float(thresholds[best]), float(f1[best])


def fit_filter_thresholds(model, attribute_rows: np.ndarray, attribute_items: np.ndarray) -> dict[int, float]:
    """
    Per-attribute F1-maximising thresholds over training pairs.
    Attributes without training positives get +inf (empty item list).
    """
    n_attributes = model.count(EntityClass.ATTRIBUTE)
    n_items = model.n_items
    thresholds = {}
    empty = []
    for a in range(n_attributes):
        positives = np.zeros(n_items, dtype=bool)
        positives[attribute_items[attribute_rows == a]] = True
        if not positives.any():
            empty.append(a)
        thresholds[a], _ = best_f1_threshold(model.entity_scores(EntityClass.ATTRIBUTE, a), positives)
    if empty:
        logger.warning(f"{len(empty)} attributes have no training positives; threshold set to +inf")
    logger.info(f"Fitted filter thresholds for {n_attributes} attributes")
    return thresholds


class FilterStrategy(AggregationStrategy):
    kind = "filter"

    def __init__(self, model, thresholds: Optional[dict[int, float]] = None):
        super().__init__(model)
        self.thresholds = thresholds or {}

    def _threshold(self, attribute: int) -> float:
        if attribute not in self.thresholds:
            raise ContractViolation(f"no filter threshold for attribute {attribute}")
        return self.thresholds[attribute]

    def passes(self, attribute: int) -> np.ndarray:
        """Items in the thresholded list of ``attribute``."""
        return self.model.entity_scores(EntityClass.ATTRIBUTE, attribute) >= self._threshold(attribute)

    def score_items(self, shape: QueryShape) -> ItemScores:
        inside = np.ones(self.model.n_items, dtype=bool)
        for a in shape.positive_attributes:
            inside &= self.passes(a)
        if shape.negated_attribute is not None:
            inside &= ~self.passes(shape.negated_attribute)

        if shape.user is not None:
            scores = self.model.entity_scores(EntityClass.USER, shape.user)
        else:
            scores = np.ones(self.model.n_items)
            for a in shape.positive_attributes:
                scores = scores * self.model.entity_scores(EntityClass.ATTRIBUTE, a)
        return ItemScores(scores=scores, tiers=np.where(inside, 0, 1))
