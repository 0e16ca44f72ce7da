"""
Product aggregation: multiply the normalised per-entity scores of the
query constituents. A negated attribute contributes 1 - score.
"""

import numpy as np

from core.box_geometry import QueryShape
from core.models import EntityClass

from .base import AggregationStrategy, ItemScores


class ProductStrategy(AggregationStrategy):
    kind = "product"

    def score_items(self, shape: QueryShape) -> ItemScores:
        scores = np.ones(self.model.n_items)
        if shape.user is not None:
            scores = scores * self.model.entity_scores(EntityClass.USER, shape.user)
        for a in shape.positive_attributes:
            scores = scores * self.model.entity_scores(EntityClass.ATTRIBUTE, a)
        if shape.negated_attribute is not None:
            scores = scores * (1.0 - self.model.entity_scores(EntityClass.ATTRIBUTE, shape.negated_attribute))
        return ItemScores(scores=scores)
