"""
Geometric aggregation: compose the query inside the embedding space.

Box models intersect the query boxes (with inclusion-exclusion for a
negated attribute); MF models add and subtract the vectors before one
sigmoid dot product.
"""

from core.box_geometry import QueryShape

from .base import AggregationStrategy, ItemScores


class GeometricStrategy(AggregationStrategy):
    kind = "geometric"

    def score_items(self, shape: QueryShape) -> ItemScores:
        return ItemScores(scores=self.model.geometric_scores(shape))
