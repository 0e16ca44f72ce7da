"""
Query aggregation strategies:
- Filter: per-attribute thresholded item lists, ranked by user score
- Product: product of normalised per-entity scores
- Geometric: query composed in the embedding space
"""

from core.errors import ContractViolation

from .base import AggregationStrategy, ItemScores
from .filter import FilterStrategy, best_f1_threshold, fit_filter_thresholds
from .geometric import GeometricStrategy
from .product import ProductStrategy

STRATEGY_KINDS = ("filter", "product", "geometric")


def make_strategy(kind: str, model, thresholds=None) -> AggregationStrategy:
    """Build the strategy named ``kind`` for ``model``."""
    if kind == "filter":
        return FilterStrategy(model, thresholds)
    if kind == "product":
        return ProductStrategy(model)
    if kind == "geometric":
        return GeometricStrategy(model)
    raise ContractViolation(f"unknown strategy: {kind} (expected one of {', '.join(STRATEGY_KINDS)})")


__all__ = [
    "AggregationStrategy",
    "ItemScores",
    "FilterStrategy",
    "ProductStrategy",
    "GeometricStrategy",
    "STRATEGY_KINDS",
    "best_f1_threshold",
    "fit_filter_thresholds",
    "make_strategy",
]
