"""
Ranking metrics for a single relevant target.

rank = 1 + #{candidates scored higher} + #{tied candidates with a lower
item index}. With ``pessimistic=True`` every tie counts against the
target. Optional tiers sort before scores (lower tier first).
"""

from typing import Optional

import numpy as np

from .errors import ContractViolation

K_VALUES = (10, 20, 50)


def rank_of(
    scores: np.ndarray,
    target: int,
    tiers: Optional[np.ndarray] = None,
    pessimistic: bool = False,
) -> int:
    """1-based rank of ``scores[target]`` among all entries of ``scores``."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 0 <= target < scores.size:
        raise ContractViolation(f"target {target} outside candidate list of size {scores.size}")

    if tiers is not None:
        tiers = np.asarray(tiers)
        ahead = int((tiers < tiers[target]).sum())
        same = tiers == tiers[target]
    else:
        ahead = 0
        same = np.ones(scores.size, dtype=bool)

    s = scores[target]
    higher = int((same & (scores > s)).sum())
    tied = same & (scores == s)
    tied[target] = False
    if not pessimistic:
        tied[target:] = False
    return 1 + ahead + higher + int(tied.sum())


def hit_rate_at_k(rank: int, k: int) -> int:
    if rank < 1:
        raise ContractViolation(f"rank must be >= 1, got {rank}")
    return int(rank <= k)


def ndcg(rank: int) -> float:
    """1 / log2(rank + 1)."""
    if rank < 1:
        raise ContractViolation(f"rank must be >= 1, got {rank}")
    return float(1.0 / np.log2(rank + 1.0))
