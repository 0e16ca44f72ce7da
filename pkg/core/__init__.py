"""
boxrec core module

Components of the recommendation engine and experiment harness:
- Box geometry kernel (hard and Gumbel volumes, scores, gradients)
- Box and MF embedding models, checkpoints
- NCE trainer with an adaptive-moment optimizer
- Dataset ingestion, joint splitting, query generation, synthetic data
- Ranking metrics and the evaluation harness
- Run configuration and the command-line front-end
"""

from .errors import BoxRecError, ContractViolation, InputError, LookupFailure, ParseError
from .utils import setup_logging

__all__ = [
    "setup_logging",
    "BoxRecError",
    "ContractViolation",
    "InputError",
    "LookupFailure",
    "ParseError",
]
