"""
Database package for boxrec.

SQLAlchemy models and helpers for the experiment run registry.
"""

from .base import Base
from .models import EvalResult, ExperimentRun
from .init_db import init_db, get_db_url, get_session, get_engine
from .persistence import load_eval_results, save_eval_report, save_training_run

__all__ = [
    "Base",
    "ExperimentRun",
    "EvalResult",
    "init_db",
    "get_db_url",
    "get_session",
    "get_engine",
    "save_training_run",
    "save_eval_report",
    "load_eval_results",
]
