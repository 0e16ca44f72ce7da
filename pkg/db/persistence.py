"""
Run registry persistence: store training runs and evaluation reports.
"""

import json
import logging
from typing import Any, Optional

import pandas as pd
from sqlalchemy.orm import Session

from .init_db import init_db
from .models import EvalResult, ExperimentRun

logger = logging.getLogger(__name__)


def _config_json(config: Optional[dict[str, Any]]) -> Optional[str]:
    if config is None:
        return None
    return json.dumps(config, sort_keys=True, default=str)


def save_training_run(
    family: str,
    dim: int,
    best_ndcg: float,
    best_epoch: int,
    initial_ndcg: float,
    epochs_run: int,
    seed: Optional[int] = None,
    split_dir: Optional[str] = None,
    checkpoint_dir: Optional[str] = None,
    config: Optional[dict[str, Any]] = None,
    db_url: Optional[str] = None,
) -> int:
    """
    Save a training run to the registry.

    Returns:
        The ID of the saved ExperimentRun
    """
    engine = init_db(db_url)
    with Session(engine) as session:
        run = ExperimentRun(
            kind="train",
            family=family,
            dim=dim,
            split_dir=split_dir,
            checkpoint_dir=checkpoint_dir,
            seed=seed,
            best_epoch=best_epoch,
            best_ndcg=float(best_ndcg),
            initial_ndcg=float(initial_ndcg),
            epochs_run=epochs_run,
            config_json=_config_json(config),
        )
        session.add(run)
        session.commit()
        run_id = run.id
    logger.info(f"Saved training run #{run_id}: {family} D={dim} NDCG={best_ndcg:.4f} (epoch {best_epoch})")
    return run_id


def save_eval_report(
    report_frame: pd.DataFrame,
    family: str,
    dim: int,
    split_dir: Optional[str] = None,
    checkpoint_dir: Optional[str] = None,
    seed: Optional[int] = None,
    config: Optional[dict[str, Any]] = None,
    db_url: Optional[str] = None,
) -> int:
    """
    Save an evaluation report (the frame of ``EvalReport.to_frame``).

    Returns:
        The ID of the ExperimentRun the rows hang off
    """
    engine = init_db(db_url)
    with Session(engine) as session:
        run = ExperimentRun(
            kind="eval",
            family=family,
            dim=dim,
            split_dir=split_dir,
            checkpoint_dir=checkpoint_dir,
            seed=seed,
            config_json=_config_json(config),
        )
        session.add(run)
        session.flush()  # Get the run ID
        run_id = run.id

        for row in report_frame.itertuples(index=False):
            session.add(
                EvalResult(
                    run_id=run_id,
                    query_type=row.query_type,
                    strategy=row.strategy,
                    k=str(row.k),
                    metric=row.metric,
                    value=float(row.value),
                    n_queries=int(row.n_queries),
                )
            )
        session.commit()
    logger.info(f"Saved eval run #{run_id}: {len(report_frame)} result rows")
    return run_id


def load_eval_results(run_id: int, db_url: Optional[str] = None) -> pd.DataFrame:
    """Report rows of one stored evaluation run, in insertion order."""
    engine = init_db(db_url)
    with Session(engine) as session:
        rows = (
            session.query(EvalResult)
            .filter(EvalResult.run_id == run_id)
            .order_by(EvalResult.id)
            .all()
        )
        return pd.DataFrame(
            [
                {
                    "query_type": r.query_type,
                    "strategy": r.strategy,
                    "k": r.k,
                    "metric": r.metric,
                    "value": r.value,
                    "n_queries": r.n_queries,
                }
                for r in rows
            ],
            columns=["query_type", "strategy", "k", "metric", "value", "n_queries"],
        )
