"""
SQLAlchemy models for the boxrec run registry.

Tables:
- ExperimentRun: one training run (configuration, selected epoch, NDCG)
- EvalResult: one report row (query type x strategy x k x metric)
"""

from datetime import datetime

from sqlalchemy import Column, DateTime, Float, ForeignKey, Index, Integer, String, Text
from sqlalchemy.orm import relationship

from .base import Base


class ExperimentRun(Base):
    """
    A training or evaluation run.

    ``kind`` is "train" or "eval"; eval-only runs against an existing
    checkpoint carry no epoch information.
    """
    __tablename__ = "experiment_runs"

    id = Column(Integer, primary_key=True, autoincrement=True)
    created_at = Column(DateTime, default=datetime.utcnow, nullable=False)
    kind = Column(String(10), nullable=False)  # train, eval
    family = Column(String(10), nullable=False)  # box, mf
    dim = Column(Integer, nullable=False)
    split_dir = Column(Text)
    checkpoint_dir = Column(Text)
    seed = Column(Integer)
    best_epoch = Column(Integer)
    best_ndcg = Column(Float)
    initial_ndcg = Column(Float)
    epochs_run = Column(Integer)
    config_json = Column(Text)  # resolved RunConfig

    results = relationship("EvalResult", back_populates="run", cascade="all, delete-orphan")

    def __repr__(self) -> str:
        return f"<ExperimentRun {self.id} {self.kind} {self.family} D={self.dim}>"


class EvalResult(Base):
    """One metric value of an evaluation report."""
    __tablename__ = "eval_results"

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(Integer, ForeignKey("experiment_runs.id"), nullable=False)
    query_type = Column(String(10), nullable=False)  # user, simple, inter, neg
    strategy = Column(String(30), nullable=False)  # e.g. box-geometric
    k = Column(String(5), nullable=False)  # "-" for NDCG
    metric = Column(String(10), nullable=False)  # HR, NDCG
    value = Column(Float, nullable=False)
    n_queries = Column(Integer, nullable=False)

    run = relationship("ExperimentRun", back_populates="results")

    __table_args__ = (Index("ix_eval_results_lookup", "run_id", "query_type", "strategy"),)

    def __repr__(self) -> str:
        return f"<EvalResult {self.run_id} {self.query_type} {self.strategy} {self.metric}@{self.k}={self.value:.4f}>"
