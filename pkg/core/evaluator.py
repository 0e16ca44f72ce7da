"""
Evaluation harness.

- sampled_eval:         model selection; each (u, m) in D_U eval ranked
                        against 100 true negatives of u
- full_vocab_eval:      each query's target ranked against every item
- spectrum_report:      generalisation gap between training regimes
- compounding_analysis: filter misses on u & a1 & a2 split by whether the
                        target passed one attribute filter or neither

Reports are TSV (query_type, strategy, k, metric, value, n_queries)
plus a text summary and an optional JSON-lines per-query dump.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp

from strategies import FilterStrategy, fit_filter_thresholds, make_strategy
from strategies.base import AggregationStrategy

from .box_geometry import QueryShape
from .data_source import InteractionSet
from .errors import ContractViolation
from .metrics import K_VALUES, hit_rate_at_k, ndcg, rank_of
from .models import EntityClass
from .splitter import REGIMES, QueryRecord, Split
from .utils import atomic_write_text

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SAMPLED_NEGATIVES = 100
REPORT_COLUMNS = ["query_type", "strategy", "k", "metric", "value", "n_queries"]
EVAL_QUERY_TYPES = ("user", "simple", "inter", "neg")


# ---------------------------------------------------------------------------
# Sampled evaluation (model selection)
# ---------------------------------------------------------------------------

@dataclass
class SampledEvalResult:
    ndcg: float
    hr10: float
    n_evaluated: int
    n_skipped: int


def sampled_eval(
    model,
    d_u: InteractionSet,
    n_negatives: int = SAMPLED_NEGATIVES,
    seed: int = 0,
    pessimistic: bool = False,
) -> SampledEvalResult:
    """
    Rank every eval (u, m) against ``n_negatives`` items u never
    interacted with (train or eval). Tuples whose user has fewer true
    negatives are skipped and counted.
    """
    rng = np.random.default_rng(seed)
    known = d_u.matrix().tocsr()
    all_items = np.arange(d_u.n_items)
    users, items = d_u.eval_pairs()

    ndcgs, hits = [], []
    skipped = 0
    for u in np.unique(users).tolist():
        targets = items[users == u]
        pool = np.setdiff1d(all_items, known.indices[known.indptr[u] : known.indptr[u + 1]], assume_unique=True)
        if pool.size < n_negatives:
            skipped += targets.size
            continue
        scores = model.entity_scores(EntityClass.USER, u)
        for m in targets.tolist():
            candidates = np.sort(np.append(rng.choice(pool, size=n_negatives, replace=False), m))
            rank = rank_of(scores[candidates], int(np.searchsorted(candidates, m)), pessimistic=pessimistic)
            ndcgs.append(ndcg(rank))
            hits.append(hit_rate_at_k(rank, 10))

    if skipped:
        logger.warning(f"Sampled eval skipped {skipped} tuples with fewer than {n_negatives} true negatives")
    if not ndcgs:
        return SampledEvalResult(0.0, 0.0, 0, skipped)
    return SampledEvalResult(float(np.mean(ndcgs)), float(np.mean(hits)), len(ndcgs), skipped)


def make_eval_hook(d_u: InteractionSet, n_negatives: int = SAMPLED_NEGATIVES, seed: int = 0):
    """Trainer hook: (NDCG, HR@10) of a fixed sampled evaluation."""

    def hook(model) -> tuple[float, float]:
        result = sampled_eval(model, d_u, n_negatives, seed)
        return result.ndcg, result.hr10

    return hook


# ---------------------------------------------------------------------------
# Full-vocabulary evaluation
# ---------------------------------------------------------------------------

@dataclass
class QueryOutcome:
    query_id: int
    rank: int
    score: float


@dataclass
class QueryTypeResult:
    query_type: str
    strategy: str
    hit_rate: dict[int, float]
    ndcg: float
    n_queries: int
    outcomes: list[QueryOutcome] = field(default_factory=list, repr=False)


def user_queries(split: Split) -> list[QueryRecord]:
    """One user-only query per (u, m) in D_U eval."""
    users, items = split.eval_user_pairs()
    return [QueryRecord(QueryShape(user=int(u)), int(m)) for u, m in zip(users, items)]


def rank_query(
    strategy: AggregationStrategy,
    query: QueryRecord,
    pessimistic: bool = False,
    train_matrix: Optional[sp.csr_matrix] = None,
) -> tuple[int, float]:
    """Rank of the query target among all items, and its aggregated score."""
    result = strategy.score_items(query.shape)
    tiers = result.tiers
    if train_matrix is not None and query.shape.user is not None:
        u = query.shape.user
        seen = train_matrix.indices[train_matrix.indptr[u] : train_matrix.indptr[u + 1]]
        seen = seen[seen != query.target_item]
        tiers = np.zeros(result.scores.size, dtype=np.int64) if tiers is None else tiers.astype(np.int64)
        tiers[seen] = tiers.max(initial=0) + 1
    rank = rank_of(result.scores, query.target_item, tiers=tiers, pessimistic=pessimistic)
    return rank, float(result.scores[query.target_item])


def full_vocab_eval(
    strategy: AggregationStrategy,
    queries: Sequence[QueryRecord],
    query_type: str = "",
    k_values: Sequence[int] = K_VALUES,
    pessimistic: bool = False,
    train_matrix: Optional[sp.csr_matrix] = None,
    workers: int = 1,
) -> QueryTypeResult:
    """
    HR@k and NDCG of ``queries`` ranked against the full item vocabulary.
    Training positives are only masked when ``train_matrix`` is given.
    """

    def run(query: QueryRecord) -> tuple[int, float]:
        return rank_query(strategy, query, pessimistic, train_matrix)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            ranked = list(pool.map(run, queries))
    else:
        ranked = [run(q) for q in queries]

    outcomes = [QueryOutcome(i, rank, score) for i, (rank, score) in enumerate(ranked)]
    ranks = [o.rank for o in outcomes]
    n = len(ranks)
    hit_rate = {k: (float(np.mean([hit_rate_at_k(r, k) for r in ranks])) if n else 0.0) for k in k_values}
    mean_ndcg = float(np.mean([ndcg(r) for r in ranks])) if n else 0.0
    return QueryTypeResult(query_type, strategy.label, hit_rate, mean_ndcg, n, outcomes)


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------

@dataclass
class CompoundingReport:
    """Filter errors on intersection queries and who repairs them."""

    k: int
    n_queries: int
    n_filter_errors: int
    n_compounding: int
    n_non_compounding: int
    solved: dict[str, dict[str, int]]
    overlap: dict[str, int]

    def fraction_solved(self, error_class: str, strategy: str) -> float:
        total = self.n_compounding if error_class == "compounding" else self.n_non_compounding
        if total == 0:
            return math.nan
        return self.solved[error_class][strategy] / total

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for error_class, total in (("compounding", self.n_compounding), ("non_compounding", self.n_non_compounding)):
            for strategy, count in self.solved[error_class].items():
                rows.append(
                    {
                        "error_class": error_class,
                        "strategy": strategy,
                        "errors": total,
                        "solved": count,
                        "fraction": self.fraction_solved(error_class, strategy),
                    }
                )
        return pd.DataFrame(rows, columns=["error_class", "strategy", "errors", "solved", "fraction"])

    def overlap_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [{"hit_by": key, "queries": count} for key, count in self.overlap.items()], columns=["hit_by", "queries"]
        )


@dataclass
class EvalReport:
    results: list[QueryTypeResult] = field(default_factory=list)
    spectrum: Optional[pd.DataFrame] = None
    compounding: Optional[CompoundingReport] = None

    def add(self, result: QueryTypeResult) -> None:
        self.results.append(result)

    def result(self, query_type: str, strategy: str) -> QueryTypeResult:
        for r in self.results:
            if r.query_type == query_type and r.strategy == strategy:
                return r
        raise ContractViolation(f"no result for {query_type} / {strategy}")

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for r in self.results:
            for k, value in r.hit_rate.items():
                rows.append(
                    {
                        "query_type": r.query_type,
                        "strategy": r.strategy,
                        "k": str(k),
                        "metric": "HR",
                        "value": value,
                        "n_queries": r.n_queries,
                    }
                )
            rows.append(
                {
                    "query_type": r.query_type,
                    "strategy": r.strategy,
                    "k": "-",
                    "metric": "NDCG",
                    "value": r.ndcg,
                    "n_queries": r.n_queries,
                }
            )
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)

    def summary(self) -> str:
        lines = ["=" * 60, "EVALUATION SUMMARY", "=" * 60]
        for r in self.results:
            hrs = "  ".join(f"HR@{k}={100.0 * v:5.1f}" for k, v in r.hit_rate.items())
            lines.append(f"{r.query_type:<7} {r.strategy:<16} {hrs}  NDCG={r.ndcg:.4f}  n={r.n_queries}")
        if self.spectrum is not None:
            lines += ["", "Generalisation spectrum (HR %):", format_spectrum(self.spectrum)]
        if self.compounding is not None:
            c = self.compounding
            lines += [
                "",
                f"Compounding analysis (k={c.k}): {c.n_filter_errors} filter errors, "
                f"{c.n_compounding} compounding, {c.n_non_compounding} non-compounding",
            ]
            for error_class in ("compounding", "non_compounding"):
                for strategy in c.solved[error_class]:
                    lines.append(
                        f"  {error_class:<16} solved by {strategy:<10} {100.0 * c.fraction_solved(error_class, strategy):5.1f}%"
                    )
        lines.append("=" * 60)
        return "\n".join(lines)

    def per_query_frame(self) -> pd.DataFrame:
        rows = []
        for r in self.results:
            for o in r.outcomes:
                rows.append(
                    {
                        "query_type": r.query_type,
                        "strategy": r.strategy,
                        "query_id": o.query_id,
                        "rank": o.rank,
                        "score": o.score,
                    }
                )
        return pd.DataFrame(rows, columns=["query_type", "strategy", "query_id", "rank", "score"])

    def write(self, directory: PathLike, dump_queries: bool = False) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        atomic_write_text(
            directory / "report.tsv", self.to_frame().to_csv(sep="\t", index=False, float_format="%.6f", lineterminator="\n")
        )
        atomic_write_text(directory / "summary.txt", self.summary() + "\n")
        if self.spectrum is not None:
            atomic_write_text(
                directory / "spectrum.tsv",
                self.spectrum.to_csv(sep="\t", index=False, float_format="%.6f", na_rep="undefined", lineterminator="\n"),
            )
        if self.compounding is not None:
            atomic_write_text(
                directory / "compounding.tsv",
                self.compounding.to_frame().to_csv(
                    sep="\t", index=False, float_format="%.6f", na_rep="undefined", lineterminator="\n"
                ),
            )
            atomic_write_text(
                directory / "answer_overlap.tsv",
                self.compounding.overlap_frame().to_csv(sep="\t", index=False, lineterminator="\n"),
            )
        if dump_queries:
            frame = self.per_query_frame()
            text = frame.to_json(orient="records", lines=True, double_precision=10) if len(frame) else ""
            if text and not text.endswith("\n"):
                text += "\n"
            atomic_write_text(directory / "queries.jsonl", text)
        logger.info(f"Report written to {directory}")
        return directory


# ---------------------------------------------------------------------------
# Spectrum
# ---------------------------------------------------------------------------

def spectrum_gap(hr_weakest: float, hr_set_theoretic: float) -> Optional[float]:
    """(HR_weakest - HR_set) / HR_weakest in percent; None when HR_weakest is 0."""
    if hr_weakest == 0:
        return None
    return 100.0 * (hr_weakest - hr_set_theoretic) / hr_weakest


def spectrum_report(per_regime: dict[str, dict[str, dict[int, float]]]) -> pd.DataFrame:
    """
    Args:
        per_regime: regime -> strategy label -> k -> HR@k

    Returns:
        One row per (strategy, k) with a column per regime and ``gap_pct``
        (NaN when undefined)
    """
    for required in ("weakest", "set_theoretic"):
        if required not in per_regime:
            raise ContractViolation(f"spectrum report needs the {required} regime")
    rows = []
    for strategy, by_k in per_regime["weakest"].items():
        for k in by_k:
            row = {"strategy": strategy, "k": k}
            for regime in REGIMES:
                row[regime] = per_regime.get(regime, {}).get(strategy, {}).get(k, math.nan)
            gap = spectrum_gap(row["weakest"], row["set_theoretic"])
            row["gap_pct"] = math.nan if gap is None else gap
            rows.append(row)
    return pd.DataFrame(rows, columns=["strategy", "k", *REGIMES, "gap_pct"])


def format_spectrum(frame: pd.DataFrame) -> str:
    lines = [f"{'strategy':<16} {'k':>3} " + " ".join(f"{r:>14}" for r in REGIMES) + f" {'gap':>9}"]
    for row in frame.itertuples(index=False):
        values = " ".join(f"{100.0 * getattr(row, r):14.1f}" for r in REGIMES)
        gap = "undefined" if math.isnan(row.gap_pct) else f"{row.gap_pct:8.1f}%"
        lines.append(f"{row.strategy:<16} {row.k:>3} {values} {gap:>9}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Compounding
# ---------------------------------------------------------------------------

def compounding_analysis(
    filter_strategy: FilterStrategy,
    product_strategy: AggregationStrategy,
    geometric_strategy: AggregationStrategy,
    queries: Sequence[QueryRecord],
    k: int = 50,
) -> CompoundingReport:
    """
    For each u & a1 & a2 query the filter misses at k: compounding when the
    target passes exactly one attribute filter, non-compounding when it
    passes neither. Targets passing both filters are not counted as
    filter errors. Also counts which strategies hit each query.
    """
    names = ("filter", "product", "geometric")
    solved = {"compounding": {"product": 0, "geometric": 0}, "non_compounding": {"product": 0, "geometric": 0}}
    overlap: dict[str, int] = {}
    n_errors = n_compounding = n_non = 0

    for query in queries:
        if len(query.shape.positive_attributes) != 2 or query.shape.is_negated:
            raise ContractViolation("compounding analysis takes u & a1 & a2 queries only")
        hit = {
            name: hit_rate_at_k(rank_query(strategy, query)[0], k) == 1
            for name, strategy in zip(names, (filter_strategy, product_strategy, geometric_strategy))
        }
        key = "+".join(n for n in names if hit[n]) or "none"
        overlap[key] = overlap.get(key, 0) + 1

        if hit["filter"]:
            continue
        a1, a2 = query.shape.positive_attributes
        passed = int(filter_strategy.passes(a1)[query.target_item]) + int(filter_strategy.passes(a2)[query.target_item])
        if passed == 2:
            continue
        n_errors += 1
        error_class = "compounding" if passed == 1 else "non_compounding"
        if passed == 1:
            n_compounding += 1
        else:
            n_non += 1
        for name in ("product", "geometric"):
            solved[error_class][name] += int(hit[name])

    ordered_overlap = dict(sorted(overlap.items()))
    logger.info(f"Compounding analysis: {n_errors} filter errors ({n_compounding} compounding, {n_non} non-compounding)")
    return CompoundingReport(k, len(queries), n_errors, n_compounding, n_non, solved, ordered_overlap)


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------

def select_queries(split: Split, query_type: str, max_queries: Optional[int] = None, seed: int = 0) -> list[QueryRecord]:
    """Queries of one type, optionally a seeded subsample (original order kept)."""
    if query_type not in EVAL_QUERY_TYPES:
        raise ContractViolation(f"unknown query type: {query_type}")
    queries = user_queries(split) if query_type == "user" else split.queries(query_type)
    if max_queries is not None and len(queries) > max_queries:
        keep = np.sort(np.random.default_rng(seed).choice(len(queries), size=max_queries, replace=False))
        queries = [queries[i] for i in keep]
    return queries


def evaluate_model(
    model,
    split: Split,
    strategies: Sequence[str] = ("filter", "product", "geometric"),
    query_types: Sequence[str] = ("simple", "inter", "neg"),
    k_values: Sequence[int] = K_VALUES,
    thresholds: Optional[dict[int, float]] = None,
    max_queries: Optional[int] = None,
    seed: int = 0,
    mask_train: bool = False,
    pessimistic: bool = False,
    workers: int = 1,
    compounding: bool = False,
    compounding_k: int = 50,
) -> EvalReport:
    """Every requested strategy on every requested query type."""
    needs_thresholds = "filter" in strategies or compounding
    if needs_thresholds and thresholds is None:
        logger.info("Filter thresholds not provided; fitting them on D_A train")
        thresholds = fit_filter_thresholds(model, *split.train_attribute_pairs())

    train_matrix = split.d_u.matrix("train") if mask_train else None
    built = {kind: make_strategy(kind, model, thresholds) for kind in ("filter", "product", "geometric")}
    report = EvalReport()
    for query_type in query_types:
        queries = select_queries(split, query_type, max_queries, seed)
        for kind in strategies:
            result = full_vocab_eval(
                built[kind], queries, query_type, k_values, pessimistic, train_matrix, workers
            )
            report.add(result)
            logger.info(
                f"{query_type:<7} {result.strategy:<16} "
                + " ".join(f"HR@{k}={v:.3f}" for k, v in result.hit_rate.items())
                + f" NDCG={result.ndcg:.4f} (n={result.n_queries})"
            )

    if compounding:
        queries = select_queries(split, "inter", max_queries, seed)
        report.compounding = compounding_analysis(
            built["filter"], built["product"], built["geometric"], queries, compounding_k
        )
    return report
