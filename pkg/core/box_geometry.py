"""
Box geometry: hard and Gumbel (soft) volumes, containment scores and
set-theoretic query scores for axis-parallel boxes.

Soft geometry replaces the hard min/max of interval endpoints with
log-sum-exp at the intersection temperature (tau) and the hard side
length max(x, 0) with a softplus at the volume temperature (nu):

    side_d = LSE_nu([LSE_-tau(tops_d) - LSE_tau(bottoms_d), 0])
    VolInt = prod_d side_d

Scores are normalised by the soft volume of the TARGET box, so a target
fully inside its containers scores 1. All products over dimensions are
evaluated as sums of logs; gradients are closed-form.

Every function here is pure and safe to call from any thread.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ContractViolation

# Score floor applied before taking the log in energy().
SCORE_FLOOR = 1e-38
LOG_SCORE_FLOOR = math.log(SCORE_FLOOR)

# Below this softplus argument log(softplus(z)) is taken from its expansion.
_SOFTPLUS_TAIL = -30.0


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GumbelTemps:
    """Intersection temperature (tau) and volume temperature (nu)."""

    intersection_temp: float
    volume_temp: float

    def __post_init__(self) -> None:
        for name in ("intersection_temp", "volume_temp"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ContractViolation(f"{name} must be a positive finite real, got {value}")


@dataclass(frozen=True)
class Box:
    """Axis-parallel box given by its lower and upper corners."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self) -> None:
        lo = np.atleast_1d(np.asarray(self.min, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(self.max, dtype=np.float64))
        if lo.ndim != 1 or lo.shape != hi.shape or lo.size < 1:
            raise ContractViolation(
                f"box corners must be vectors of identical length >= 1, got {lo.shape} and {hi.shape}"
            )
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ContractViolation("box corners must be finite")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def dim(self) -> int:
        return int(self.min.shape[0])

    def __repr__(self) -> str:
        return f"<Box D={self.dim} min={self.min.tolist()} max={self.max.tolist()}>"


@dataclass(frozen=True)
class QueryShape:
    """
    One of the personalised query shapes: u, a1, u & a1, u & a1 & a2,
    u & a1 & !a2 (and the attribute-only variants).

    Resolved boxes are always passed in the order: user, positive
    attributes, negated attribute.
    """

    user: Optional[int] = None
    positive_attributes: tuple[int, ...] = field(default_factory=tuple)
    negated_attribute: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "positive_attributes", tuple(int(a) for a in self.positive_attributes))
        if len(self.positive_attributes) > 2:
            raise ContractViolation("at most two positive attributes are supported")
        if self.user is None and not self.positive_attributes:
            raise ContractViolation("a query needs a user or at least one positive attribute")
        if self.negated_attribute is not None and self.positive_count == 0:
            raise ContractViolation("a negated attribute needs a positive constraint")

    @property
    def positive_count(self) -> int:
        return (0 if self.user is None else 1) + len(self.positive_attributes)

    @property
    def arity(self) -> int:
        """Number of resolved boxes the shape consumes (target excluded)."""
        return self.positive_count + (0 if self.negated_attribute is None else 1)

    @property
    def is_negated(self) -> bool:
        return self.negated_attribute is not None

    @property
    def kind(self) -> str:
        """Query-type label: user, simple, inter, neg or attr."""
        if self.is_negated:
            return "neg"
        n_attrs = len(self.positive_attributes)
        if self.user is None:
            return "attr"
        return {0: "user", 1: "simple", 2: "inter"}[n_attrs]


@dataclass
class GeometryGradient:
    """
    Value of a score/energy and its gradient with respect to every
    participating box. Row i of ``d_min``/``d_max`` belongs to input box i;
    the last row belongs to the target.
    """

    value: float
    d_min: np.ndarray
    d_max: np.ndarray


# ---------------------------------------------------------------------------
# Numerical primitives
# ---------------------------------------------------------------------------

def _lse(x: np.ndarray, temp: float, axis: int = -1) -> tuple[np.ndarray, np.ndarray]:
    """
    Vectorised LSE_temp along ``axis`` and its softmax weights
    (d LSE / d x_i). The extremal element is factored out so every
    exponent is <= 0.
    """
    extreme = x.max(axis=axis, keepdims=True) if temp > 0 else x.min(axis=axis, keepdims=True)
    e = np.exp((x - extreme) / temp)
    s = e.sum(axis=axis, keepdims=True)
    value = np.squeeze(extreme, axis=axis) + temp * np.log(np.squeeze(s, axis=axis))
    return value, e / s


def _log_softplus(z: np.ndarray) -> np.ndarray:
    """log(log(1 + e^z)), finite for every finite z."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    tail = z < _SOFTPLUS_TAIL
    out[tail] = z[tail] - 0.5 * np.exp(z[tail])
    head = ~tail
    out[head] = np.log(np.logaddexp(0.0, z[head]))
    return out


def _log_sigmoid(z: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -z)


def lse(temp: float, values: Sequence[float]) -> float:
    """
    temp * log(sum(exp(values / temp))).

    Positive temp is a soft maximum, negative temp a soft minimum.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise ContractViolation("lse needs at least one value")
    if temp == 0 or not math.isfinite(temp):
        raise ContractViolation(f"lse temperature must be finite and non-zero, got {temp}")
    value, _ = _lse(x, float(temp), axis=0)
    return float(value)


def soft_side_length(width: np.ndarray, volume_temp: float) -> np.ndarray:
    """LSE_nu([width, 0]) = nu * softplus(width / nu), overflow-free."""
    z = np.asarray(width, dtype=np.float64) / volume_temp
    return volume_temp * np.logaddexp(0.0, z)


# ---------------------------------------------------------------------------
# Vectorised kernel
# ---------------------------------------------------------------------------

def _log_intersection(
    mins: np.ndarray,
    maxs: np.ndarray,
    temps: GumbelTemps,
    need_grad: bool,
) -> tuple[np.ndarray, Optional[np.ndarray], Optional[np.ndarray]]:
    """
    Per-dimension log side lengths of the soft intersection of n boxes.

    Args:
        mins, maxs: (..., n, D)

    Returns:
        (log_sides (..., D), d_log_side/d_mins (..., n, D), d/d_maxs)
        where each gradient row is the derivative of the SAME dimension's
        log side length.
    """
    tau = temps.intersection_temp
    nu = temps.volume_temp
    top, w_top = _lse(maxs, -tau, axis=-2)
    bottom, w_bottom = _lse(mins, tau, axis=-2)
    z = (top - bottom) / nu
    log_softplus = _log_softplus(z)
    log_sides = math.log(nu) + log_softplus
    if not need_grad:
        return log_sides, None, None
    slope = np.exp(_log_sigmoid(z) - log_softplus) / nu
    d_max = slope[..., None, :] * w_top
    d_min = -slope[..., None, :] * w_bottom
    return log_sides, d_min, d_max


@dataclass
class ContainmentTerms:
    """Log containment score with optional gradients (batched)."""

    log_score: np.ndarray
    d_container_min: Optional[np.ndarray] = None
    d_container_max: Optional[np.ndarray] = None
    d_target_min: Optional[np.ndarray] = None
    d_target_max: Optional[np.ndarray] = None


def log_containment(
    container_mins: np.ndarray,
    container_maxs: np.ndarray,
    target_min: np.ndarray,
    target_max: np.ndarray,
    temps: GumbelTemps,
    need_grad: bool = False,
) -> ContainmentTerms:
    """
    log of VolInt(containers, target) / Vol(target), batched.

    Args:
        container_mins, container_maxs: (..., n, D), broadcastable against the target batch
        target_min, target_max: (..., D)

    The result is clipped at 0 from above; soft-min/soft-max ordering
    makes it non-positive up to round-off.
    """
    target_min = np.asarray(target_min, dtype=np.float64)
    target_max = np.asarray(target_max, dtype=np.float64)
    container_mins = np.asarray(container_mins, dtype=np.float64)
    container_maxs = np.asarray(container_maxs, dtype=np.float64)
    if container_mins.shape[-1] != target_min.shape[-1] or container_mins.shape != container_maxs.shape:
        raise ContractViolation(
            f"dimension mismatch: containers {container_mins.shape} vs target {target_min.shape}"
        )

    batch = np.broadcast_shapes(container_mins.shape[:-2], target_min.shape[:-1])
    n, dim = container_mins.shape[-2], container_mins.shape[-1]
    mins = np.concatenate(
        [np.broadcast_to(container_mins, batch + (n, dim)), np.broadcast_to(target_min, batch + (dim,))[..., None, :]],
        axis=-2,
    )
    maxs = np.concatenate(
        [np.broadcast_to(container_maxs, batch + (n, dim)), np.broadcast_to(target_max, batch + (dim,))[..., None, :]],
        axis=-2,
    )

    int_sides, g_int_min, g_int_max = _log_intersection(mins, maxs, temps, need_grad)
    tgt_sides, g_tgt_min, g_tgt_max = _log_intersection(mins[..., -1:, :], maxs[..., -1:, :], temps, need_grad)
    raw = (int_sides - tgt_sides).sum(axis=-1)
    log_score = np.minimum(raw, 0.0)

    if not need_grad:
        return ContainmentTerms(log_score=log_score)
    # clipped entries are constant in every parameter
    inside = np.asarray(raw < 0.0, dtype=np.float64)
    return ContainmentTerms(
        log_score=log_score,
        d_container_min=inside[..., None, None] * g_int_min[..., :-1, :],
        d_container_max=inside[..., None, None] * g_int_max[..., :-1, :],
        d_target_min=inside[..., None] * (g_int_min[..., -1, :] - g_tgt_min[..., 0, :]),
        d_target_max=inside[..., None] * (g_int_max[..., -1, :] - g_tgt_max[..., 0, :]),
    )


def energy_from_log_score(log_score: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Energy -log(max(score, SCORE_FLOOR)) and the mask of entries whose
    gradient is live (not floored).
    """
    live = log_score > LOG_SCORE_FLOOR
    return -np.maximum(log_score, LOG_SCORE_FLOOR), live


def query_scores(
    positive_mins: np.ndarray,
    positive_maxs: np.ndarray,
    target_min: np.ndarray,
    target_max: np.ndarray,
    temps: GumbelTemps,
    negated_min: Optional[np.ndarray] = None,
    negated_max: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Batched query scores: conjunctive containment, or the inclusion-
    exclusion difference when a negated box is given.

    Args:
        positive_mins, positive_maxs: (..., p, D)
        target_min, target_max: (..., D), e.g. all items at once
        negated_min, negated_max: (..., D) or None
    """
    positive_mins = np.asarray(positive_mins, dtype=np.float64)
    positive_maxs = np.asarray(positive_maxs, dtype=np.float64)
    base = log_containment(positive_mins, positive_maxs, target_min, target_max, temps).log_score
    if negated_min is None:
        return np.exp(base)

    negated_min = np.asarray(negated_min, dtype=np.float64)
    negated_max = np.asarray(negated_max, dtype=np.float64)
    prefix = np.broadcast_shapes(positive_mins.shape[:-2], negated_min.shape[:-1])
    all_mins = np.concatenate(
        [np.broadcast_to(positive_mins, prefix + positive_mins.shape[-2:]),
         np.broadcast_to(negated_min, prefix + negated_min.shape[-1:])[..., None, :]],
        axis=-2,
    )
    all_maxs = np.concatenate(
        [np.broadcast_to(positive_maxs, prefix + positive_maxs.shape[-2:]),
         np.broadcast_to(negated_max, prefix + negated_max.shape[-1:])[..., None, :]],
        axis=-2,
    )
    with_negated = log_containment(all_mins, all_maxs, target_min, target_max, temps).log_score
    return np.maximum(np.exp(base) - np.exp(with_negated), 0.0)


# ---------------------------------------------------------------------------
# Box-level API
# ---------------------------------------------------------------------------

def _stack(boxes: Sequence[Box]) -> tuple[np.ndarray, np.ndarray]:
    if len(boxes) == 0:
        raise ContractViolation("at least one box is required")
    dims = {b.dim for b in boxes}
    if len(dims) != 1:
        raise ContractViolation(f"dimension mismatch between boxes: {sorted(dims)}")
    return np.stack([b.min for b in boxes]), np.stack([b.max for b in boxes])


def hard_volume(box: Box) -> float:
    """Product over dimensions of max(max_d - min_d, 0)."""
    return float(np.prod(np.maximum(box.max - box.min, 0.0)))


def hard_intersection_volume(boxes: Sequence[Box]) -> float:
    mins, maxs = _stack(boxes)
    return float(np.prod(np.maximum(maxs.min(axis=0) - mins.max(axis=0), 0.0)))


def log_gumbel_intersection_volume(boxes: Sequence[Box], temps: GumbelTemps) -> float:
    mins, maxs = _stack(boxes)
    log_sides, _, _ = _log_intersection(mins, maxs, temps, need_grad=False)
    return float(log_sides.sum())


def gumbel_intersection_volume(boxes: Sequence[Box], temps: GumbelTemps) -> float:
    """prod_d LSE_nu([LSE_-tau(tops_d) - LSE_tau(bottoms_d), 0])."""
    return math.exp(log_gumbel_intersection_volume(boxes, temps))


def gumbel_volume(box: Box, volume_temp: float) -> float:
    """prod_d LSE_nu([max_d - min_d, 0])."""
    if not (math.isfinite(volume_temp) and volume_temp > 0):
        raise ContractViolation(f"volume_temp must be positive, got {volume_temp}")
    return float(np.prod(soft_side_length(box.max - box.min, volume_temp)))


def _containment(containers: Sequence[Box], target: Box, temps: GumbelTemps, need_grad: bool) -> ContainmentTerms:
    mins, maxs = _stack(list(containers) + [target])
    return log_containment(mins[:-1], maxs[:-1], mins[-1], maxs[-1], temps, need_grad=need_grad)


def containment_score(containers: Sequence[Box], target: Box, temps: GumbelTemps) -> float:
    """Share of the target's soft volume inside the soft intersection of the containers."""
    return float(np.exp(_containment(containers, target, temps, need_grad=False).log_score))


def energy(containers: Sequence[Box], target: Box, temps: GumbelTemps) -> float:
    """-log(containment_score), with the score floored at SCORE_FLOOR."""
    value, _ = energy_from_log_score(_containment(containers, target, temps, need_grad=False).log_score)
    return float(value)


def grad_energy(containers: Sequence[Box], target: Box, temps: GumbelTemps) -> GeometryGradient:
    terms = _containment(containers, target, temps, need_grad=True)
    value, live = energy_from_log_score(terms.log_score)
    sign = -1.0 if bool(live) else 0.0
    d_min = sign * np.vstack([terms.d_container_min, terms.d_target_min[None, :]])
    d_max = sign * np.vstack([terms.d_container_max, terms.d_target_max[None, :]])
    return GeometryGradient(value=float(value), d_min=d_min, d_max=d_max)


def _split_query_boxes(shape: QueryShape, boxes: Sequence[Box]) -> tuple[list[Box], Optional[Box]]:
    if len(boxes) != shape.arity:
        raise ContractViolation(f"query shape {shape.kind} needs {shape.arity} boxes, got {len(boxes)}")
    boxes = list(boxes)
    if shape.is_negated:
        return boxes[:-1], boxes[-1]
    return boxes, None


def query_score(shape: QueryShape, boxes: Sequence[Box], target: Box, temps: GumbelTemps) -> float:
    """
    Score of ``target`` for a query.

    Conjunctive shapes: containment_score over all positive boxes.
    Negated shape: [VolInt(m, P) - VolInt(m, P, a2)] / Vol(m).
    """
    positives, negated = _split_query_boxes(shape, boxes)
    base = containment_score(positives, target, temps)
    if negated is None:
        return base
    return max(base - containment_score(positives + [negated], target, temps), 0.0)


def grad_query_score(shape: QueryShape, boxes: Sequence[Box], target: Box, temps: GumbelTemps) -> GeometryGradient:
    """
    query_score and its exact gradient. Rows follow ``boxes`` order with
    the target last.
    """
    positives, negated = _split_query_boxes(shape, boxes)
    first = _containment(positives, target, temps, need_grad=True)
    s1 = float(np.exp(first.log_score))
    d_min = s1 * np.vstack([first.d_container_min, first.d_target_min[None, :]])
    d_max = s1 * np.vstack([first.d_container_max, first.d_target_max[None, :]])
    if negated is None:
        return GeometryGradient(value=s1, d_min=d_min, d_max=d_max)

    second = _containment(positives + [negated], target, temps, need_grad=True)
    s2 = float(np.exp(second.log_score))
    # rows of ``second``: positives, negated, target
    d_min = np.insert(d_min, len(positives), 0.0, axis=0)
    d_max = np.insert(d_max, len(positives), 0.0, axis=0)
    d_min -= s2 * np.vstack([second.d_container_min, second.d_target_min[None, :]])
    d_max -= s2 * np.vstack([second.d_container_max, second.d_target_max[None, :]])
    return GeometryGradient(value=max(s1 - s2, 0.0), d_min=d_min, d_max=d_max)
