"""
Tests for core/box_geometry.py: closed-form oracles, limits, identities
and finite-difference gradient checks.
"""

import math

import numpy as np
import pytest

from core.box_geometry import (
    Box,
    GumbelTemps,
    QueryShape,
    containment_score,
    energy,
    grad_energy,
    grad_query_score,
    gumbel_intersection_volume,
    gumbel_volume,
    hard_intersection_volume,
    hard_volume,
    log_containment,
    lse,
    query_score,
    query_scores,
)
from core.errors import ContractViolation


UNIT_TEMPS = GumbelTemps(1.0, 1.0)


# ---------------------------------------------------------------------------
# Closed-form helpers
# ---------------------------------------------------------------------------

def _softplus(x: float) -> float:
    return math.log1p(math.exp(x))


def _copies_side(n: int, width: float = 4.0) -> float:
    """Soft side length of n identical 1-D boxes [0, width] at tau = nu = 1."""
    return _softplus(width - 2.0 * math.log(n))


def _random_box(rng, dim: int, low: float = -2.0, high: float = 2.0) -> Box:
    lo = rng.uniform(low, high, size=dim)
    return Box(lo, lo + rng.uniform(0.1, 2.0, size=dim))


def _fd_box_gradient(fn, boxes, h: float = 1e-5):
    """Central differences of fn(boxes) w.r.t. every min/max coordinate."""
    d_min = np.zeros((len(boxes), boxes[0].dim))
    d_max = np.zeros_like(d_min)
    for i, box in enumerate(boxes):
        for d in range(box.dim):
            for corner, out in (("min", d_min), ("max", d_max)):
                plus = [b for b in boxes]
                minus = [b for b in boxes]
                delta = np.zeros(box.dim)
                delta[d] = h
                if corner == "min":
                    plus[i] = Box(box.min + delta, box.max)
                    minus[i] = Box(box.min - delta, box.max)
                else:
                    plus[i] = Box(box.min, box.max + delta)
                    minus[i] = Box(box.min, box.max - delta)
                out[i, d] = (fn(plus) - fn(minus)) / (2.0 * h)
    return d_min, d_max


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------

class TestLse:
    def test_two_zeros_is_log_two(self):
        assert lse(1.0, [0.0, 0.0]) == pytest.approx(math.log(2.0), rel=1e-12)

    @pytest.mark.parametrize("temp", [0.5, -0.5, 3.0, -7.0])
    def test_single_element_identity(self, temp):
        assert lse(temp, [1.234]) == pytest.approx(1.234, rel=1e-12)

    def test_small_positive_temp_is_max(self):
        assert lse(0.001, [1.0, 5.0]) == pytest.approx(5.0, abs=1e-3)

    def test_negative_temp_is_soft_min(self):
        assert lse(-0.001, [1.0, 5.0]) == pytest.approx(1.0, abs=1e-3)
        assert lse(-1.0, [3.0, 3.0]) == pytest.approx(3.0 - math.log(2.0), rel=1e-12)

    def test_no_overflow_for_large_values(self):
        assert lse(0.01, [1000.0, 999.0]) == pytest.approx(1000.0, abs=1e-6)

    def test_empty_input_raises(self):
        with pytest.raises(ContractViolation):
            lse(1.0, [])

    def test_zero_temp_raises(self):
        with pytest.raises(ContractViolation):
            lse(0.0, [1.0])


class TestBoxType:
    def test_mismatched_corners_raise(self):
        with pytest.raises(ContractViolation):
            Box(np.zeros(2), np.ones(3))

    def test_non_finite_raises(self):
        with pytest.raises(ContractViolation):
            Box(np.array([0.0]), np.array([np.inf]))

    def test_inverted_box_is_allowed(self):
        assert hard_volume(Box([1.0], [0.0])) == 0.0

    def test_temps_must_be_positive(self):
        with pytest.raises(ContractViolation):
            GumbelTemps(0.0, 1.0)
        with pytest.raises(ContractViolation):
            GumbelTemps(1.0, -0.1)

    def test_query_shape_invariants(self):
        with pytest.raises(ContractViolation):
            QueryShape()
        with pytest.raises(ContractViolation):
            QueryShape(negated_attribute=2)
        assert QueryShape(user=1, positive_attributes=(2,), negated_attribute=3).kind == "neg"
        assert QueryShape(user=1, positive_attributes=(2, 3)).kind == "inter"
        assert QueryShape(user=1).kind == "user"


# ---------------------------------------------------------------------------
# Hard geometry
# ---------------------------------------------------------------------------

class TestHardVolumes:
    def test_unit_square(self):
        assert hard_volume(Box([0, 0], [1, 1])) == 1.0

    def test_rectangle(self):
        assert hard_volume(Box([0, 1], [2, 4])) == 6.0

    def test_degenerate_dimension(self):
        assert hard_volume(Box([0, 1], [3, 1])) == 0.0

    def test_interval_overlap(self):
        assert hard_intersection_volume([Box([0], [2]), Box([1], [3])]) == 1.0

    def test_disjoint(self):
        assert hard_intersection_volume([Box([0], [1]), Box([2], [3])]) == 0.0

    def test_nested(self):
        inner = Box([0.5, 0.5], [1.0, 2.0])
        assert hard_intersection_volume([Box([0, 0], [3, 3]), inner]) == hard_volume(inner)

    def test_dimension_mismatch(self):
        with pytest.raises(ContractViolation):
            hard_intersection_volume([Box([0], [1]), Box([0, 0], [1, 1])])


# ---------------------------------------------------------------------------
# Soft geometry: closed-form oracles
# ---------------------------------------------------------------------------

class TestGumbelOracles:
    def test_single_box_self_volume(self):
        expected = _softplus(4.0)
        assert gumbel_intersection_volume([Box([0], [4])], UNIT_TEMPS) == pytest.approx(expected, rel=1e-9)
        assert expected == pytest.approx(4.01815, abs=1e-5)

    def test_two_copies(self):
        expected = _copies_side(2)
        boxes = [Box([0], [4]), Box([0], [4])]
        assert gumbel_intersection_volume(boxes, UNIT_TEMPS) == pytest.approx(expected, rel=1e-9)
        assert expected == pytest.approx(2.6845, abs=2e-4)

    def test_gumbel_volume(self):
        assert gumbel_volume(Box([0], [4]), 1.0) == pytest.approx(_softplus(4.0), rel=1e-9)
        assert gumbel_volume(Box([1.5], [1.5]), 1.0) == pytest.approx(math.log(2.0), rel=1e-12)
        assert gumbel_volume(Box([0], [2.5]), 1e-4) == pytest.approx(2.5, abs=1e-6)

    def test_self_containment_score_and_energy(self):
        score = containment_score([Box([0], [4])], Box([0], [4]), UNIT_TEMPS)
        expected = _copies_side(2) / _softplus(4.0)
        assert score == pytest.approx(expected, rel=1e-9)
        assert score == pytest.approx(0.6681, abs=1e-3)
        e = energy([Box([0], [4])], Box([0], [4]), UNIT_TEMPS)
        assert e == pytest.approx(-math.log(expected), rel=1e-9)
        assert math.exp(-e) == pytest.approx(score, rel=1e-12)

    def test_self_negation_closed_form(self):
        same = Box([0], [4])
        shape = QueryShape(user=0, positive_attributes=(1,), negated_attribute=2)
        expected = (_copies_side(3) - _copies_side(4)) / _softplus(4.0)
        assert query_score(shape, [same, same, same], same, UNIT_TEMPS) == pytest.approx(expected, rel=1e-9)

    def test_dimension_factorisation(self, rng):
        temps = GumbelTemps(0.3, 0.2)
        a, b = _random_box(rng, 3), _random_box(rng, 3)
        full = gumbel_intersection_volume([a, b], temps)
        product = 1.0
        for d in range(3):
            product *= gumbel_intersection_volume([Box([a.min[d]], [a.max[d]]), Box([b.min[d]], [b.max[d]])], temps)
        assert full == pytest.approx(product, rel=1e-12)

    def test_permutation_invariance(self, rng):
        temps = GumbelTemps(0.5, 0.1)
        boxes = [_random_box(rng, 4) for _ in range(3)]
        forward = gumbel_intersection_volume(boxes, temps)
        assert gumbel_intersection_volume(boxes[::-1], temps) == pytest.approx(forward, rel=1e-12)


class TestLimits:
    def test_zero_temperature_matches_hard_volume(self, rng):
        temps = GumbelTemps(1e-4, 1e-4)
        for _ in range(1000):
            lo1 = rng.uniform(0.0, 1.0, size=2)
            w1 = rng.uniform(0.5, 1.5, size=2)
            lo2 = lo1 + rng.uniform(0.0, 1.0, size=2) * (w1 - 0.1)
            w2 = rng.uniform(0.5, 1.5, size=2)
            boxes = [Box(lo1, lo1 + w1), Box(lo2, lo2 + w2)]
            assert abs(gumbel_intersection_volume(boxes, temps) - hard_intersection_volume(boxes)) < 1e-3

    def test_full_containment(self):
        temps = GumbelTemps(1e-3, 1e-3)
        assert containment_score([Box([-10], [10])], Box([0], [1]), temps) == pytest.approx(1.0, abs=1e-3)
        assert energy([Box([-10], [10])], Box([0], [1]), temps) == pytest.approx(0.0, abs=1e-3)

    def test_disjoint_target(self):
        temps = GumbelTemps(0.01, 0.01)
        assert containment_score([Box([0], [1])], Box([2], [3]), temps) < 1e-6

    def test_far_negated_box_leaves_score_unchanged(self):
        temps = GumbelTemps(0.01, 0.01)
        u, a1, m = Box([0, 0], [3, 3]), Box([0.5, 0.5], [2.5, 2.5]), Box([1, 1], [2, 2])
        far = Box([10, 10], [11, 11])
        conj = query_score(QueryShape(user=0, positive_attributes=(1,)), [u, a1], m, temps)
        neg = query_score(QueryShape(user=0, positive_attributes=(1,), negated_attribute=2), [u, a1, far], m, temps)
        assert neg == pytest.approx(conj, abs=1e-6)


# ---------------------------------------------------------------------------
# Identities over random draws
# ---------------------------------------------------------------------------

def _random_batch(rng, n: int, k: int, dim: int, low: float, high: float):
    lo = rng.uniform(low, high, size=(n, k, dim))
    hi = lo + rng.uniform(0.05, (high - low) / 2.0, size=(n, k, dim))
    return lo, hi


class TestQueryIdentities:
    def test_inclusion_exclusion(self, rng):
        temps = GumbelTemps(0.5, 0.2)
        lo, hi = _random_batch(rng, 10_000, 4, 3, -2.0, 2.0)
        pos_lo, pos_hi = lo[:, :2], hi[:, :2]
        a2_lo, a2_hi = lo[:, 2], hi[:, 2]
        m_lo, m_hi = lo[:, 3], hi[:, 3]
        conj = query_scores(pos_lo, pos_hi, m_lo, m_hi, temps)
        with_a2 = query_scores(lo[:, :3], hi[:, :3], m_lo, m_hi, temps)
        without_a2 = query_scores(pos_lo, pos_hi, m_lo, m_hi, temps, a2_lo, a2_hi)
        assert np.max(np.abs(conj - with_a2 - without_a2)) < 1e-12

    def test_monotonicity_and_range(self, rng):
        temps = GumbelTemps(1.0, 0.1)
        lo, hi = _random_batch(rng, 10_000, 4, 2, -5.0, 5.0)
        m_lo, m_hi = lo[:, 3], hi[:, 3]
        s1 = query_scores(lo[:, :1], hi[:, :1], m_lo, m_hi, temps)
        s2 = query_scores(lo[:, :2], hi[:, :2], m_lo, m_hi, temps)
        s3 = query_scores(lo[:, :3], hi[:, :3], m_lo, m_hi, temps)
        assert np.all(s2 <= s1 + 1e-12)
        assert np.all(s3 <= s2 + 1e-12)
        assert np.all((s1 > 0) & (s1 <= 1.0))
        neg = query_scores(lo[:, :2], hi[:, :2], m_lo, m_hi, temps, lo[:, 2], hi[:, 2])
        assert np.all((neg >= 0.0) & (neg <= 1.0))

    def test_wrong_box_count_raises(self):
        b = Box([0], [1])
        with pytest.raises(ContractViolation):
            query_score(QueryShape(user=0, positive_attributes=(1,)), [b], b, UNIT_TEMPS)


# ---------------------------------------------------------------------------
# Gradients
# ---------------------------------------------------------------------------

SHAPES = [
    QueryShape(user=0, positive_attributes=(1,)),
    QueryShape(user=0, positive_attributes=(1, 2)),
    QueryShape(user=0, positive_attributes=(1,), negated_attribute=2),
]


class TestGradients:
    @pytest.mark.parametrize("dim", [1, 4, 16])
    @pytest.mark.parametrize("tau", [0.1, 1.0, 2.0])
    def test_query_score_gradient_matches_finite_differences(self, dim, tau):
        rng = np.random.default_rng(dim * 100 + int(tau * 10))
        temps = GumbelTemps(tau, tau)
        for shape in SHAPES:
            for _ in range(6):
                boxes = [_random_box(rng, dim) for _ in range(shape.arity + 1)]
                inputs, target = boxes[:-1], boxes[-1]
                grad = grad_query_score(shape, inputs, target, temps)
                assert grad.value == pytest.approx(query_score(shape, inputs, target, temps), rel=1e-12, abs=1e-300)
                fd_min, fd_max = _fd_box_gradient(lambda bs: query_score(shape, bs[:-1], bs[-1], temps), boxes)
                np.testing.assert_allclose(grad.d_min, fd_min, rtol=1e-4, atol=1e-7)
                np.testing.assert_allclose(grad.d_max, fd_max, rtol=1e-4, atol=1e-7)

    @pytest.mark.parametrize("dim", [1, 4, 16])
    @pytest.mark.parametrize("tau", [0.1, 1.0, 2.0])
    def test_energy_gradient_matches_finite_differences(self, dim, tau):
        rng = np.random.default_rng(7 + dim + int(tau * 10))
        temps = GumbelTemps(tau, tau)
        for n_containers in (1, 2, 3):
            for _ in range(6):
                boxes = [_random_box(rng, dim) for _ in range(n_containers + 1)]
                grad = grad_energy(boxes[:-1], boxes[-1], temps)
                fd_min, fd_max = _fd_box_gradient(lambda bs: energy(bs[:-1], bs[-1], temps), boxes)
                scale = max(1.0, float(np.max(np.abs(fd_min))), float(np.max(np.abs(fd_max))))
                np.testing.assert_allclose(grad.d_min, fd_min, rtol=1e-4, atol=1e-6 * scale)
                np.testing.assert_allclose(grad.d_max, fd_max, rtol=1e-4, atol=1e-6 * scale)

    def test_symmetric_containers_get_symmetric_gradients(self):
        u = Box([0.0, 0.2], [1.0, 1.5])
        m = Box([0.3, 0.4], [0.8, 1.0])
        grad = grad_query_score(SHAPES[0], [u, u], m, GumbelTemps(0.5, 0.5))
        np.testing.assert_array_equal(grad.d_min[0], grad.d_min[1])
        np.testing.assert_array_equal(grad.d_max[0], grad.d_max[1])

    def test_full_score_has_zero_gradient(self):
        temps = GumbelTemps(1e-3, 1e-3)
        terms = log_containment(
            np.array([[-10.0]]), np.array([[10.0]]), np.array([0.0]), np.array([1.0]), temps, need_grad=True
        )
        assert terms.log_score == 0.0
        for g in (terms.d_container_min, terms.d_container_max, terms.d_target_min, terms.d_target_max):
            assert not np.any(g)
        grad = grad_energy([Box([-10.0], [10.0])], Box([0.0], [1.0]), temps)
        assert grad.value == 0.0
        assert not grad.d_min.any() and not grad.d_max.any()

    def test_saturated_gradients_vanish(self):
        temps = GumbelTemps(0.01, 0.01)
        container, target = Box([0.0], [1.0]), Box([2.0], [3.0])
        grad = grad_energy([container], target, temps)
        assert np.all(np.abs(grad.d_min) < 1e-6)
        assert np.all(np.abs(grad.d_max) < 1e-6)
        q = grad_query_score(QueryShape(user=0), [container], target, temps)
        assert np.all(np.abs(q.d_min) < 1e-6)
        assert np.all(np.abs(q.d_max) < 1e-6)
