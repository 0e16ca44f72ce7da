"""
Tests for core/trainer.py and core/optimizer.py.
"""

import math

import numpy as np
import pytest
from scipy import stats

from core.box_geometry import Box, GumbelTemps, energy
from core.errors import ContractViolation
from core.experiment import entity_counts, training_pairs
from core.models import (
    BoxModel,
    BoxParameterTable,
    EntityClass,
    ModelConfig,
    init_model,
    inverse_softplus,
)
from core.optimizer import AdamOptimizer
from core.trainer import (
    ENERGY_CLAMP,
    PairBatch,
    TrainConfig,
    TrainingPairs,
    batch_loss,
    log1mexp,
    nce_loss_term,
    sample_batch_negatives,
    sample_negatives,
    train,
)


def _box_model(boxes_by_class, temps):
    """BoxModel with explicit realised boxes: {class: [(lo, hi), ...]}"""
    tables = {}
    for cls, boxes in boxes_by_class.items():
        lo = np.array([b[0] for b in boxes], dtype=float)
        hi = np.array([b[1] for b in boxes], dtype=float)
        tables[cls] = BoxParameterTable(cls, lo.copy(), inverse_softplus(hi - lo))
    dim = tables[EntityClass.ITEM].dim
    return BoxModel(ModelConfig(family="box", dim=dim, temps=temps), tables)


def _constant_hook(value=0.5):
    return lambda model: (value, value)


def _rising_hook():
    calls = {"n": 0}

    def hook(model):
        calls["n"] += 1
        return (calls["n"] / 1000.0, 0.0)

    return hook


def _tiny_pairs():
    return TrainingPairs(
        user_rows=np.array([0, 0, 1, 2], dtype=np.int64),
        user_items=np.array([0, 1, 2, 3], dtype=np.int64),
        attribute_rows=np.array([0, 1], dtype=np.int64),
        attribute_items=np.array([1, 4], dtype=np.int64),
    )


TINY_COUNTS = {EntityClass.USER: 3, EntityClass.ATTRIBUTE: 2, EntityClass.ITEM: 6}


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------

class TestLog1mexp:
    def test_matches_direct_formula(self):
        e = np.array([0.01, 0.3, math.log(2.0), 1.0, 5.0, 20.0])
        np.testing.assert_allclose(log1mexp(e), np.log(-np.expm1(-e)), rtol=1e-12)

    def test_clamped_at_zero_energy(self):
        assert log1mexp(np.array([0.0]))[0] == pytest.approx(math.log(-math.expm1(-ENERGY_CLAMP)), rel=1e-12)
        assert np.isfinite(log1mexp(np.array([0.0, 1e-30]))).all()


class TestNceLoss:
    def test_one_dimensional_closed_form(self):
        temps = GumbelTemps(1.0, 1.0)
        model = _box_model(
            {
                EntityClass.USER: [([0.0], [1.0])],
                EntityClass.ATTRIBUTE: [([0.0], [1.0])],
                EntityClass.ITEM: [([0.0], [1.0]), ([3.0], [4.0]), ([0.5], [2.0])],
            },
            temps,
        )
        user = Box(np.array([0.0]), np.array([1.0]))
        items = [Box(np.array([0.0]), np.array([1.0])), Box(np.array([3.0]), np.array([4.0])), Box(np.array([0.5]), np.array([2.0]))]

        positive = energy([user], items[0], temps)
        negatives = [energy([user], items[j], temps) for j in (1, 2)]
        expected = positive - np.mean([math.log(1.0 - math.exp(-e)) for e in negatives])

        assert nce_loss_term(model, EntityClass.USER, 0, 0, [1, 2]) == pytest.approx(expected, rel=1e-10)
        # self-containment of identical unit boxes still costs energy at tau = nu = 1
        assert positive > 0.0

    def test_needs_a_negative(self, box_model):
        with pytest.raises(ContractViolation):
            nce_loss_term(box_model, EntityClass.USER, 0, 0, [])

    def test_empty_group_contributes_zero(self, mf_model, rng):
        n_items = mf_model.n_items
        users = PairBatch(
            EntityClass.USER,
            np.array([0, 1, 2]),
            np.array([3, 4, 5]),
            rng.integers(0, n_items, size=(3, 4)),
        )
        w = 0.3
        alone = batch_loss(mf_model, users, PairBatch.empty(EntityClass.ATTRIBUTE, 4), w)
        terms = [nce_loss_term(mf_model, EntityClass.USER, r, m, n) for r, m, n in zip(users.rows, users.items, users.negatives)]
        assert alone == pytest.approx(w * np.mean(terms), rel=1e-12)

    def test_both_groups_empty_raises(self, mf_model):
        with pytest.raises(ContractViolation):
            batch_loss(mf_model, PairBatch.empty(EntityClass.USER), PairBatch.empty(EntityClass.ATTRIBUTE), 0.5)


class TestBatchLossGradient:
    @staticmethod
    def _batches(model, rng, k=3):
        n_items = model.n_items
        users = PairBatch(
            EntityClass.USER,
            np.array([0, 1, 1, 2]),
            rng.integers(0, n_items, size=4),
            rng.integers(0, n_items, size=(4, k)),
        )
        attributes = PairBatch(
            EntityClass.ATTRIBUTE,
            np.array([0, 1]),
            rng.integers(0, n_items, size=2),
            rng.integers(0, n_items, size=(2, k)),
        )
        return users, attributes

    @pytest.mark.parametrize("family", ["box", "mf"])
    def test_matches_finite_differences(self, family, rng):
        temps = GumbelTemps(1.0, 1.0)
        model = init_model(ModelConfig(family=family, dim=3, temps=temps, seed=2), TINY_COUNTS)
        users, attributes = self._batches(model, rng)
        w = 0.7

        grads = model.zero_grads()
        batch_loss(model, users, attributes, w, grads)

        h = 1e-6
        for name, values in model.parameters().items():
            numeric = np.zeros_like(values)
            for idx in np.ndindex(values.shape):
                saved = values[idx]
                values[idx] = saved + h
                up = batch_loss(model, users, attributes, w)
                values[idx] = saved - h
                down = batch_loss(model, users, attributes, w)
                values[idx] = saved
                numeric[idx] = (up - down) / (2 * h)
            np.testing.assert_allclose(grads[name], numeric, rtol=1e-5, atol=1e-7, err_msg=name)

    def test_weight_zero_leaves_user_rows_untouched(self, rng):
        model = init_model(ModelConfig(family="mf", dim=3, seed=2), TINY_COUNTS)
        users, attributes = self._batches(model, rng)
        grads = model.zero_grads()
        batch_loss(model, users, attributes, 0.0, grads)
        assert not grads["vec.user"].any()
        assert grads["vec.attribute"].any()


class TestLossStability:
    @pytest.mark.parametrize("family", ["box", "mf"])
    def test_finite_for_extreme_parameters(self, family):
        rng = np.random.default_rng(17)
        model = init_model(ModelConfig(family=family, dim=4, temps=GumbelTemps(0.1, 0.1), seed=0), TINY_COUNTS)
        users, attributes = TestBatchLossGradient._batches(model, rng)
        for _ in range(100):
            for values in model.parameters().values():
                values[...] = rng.uniform(-1e3, 1e3, size=values.shape)
            grads = model.zero_grads()
            with np.errstate(over="raise", invalid="raise"):
                loss = batch_loss(model, users, attributes, 0.5, grads)
            assert math.isfinite(loss)
            for name, g in grads.items():
                assert np.isfinite(g).all(), name


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        x = np.array([1.0, 2.0, 3.0, 4.0])
        g = np.array([0.5, -2.0, 1e-3, 0.0])
        AdamOptimizer(learning_rate=0.01).step({"x": x}, {"x": g})
        np.testing.assert_allclose(x[:3], np.array([1.0 - 0.01, 2.0 + 0.01, 3.0 - 0.01]), rtol=1e-6)
        assert x[3] == 4.0

    def test_updates_in_place(self):
        model = init_model(ModelConfig(family="mf", dim=2, seed=0), TINY_COUNTS)
        before = model.tables[EntityClass.ITEM].vectors.copy()
        grads = {name: np.ones_like(v) for name, v in model.parameters().items()}
        AdamOptimizer(learning_rate=0.1).step(model.parameters(), grads)
        np.testing.assert_allclose(model.tables[EntityClass.ITEM].vectors, before - 0.1, atol=1e-7)

    def test_zero_gradient_is_a_no_op(self):
        x = np.array([0.3, -1.5, 2.0])
        AdamOptimizer(learning_rate=0.1).step({"x": x}, {"x": np.zeros(3)})
        np.testing.assert_array_equal(x, [0.3, -1.5, 2.0])

    def test_missing_gradient(self):
        with pytest.raises(ContractViolation):
            AdamOptimizer().step({"x": np.zeros(2)}, {})

    def test_shape_mismatch(self):
        with pytest.raises(ContractViolation):
            AdamOptimizer().step({"x": np.zeros(2)}, {"x": np.zeros(3)})

    def test_negative_learning_rate(self):
        with pytest.raises(ContractViolation):
            AdamOptimizer(learning_rate=-1.0)


# ---------------------------------------------------------------------------
# Negative sampling
# ---------------------------------------------------------------------------

class TestNegativeSampling:
    def test_uniform(self):
        draws = sample_negatives(np.random.default_rng(0), 100_000, 20)
        counts = np.bincount(draws, minlength=20)
        assert stats.chisquare(counts).pvalue > 0.001

    def test_exclusion(self):
        draws = sample_negatives(np.random.default_rng(1), 1000, 10, exclude={0, 3, 7})
        assert not np.isin(draws, [0, 3, 7]).any()

    def test_everything_excluded(self):
        with pytest.raises(ContractViolation):
            sample_negatives(np.random.default_rng(1), 5, 3, exclude=[0, 1, 2])

    def test_non_positive_k(self):
        with pytest.raises(ContractViolation):
            sample_negatives(np.random.default_rng(1), 0, 3)

    def test_batch_redraws_known_positives(self):
        n_items = 5
        known = np.array([0, 1, 2, 3, 1 * n_items + 0])
        rows = np.array([0, 1, 0, 1])
        draws = sample_batch_negatives(np.random.default_rng(2), rows, 50, n_items, known)
        assert draws.shape == (4, 50)
        assert (draws[rows == 0] == 4).all()
        assert not (draws[rows == 1] == 0).any()

    def test_batch_row_with_every_item(self):
        known = np.arange(4)
        with pytest.raises(ContractViolation):
            sample_batch_negatives(np.random.default_rng(2), np.array([0]), 3, 4, known)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

class TestTrain:
    def test_patience_with_frozen_model(self):
        model = init_model(ModelConfig(family="box", dim=2, seed=0), TINY_COUNTS)
        before = {name: v.copy() for name, v in model.parameters().items()}
        config = TrainConfig(learning_rate=0.0, patience=1, max_epochs=10, num_negatives=2, batch_size=2)
        result = train(model, _tiny_pairs(), config, _constant_hook(0.5))

        assert len(result.log) == 2
        assert result.best_epoch == 1
        assert result.best_ndcg == 0.5
        assert list(result.log.columns) == ["epoch", "train_loss", "eval_ndcg", "eval_hr10", "elapsed_ms"]
        for name, value in model.parameters().items():
            np.testing.assert_array_equal(value, before[name])

    def test_improvement_callback(self):
        model = init_model(ModelConfig(family="mf", dim=2, seed=0), TINY_COUNTS)
        seen = []
        config = TrainConfig(learning_rate=0.01, patience=2, max_epochs=3, num_negatives=2)
        train(model, _tiny_pairs(), config, _rising_hook(), lambda best, epoch, score: seen.append(epoch))
        assert seen == [1, 2, 3]

    def test_empty_pairs(self):
        model = init_model(ModelConfig(family="mf", dim=2, seed=0), TINY_COUNTS)
        empty = TrainingPairs(*(np.zeros(0, dtype=np.int64) for _ in range(4)))
        with pytest.raises(ContractViolation):
            train(model, empty, TrainConfig(), _constant_hook())

    def test_invalid_config(self):
        with pytest.raises(ContractViolation):
            TrainConfig(attribute_loss_weight=1.5)
        with pytest.raises(ContractViolation):
            TrainConfig(patience=0)

    @pytest.mark.parametrize("family,lr", [("box", 0.05), ("mf", 0.05)])
    def test_loss_decreases(self, small_split, family, lr):
        temps = GumbelTemps(0.1, 0.1)
        model = init_model(ModelConfig(family=family, dim=4, temps=temps, seed=1), entity_counts(small_split))
        config = TrainConfig(learning_rate=lr, batch_size=256, num_negatives=5, max_epochs=5, patience=10, seed=3)
        result = train(model, training_pairs(small_split), config, _rising_hook())
        losses = result.log["train_loss"].to_numpy()
        assert len(losses) == 5
        assert losses[-1] < losses[0]

    def test_deterministic(self, small_split):
        def run():
            model = init_model(ModelConfig(family="box", dim=3, temps=GumbelTemps(0.1, 0.1), seed=4), entity_counts(small_split))
            config = TrainConfig(learning_rate=0.01, num_negatives=3, max_epochs=2, patience=5, seed=9)
            return train(model, training_pairs(small_split), config, _rising_hook())

        first, second = run(), run()
        np.testing.assert_array_equal(first.log["train_loss"], second.log["train_loss"])
        for name, value in first.best_model.parameters().items():
            np.testing.assert_array_equal(value, second.best_model.parameters()[name])
