"""
Tests for the random hyperparameter sweep (core/sweep.py).
"""

import pandas as pd
import pytest

from core.box_geometry import GumbelTemps
from core.errors import ContractViolation
from core.models import ModelConfig
from core.sweep import SEARCH_SPACE, apply_draw, run_sweep, sample_configs, write_sweep
from core.trainer import TrainConfig


class TestSampleConfigs:
    def test_values_come_from_grid(self):
        draws = sample_configs(SEARCH_SPACE, 25, seed=4)
        assert len(draws) == 25
        for draw in draws:
            assert set(draw) == set(SEARCH_SPACE)
            for name, value in draw.items():
                assert value in SEARCH_SPACE[name]

    def test_deterministic(self):
        assert sample_configs(SEARCH_SPACE, 5, seed=9) == sample_configs(SEARCH_SPACE, 5, seed=9)

    def test_mf_skips_temperatures(self):
        for draw in sample_configs(SEARCH_SPACE, 5, seed=1, family="mf"):
            assert "tau" not in draw and "nu" not in draw

    def test_partial_grid(self):
        draws = sample_configs({"learning_rate": (0.5,)}, 3)
        assert draws == [{"learning_rate": 0.5}] * 3

    def test_errors(self):
        with pytest.raises(ContractViolation):
            sample_configs({"momentum": (0.9,)}, 1)
        with pytest.raises(ContractViolation):
            sample_configs(SEARCH_SPACE, 0)


class TestApplyDraw:
    def test_overrides(self):
        model_config = ModelConfig(family="box", dim=4, temps=GumbelTemps(2.0, 0.01))
        m_cfg, t_cfg = apply_draw(model_config, TrainConfig(), {"batch_size": 64, "tau": 0.1})
        assert t_cfg.batch_size == 64
        assert t_cfg.learning_rate == TrainConfig().learning_rate
        assert m_cfg.temps == GumbelTemps(0.1, 0.01)
        assert m_cfg.dim == 4

    def test_invalid_value_rejected(self):
        with pytest.raises(ContractViolation):
            apply_draw(ModelConfig(family="mf", dim=4), TrainConfig(), {"attribute_loss_weight": 1.5})


class TestRunSweep:
    def test_table_sorted(self, small_split, tmp_path):
        grid = {"learning_rate": (0.05, 0.0), "num_negatives": (1, 2)}
        table = run_sweep(
            small_split,
            ModelConfig(family="mf", dim=4, seed=1),
            TrainConfig(max_epochs=1, batch_size=256),
            grid=grid,
            n_runs=3,
            seed=2,
            eval_negatives=20,
        )
        assert len(table) == 3
        assert sorted(table["run"]) == [1, 2, 3]
        assert table["best_ndcg"].is_monotonic_decreasing
        assert set(table["learning_rate"]) <= {0.05, 0.0}

        path = tmp_path / "sweep.tsv"
        write_sweep(table, path)
        assert len(pd.read_csv(path, sep="\t")) == 3
