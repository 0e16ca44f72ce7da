"""
Tests for core/config.py and the command line (core/cli.py).
"""

import logging

import numpy as np
import pandas as pd
import pytest

from core.box_geometry import QueryShape
from core.checkpoint import load_checkpoint
from core.cli import TRAIN_LOG_NAME, main, parse_expression, resolve_query, top_items
from core.config import RunConfig, flatten, load_run_config
from core.errors import InputError, LookupFailure
from core.models import EntityClass
from strategies.base import ItemScores


TINY_SYNTH = [
    "--split.synthetic", "true",
    "--data.filter", "false",
    "--synth.n-users", "40",
    "--synth.n-items", "80",
    "--synth.n-attributes", "8",
    "--synth.latent-dim", "2",
    "--synth.seed", "2",
    "--split.max-sample-size", "50",
    "--split.epsilon-mode", "fixed",
    "--split.epsilon-fixed", "1",
]

TINY_TRAIN = [
    "--model.dim", "4",
    "--model.tau", "0.1",
    "--model.nu", "0.1",
    "--train.max-epochs", "2",
    "--train.eval-negatives", "20",
    "--train.learning-rate", "0.01",
]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A split and a trained box checkpoint produced through main()."""
    root = tmp_path_factory.mktemp("cli")
    dirs = {
        "split": str(root / "split"),
        "checkpoint": str(root / "checkpoint"),
        "report": str(root / "report"),
        "data": str(root / "data"),
    }
    assert main(["split", *TINY_SYNTH, "--synth.output-dir", dirs["data"], "--data.split-dir", dirs["split"]]) == 0
    assert main(["train", *TINY_TRAIN, "--data.split-dir", dirs["split"], "--data.checkpoint-dir", dirs["checkpoint"]]) == 0
    return dirs


def _query_args(workspace, *extra):
    return ["--data.checkpoint-dir", workspace["checkpoint"], "--data.split-dir", workspace["split"], *extra]


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

class TestRunConfig:
    def test_defaults(self):
        config = RunConfig()
        assert config["model.family"] == "box"
        assert config.model_config().dim == 64
        train = config.train_config()
        assert train.num_negatives == 20
        assert train.attribute_loss_weight == 0.7

    def test_family_defaults(self):
        config = RunConfig({"model.family": "mf"})
        assert config.model_config().dim == 128
        assert config.train_config().num_negatives == 5
        assert config.train_config().attribute_loss_weight == 0.5
        assert config.train_config("box").num_negatives == 20

    def test_precedence(self, tmp_path, monkeypatch):
        monkeypatch.delenv("BOXREC_SEED", raising=False)
        path = tmp_path / "run.yaml"
        path.write_text("train:\n  learning_rate: 0.05\n  batch_size: 64\nmodel:\n  family: mf\n")
        config = load_run_config(path, {"train.learning_rate": "0.1"}, load_env=False)
        assert config["train.learning_rate"] == 0.1
        assert config["train.batch_size"] == 64
        assert config["model.family"] == "mf"
        assert config["train.max_epochs"] == 100

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "run.yaml"
        path.write_text("train:\n  learnin_rate: 0.05\n")
        with pytest.raises(InputError):
            load_run_config(path, load_env=False)

    def test_bad_value(self):
        with pytest.raises(InputError):
            RunConfig({"train.batch_size": "many"})
        with pytest.raises(InputError):
            RunConfig({"model.family": "tree"}).model_config()

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            load_run_config(tmp_path / "absent.yaml", load_env=False)

    def test_seed_override(self, monkeypatch):
        monkeypatch.setenv("BOXREC_SEED", "42")
        config = load_run_config(overrides={"train.seed": "3"}, load_env=False)
        assert config["train.seed"] == 42
        assert config["split.seed"] == 42
        assert config.model_config().seed == 42

    def test_lists_and_flags(self):
        config = RunConfig({"eval.k-values": "5, 10", "--eval.strategies": "product,geometric", "eval.mask_train": "yes"})
        assert config["eval.k_values"] == [5, 10]
        assert config["eval.strategies"] == ["product", "geometric"]
        assert config["eval.mask_train"] is True

    def test_flatten(self):
        assert flatten({"a": {"b": 1, "c": {"d": 2}}, "e": 3}) == {"a.b": 1, "a.c.d": 2, "e": 3}


# ---------------------------------------------------------------------------
# Query expressions
# ---------------------------------------------------------------------------

class TestParseExpression:
    @pytest.mark.parametrize(
        "expression,expected",
        [
            ("comedy", (["comedy"], None)),
            ("comedy & drama", (["comedy", "drama"], None)),
            ("comedy&drama", (["comedy", "drama"], None)),
            ("comedy &! romance", (["comedy"], "romance")),
            ("  comedy  &!romance ", (["comedy"], "romance")),
        ],
    )
    def test_valid(self, expression, expected):
        assert parse_expression(expression) == expected

    @pytest.mark.parametrize("expression", ["", "& drama", "comedy &", "a & b & c", "comedy | drama"])
    def test_invalid(self, expression):
        with pytest.raises(InputError):
            parse_expression(expression)


class TestTopItems:
    class _Strategy:
        def __init__(self, scores, tiers=None):
            self.result = ItemScores(np.asarray(scores, dtype=float), None if tiers is None else np.asarray(tiers))

        def score_items(self, shape):
            return self.result

    def test_order(self):
        frame = top_items(self._Strategy([0.2, 0.9, 0.2, 0.5]), QueryShape(user=0), 3)
        assert frame["item"].tolist() == [1, 3, 0]
        assert frame["rank"].tolist() == [1, 2, 3]
        assert "in_filter" not in frame.columns

    def test_tiers_first(self):
        frame = top_items(self._Strategy([0.2, 0.9, 0.2, 0.5], [0, 1, 0, 1]), QueryShape(user=0), 10)
        assert frame["item"].tolist() == [0, 2, 1, 3]
        assert frame["in_filter"].tolist() == [True, True, False, False]


# ---------------------------------------------------------------------------
# End to end through main()
# ---------------------------------------------------------------------------

class TestMain:
    def test_split_and_train_artifacts(self, workspace):
        stats = pd.read_csv(f"{workspace['split']}/dataset_stats.tsv", sep="\t")
        assert stats["users"].iloc[0] == 40
        log = pd.read_csv(f"{workspace['checkpoint']}/{TRAIN_LOG_NAME}", sep="\t")
        assert 1 <= len(log) <= 2
        checkpoint = load_checkpoint(workspace["checkpoint"])
        assert checkpoint.model.family == "box"
        assert checkpoint.model.config.dim == 4

    def test_eval(self, workspace, capsys):
        code = main(
            ["eval", *_query_args(workspace, "--data.report-dir", workspace["report"], "--eval.max-queries", "20")]
        )
        assert code == 0
        report = pd.read_csv(f"{workspace['report']}/report.tsv", sep="\t", keep_default_na=False)
        assert set(report["strategy"]) == {"box-filter", "box-product", "box-geometric"}
        assert "EVALUATION SUMMARY" in capsys.readouterr().out

    def test_query(self, workspace, capsys):
        assert main(["query", "u1", "a0 &! a1", *_query_args(workspace)]) == 0
        out = capsys.readouterr().out
        assert "Top 10 for [u1 a0 &! a1] (box-geometric)" in out

    def test_query_top_k_beyond_vocabulary(self, workspace, capsys):
        assert main(["query", "u1", *_query_args(workspace, "--query.top-k", "1000")]) == 0
        assert "Top 80 for [u1]" in capsys.readouterr().out

    def test_filter_query(self, workspace, capsys):
        assert main(["query", "u1", "a0 & a2", *_query_args(workspace, "--query.strategy", "filter")]) == 0
        assert "in_filter" in capsys.readouterr().out

    def test_attribute_only_query(self, workspace, capsys):
        assert main(["query", *_query_args(workspace, "--query.expression", "a3")]) == 0
        assert "Top 10 for [a3]" in capsys.readouterr().out

    def test_unknown_id(self, workspace, caplog):
        caplog.set_level(logging.ERROR)
        assert main(["query", "u999", *_query_args(workspace)]) == 3
        assert "unknown user id: u999" in caplog.text
        assert "Did you mean: u9" in caplog.text

    def test_missing_input(self, tmp_path, caplog):
        caplog.set_level(logging.ERROR)
        missing = tmp_path / "nope.tsv"
        code = main(["split", "--data.user-item", str(missing), "--data.split-dir", str(tmp_path / "split")])
        assert code == 2
        assert "nope.tsv" in caplog.text

    def test_missing_checkpoint(self, tmp_path):
        assert main(["query", "u1", "--data.checkpoint-dir", str(tmp_path / "none")]) == 2

    def test_unknown_argument(self):
        assert main(["train", "--bogus", "1"]) == 2

    def test_bad_flag_value(self, workspace):
        assert main(["train", "--train.batch-size", "many", "--data.split-dir", workspace["split"]]) == 2

    def test_bad_strategy(self, workspace):
        assert main(["eval", *_query_args(workspace, "--eval.strategies", "average")]) == 2

    def test_query_without_anything(self, workspace):
        assert main(["query", *_query_args(workspace)]) == 2


class TestResolveQuery:
    def test_ids_to_shape(self, workspace):
        checkpoint = load_checkpoint(workspace["checkpoint"])
        shape = resolve_query(checkpoint, "u3", "a1 &! a4")
        assert shape == QueryShape(user=3, positive_attributes=(1,), negated_attribute=4)

    def test_unknown_attribute(self, workspace):
        checkpoint = load_checkpoint(workspace["checkpoint"])
        with pytest.raises(LookupFailure) as excinfo:
            resolve_query(checkpoint, "u3", "b1")
        assert excinfo.value.exit_code == 3

    def test_self_difference_is_bounded(self, workspace):
        model = load_checkpoint(workspace["checkpoint"]).model
        for user in range(5):
            base = model.geometric_scores(QueryShape(user=user, positive_attributes=(0,)))
            self_diff = model.geometric_scores(QueryShape(user=user, positive_attributes=(0,), negated_attribute=0))
            assert (self_diff >= 0.0).all()
            assert (self_diff <= base + 1e-12).all()
        assert model.count(EntityClass.ITEM) == 80
