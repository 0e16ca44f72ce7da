"""
Run configuration.

A RunConfig is a flat mapping of declared dotted keys. Values resolve as
defaults <- YAML config file <- command-line flags; ``BOXREC_SEED``
overrides every ``*.seed`` key. Unknown keys are rejected.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional, Union

from dotenv import load_dotenv

from .box_geometry import GumbelTemps
from .errors import BoxRecError, InputError
from .models import DEFAULT_DIMS, ModelConfig
from .splitter import SplitConfig
from .trainer import TrainConfig
from .utils import SEED_ENV_VAR, load_yaml_config

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


# Family-dependent training defaults
FAMILY_NEGATIVES = {"box": 20, "mf": 5}
FAMILY_ATTRIBUTE_WEIGHT = {"box": 0.7, "mf": 0.5}


def _to_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _to_str_list(value: Any) -> list[str]:
    if isinstance(value, (list, tuple)):
        return [str(v).strip() for v in value if str(v).strip()]
    return [part.strip() for part in str(value).split(",") if part.strip()]


def _to_int_list(value: Any) -> list[int]:
    return [int(v) for v in _to_str_list(value)]


@dataclass(frozen=True)
class Key:
    """A declared configuration key: coercion and default."""

    parse: Callable[[Any], Any]
    default: Any = None
    help: str = ""


DEFAULTS: dict[str, Key] = {
    # data
    "data.user_item": Key(str, "data/user_item.tsv", "user-item TSV"),
    "data.attribute_item": Key(str, "data/attribute_item.tsv", "attribute-item TSV"),
    "data.min_rating": Key(float, None, "drop lines whose value is below this"),
    "data.filter": Key(_to_bool, True, "apply the frequency filter"),
    "data.min_user_count": Key(int, 5),
    "data.min_item_count": Key(int, 5),
    "data.min_attribute_count": Key(int, 20),
    "data.split_dir": Key(str, "runs/split"),
    "data.checkpoint_dir": Key(str, "runs/checkpoint"),
    "data.report_dir": Key(str, "runs/report"),
    "data.db_url": Key(str, None, "run registry database URL"),
    # model
    "model.family": Key(str, "box", "box or mf"),
    "model.dim": Key(int, None, "embedding dimension (box 64, mf 128)"),
    "model.tau": Key(float, 2.0, "intersection temperature"),
    "model.nu": Key(float, 0.01, "volume temperature"),
    "model.seed": Key(int, 0),
    # train
    "train.learning_rate": Key(float, 0.001),
    "train.batch_size": Key(int, 128),
    "train.num_negatives": Key(int, None, "negatives per positive (box 20, mf 5)"),
    "train.attribute_loss_weight": Key(float, None, "w (box 0.7, mf 0.5)"),
    "train.max_epochs": Key(int, 100),
    "train.patience": Key(int, 5),
    "train.seed": Key(int, 0),
    "train.beta1": Key(float, 0.9),
    "train.beta2": Key(float, 0.999),
    "train.epsilon": Key(float, 1e-8),
    "train.exclude_positives": Key(_to_bool, False),
    "train.eval_negatives": Key(int, 100),
    "train.eval_seed": Key(int, 0),
    "train.persist": Key(_to_bool, False, "store the run in the registry"),
    # split
    "split.max_sample_size": Key(int, None, "simple queries to draw (default 10% of D_U)"),
    "split.epsilon_mode": Key(str, "independence_expectation"),
    "split.epsilon_fixed": Key(int, 0),
    "split.alpha": Key(float, 0.5),
    "split.seed": Key(int, 0),
    "split.synthetic": Key(_to_bool, False, "generate a synthetic dataset instead of reading TSVs"),
    # eval
    "eval.strategies": Key(_to_str_list, ["filter", "product", "geometric"]),
    "eval.query_types": Key(_to_str_list, ["simple", "inter", "neg"]),
    "eval.k_values": Key(_to_int_list, [10, 20, 50]),
    "eval.mask_train": Key(_to_bool, False),
    "eval.pessimistic": Key(_to_bool, False),
    "eval.max_queries": Key(int, None, "cap per query type (seeded subsample)"),
    "eval.seed": Key(int, 0),
    "eval.workers": Key(int, 1),
    "eval.regimes": Key(_to_str_list, [], "spectrum regimes, or 'all'"),
    "eval.compounding": Key(_to_bool, False),
    "eval.compounding_k": Key(int, 50),
    "eval.dump_queries": Key(_to_bool, False),
    "eval.persist": Key(_to_bool, False),
    # synthetic world
    "synth.n_users": Key(int, 500),
    "synth.n_items": Key(int, 1000),
    "synth.n_attributes": Key(int, 40),
    "synth.latent_dim": Key(int, 4),
    "synth.dropout": Key(float, 0.1),
    "synth.seed": Key(int, 0),
    "synth.output_dir": Key(str, "runs/synthetic"),
    "synth.box_dim": Key(int, 8),
    "synth.mf_dim": Key(int, 16),
    # query
    "query.user": Key(str, None),
    "query.expression": Key(str, None, "ATTR, ATTR & ATTR or ATTR &! ATTR"),
    "query.top_k": Key(int, 10),
    "query.strategy": Key(str, "geometric"),
    # sweep
    "sweep.n_runs": Key(int, 10),
    "sweep.seed": Key(int, 0),
    # logging
    "logging.level": Key(str, "INFO"),
    "logging.format": Key(str, "%(asctime)s - %(name)s - %(levelname)s - %(message)s"),
}


def flatten(tree: dict, prefix: str = "") -> dict[str, Any]:
    """{'train': {'learning_rate': 1}} -> {'train.learning_rate': 1}"""
    flat = {}
    for key, value in tree.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat


def normalize_key(key: str) -> str:
    return key.strip().lstrip("-").replace("-", "_")


class RunConfig:
    """Resolved configuration values keyed by dotted name."""

    def __init__(self, values: Optional[dict[str, Any]] = None):
        self.values = {key: declared.default for key, declared in DEFAULTS.items()}
        if values:
            self.update(values, source="overrides")

    def update(self, values: dict[str, Any], source: str) -> None:
        for raw_key, raw_value in values.items():
            key = normalize_key(raw_key)
            if key not in DEFAULTS:
                raise InputError(f"unknown configuration key in {source}: {raw_key}")
            self.values[key] = self.coerce(key, raw_value)

    @staticmethod
    def coerce(key: str, value: Any) -> Any:
        if value is None or (isinstance(value, str) and value.strip().lower() in ("null", "none", "~")):
            return None
        try:
            return DEFAULTS[key].parse(value)
        except (TypeError, ValueError) as e:
            raise InputError(f"invalid value for {key}: {value!r} ({e})")

    def __getitem__(self, key: str) -> Any:
        key = normalize_key(key)
        if key not in self.values:
            raise InputError(f"unknown configuration key: {key}")
        return self.values[key]

    def __setitem__(self, key: str, value: Any) -> None:
        self.update({key: value}, source="code")

    def section(self, name: str) -> dict[str, Any]:
        prefix = f"{name}."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    def apply_seed_override(self) -> None:
        override = os.getenv(SEED_ENV_VAR)
        if override is None or override.strip() == "":
            return
        seed = self.coerce("model.seed", override)
        for key in self.values:
            if key.endswith(".seed"):
                self.values[key] = seed
        logger.info(f"{SEED_ENV_VAR}={seed} overrides every seed")

    # -- typed views ------------------------------------------------------

    @property
    def family(self) -> str:
        return self["model.family"]

    def model_config(self, family: Optional[str] = None, dim: Optional[int] = None) -> ModelConfig:
        family = family or self.family
        if dim is None:
            dim = self["model.dim"] if self["model.dim"] is not None else DEFAULT_DIMS.get(family)
        try:
            return ModelConfig(
                family=family,
                dim=dim,
                temps=GumbelTemps(self["model.tau"], self["model.nu"]),
                seed=self["model.seed"],
            )
        except BoxRecError as e:
            raise InputError(f"invalid model configuration: {e}")

    def train_config(self, family: Optional[str] = None) -> TrainConfig:
        family = family or self.family
        negatives = self["train.num_negatives"]
        weight = self["train.attribute_loss_weight"]
        try:
            return TrainConfig(
                learning_rate=self["train.learning_rate"],
                batch_size=self["train.batch_size"],
                num_negatives=negatives if negatives is not None else FAMILY_NEGATIVES.get(family, 20),
                attribute_loss_weight=weight if weight is not None else FAMILY_ATTRIBUTE_WEIGHT.get(family, 0.7),
                max_epochs=self["train.max_epochs"],
                patience=self["train.patience"],
                seed=self["train.seed"],
                beta1=self["train.beta1"],
                beta2=self["train.beta2"],
                epsilon=self["train.epsilon"],
                exclude_positives=self["train.exclude_positives"],
            )
        except BoxRecError as e:
            raise InputError(f"invalid training configuration: {e}")

    def split_config(self) -> SplitConfig:
        try:
            return SplitConfig(
                max_sample_size=self["split.max_sample_size"],
                epsilon_mode=self["split.epsilon_mode"],
                epsilon_fixed=self["split.epsilon_fixed"],
                alpha=self["split.alpha"],
                seed=self["split.seed"],
            )
        except BoxRecError as e:
            raise InputError(f"invalid split configuration: {e}")

    def to_dict(self) -> dict[str, Any]:
        return dict(self.values)


def load_run_config(
    config_path: Optional[PathLike] = None,
    overrides: Optional[dict[str, Any]] = None,
    load_env: bool = True,
) -> RunConfig:
    """
    Resolve defaults <- ``config_path`` (YAML) <- ``overrides``, then the
    BOXREC_SEED override.
    """
    if load_env:
        load_dotenv()
    config = RunConfig()
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise InputError(f"config file not found: {path}")
        config.update(flatten(load_yaml_config(path)), source=str(path))
    if overrides:
        config.update(overrides, source="command line")
    config.apply_seed_override()
    return config
