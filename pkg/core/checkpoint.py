"""
Checkpoint directory format.

    manifest.txt            key=value: version, family, dim, tau, nu,
                            count.<class>, seed
    vocab_users.tsv         external_id<TAB>index (also items, attributes)
    min.<class>.f32le       box: row-major little-endian float32, count x dim
    width.<class>.f32le
    vec.<class>.f32le       mf

A checkpoint is written to a sibling staging directory and swapped in,
so an interrupted save leaves the previous checkpoint intact.
"""

from __future__ import annotations

import logging
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .box_geometry import GumbelTemps
from .data_source import Vocabulary
from .errors import InputError
from .models import (
    ENTITY_ORDER,
    BoxModel,
    BoxParameterTable,
    EmbeddingModel,
    EntityClass,
    MFModel,
    ModelConfig,
    VectorParameterTable,
)
from .utils import read_manifest, replace_directory, staging_directory, write_manifest

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CHECKPOINT_VERSION = 1
VOCAB_FILES = {
    EntityClass.USER: "vocab_users.tsv",
    EntityClass.ITEM: "vocab_items.tsv",
    EntityClass.ATTRIBUTE: "vocab_attributes.tsv",
}


@dataclass
class Checkpoint:
    model: EmbeddingModel
    vocabularies: dict[EntityClass, Vocabulary]


def _write_array(path: Path, values: np.ndarray) -> None:
    np.ascontiguousarray(values, dtype="<f4").tofile(path)


def _read_array(path: Path, count: int, dim: int) -> np.ndarray:
    if not path.exists():
        raise InputError(f"checkpoint array not found: {path}")
    values = np.fromfile(path, dtype="<f4")
    if values.size != count * dim:
        raise InputError(f"{path}: expected {count}x{dim} floats, found {values.size}")
    return values.reshape(count, dim).astype(np.float64)


def save_checkpoint(model: EmbeddingModel, vocabularies: dict[EntityClass, Vocabulary], directory: PathLike) -> Path:
    directory = Path(directory)
    staging = staging_directory(directory)
    try:
        config = model.config
        manifest = {
            "version": CHECKPOINT_VERSION,
            "family": model.family,
            "dim": config.dim,
            "tau": repr(float(config.temps.intersection_temp)),
            "nu": repr(float(config.temps.volume_temp)),
        }
        for cls in ENTITY_ORDER:
            manifest[f"count.{cls.value}"] = model.count(cls)
        manifest["seed"] = config.seed
        write_manifest(staging / "manifest.txt", manifest)

        for cls, name in VOCAB_FILES.items():
            vocabularies[cls].write(staging / name)
        for name, values in model.parameters().items():
            _write_array(staging / f"{name}.f32le", values)
        replace_directory(staging, directory)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    logger.debug(f"Checkpoint saved to {directory}")
    return directory


def load_checkpoint(directory: PathLike) -> Checkpoint:
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f"checkpoint directory not found: {directory}")
    manifest = read_manifest(directory / "manifest.txt")
    if int(manifest.get("version", -1)) != CHECKPOINT_VERSION:
        raise InputError(f"{directory}: unsupported checkpoint version {manifest.get('version')}")

    try:
        family = manifest["family"]
        dim = int(manifest["dim"])
        temps = GumbelTemps(float(manifest["tau"]), float(manifest["nu"]))
        counts = {cls: int(manifest[f"count.{cls.value}"]) for cls in ENTITY_ORDER}
        seed = int(manifest["seed"])
    except KeyError as e:
        raise InputError(f"{directory}/manifest.txt: missing key {e.args[0]}")
    config = ModelConfig(family=family, dim=dim, temps=temps, seed=seed)

    vocabularies = {cls: Vocabulary.read(cls.value, directory / name) for cls, name in VOCAB_FILES.items()}
    for cls in ENTITY_ORDER:
        if len(vocabularies[cls]) != counts[cls]:
            raise InputError(f"{directory}: vocabulary of {cls.value} does not match count.{cls.value}")

    if family == "box":
        tables = {
            cls: BoxParameterTable(
                cls,
                _read_array(directory / f"min.{cls.value}.f32le", counts[cls], dim),
                _read_array(directory / f"width.{cls.value}.f32le", counts[cls], dim),
            )
            for cls in ENTITY_ORDER
        }
        model = BoxModel(config, tables)
    else:
        tables = {
            cls: VectorParameterTable(cls, _read_array(directory / f"vec.{cls.value}.f32le", counts[cls], dim))
            for cls in ENTITY_ORDER
        }
        model = MFModel(config, tables)
    logger.info(f"Loaded {family} checkpoint from {directory} (D={dim})")
    return Checkpoint(model=model, vocabularies=vocabularies)
