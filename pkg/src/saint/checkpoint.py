"""Checkpoints: a JSON manifest next to one raw little-endian parameter file.

``save_checkpoint("runs/best", ...)`` writes ``runs/best.json`` and
``runs/best.bin``. The manifest records the schema hash, the model config and
the name -> {offset, shape, dtype} table; loading checks the byte count and,
when asked, the schema hash.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import TabularSchema
from .model import ModelConfig, SaintModel
from .storage import ArrayFileError, read_arrays, write_arrays

FORMAT = "saint-checkpoint/1"


class CheckpointError(IOError):
    pass


def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".json", ".bin"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".json"), p.with_name(p.name + ".bin")


@dataclass
class Checkpoint:
    manifest: dict
    arrays: dict[str, np.ndarray]

    @property
    def schema(self) -> TabularSchema:
        return TabularSchema.from_dict(self.manifest["schema"])

    @property
    def config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.manifest["model_config"])

    @property
    def schema_hash(self) -> str:
        return self.manifest["schema_hash"]

    def section(self, prefix: str) -> dict[str, np.ndarray]:
        """Arrays whose name starts with ``prefix``, with the prefix removed."""
        return {k[len(prefix):]: v for k, v in self.arrays.items() if k.startswith(prefix)}


def save_checkpoint(path, model: SaintModel, extra: dict[str, np.ndarray] | None = None,
                    meta: dict | None = None) -> Path:
    manifest_path, blob_path = _paths(path)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"model.{k}": v for k, v in model.state_dict().items()}
    for k, v in (extra or {}).items():
        arrays[k] = np.asarray(v)
    # parameters are stored at the precision they were trained in
    table = write_arrays(blob_path, arrays)
    manifest = {
        "format": FORMAT,
        "schema_hash": model.schema.hash(),
        "schema": model.schema.to_dict(),
        "model_config": model.config.to_dict(),
        "seed": model.seed,
        "parameters": table,
        "meta": meta or {},
    }
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest_path


def load_checkpoint(path, expected_schema_hash: str | None = None) -> Checkpoint:
    manifest_path, blob_path = _paths(path)
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint manifest {manifest_path}: {exc}") from exc
    if manifest.get("format") != FORMAT:
        raise CheckpointError(f"{manifest_path}: unrecognised format {manifest.get('format')!r}")
    if expected_schema_hash is not None and manifest["schema_hash"] != expected_schema_hash:
        raise CheckpointError(
            f"{manifest_path}: schema hash {manifest['schema_hash'][:12]} does not match "
            f"dataset schema {expected_schema_hash[:12]}"
        )
    try:
        arrays = read_arrays(blob_path, manifest["parameters"])
    except (OSError, ArrayFileError) as exc:
        raise CheckpointError(str(exc)) from exc
    return Checkpoint(manifest, arrays)


def model_from_checkpoint(ckpt: Checkpoint) -> SaintModel:
    model = SaintModel(ckpt.schema, ckpt.config, seed=ckpt.manifest.get("seed", 0))
    model.load_state_dict(ckpt.section("model."))
    return model
