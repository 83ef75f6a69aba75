"""MDL1 model persistence: a JSON manifest followed by float32 parameter
payloads, framed like the EMB1 embedding files.

Layout: 4 bytes ASCII "MDL1", u32-LE manifest length, manifest JSON (UTF-8),
then one float32-LE block per tensor in manifest order. Loading keeps the
manifest bytes verbatim so save(load(f)) is byte-identical.
"""

from __future__ import annotations

import json
import logging
import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .nn_core import MlpConfig, MlpModel

logger = logging.getLogger(__name__)

MDL_MAGIC = b"MDL1"


class ModelFileError(ValueError):
    pass


@dataclass
class ModelFile:
    manifest: dict
    arrays: dict[str, np.ndarray]  # float32, insertion order == payload order
    raw_manifest: bytes | None = None


def _manifest_for(model: MlpModel, stage: str, config_hash: str, metrics: dict) -> dict:
    tensors = [
        {"name": name, "shape": list(value.shape), "kind": "param"}
        for name, value in model.params.items()
    ]
    tensors += [
        {"name": name, "shape": list(value.shape), "kind": "buffer"}
        for name, value in model.buffers.items()
    ]
    cfg = model.config
    return {
        "format": "MDL1",
        "stage": stage,
        "config_hash": config_hash,
        "metrics": metrics,
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "mlp_config": {
            "input_dim": cfg.input_dim,
            "hidden": list(cfg.hidden),
            "output_dim": cfg.output_dim,
            "leaky_slope": cfg.leaky_slope,
            "use_batchnorm": cfg.use_batchnorm,
            "dropout_p": cfg.dropout_p,
        },
        "tensors": tensors,
    }


def save_model(
    model: MlpModel,
    path: str | Path,
    *,
    stage: str,
    config_hash: str = "",
    metrics: dict | None = None,
    extra: dict | None = None,
) -> None:
    """Write a model to a fresh MDL1 file (parameters stored as float32).

    ``extra`` entries are merged into the manifest top level (e.g. task or
    vectorizer kind for downstream consumers).
    """
    manifest = _manifest_for(model, stage, config_hash, metrics or {})
    if extra:
        manifest.update(extra)
    arrays = {**model.params, **model.buffers}
    file = ModelFile(
        manifest=manifest,
        arrays={name: np.asarray(arrays[name], dtype="<f4") for name in arrays},
    )
    save_model_file(file, path)


def save_model_file(file: ModelFile, path: str | Path) -> None:
    manifest_bytes = file.raw_manifest
    if manifest_bytes is None:
        manifest_bytes = json.dumps(file.manifest, sort_keys=True).encode("utf-8")
    chunks = [MDL_MAGIC, struct.pack("<I", len(manifest_bytes)), manifest_bytes]
    for entry in file.manifest["tensors"]:
        chunks.append(np.ascontiguousarray(file.arrays[entry["name"]], dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_model_file(path: str | Path) -> ModelFile:
    raw = Path(path).read_bytes()
    if raw[:4] != MDL_MAGIC:
        raise ModelFileError(f"{path}: expected magic {MDL_MAGIC!r}, got {raw[:4]!r}")
    (manifest_len,) = struct.unpack("<I", raw[4:8])
    manifest_bytes = raw[8 : 8 + manifest_len]
    manifest = json.loads(manifest_bytes.decode("utf-8"))

    arrays: dict[str, np.ndarray] = {}
    offset = 8 + manifest_len
    for entry in manifest["tensors"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * 4
        block = raw[offset : offset + nbytes]
        if len(block) < nbytes:
            raise ModelFileError(f"{path}: tensor {entry['name']} payload truncated")
        arrays[entry["name"]] = np.frombuffer(block, dtype="<f4").reshape(entry["shape"]).copy()
        offset += nbytes
    if offset != len(raw):
        raise ModelFileError(f"{path}: {len(raw) - offset} trailing bytes")
    return ModelFile(manifest=manifest, arrays=arrays, raw_manifest=manifest_bytes)


def model_from_file(file: ModelFile, expect_config_hash: str | None = None) -> MlpModel:
    """Rebuild an Eval-mode MlpModel from a loaded MDL1 file."""
    if expect_config_hash and file.manifest.get("config_hash") not in ("", expect_config_hash):
        logger.warning(
            "model config hash %s does not match expected %s",
            file.manifest.get("config_hash"),
            expect_config_hash,
        )
    mc = file.manifest["mlp_config"]
    config = MlpConfig(
        input_dim=mc["input_dim"],
        hidden=tuple(mc["hidden"]),
        output_dim=mc["output_dim"],
        leaky_slope=mc["leaky_slope"],
        use_batchnorm=mc["use_batchnorm"],
        dropout_p=mc["dropout_p"],
    )
    model = MlpModel(config, np.random.default_rng(0))
    params = {
        e["name"]: file.arrays[e["name"]].astype(np.float64)
        for e in file.manifest["tensors"]
        if e["kind"] == "param"
    }
    buffers = {
        e["name"]: file.arrays[e["name"]].astype(np.float64)
        for e in file.manifest["tensors"]
        if e["kind"] == "buffer"
    }
    model.load_state(params, buffers)
    return model.eval()


def load_model(path: str | Path, expect_config_hash: str | None = None) -> MlpModel:
    return model_from_file(load_model_file(path), expect_config_hash)
