"""Checkpoint container: ``params.bin`` (raw little-endian float64, arrays
back to back) plus ``manifest.json`` describing names, shapes and offsets.

Both files are byte-for-byte deterministic for identical inputs.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import Path

import numpy as np

from .data import Normalizer
from .exceptions import DataFormatError
from .model import PARAM_ORDER
from .tensor import Tensor
from .training import TrainConfig, TrainResult

FORMAT_VERSION = 1
DTYPE = "<f8"
PARAMS_FILE = "params.bin"
MANIFEST_FILE = "manifest.json"


def config_dict(config: TrainConfig) -> dict:
    out = dataclasses.asdict(config)
    out["split"] = list(config.split)
    return out


def config_digest(config: TrainConfig) -> str:
    blob = json.dumps(config_dict(config), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _arrays(result: TrainResult) -> list[tuple[str, np.ndarray]]:
    items = [(f"param/{k}", result.params[k].data) for k in PARAM_ORDER]
    items += [("normalizer/min", result.normalizer.min_), ("normalizer/max", result.normalizer.max_),
              ("population", result.population)]
    if result.static_graph is not None:
        items.append(("static_graph", result.static_graph))
    return items


def save_checkpoint(result: TrainResult, directory) -> dict[str, str]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name, arr in _arrays(result):
        raw = np.ascontiguousarray(arr, dtype=DTYPE).tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    manifest = {
        "format_version": FORMAT_VERSION,
        "dtype": DTYPE,
        "arrays": entries,
        "params_sha256": hashlib.sha256(payload).hexdigest(),
        "seed": result.config.seed,
        "config": config_dict(result.config),
        "config_sha256": config_digest(result.config),
        "normalizer_eps": result.normalizer.eps,
        "splits": [[r.start, r.stop] for r in result.splits],
        "best_epoch": result.best_epoch,
    }
    paths = {"params": str(directory / PARAMS_FILE), "manifest": str(directory / MANIFEST_FILE)}
    Path(paths["params"]).write_bytes(payload)
    Path(paths["manifest"]).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return paths


def load_checkpoint(directory) -> TrainResult:
    directory = Path(directory)
    mpath, ppath = directory / MANIFEST_FILE, directory / PARAMS_FILE
    try:
        manifest = json.loads(mpath.read_text())
        payload = ppath.read_bytes()
    except FileNotFoundError as exc:
        raise DataFormatError(f"incomplete checkpoint: {exc.filename} is missing") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{mpath}: invalid JSON ({exc})") from exc
    if manifest.get("format_version") != FORMAT_VERSION or manifest.get("dtype") != DTYPE:
        raise DataFormatError(f"{mpath}: unsupported checkpoint format")
    if hashlib.sha256(payload).hexdigest() != manifest["params_sha256"]:
        raise DataFormatError(f"{ppath}: checksum does not match the manifest")
    arrays = {}
    for e in manifest["arrays"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        if e["nbytes"] != 8 * count or e["offset"] + e["nbytes"] > len(payload):
            raise DataFormatError(f"{mpath}: bad extent for array {e['name']!r}")
        flat = np.frombuffer(payload, dtype=DTYPE, count=count, offset=e["offset"])
        arrays[e["name"]] = flat.reshape(e["shape"]).astype(np.float64)
    cfg = dict(manifest["config"])
    cfg["split"] = tuple(cfg["split"])
    config = TrainConfig(**cfg)
    if config_digest(config) != manifest["config_sha256"]:
        raise DataFormatError(f"{mpath}: config digest mismatch")
    try:
        params = {k: Tensor(arrays[f"param/{k}"], requires_grad=True) for k in PARAM_ORDER}
        normalizer = Normalizer(arrays["normalizer/min"], arrays["normalizer/max"], manifest["normalizer_eps"])
        population = arrays["population"]
    except KeyError as exc:
        raise DataFormatError(f"{mpath}: missing array {exc}") from exc
    splits = tuple(range(a, b) for a, b in manifest["splits"])
    return TrainResult(params, config, normalizer, population, splits, arrays.get("static_graph"),
                       [], manifest["best_epoch"])
