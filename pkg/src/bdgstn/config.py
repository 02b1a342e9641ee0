"""YAML run configuration with strict key checking."""

from __future__ import annotations

import copy
import os
from dataclasses import fields
from pathlib import Path

import yaml

from .exceptions import ConfigurationError
from .model import ABLATIONS, GRAPH_MODES
from .simulator import SimConfig
from .training import TrainConfig

OUTPUT_ENV = "BDGSTN_OUTPUT_DIR"

_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
_SIM_KEYS = {f.name for f in fields(SimConfig)}

DEFAULTS: dict = {
    "data": {"series": None, "meta": None, "adjacency": None},
    "simulate": {},
    "train": {},
    "output": {"dir": None},
    "eval": {"checkpoint": None, "split": "test"},
    "ablate": {"graph_modes": list(GRAPH_MODES), "ablations": [a for a in ABLATIONS if a != "none"]},
    "report": {"checkpoint": None, "split": "test"},
    "compare": {"runs": []},
}

_PATH_KEYS = (("data", "series"), ("data", "meta"), ("data", "adjacency"),
              ("eval", "checkpoint"), ("report", "checkpoint"))


class ConfigKeyError(ConfigurationError):
    """Unknown or malformed configuration key; ``key`` is the dotted name."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _check_keys(raw: dict) -> None:
    if not isinstance(raw, dict):
        raise ConfigKeyError("<root>", "configuration must be a mapping of sections")
    for section, body in raw.items():
        if section not in DEFAULTS:
            raise ConfigKeyError(str(section), "unknown section")
        if body is None:
            continue
        if not isinstance(body, dict):
            raise ConfigKeyError(section, "section must be a mapping")
        allowed = {"train": _TRAIN_KEYS, "simulate": _SIM_KEYS}.get(section, set(DEFAULTS[section]))
        for key in body:
            if key not in allowed:
                raise ConfigKeyError(f"{section}.{key}", "unknown key")


def load_config(path=None, base_dir=None) -> dict:
    """Merge a YAML file over the defaults.

    Relative paths are resolved against the config file's directory and must
    exist. ``BDGSTN_OUTPUT_DIR`` overrides ``output.dir``.
    """
    raw: dict = {}
    if path is not None:
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from exc
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"{path}: invalid YAML ({exc})") from exc
        base_dir = path.parent if base_dir is None else base_dir
    _check_keys(raw)
    cfg = copy.deepcopy(DEFAULTS)
    for section, body in raw.items():
        cfg[section].update(body or {})

    base = Path(base_dir) if base_dir is not None else Path.cwd()
    for section, key in _PATH_KEYS:
        value = cfg[section][key]
        if value is None:
            continue
        p = Path(value)
        p = p if p.is_absolute() else base / p
        if not p.exists():
            raise ConfigKeyError(f"{section}.{key}", f"path does not exist: {p}")
        cfg[section][key] = str(p)
    cfg["compare"]["runs"] = [str(r if Path(r).is_absolute() else base / r) for r in cfg["compare"]["runs"]]
    if (cfg["data"]["series"] is None) != (cfg["data"]["meta"] is None):
        raise ConfigKeyError("data.series" if cfg["data"]["series"] is None else "data.meta",
                             "series and meta must be given together")
    env = os.environ.get(OUTPUT_ENV)
    if env:
        cfg["output"]["dir"] = env
    elif cfg["output"]["dir"] is not None and not Path(cfg["output"]["dir"]).is_absolute():
        cfg["output"]["dir"] = str(base / cfg["output"]["dir"])
    return cfg


def train_config(cfg: dict, **overrides) -> TrainConfig:
    body = dict(cfg["train"])
    if "split" in body:
        body["split"] = tuple(body["split"])
    body.update(overrides)
    try:
        return TrainConfig(**body)
    except TypeError as exc:
        raise ConfigurationError(f"train: {exc}") from exc


def sim_config(cfg: dict) -> SimConfig:
    body = dict(cfg["simulate"])
    for key in ("pop_range", "beta_range", "gamma_range", "lat_range", "lon_range"):
        if key in body:
            body[key] = tuple(body[key])
    return SimConfig(**body)


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=False)
