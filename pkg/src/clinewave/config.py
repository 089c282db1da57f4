"""TOML run configuration: one model section plus one task section."""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .model import (BioParams, ConstantKernel, ModelError, ModelParams, QuadraticGrowth,
                    TabulatedGrowth, rescale_bio)

TASKS = ("eigen", "wave", "simulate", "sweep")


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry when known."""

    def __init__(self, msg: str, key: str | None = None, line: int | None = None):
        super().__init__(msg)
        self.key = key
        self.line = line


@dataclass(frozen=True)
class RunConfig:
    task: str
    model: dict
    section: dict
    out: Path | None = None
    seed: int = 0
    raw: dict = field(default_factory=dict, repr=False)

    def params(self) -> ModelParams:
        return build_model(self.model)


def _num(sec: dict, key: str, prefix: str, default=None, positive=False, allow_zero=True):
    if key not in sec:
        if default is None:
            raise ConfigError(f"missing key '{prefix}.{key}'", f"{prefix}.{key}")
        return default
    v = sec[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"'{prefix}.{key}' must be a number", f"{prefix}.{key}")
    v = float(v)
    if positive and not (v > 0 or (allow_zero and v == 0)):
        raise ConfigError(f"'{prefix}.{key}' must be {'>= 0' if allow_zero else '> 0'}",
                          f"{prefix}.{key}")
    return v


def build_model(m: dict) -> ModelParams:
    """Model from a ``[model]`` table: quadratic (A, B), tabulated (z, r) or ``[model.bio]``."""
    try:
        if "bio" in m:
            b = m["bio"]
            keys = ("sigma_x", "sigma_m", "r_max", "V_s", "b_cline", "K_cap")
            vals = {k: _num(b, k, "model.bio") for k in keys}
            return rescale_bio(BioParams(**vals))[0]
        B = _num(m, "B", "model", 0.0, positive=True)
        k = _num(m, "k", "model", 1.0, positive=True, allow_zero=False)
        if "z" in m or "r" in m:
            if "z" not in m or "r" not in m:
                raise ConfigError("tabulated model needs both 'model.z' and 'model.r'", "model.z")
            delta = _num(m, "delta", "model", positive=True, allow_zero=False)
            growth = TabulatedGrowth(tuple(m["z"]), tuple(m["r"]), delta)
        else:
            A = _num(m, "A", "model", positive=True, allow_zero=False)
            rmax = _num(m, "rmax", "model", 1.0, positive=True, allow_zero=False)
            delta = m.get("delta")
            growth = QuadraticGrowth(rmax, A, None if delta is None else float(delta))
        return ModelParams(growth, ConstantKernel(k), B)
    except ModelError as e:
        raise ConfigError(str(e), "model") from e


def parse_config(text: str, task: str | None = None, out: str | Path | None = None) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        line = getattr(e, "lineno", None)
        raise ConfigError(f"TOML parse error: {e}", line=line) from e
    declared = raw.get("task")
    if task is None:
        task = declared
    elif declared is not None and declared != task:
        raise ConfigError(f"config declares task '{declared}' but '{task}' was requested", "task")
    if task not in TASKS:
        raise ConfigError(f"task must be one of {', '.join(TASKS)}", "task")
    if "model" not in raw and task != "sweep":
        raise ConfigError("missing section 'model'", "model")
    model = raw.get("model", {})
    if not isinstance(model, dict):
        raise ConfigError("'model' must be a table", "model")
    section = raw.get(task, {})
    if not isinstance(section, dict):
        raise ConfigError(f"'{task}' must be a table", task)
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("'seed' must be an integer", "seed")
    if out is None and "output" in raw:
        out = raw["output"]
    cfg = RunConfig(task, model, section, Path(out) if out is not None else None, seed, raw)
    if task != "sweep" or model:
        cfg.params()  # validate early
    return cfg


def load_config(path: str | Path, task: str | None = None, out: str | Path | None = None) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e}") from e
    return parse_config(text, task, out)
