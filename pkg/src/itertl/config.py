"""Run configuration: a flat `key = value` text format with environment
variable interpolation (`$VAR` / `${VAR}`), '#' comment lines, and strict
key checking. Defaults mirror IterationConfig exactly; command-line flags
override file values.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Tuple, Union

from .losses import RankingConfig
from .model import DecodingParams
from .pipeline import IterationConfig
from .scoring import FilterPolicy


class ConfigError(ValueError):
    """Invalid run configuration (unknown key, bad value, missing input)."""


_ITER_DEFAULTS = IterationConfig()


@dataclass
class RunConfig:
    """Declarative form of IterationConfig plus paths, backend and judge."""

    # paths and mode
    corpus: Optional[str] = None
    eval_corpus: Optional[str] = None
    output_dir: Optional[str] = None
    mode: str = "toy"
    checkpoint: Optional[str] = None
    # loop shape
    k: int = _ITER_DEFAULTS.k
    iterations: int = _ITER_DEFAULTS.iterations
    seed: int = _ITER_DEFAULTS.seed
    workers: Optional[int] = None
    # ranking loss
    alpha: float = 0.3
    beta: float = 0.2
    lam: float = 1.0
    # decoding
    train_temperature: float = 0.5
    train_top_p: float = 0.95
    max_tokens: int = 48
    eval_temperatures: Tuple[float, ...] = (0.0, 0.2, 0.5, 0.8)
    eval_top_p: float = 0.95
    eval_samples: int = _ITER_DEFAULTS.eval_samples
    k_list: Tuple[int, ...] = _ITER_DEFAULTS.k_list
    # data filter
    filter_enabled: bool = True
    strict_self_contained: bool = False
    penalty_value: float = -1.0
    # trainer
    epoch_cap: int = _ITER_DEFAULTS.epoch_cap
    step_size: float = _ITER_DEFAULTS.step_size
    batch_size: int = _ITER_DEFAULTS.batch_size
    order: int = _ITER_DEFAULTS.order
    early_stop: float = _ITER_DEFAULTS.early_stop
    accumulate_samples: bool = _ITER_DEFAULTS.accumulate_samples
    # remote backend
    backend_url: Optional[str] = None
    backend_timeout: float = 30.0
    backend_retries: int = 3
    backend_backoff: float = 0.5
    checkpoint_poll_interval: float = 2.0
    checkpoint_wait_timeout: float = 3600.0
    # judge
    judge_cmd: Optional[str] = None

    def iteration_config(self) -> IterationConfig:
        try:
            return IterationConfig(
                k=self.k,
                iterations=self.iterations,
                ranking=RankingConfig(alpha=self.alpha, beta=self.beta, lam=self.lam),
                train_decoding=DecodingParams(self.train_temperature, self.train_top_p,
                                              self.max_tokens),
                eval_decoding=tuple(DecodingParams(t, self.eval_top_p, self.max_tokens)
                                    for t in self.eval_temperatures),
                filter=(FilterPolicy(self.strict_self_contained, self.penalty_value)
                        if self.filter_enabled else None),
                seed=self.seed,
                workers=self.workers,
                epoch_cap=self.epoch_cap,
                step_size=self.step_size,
                batch_size=self.batch_size,
                order=self.order,
                early_stop=self.early_stop,
                accumulate_samples=self.accumulate_samples,
                eval_samples=self.eval_samples,
                k_list=self.k_list,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


_BOOL_VALUES = {"true": True, "yes": True, "1": True,
                "false": False, "no": False, "0": False}

# config-file key -> RunConfig attribute (identity for most; "lambda" is the
# config spelling of the ranking weight)
_KEY_TO_ATTR = {f.name: f.name for f in fields(RunConfig)}
del _KEY_TO_ATTR["lam"]
_KEY_TO_ATTR["lambda"] = "lam"


def _parse_bool(key: str, raw: str) -> bool:
    try:
        return _BOOL_VALUES[raw.strip().lower()]
    except KeyError:
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}") from None


def _parse_value(key: str, attr: str, raw: str):
    raw = raw.strip()
    hints = {
        "corpus": str, "eval_corpus": str, "output_dir": str, "mode": str,
        "checkpoint": str, "backend_url": str, "judge_cmd": str,
        "k": int, "iterations": int, "seed": int, "workers": int,
        "eval_samples": int, "epoch_cap": int, "batch_size": int, "order": int,
        "backend_retries": int,
        "alpha": float, "beta": float, "lam": float,
        "train_temperature": float, "train_top_p": float, "eval_top_p": float,
        "penalty_value": float, "step_size": float, "early_stop": float,
        "backend_timeout": float, "backend_backoff": float,
        "checkpoint_poll_interval": float, "checkpoint_wait_timeout": float,
        "max_tokens": int,
        "filter_enabled": bool, "strict_self_contained": bool,
        "accumulate_samples": bool,
        "eval_temperatures": "float_list", "k_list": "int_list",
    }
    hint = hints[attr]
    try:
        if hint is str:
            return raw
        if hint is bool:
            return _parse_bool(key, raw)
        if hint is int:
            return int(raw)
        if hint is float:
            value = float(raw)
            return value
        if hint == "float_list":
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if hint == "int_list":
            return tuple(int(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    raise AssertionError(f"unhandled hint for {attr}")


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    cfg = RunConfig()
    for line_number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{line_number}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        attr = _KEY_TO_ATTR.get(key)
        if attr is None:
            raise ConfigError(f"{source}:{line_number}: unknown key {key!r}")
        setattr(cfg, attr, _parse_value(key, attr, os.path.expandvars(raw)))
    if cfg.mode not in ("toy", "remote"):
        raise ConfigError(f"{source}: mode must be 'toy' or 'remote', got {cfg.mode!r}")
    return cfg


def load_config_file(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    return parse_config_text(text, source=str(path))
