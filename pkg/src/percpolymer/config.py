"""Run configuration: a small ``key = value`` text format with comma-separated grids."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .disorder import LAWS
from .errors import ConfigError

EXPERIMENTS = ("percolate", "tubes", "walk", "polymer", "com")

MODES = {
    "percolate": ("theta",),
    "tubes": ("census", "concentration", "theta-prime"),
    "walk": ("an", "heat", "exit"),
    "polymer": ("martingale", "moments", "scan"),
    "com": ("single",),
}


@dataclass
class RunConfig:
    """Parameters of one experiment run. Grids are stored as ascending tuples."""

    experiment: str = "percolate"
    mode: str = ""
    d: int = 3
    L: int = 12
    p: tuple = (0.6,)
    beta: tuple = (0.5,)
    alpha: float = 0.5
    eps: float = 0.3
    n: tuple = (10,)
    m: int = 0
    K: tuple = (10, 14, 18, 22)
    law: str = "gaussian"
    samples: int = 100
    env_samples: int = 100
    cluster_samples: int = 1
    seed: int = 0
    max_attempts: int = 1000
    out: str = ""
    tilt_j: int = 0
    tilt_base: tuple = ()
    tilt_m: int = 0
    tilt_delta: float = -1.0

    def __post_init__(self):
        if not self.mode:
            self.mode = MODES.get(self.experiment, ("",))[0]

    def validate(self) -> RunConfig:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment: unknown value {self.experiment!r}; expected one of {EXPERIMENTS}")
        if self.mode not in MODES[self.experiment]:
            raise ConfigError(f"mode: {self.mode!r} is not valid for {self.experiment}; "
                              f"expected one of {MODES[self.experiment]}")
        if self.d < 1:
            raise ConfigError(f"d: must be >= 1, got {self.d}")
        if self.L < 1:
            raise ConfigError(f"L: must be >= 1, got {self.L}")
        for name in ("p", "beta", "n", "K"):
            if len(getattr(self, name)) == 0:
                raise ConfigError(f"{name}: grid must not be empty")
        for p in self.p:
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"p: {p} is outside [0, 1]")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha: {self.alpha} is outside (0, 1)")
        if self.eps <= 0:
            raise ConfigError(f"eps: must be > 0, got {self.eps}")
        for n in self.n:
            if n < 0:
                raise ConfigError(f"n: {n} is negative")
        for k in self.K:
            if k < 1:
                raise ConfigError(f"K: {k} must be >= 1")
        if self.law not in LAWS:
            raise ConfigError(f"law: unknown value {self.law!r}; expected one of {LAWS}")
        for name in ("samples", "env_samples", "cluster_samples", "max_attempts"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1, got {getattr(self, name)}")
        if self.m < 0:
            raise ConfigError(f"m: must be >= 0, got {self.m}")
        if self.tilt_base and len(self.tilt_base) != self.d:
            raise ConfigError(f"tilt.base: expected {self.d} coordinates, got {len(self.tilt_base)}")
        if self.tilt_j < 0 or self.tilt_m < 0:
            raise ConfigError("tilt.j and tilt.m must be >= 0")
        return self

    def echo(self) -> list[tuple[str, str]]:
        """Key/value pairs in a stable order, grids comma-joined."""
        rows = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(_fmt(x) for x in v)
            rows.append((_KEY_OF_FIELD.get(f.name, f.name), _fmt(v)))
        return rows


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


_KEY_OF_FIELD = {"tilt_j": "tilt.j", "tilt_base": "tilt.base", "tilt_m": "tilt.m", "tilt_delta": "tilt.delta"}
_FIELD_OF_KEY = {_KEY_OF_FIELD.get(f.name, f.name): f.name for f in dataclasses.fields(RunConfig)}

_INT = {"d", "L", "m", "samples", "env_samples", "cluster_samples", "seed", "max_attempts", "tilt_j", "tilt_m"}
_FLOAT = {"alpha", "eps", "tilt_delta"}
_INT_GRID = {"n", "K"}
_FLOAT_GRID = {"p", "beta"}


def known_keys() -> list[str]:
    return sorted(_FIELD_OF_KEY)


def coerce(name: str, raw: str):
    """Convert the text ``raw`` for field ``name``; raises ValueError on bad input."""
    raw = raw.strip()
    if name in _INT:
        return int(raw)
    if name in _FLOAT:
        return float(raw)
    if name == "tilt_base":
        # a coordinate tuple, so order is kept
        return tuple(int(s) for s in raw.split(",") if s.strip())
    if name in _INT_GRID or name in _FLOAT_GRID:
        conv = int if name in _INT_GRID else float
        items = [s.strip() for s in raw.split(",") if s.strip()]
        return tuple(sorted(conv(s) for s in items))
    return raw


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_OF_KEY:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        name = _FIELD_OF_KEY[key]
        try:
            values[name] = coerce(name, raw)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {raw!r}") from None
    return RunConfig(**values).validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), str(path))


def override(cfg: RunConfig, **updates) -> RunConfig:
    """Copy of ``cfg`` with non-None ``updates`` applied (already coerced)."""
    changes = {k: v for k, v in updates.items() if v is not None}
    new = dataclasses.replace(cfg, **changes)
    if "experiment" in changes and "mode" not in changes and cfg.mode not in MODES.get(new.experiment, ()):
        new.mode = MODES.get(new.experiment, ("",))[0]
    return new.validate()
