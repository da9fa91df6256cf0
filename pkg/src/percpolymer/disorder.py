"""Space-time disorder omega(i, x), its log-moment generating function and tilts."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from . import rng
from .errors import ParameterError

LAWS = ("gaussian", "rademacher")


def _check_law(law: str):
    if law not in LAWS:
        raise ParameterError(f"unknown disorder law {law!r}; expected one of {LAWS}")


def log_mgf(law: str, beta: float) -> float:
    """log E[exp(beta * omega)]."""
    _check_law(law)
    if law == "gaussian":
        return 0.5 * beta * beta
    b = abs(beta)
    return b + math.log1p(math.exp(-2.0 * b)) - math.log(2.0)


def log_mgf_prime(law: str, beta: float) -> float:
    _check_law(law)
    if law == "gaussian":
        return float(beta)
    return math.tanh(beta)


def tilted_mean(law: str, delta: float) -> float:
    """Mean of one site under the law reweighted by exp(-delta * omega)."""
    _check_law(law)
    return -delta if law == "gaussian" else -math.tanh(delta)


def delta_n(n: float) -> float:
    """Tilt strength 1 / max((log n)^(7/4), 1)."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    return 1.0 / max(math.log(n) ** 1.75, 1.0)


def tilted_site_factor(law: str, beta: float, delta: float) -> float:
    """exp(-Lambda(beta)) times the tilted mean of exp(beta * omega) at one site."""
    return math.exp(log_mgf(law, beta - delta) - log_mgf(law, beta) - log_mgf(law, -delta))


def log_radon_nikodym(law: str, delta: float, values) -> float:
    """log of dP~/dP at the realised values: sum of (-delta*omega - Lambda(-delta))."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return 0.0
    return float(-delta * values.sum() - values.size * log_mgf(law, -delta))


def holder_cost(law: str, alpha: float, delta: float, n_sites: int) -> float:
    """Exact value of E~[(dP/dP~)^(1/(1-alpha))]^(1-alpha) for a tilt on ``n_sites`` sites.

    Per site E~[exp(q(delta*w + Lambda(-delta)))] = exp((q-1)Lambda(-delta) + Lambda((q-1)delta))
    with q = 1/(1-alpha).
    """
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    r = alpha / (1.0 - alpha)
    per_site = r * log_mgf(law, -delta) + log_mgf(law, r * delta)
    return math.exp((1.0 - alpha) * n_sites * per_site)


@dataclass(frozen=True)
class TiltRegion:
    """Space-time block ``{start, ..., start+length} x vertices``."""

    start: int
    length: int
    vertices: frozenset

    def contains(self, i: int, x: int) -> bool:
        return self.start <= i <= self.start + self.length and int(x) in self.vertices

    def mask(self, i: int, xs: np.ndarray) -> np.ndarray:
        if not (self.start <= i <= self.start + self.length):
            return np.zeros(len(xs), dtype=bool)
        return np.isin(xs, np.fromiter(self.vertices, dtype=np.int64))

    @property
    def size(self) -> int:
        return (self.length + 1) * len(self.vertices)

    def sites(self):
        for i in range(self.start, self.start + self.length + 1):
            for x in sorted(self.vertices):
                yield i, x


@numba.njit(cache=True)
def _gaussian_layer(key, xs):
    out = np.empty(xs.shape[0], dtype=np.float64)
    for k in range(xs.shape[0]):
        c = np.int64(2) * xs[k]
        u1 = rng._unit(key, c)
        u2 = rng._unit(key, c + 1)
        out[k] = math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)
    return out


@numba.njit(cache=True)
def _two_point_layer(key, xs, thresholds):
    out = np.empty(xs.shape[0], dtype=np.float64)
    for k in range(xs.shape[0]):
        u = rng._unit(key, np.int64(2) * xs[k])
        out[k] = -1.0 if u < thresholds[k] else 1.0
    return out


@dataclass(frozen=True)
class EnvironmentField:
    """Deterministic field omega(i, x) keyed by ``(seed, i, vertex index)``.

    Inside the optional tilt region the generating law is changed: Gaussian
    values are shifted by ``-delta`` (same underlying draws), Rademacher
    values take -1 with probability e^delta / (e^delta + e^-delta).
    """

    law: str = "gaussian"
    seed: int = 0
    region: TiltRegion | None = None
    delta: float = 0.0

    def __post_init__(self):
        _check_law(self.law)

    def with_tilt(self, region: TiltRegion | None, delta: float) -> EnvironmentField:
        return EnvironmentField(self.law, self.seed, region, delta)

    def layer(self, i: int, xs) -> np.ndarray:
        """omega(i, x) for every vertex index in ``xs``."""
        if i < 0:
            raise ParameterError(f"time index must be >= 0, got {i}")
        xs = np.ascontiguousarray(xs, dtype=np.int64)
        key = rng.subkey(rng.key_of(self.seed), i)
        tilted = self.region.mask(i, xs) if self.region is not None and self.delta != 0 else None
        if self.law == "gaussian":
            out = _gaussian_layer(key, xs)
            if tilted is not None:
                out[tilted] -= self.delta
            return out
        thresholds = np.full(len(xs), 0.5)
        if tilted is not None:
            thresholds[tilted] = 1.0 / (1.0 + math.exp(-2.0 * self.delta))
        return _two_point_layer(key, xs, thresholds)

    def omega(self, i: int, x: int) -> float:
        return float(self.layer(i, np.array([x]))[0])

    def region_values(self) -> np.ndarray:
        """Values of the field over its tilt region, in ``TiltRegion.sites`` order."""
        if self.region is None:
            return np.zeros(0)
        verts = np.array(sorted(self.region.vertices), dtype=np.int64)
        return np.concatenate([
            self.layer(i, verts)
            for i in range(self.region.start, self.region.start + self.region.length + 1)
        ])
