"""Open tubes, good tubes and the tube-density statistic.

A tube of length ``m`` based at ``x`` in direction ``+e_a`` is the straight
run ``x, x+e_a, ..., x+m e_a``. It is *open* when its ``m`` edges are open,
every perpendicular edge at ``x+e_a, ..., x+m e_a`` is closed and the
forward edge beyond the tip is closed. Such a tube can only be entered
through its base. It is *good* when additionally every edge at l1-distance
exactly one from ``{x+e_a, ..., x+m e_a}`` is open.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import rng
from .errors import GeometryError, ParameterError
from .perc import (
    BondConfig,
    ClusterLabeling,
    Estimate,
    binomial_estimate,
    estimate_theta,
    get_box,
    label_clusters,
    sample_config,
)

E1 = (0, 1)

Edge = tuple[tuple[int, ...], int]


def all_directions(d: int) -> tuple[tuple[int, int], ...]:
    return tuple((a, s) for a in range(d) for s in (1, -1))


def tube_length(n: int, eps: float) -> int:
    """Integer part of ``eps * log n``."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    return int(math.floor(eps * math.log(n) + 1e-12))


def _unit(d: int, axis: int, sign: int = 1) -> tuple[int, ...]:
    e = [0] * d
    e[axis] = sign
    return tuple(e)


def _add(x, y):
    return tuple(a + b for a, b in zip(x, y))


def _edge(u, v) -> Edge:
    axis = next(a for a in range(len(u)) if u[a] != v[a])
    return (u, axis) if u[axis] < v[axis] else (v, axis)


@dataclass(frozen=True)
class ForcedEdges:
    open_required: tuple[Edge, ...]
    closed_required: tuple[Edge, ...]
    boundary: tuple[Edge, ...]


def forced_edge_sets(d: int, m: int, base=None, axis: int = 0, sign: int = 1, box=None) -> ForcedEdges:
    """Edges that decide whether the tube at ``base`` is open and good.

    Edges are ``(lower endpoint, axis)`` pairs. The boundary is found by brute
    enumeration of all edges around the tube and keeping those at l1-distance
    exactly one from the tube vertices other than the base.
    """
    if m < 1:
        raise ParameterError(f"tube length must be >= 1, got {m}")
    base = tuple(base) if base is not None else (0,) * d
    step = _unit(d, axis, sign)
    verts = [base]
    for _ in range(m + 1):
        verts.append(_add(verts[-1], step))
    tip_next = verts[m + 1]
    verts = verts[: m + 1]
    if box is not None and not (all(box.contains(v) for v in verts) and box.contains(tip_next)):
        raise GeometryError(f"tube of length {m} at {base} does not fit in the box")

    open_req = [_edge(verts[k], verts[k + 1]) for k in range(m)]
    closed_req = []
    for v in verts[1:]:
        for b in range(d):
            if b == axis:
                continue
            for s in (1, -1):
                closed_req.append(_edge(v, _add(v, _unit(d, b, s))))
    closed_req.append(_edge(verts[m], tip_next))

    inner = verts[1:]

    def dist(w):
        return min(sum(abs(a - b) for a, b in zip(w, v)) for v in inner)

    boundary = set()
    ring = {_add(v, _unit(d, b, s)) for v in inner for b in range(d) for s in (1, -1)}
    for w in ring:
        if dist(w) != 1:
            continue
        for b in range(d):
            for s in (1, -1):
                u = _add(w, _unit(d, b, s))
                if min(dist(w), dist(u)) == 1:
                    boundary.add(_edge(w, u))
    boundary.discard(_edge(verts[0], verts[1]))
    return ForcedEdges(tuple(open_req), tuple(closed_req), tuple(sorted(boundary)))


@lru_cache(maxsize=64)
def _boundary_template(d: int, m: int, axis: int, sign: int):
    fe = forced_edge_sets(d, m, axis=axis, sign=sign)
    lowers = np.array([e[0] for e in fe.boundary], dtype=np.int64).reshape(-1, d)
    axes = np.array([e[1] for e in fe.boundary], dtype=np.int64)
    return lowers, axes


def pattern_probability(d: int, m: int, p: float) -> float:
    """Probability that a fixed vertex bases an open tube (ignoring the cluster)."""
    return p**m * (1.0 - p) ** (2 * (d - 1) * m + 1)


def boundary_size(d: int, m: int) -> int:
    return len(forced_edge_sets(d, m).boundary)


@dataclass(frozen=True)
class Tube:
    base: tuple[int, ...]
    m: int
    axis: int = 0
    sign: int = 1
    good: bool = False

    @property
    def vertices(self) -> tuple[tuple[int, ...], ...]:
        step = _unit(len(self.base), self.axis, self.sign)
        out = [self.base]
        for _ in range(self.m):
            out.append(_add(out[-1], step))
        return tuple(out)

    def vertex_indices(self, box) -> np.ndarray:
        return np.array([box.index(v) for v in self.vertices], dtype=np.int64)

    @property
    def direction(self) -> str:
        return f"{'+' if self.sign > 0 else '-'}e{self.axis + 1}"


def _sl(d: int, axis: int, start: int, stop: int):
    s = [slice(None)] * d
    s[axis] = slice(start, stop)
    return tuple(s)


def _pad(arr: np.ndarray, axis: int, before: int, after: int) -> np.ndarray:
    widths = [(0, 0)] * arr.ndim
    widths[axis] = (before, after)
    return np.pad(arr, widths, constant_values=False)


def open_tube_mask(config: BondConfig, m: int, axis: int = 0, sign: int = 1) -> np.ndarray:
    """Boolean grid, True at every base of an open tube of length ``m`` (cluster not checked).

    Runs in O(vertices * m). Edges leaving the box count as closed.
    """
    if m < 1:
        raise ParameterError(f"tube length must be >= 1, got {m}")
    box = config.box
    d, side = box.d, box.side
    arrays = [config.axis_open(b) for b in range(d)]
    if sign < 0:
        arrays = [np.flip(arr, axis=axis) for arr in arrays]
    fwd = _pad(arrays[axis], axis, 0, 1)
    perp_closed = np.ones(box.shape, dtype=bool)
    for b in range(d):
        if b == axis:
            continue
        perp_closed &= ~_pad(arrays[b], b, 0, 1)
        perp_closed &= ~_pad(arrays[b], b, 1, 0)
    mask = np.zeros(box.shape, dtype=bool)
    span = side - m
    if span > 0:
        acc = ~fwd[_sl(d, axis, m, m + span)]
        for k in range(m):
            acc &= fwd[_sl(d, axis, k, k + span)]
        for k in range(1, m + 1):
            acc &= perp_closed[_sl(d, axis, k, k + span)]
        mask[_sl(d, axis, 0, span)] = acc
    if sign < 0:
        mask = np.flip(mask, axis=axis)
    return mask


def good_flags(config: BondConfig, bases: np.ndarray, m: int, axis: int = 0, sign: int = 1) -> np.ndarray:
    """For centred base coordinates ``bases`` (k, d), whether the whole outer boundary is open and in the box."""
    box = config.box
    bases = np.asarray(bases, dtype=np.int64).reshape(-1, box.d)
    if len(bases) == 0:
        return np.zeros(0, dtype=bool)
    lowers, axes = _boundary_template(box.d, m, axis, sign)
    pts = bases[:, None, :] + lowers[None, :, :]
    L = box.L
    inside = np.all((pts >= -L) & (pts <= L), axis=2)
    tip_ok = np.take_along_axis(pts, axes[None, :, None].repeat(len(bases), 0), axis=2)[..., 0] < L
    inside &= tip_ok
    ok = inside.copy()
    E = box.edges_per_axis
    mask = config.open_mask
    for b in range(box.d):
        sel = inside & (axes[None, :] == b)
        if not sel.any():
            continue
        pos = pts[sel] + L
        idx = b * E + np.ravel_multi_index(pos.T, box.edge_shape(b))
        ok[sel] = mask[idx]
    return ok.all(axis=1)


@dataclass(frozen=True)
class TubeCensus:
    m: int
    tubes: tuple[Tube, ...]
    directions: tuple[tuple[int, int], ...] = (E1,)
    n: int | None = None
    eps: float | None = None
    counts: dict = field(default_factory=dict)
    z: dict = field(default_factory=dict)

    @property
    def good_tubes(self) -> tuple[Tube, ...]:
        return tuple(t for t in self.tubes if t.good)


def parity_count(d: int, n: int, parity: str) -> int:
    """Number of vertices of B(0, n) whose coordinate sum has the given parity."""
    evens = n + 1 if n % 2 == 0 else n
    odds = 2 * n + 1 - evens
    total = (evens + odds) ** d
    diff = (evens - odds) ** d
    if parity == "even":
        return (total + diff) // 2
    if parity == "odd":
        return (total - diff) // 2
    if parity == "all":
        return total
    raise ParameterError(f"unknown parity {parity!r}")


def _parity_ok(coords: np.ndarray, parity: str) -> np.ndarray:
    s = coords.sum(axis=1) % 2
    if parity == "odd":
        return s == 1
    if parity == "even":
        return s == 0
    return np.ones(len(coords), dtype=bool)


def _candidates(config: BondConfig, m: int, axis: int, sign: int):
    mask = open_tube_mask(config, m, axis, sign)
    idx = np.flatnonzero(mask.ravel())
    coords = np.stack(np.unravel_index(idx, config.box.shape), axis=1) - config.box.L
    return idx, coords


def scan_open_tubes(config: BondConfig, labeling: ClusterLabeling, m: int,
                    axes=(E1,), n: int | None = None, eps: float | None = None) -> TubeCensus:
    """All open tubes of length ``m`` whose base is in the giant crossing cluster."""
    box = config.box
    tubes = []
    for axis, sign in axes:
        idx, coords = _candidates(config, m, axis, sign)
        keep = labeling.in_giant(idx) if len(idx) else np.zeros(0, dtype=bool)
        idx, coords = idx[keep], coords[keep]
        good = good_flags(config, coords, m, axis, sign)
        tubes.extend(
            Tube(tuple(int(c) for c in xyz), m, axis, sign, bool(g)) for xyz, g in zip(coords, good)
        )
    counts = {
        "odd": sum(1 for t in tubes if sum(t.base) % 2 == 1),
        "even": sum(1 for t in tubes if sum(t.base) % 2 == 0),
    }
    z = {}
    if n is not None:
        for parity in ("odd", "even"):
            hits = sum(
                1 for t in tubes
                if t.good and max(abs(c) for c in t.base) <= n and sum(t.base) % 2 == (parity == "odd")
            )
            z[parity] = hits / parity_count(box.d, n, parity)
    return TubeCensus(m, tuple(tubes), tuple(axes), n, eps, counts, z)


def good_tube_count(config: BondConfig, labeling: ClusterLabeling | None, n: int, m: int,
                    parity: str = "odd", axis: int = 0, sign: int = 1):
    """Count good open tubes based in ``B_parity(0, n)`` and in the giant cluster.

    ``labeling`` may be None; clusters are then only labelled when a good
    tube candidate exists. Returns ``(count, labeling)``.
    """
    if config.box.L < n:
        raise GeometryError(f"box radius {config.box.L} smaller than n={n}")
    idx, coords = _candidates(config, m, axis, sign)
    sel = np.all(np.abs(coords) <= n, axis=1) & _parity_ok(coords, parity)
    idx, coords = idx[sel], coords[sel]
    good = good_flags(config, coords, m, axis, sign)
    idx = idx[good]
    if len(idx) == 0:
        return 0, labeling
    if labeling is None:
        labeling = label_clusters(config)
    return int(np.count_nonzero(labeling.in_giant(idx))), labeling


def tube_density_stat(config: BondConfig, labeling: ClusterLabeling | None, n: int, eps: float,
                      parity: str = "odd") -> float:
    """Fraction of ``B_parity(0, n)`` that bases a good open tube of length ``[eps log n]`` in the giant cluster."""
    m = tube_length(n, eps)
    if m < 1:
        raise ParameterError(f"[eps log n] = {m}; need at least 1")
    count, _ = good_tube_count(config, labeling, n, m, parity)
    return count / parity_count(config.box.d, n, parity)


@dataclass(frozen=True)
class ThetaPrimeEstimate:
    value: float
    stderr: float
    lower_bound: float
    lower_bound_stderr: float
    conditional: Estimate
    theta: Estimate
    pattern_prob: float
    boundary_prob: float


def forced_config(config: BondConfig, fe: ForcedEdges) -> BondConfig:
    """Copy of ``config`` with the tube pattern and an open boundary imposed."""
    box = config.box
    mask = config.open_mask.copy()
    for lower, axis in fe.open_required + fe.boundary:
        mask[box.edge_index(lower, axis)] = True
    for lower, axis in fe.closed_required:
        mask[box.edge_index(lower, axis)] = False
    return BondConfig.from_open_mask(box, mask, config.p, config.seed)


def theta_prime_estimate(d: int, p: float, m: int, samples: int, seed: int,
                         L: int | None = None, theta_samples: int | None = None) -> ThetaPrimeEstimate:
    """Probability that the origin is in the crossing cluster and bases a good open tube.

    The tube pattern and the open boundary depend on disjoint edge sets with
    exactly known probabilities, so the estimator multiplies those exact
    factors by a Monte Carlo estimate of the crossing probability given the
    forced edges. The returned lower bound is the product of an independent
    estimate of theta(p) with the same exact factors.
    """
    if samples < 1:
        raise ParameterError("samples must be >= 1")
    if L is None:
        L = max(8, m + 4)
    box = get_box(d, L)
    fe = forced_edge_sets(d, m, box=box)
    for lower, axis in fe.boundary:
        upper = list(lower)
        upper[axis] += 1
        if not (box.contains(lower) and box.contains(upper)):
            raise GeometryError(f"tube boundary for m={m} leaves the box of radius {L}")
    p1 = pattern_probability(d, m, p)
    p2 = p ** len(fe.boundary)
    hits = 0
    for k in range(samples):
        cfg = forced_config(sample_config(d, L, p, rng.derive_seed(seed, "theta_prime", k)), fe)
        hits += label_clusters(cfg).origin_crossing
    cond = binomial_estimate(hits, samples)
    theta = estimate_theta(d, L, p, theta_samples or samples, rng.derive_seed(seed, "theta_hat"))
    scale = p1 * p2
    return ThetaPrimeEstimate(
        value=scale * cond.value,
        stderr=scale * cond.stderr,
        lower_bound=scale * theta.value,
        lower_bound_stderr=scale * theta.stderr,
        conditional=cond,
        theta=theta,
        pattern_prob=p1,
        boundary_prob=p2,
    )


@dataclass(frozen=True)
class ConcentrationRow:
    n: int
    m: int
    parity: str
    samples: int
    mean: float
    std: float
    deviation_frequency: float
    degenerate: bool


def concentration_experiment(d: int, p: float, eps: float, n_list, samples: int, seed: int,
                             L: int | None = None) -> list[ConcentrationRow]:
    """Spread of the tube density over independent configurations, per ``n`` and parity.

    A sample deviates when it differs from the empirical mean by more than half
    of that mean. ``degenerate`` marks rows where every sample was zero.
    """
    if samples < 1:
        raise ParameterError("samples must be >= 1")
    rows = []
    for n in n_list:
        m = tube_length(n, eps)
        if m < 1:
            raise ParameterError(f"[eps log n] = {m} for n={n}; need at least 1")
        radius = L if L is not None else n + m + 2
        if radius < n:
            raise GeometryError(f"box radius {radius} smaller than n={n}")
        values = {"odd": np.empty(samples), "even": np.empty(samples)}
        for k in range(samples):
            config = sample_config(d, radius, p, rng.derive_seed(seed, "concentration", n, k))
            labeling = None
            for parity in ("odd", "even"):
                count, labeling = good_tube_count(config, labeling, n, m, parity)
                values[parity][k] = count / parity_count(d, n, parity)
        for parity in ("odd", "even"):
            z = values[parity]
            mean = float(z.mean())
            std = float(z.std(ddof=1)) if samples > 1 else 0.0
            freq = float(np.mean(np.abs(z - mean) > 0.5 * mean)) if mean > 0 else 0.0
            rows.append(ConcentrationRow(n, m, parity, samples, mean, std, freq, bool(np.all(z == 0))))
    return rows


def census_records(census: TubeCensus) -> str:
    """One line per tube: base coordinates, direction, length and goodness."""
    lines = []
    for t in census.tubes:
        base = ",".join(str(c) for c in t.base)
        lines.append(f"base=({base}) axis={t.direction} m={t.m} good={int(t.good)}")
    return "\n".join(lines) + ("\n" if lines else "")
