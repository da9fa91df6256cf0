"""Simple random walk on the percolation configuration, the tube-dwelling event and exact exit-time DPs.

At each step the walk picks uniformly among the open edges at its position
(edges leaving the box do not exist); a vertex with no open edge holds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from . import rng
from .errors import ParameterError
from .perc import BondConfig, ClusterLabeling, Estimate, binomial_estimate, condition_on_origin
from .tubes import Tube, TubeCensus, scan_open_tubes, tube_length


@numba.njit(cache=True)
def _walk(table, start, n_steps, key):
    out = np.empty(n_steps + 1, dtype=np.int64)
    x = start
    out[0] = x
    width = table.shape[1]
    for t in range(1, n_steps + 1):
        deg = 0
        for c in range(width):
            if table[x, c] >= 0:
                deg += 1
        if deg > 0:
            pick = int(rng._unit(key, t) * deg)
            for c in range(width):
                if table[x, c] >= 0:
                    if pick == 0:
                        x = table[x, c]
                        break
                    pick -= 1
        out[t] = x
    return out


@numba.njit(cache=True)
def _hits(table, start, target, n, keys):
    # counts walks with X_n == target or X_{n+1} == target
    width = table.shape[1]
    hits = 0
    for s in range(keys.shape[0]):
        x = start
        key = keys[s]
        hit = n == 0 and x == target
        for t in range(1, n + 2):
            deg = 0
            for c in range(width):
                if table[x, c] >= 0:
                    deg += 1
            if deg > 0:
                pick = int(rng._unit(key, t) * deg)
                for c in range(width):
                    if table[x, c] >= 0:
                        if pick == 0:
                            x = table[x, c]
                            break
                        pick -= 1
            if t >= n and x == target:
                hit = True
        if hit:
            hits += 1
    return hits


def _as_index(box, v) -> int:
    if isinstance(v, (int, np.integer)):
        if not 0 <= int(v) < box.n_vertices:
            raise ParameterError(f"vertex index {v} outside the box")
        return int(v)
    return box.index(tuple(v))


@dataclass(frozen=True, eq=False)
class Trajectory:
    start: int
    steps: np.ndarray
    seed: int

    @property
    def n_steps(self) -> int:
        return len(self.steps) - 1

    def prefix(self, n: int) -> Trajectory:
        return Trajectory(self.start, self.steps[: n + 1], self.seed)

    def to_text(self, box) -> str:
        lines = [f"{t} " + " ".join(str(c) for c in box.coords(v)) for t, v in enumerate(self.steps)]
        return "\n".join(lines) + "\n"


def run_walk(config: BondConfig, labeling: ClusterLabeling | None, start, n_steps: int, seed: int) -> Trajectory:
    if n_steps < 0:
        raise ParameterError("n_steps must be >= 0")
    x0 = _as_index(config.box, start)
    steps = _walk(config.neighbor_table, np.int64(x0), np.int64(n_steps), rng.key_of(seed))
    return Trajectory(x0, steps, int(seed))


@dataclass(frozen=True)
class DwellRecord:
    found: bool
    j: int = -1
    tube: Tube | None = None
    run: int = 0


def detect_dwell(trajectory: Trajectory, census: TubeCensus, box, m: int | None = None,
                 threshold: int | None = None) -> DwellRecord:
    """Earliest maximal run of at least ``threshold`` steps inside one tube's vertex set.

    ``j`` is the first time of the run; a run that starts after time 0 enters
    through the base, so ``X_j`` is the base. Ties between tubes sharing a
    base go to the tube listed first in the census.
    """
    m = census.m if m is None else m
    if m != census.m:
        raise ParameterError(f"census built with m={census.m}, asked for m={m}")
    threshold = m**3 if threshold is None else threshold
    steps = trajectory.steps
    if len(census.tubes) == 0 or threshold > len(steps) - 1:
        return DwellRecord(False)
    owners: dict[int, list[int]] = {}
    tube_verts = []
    for k, tube in enumerate(census.tubes):
        verts = tube.vertex_indices(box)
        tube_verts.append(verts)
        for v in verts:
            owners.setdefault(int(v), []).append(k)
    visited = np.unique(steps)
    touched = sorted({k for v in visited for k in owners.get(int(v), ())})
    best = None
    for k in touched:
        inside = np.isin(steps, tube_verts[k])
        edges = np.diff(np.concatenate(([0], inside.view(np.int8), [0])))
        starts = np.flatnonzero(edges == 1)
        ends = np.flatnonzero(edges == -1) - 1
        runs = ends - starts
        ok = np.flatnonzero(runs >= threshold)
        if len(ok):
            cand = (int(starts[ok[0]]), k, int(runs[ok[0]]))
            if best is None or cand[:2] < best[:2]:
                best = cand
    if best is None:
        return DwellRecord(False)
    j, k, run = best
    return DwellRecord(True, j, census.tubes[k], run)


@dataclass(frozen=True)
class AnCurvePoint:
    n: int
    m: int
    estimate: Estimate


def estimate_An_curve(d: int, L: int, p: float, n_list, eps: float, samples: int, seed: int,
                      max_attempts: int = 1000, m: int | None = None) -> list[AnCurvePoint]:
    """Probability of the tube-dwelling event for several horizons on shared samples.

    Sample ``k`` uses one conditioned configuration and one walk of length
    ``max(n_list)``; shorter horizons read prefixes of that walk, so the
    estimates are coupled across ``n``.
    """
    if samples < 1:
        raise ParameterError("samples must be >= 1")
    n_list = sorted(int(n) for n in n_list)
    ms = [m if m is not None else tube_length(n, eps) for n in n_list]
    for n, mm in zip(n_list, ms):
        if mm < 1:
            raise ParameterError(f"[eps log n] = {mm} for n={n}; need at least 1")
    hits = [0] * len(n_list)
    for k in range(samples):
        cs = condition_on_origin(d, L, p, rng.derive_seed(seed, "An-config", k), max_attempts)
        walk = run_walk(cs.config, cs.labeling, cs.config.box.origin, n_list[-1],
                        rng.derive_seed(seed, "An-walk", k))
        censuses = {}
        for idx, (n, mm) in enumerate(zip(n_list, ms)):
            if mm**3 > n:
                continue
            if mm not in censuses:
                censuses[mm] = scan_open_tubes(cs.config, cs.labeling, mm)
            rec = detect_dwell(walk.prefix(n), censuses[mm], cs.config.box)
            hits[idx] += rec.found
    return [AnCurvePoint(n, mm, binomial_estimate(h, samples)) for n, mm, h in zip(n_list, ms, hits)]


def estimate_An_prob(d: int, L: int, p: float, n: int, eps: float, samples: int, seed: int,
                     max_attempts: int = 1000) -> Estimate:
    return estimate_An_curve(d, L, p, [n], eps, samples, seed, max_attempts)[0].estimate


def exit_time_tail_1d(K: int, T: int) -> float:
    """P_0[tau_K >= T] for simple random walk on Z, tau_K the first time outside {-K..K}.

    Equals the surviving mass of the killed walk after ``T - 1`` steps.
    """
    if K < 1 or T < 0:
        raise ParameterError("need K >= 1 and T >= 0")
    if T == 0:
        return 1.0
    v = np.zeros(2 * K + 1)
    v[K] = 1.0
    log_scale = 0.0
    for _ in range(T - 1):
        w = np.zeros_like(v)
        w[1:] += 0.5 * v[:-1]
        w[:-1] += 0.5 * v[1:]
        v = w
        s = v.sum()
        if s == 0.0:
            return 0.0
        if s < 1e-200:
            v /= s
            log_scale += math.log(s)
    return float(math.exp(log_scale + math.log(v.sum())))


def exit_time_table(Ks, power: int = 3) -> list[tuple[int, int, float]]:
    return [(K, K**power, exit_time_tail_1d(K, K**power)) for K in Ks]


def _restricted_kernel(config: BondConfig, verts: np.ndarray) -> np.ndarray:
    """Walk kernel on ``verts``; mass leaving the set is dropped."""
    table = config.neighbor_table
    pos = {int(v): k for k, v in enumerate(verts)}
    P = np.zeros((len(verts), len(verts)))
    for k, v in enumerate(verts):
        nbrs = table[v][table[v] >= 0]
        if len(nbrs) == 0:
            P[k, k] = 1.0
            continue
        for y in nbrs:
            if int(y) in pos:
                P[k, pos[int(y)]] += 1.0 / len(nbrs)
    return P


def tube_stay_probability(config: BondConfig, tube: Tube, start_vertex, T: int) -> float:
    """P[X_0, ..., X_T all in V(tube)] for the walk started at ``start_vertex``."""
    if T < 0:
        raise ParameterError("T must be >= 0")
    box = config.box
    verts = tube.vertex_indices(box)
    x0 = _as_index(box, start_vertex)
    where = np.flatnonzero(verts == x0)
    if len(where) == 0:
        raise ParameterError("start vertex is not in the tube")
    P = _restricted_kernel(config, verts)
    v = np.zeros(len(verts))
    v[where[0]] = 1.0
    for _ in range(T):
        v = v @ P
    return float(v.sum())


def heat_kernel_probe(config: BondConfig, labeling: ClusterLabeling | None, x, y, n: int,
                      samples: int, seed: int) -> Estimate:
    """Monte Carlo estimate of P_x[X_n = y or X_{n+1} = y]."""
    if samples < 1 or n < 0:
        raise ParameterError("need samples >= 1 and n >= 0")
    box = config.box
    xi, yi = _as_index(box, x), _as_index(box, y)
    keys = np.array([rng.key_of(rng.derive_seed(seed, "heat", s)) for s in range(samples)], dtype=np.uint64)
    hits = _hits(config.neighbor_table, np.int64(xi), np.int64(yi), np.int64(n), keys)
    return binomial_estimate(int(hits), samples)


@dataclass(frozen=True)
class HeatKernelFit:
    c: float
    c_prime: float
    violations: int
    zeros: int
    points: int


def fit_heat_kernel(records, d: int, quantile: float = 0.05) -> HeatKernelFit:
    """Fit ``c n^(-d/2) exp(-c' r^2 / n)`` below the estimates.

    ``records`` holds ``(r2, n, estimate)`` triples. ``c'`` comes from a least
    squares slope of ``log P + (d/2) log n`` against ``r^2/n``; ``c`` is the
    lower ``quantile`` of the residual intercepts. Zero estimates are not
    fitted and are reported separately.
    """
    recs = [(r2, n, q) for r2, n, q in records if n > 0]
    pos = [(r2, n, q) for r2, n, q in recs if q > 0]
    zeros = len(recs) - len(pos)
    if len(pos) < 2:
        return HeatKernelFit(float("nan"), float("nan"), 0, zeros, len(recs))
    xs = np.array([r2 / n for r2, n, _ in pos])
    ys = np.array([math.log(q) + 0.5 * d * math.log(n) for _, n, q in pos])
    if np.ptp(xs) > 0:
        slope = float(np.polyfit(xs, ys, 1)[0])
    else:
        slope = 0.0
    c_prime = max(-slope, 0.0)
    intercepts = ys + c_prime * xs
    log_c = float(np.quantile(intercepts, quantile))
    violations = int(np.sum(intercepts < log_c - 1e-12)) + zeros
    return HeatKernelFit(math.exp(log_c), c_prime, violations, zeros, len(recs))
