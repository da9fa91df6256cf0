"""Partition functions of the directed polymer on the origin's cluster.

The normalised partition function is computed by a forward recursion over
time layers,

    u_0 = 1_{origin},  u_{k+1}(y) = sum_x u_k(x) r(x, y) exp(beta w(k+1, y) - Lambda(beta)),

and W_n = sum_y u_n(y). Layers are rescaled by their maximum after every step
and the logarithm of the scale is carried along.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import sparse

from . import rng
from .disorder import (
    EnvironmentField,
    TiltRegion,
    delta_n,
    holder_cost,
    log_mgf,
    log_radon_nikodym,
)
from .errors import GuardError, ParameterError
from .perc import BondConfig, ClusterLabeling, ConditionedSample, condition_on_origin
from .tubes import Tube, tube_length

BRUTE_FORCE_MAX_N = 8


@dataclass(frozen=True)
class Restriction:
    """Walk constraint: at ``base`` at time ``j`` and inside ``vertices`` for times ``j..j+window``."""

    j: int
    window: int
    base: int
    vertices: frozenset

    def allowed(self, k: int, x: int) -> bool:
        if k == self.j and x != self.base:
            return False
        if self.j <= k <= self.j + self.window and x not in self.vertices:
            return False
        return True


def tube_restriction(tube: Tube, box, j: int, window: int) -> Restriction:
    verts = tube.vertex_indices(box)
    return Restriction(j, window, int(verts[0]), frozenset(int(v) for v in verts))


@dataclass(frozen=True, eq=False)
class PolymerResult:
    n: int
    beta: float
    log_z: float
    log_w: float
    log_w_path: np.ndarray = field(repr=False)

    @property
    def w(self) -> float:
        return math.exp(self.log_w)


@dataclass(frozen=True, eq=False)
class ClusterOperator:
    """Walk kernel restricted to one cluster, as a sparse matrix acting on row vectors."""

    vertices: np.ndarray
    kernel_t: sparse.csr_matrix
    origin: int

    @classmethod
    def build(cls, config: BondConfig, labeling: ClusterLabeling, origin: int | None = None):
        box = config.box
        origin = box.origin if origin is None else origin
        verts = labeling.members(int(labeling.labels[origin]))
        local = np.full(box.n_vertices, -1, dtype=np.int64)
        local[verts] = np.arange(len(verts))
        table = config.neighbor_table[verts]
        deg = (table >= 0).sum(axis=1)
        rows, cols, vals = [], [], []
        for c in range(table.shape[1]):
            ok = table[:, c] >= 0
            rows.append(local[table[ok, c]])
            cols.append(np.flatnonzero(ok))
            vals.append(1.0 / deg[ok])
        iso = np.flatnonzero(deg == 0)
        rows.append(iso)
        cols.append(iso)
        vals.append(np.ones(len(iso)))
        n = len(verts)
        kt = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )
        return cls(verts, kt, int(local[origin]))


def _require_origin(labeling: ClusterLabeling):
    if not labeling.origin_in_giant:
        raise ParameterError("origin is not in the crossing giant cluster")


def partition_dp(config: BondConfig, labeling: ClusterLabeling, field: EnvironmentField, beta: float,
                 n: int, restriction: Restriction | None = None,
                 operator: ClusterOperator | None = None) -> PolymerResult:
    """Exact W_n by the forward recursion; ``restriction`` folds an event indicator into the layers."""
    _require_origin(labeling)
    if n < 0:
        raise ParameterError("n must be >= 0")
    lam = log_mgf(field.law, beta)
    if beta == 0.0 and restriction is None:
        # every weight is exp(0) = 1 and the kernel is stochastic, so W_k = 1 exactly
        return PolymerResult(n, beta, 0.0, 0.0, np.zeros(n + 1))
    op = operator or ClusterOperator.build(config, labeling)
    u = np.zeros(len(op.vertices))
    u[op.origin] = 1.0
    allowed = None
    if restriction is not None:
        allowed = np.isin(op.vertices, np.fromiter(restriction.vertices, dtype=np.int64))
        at_base = op.vertices == restriction.base

    def constrain(k, vec):
        if restriction is None:
            return vec
        if k == restriction.j:
            vec = np.where(at_base, vec, 0.0)
        if restriction.j <= k <= restriction.j + restriction.window:
            vec = np.where(allowed, vec, 0.0)
        return vec

    u = constrain(0, u)
    log_scale = 0.0
    path = np.empty(n + 1)
    path[0] = math.log(u.sum()) if u.sum() > 0 else -math.inf
    for k in range(1, n + 1):
        u = op.kernel_t @ u
        if beta != 0.0:
            u *= np.exp(beta * field.layer(k, op.vertices) - lam)
        u = constrain(k, u)
        top = u.max()
        if top > 0.0:
            u /= top
            log_scale += math.log(top)
            path[k] = log_scale + math.log(u.sum())
        else:
            path[k:] = -math.inf
            break
    log_w = float(path[n])
    return PolymerResult(n, beta, log_w + n * lam, log_w, path)


def partition_bruteforce(config: BondConfig, labeling: ClusterLabeling | None, field: EnvironmentField,
                         beta: float, n: int, restriction: Restriction | None = None) -> PolymerResult:
    """Explicit sum over every length-``n`` walk path from the origin."""
    if n > BRUTE_FORCE_MAX_N:
        raise GuardError(f"brute force limited to n <= {BRUTE_FORCE_MAX_N}, got {n}")
    if n < 0:
        raise ParameterError("n must be >= 0")
    box = config.box
    table = config.neighbor_table
    lam = log_mgf(field.law, beta)
    everything = np.arange(box.n_vertices)
    omega = [None] + [field.layer(i, everything) for i in range(1, n + 1)]
    x0 = box.origin

    # at beta = 0 the path weights are products of 1/deg, summed exactly as fractions
    exact = beta == 0.0
    one = Fraction(1) if exact else 1.0
    totals = [one * 0] * (n + 1)

    def step_targets(x):
        nbrs = [int(y) for y in table[x] if y >= 0]
        if not nbrs:
            return [(x, one)]
        return [(y, one / len(nbrs)) for y in nbrs]

    def visit(k, x, weight):
        if restriction is not None and not restriction.allowed(k, x):
            return
        totals[k] += weight
        if k == n:
            return
        for y, r in step_targets(x):
            visit(k + 1, y, weight * r if exact else weight * r * math.exp(beta * omega[k + 1][y] - lam))

    visit(0, x0, one)
    path = np.array([math.log(t) if t > 0 else -math.inf for t in totals])
    log_w = float(path[n])
    return PolymerResult(n, beta, log_w + n * lam, log_w, path)


@dataclass(frozen=True)
class MeanEstimate:
    mean: float
    stderr: float
    samples: int
    variance: float = 0.0

    @property
    def z(self) -> float:
        """Standardised distance of the mean from one."""
        if self.stderr == 0.0:
            return 0.0 if self.mean == 1.0 else math.copysign(math.inf, self.mean - 1.0)
        return (self.mean - 1.0) / self.stderr


def mean_estimate(values) -> MeanEstimate:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < 2:
        return MeanEstimate(float(v.mean()), 0.0, len(v), 0.0)
    var = float(v.var(ddof=1))
    return MeanEstimate(float(v.mean()), math.sqrt(var / len(v)), len(v), var)


def env_seed(seed: int, k: int) -> int:
    return rng.derive_seed(seed, "env", k)


def w_samples(config: BondConfig, labeling: ClusterLabeling, beta: float, n: int, env_samples: int,
              seed: int, law: str = "gaussian") -> np.ndarray:
    """log W_k paths for ``k = 0..n`` over independent environments, shape (env_samples, n+1)."""
    op = ClusterOperator.build(config, labeling)
    out = np.empty((env_samples, n + 1))
    for k in range(env_samples):
        field_ = EnvironmentField(law, env_seed(seed, k))
        out[k] = partition_dp(config, labeling, field_, beta, n, operator=op).log_w_path
    return out


def martingale_test(config: BondConfig, labeling: ClusterLabeling, beta: float, n: int, env_samples: int,
                    seed: int, law: str = "gaussian") -> MeanEstimate:
    """Mean of W_n over independent environments (should be one)."""
    if env_samples < 2:
        raise ParameterError("env_samples must be >= 2")
    paths = w_samples(config, labeling, beta, n, env_samples, seed, law)
    return mean_estimate(np.exp(paths[:, n]))


@dataclass(frozen=True)
class FracMomentEstimate:
    alpha: float
    beta: float
    n: int
    mean: float
    stderr: float
    samples: int


def w_alpha_matrix(samples_or_configs, alpha: float, beta: float, n_list, env_samples: int, seed: int,
                   law: str = "gaussian") -> np.ndarray:
    """W_n^alpha for every environment (rows) and every ``n`` in sorted ``n_list`` (columns).

    All horizons come from one DP run per environment, so columns are coupled.
    ``samples_or_configs`` is a ConditionedSample or a list of them; with a
    list, environment ``k`` is paired with cluster ``k mod len``.
    """
    if not 0.0 < alpha < 1.0:
        raise ParameterError(f"alpha must lie in (0, 1), got {alpha}")
    clusters = samples_or_configs if isinstance(samples_or_configs, (list, tuple)) else [samples_or_configs]
    n_list = sorted(int(n) for n in n_list)
    ops = [ClusterOperator.build(c.config, c.labeling) for c in clusters]
    vals = np.empty((env_samples, len(n_list)))
    for k in range(env_samples):
        c = clusters[k % len(clusters)]
        field_ = EnvironmentField(law, env_seed(seed, k))
        path = partition_dp(c.config, c.labeling, field_, beta, n_list[-1], operator=ops[k % len(ops)]).log_w_path
        vals[k] = np.exp(alpha * path[n_list])
    return vals


def fractional_moments(samples_or_configs, alpha: float, beta: float, n_list, env_samples: int, seed: int,
                       law: str = "gaussian") -> list[FracMomentEstimate]:
    """E[W_n^alpha] for each ``n`` in ``n_list``."""
    n_list = sorted(int(n) for n in n_list)
    vals = w_alpha_matrix(samples_or_configs, alpha, beta, n_list, env_samples, seed, law)
    out = []
    for col, n in enumerate(n_list):
        est = mean_estimate(vals[:, col])
        out.append(FracMomentEstimate(alpha, beta, n, est.mean, est.stderr, env_samples))
    return out


def fractional_moment(samples_or_configs, alpha: float, beta: float, n: int, env_samples: int, seed: int,
                      law: str = "gaussian") -> FracMomentEstimate:
    return fractional_moments(samples_or_configs, alpha, beta, [n], env_samples, seed, law)[0]


@dataclass(frozen=True)
class ChangeOfMeasureReport:
    n: int
    m: int
    j: int
    window: int
    alpha: float
    beta: float
    delta: float
    n_sites: int
    frac_moment: MeanEstimate
    restricted_mean: MeanEstimate
    tilted_mean: MeanEstimate
    reweighted_mean: MeanEstimate
    cost: float
    cost_mc: MeanEstimate
    bound: float
    bound_stderr: float

    @property
    def holds(self) -> bool:
        """Whether the direct fractional moment sits below the Hoelder bound within 3 stderr."""
        se = math.hypot(self.frac_moment.stderr, self.bound_stderr)
        return self.frac_moment.mean <= self.bound + 3.0 * se


def change_of_measure_experiment(config: BondConfig, labeling: ClusterLabeling, n: int, eps: float, j: int,
                                 tube: Tube, alpha: float, beta: float, env_samples: int, seed: int,
                                 law: str = "gaussian", delta: float | None = None,
                                 window: int | None = None) -> ChangeOfMeasureReport:
    """Fractional moment of the tube-restricted partition function against its tilted-measure bound.

    Reports (a) E[W_{n,j,x}^alpha], (b) E~[W_{n,j,x}] sampled under the tilted
    law together with the reweighted estimate E[W_{n,j,x} dP~/dP], (c) the
    exact and Monte Carlo Hoelder cost factor, and (d) the combined bound.
    """
    if env_samples < 2:
        raise ParameterError("env_samples must be >= 2")
    m = tube_length(n, eps)
    if tube.m != m:
        raise ParameterError(f"tube length {tube.m} differs from [eps log n] = {m}")
    window = m**3 if window is None else window
    if j < 0 or j + window > n:
        raise ParameterError(f"window {j}..{j + window} does not fit before n={n}")
    box = config.box
    restriction = tube_restriction(tube, box, j, window)
    if not labeling.in_giant(box.index(tube.base)):
        raise ParameterError("tube base is not in the origin's cluster")
    delta = delta_n(n) if delta is None else delta
    region = TiltRegion(j, window, restriction.vertices)
    op = ClusterOperator.build(config, labeling)

    frac, plain, tilted, reweighted, cost_terms = [], [], [], [], []
    q = 1.0 / (1.0 - alpha)
    for k in range(env_samples):
        base = EnvironmentField(law, env_seed(seed, k), region, 0.0)
        w = math.exp(partition_dp(config, labeling, base, beta, n, restriction, op).log_w)
        frac.append(w**alpha)
        plain.append(w)
        reweighted.append(w * math.exp(log_radon_nikodym(law, delta, base.region_values())))
        tfield = EnvironmentField(law, rng.derive_seed(seed, "tilted", k), region, delta)
        tilted.append(math.exp(partition_dp(config, labeling, tfield, beta, n, restriction, op).log_w))
        cost_terms.append(math.exp(-q * log_radon_nikodym(law, delta, tfield.region_values())))

    tilted_est = mean_estimate(tilted)
    cost = holder_cost(law, alpha, delta, region.size)
    bound = cost * tilted_est.mean**alpha
    bound_se = cost * alpha * tilted_est.mean ** (alpha - 1.0) * tilted_est.stderr if tilted_est.mean > 0 else 0.0
    cmc = mean_estimate(cost_terms)
    cost_mc = MeanEstimate(cmc.mean ** (1.0 - alpha),
                           (1.0 - alpha) * cmc.mean ** (-alpha) * cmc.stderr, cmc.samples)
    return ChangeOfMeasureReport(
        n=n, m=m, j=j, window=window, alpha=alpha, beta=beta, delta=delta, n_sites=region.size,
        frac_moment=mean_estimate(frac), restricted_mean=mean_estimate(plain), tilted_mean=tilted_est,
        reweighted_mean=mean_estimate(reweighted), cost=cost, cost_mc=cost_mc, bound=bound,
        bound_stderr=bound_se,
    )


@dataclass(frozen=True)
class ScanRow:
    beta: float
    n: int
    mean_log_w: float
    stderr_log_w: float
    mean_sqrt_w: float
    stderr_sqrt_w: float
    samples: int


def strong_disorder_scan(d: int, L: int, p: float, beta_grid, n_grid, env_samples: int, cluster_samples: int,
                         seed: int, law: str = "gaussian", max_attempts: int = 1000) -> list[ScanRow]:
    """Mean log W_n and mean W_n^(1/2) on a (beta, n) grid, with environments and clusters shared across beta."""
    if not beta_grid or not n_grid:
        raise ParameterError("grids must be nonempty")
    n_grid = sorted(int(n) for n in n_grid)
    clusters = [condition_on_origin(d, L, p, rng.derive_seed(seed, "scan-cluster", c), max_attempts)
                for c in range(cluster_samples)]
    ops = [ClusterOperator.build(c.config, c.labeling) for c in clusters]
    rows = []
    for beta in beta_grid:
        logs = np.empty((cluster_samples * env_samples, len(n_grid)))
        r = 0
        for ci, cs in enumerate(clusters):
            for k in range(env_samples):
                field_ = EnvironmentField(law, env_seed(rng.derive_seed(seed, "scan-env", ci), k))
                path = partition_dp(cs.config, cs.labeling, field_, beta, n_grid[-1], operator=ops[ci]).log_w_path
                logs[r] = path[n_grid]
                r += 1
        for col, n in enumerate(n_grid):
            lw = mean_estimate(logs[:, col])
            sw = mean_estimate(np.exp(0.5 * logs[:, col]))
            rows.append(ScanRow(float(beta), n, lw.mean, lw.stderr, sw.mean, sw.stderr, len(logs)))
    return rows


