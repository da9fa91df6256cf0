"""Bernoulli bond percolation in a finite box ``B(0, L)`` of Z^d.

Edges are indexed axis-major: all edges in direction e_1 first, then e_2, and
so on. Within one axis ``a`` the edge from vertex ``v`` to ``v + e_a`` sits at
the C-order position of ``v`` in the grid whose ``a``-th extent is ``2L``.
Edges leaving the box do not exist (free boundary).
"""
from __future__ import annotations

import math
import struct
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from . import rng
from .errors import ConditioningError, ParameterError

_MAGIC = b"BCFG"
_HEADER = struct.Struct("<4sIIdQ")


@dataclass(frozen=True)
class LatticeBox:
    d: int
    L: int

    def __post_init__(self):
        if self.d < 1:
            raise ParameterError(f"dimension must be >= 1, got {self.d}")
        if self.L < 1:
            raise ParameterError(f"box radius must be >= 1, got {self.L}")

    @property
    def side(self) -> int:
        return 2 * self.L + 1

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side,) * self.d

    @property
    def n_vertices(self) -> int:
        return self.side**self.d

    @property
    def edges_per_axis(self) -> int:
        return 2 * self.L * self.side ** (self.d - 1)

    @property
    def n_edges(self) -> int:
        return self.d * self.edges_per_axis

    def stride(self, axis: int) -> int:
        return self.side ** (self.d - 1 - axis)

    def edge_shape(self, axis: int) -> tuple[int, ...]:
        s = list(self.shape)
        s[axis] = 2 * self.L
        return tuple(s)

    @property
    def origin(self) -> int:
        return self.index((0,) * self.d)

    def contains(self, x) -> bool:
        return all(-self.L <= c <= self.L for c in x)

    def index(self, x) -> int:
        """Linear index of the vertex with centred coordinates ``x``."""
        if len(x) != self.d or not self.contains(x):
            raise ParameterError(f"vertex {tuple(x)} not in box of radius {self.L}")
        idx = 0
        for c in x:
            idx = idx * self.side + (int(c) + self.L)
        return idx

    def coords(self, index: int) -> tuple[int, ...]:
        return tuple(int(c) - self.L for c in np.unravel_index(int(index), self.shape))

    def all_coords(self) -> np.ndarray:
        """Centred coordinates of every vertex, shape (n_vertices, d)."""
        grids = np.indices(self.shape).reshape(self.d, -1).T
        return grids - self.L

    def parity(self, index: int) -> int:
        return sum(self.coords(index)) % 2

    @cached_property
    def parity_array(self) -> np.ndarray:
        return (self.all_coords().sum(axis=1) % 2).astype(np.int8)

    def edge_index(self, lower, axis: int) -> int:
        """Index of the edge between ``lower`` and ``lower + e_axis``."""
        pos = [int(c) + self.L for c in lower]
        if any(p < 0 or p > 2 * self.L for p in pos) or pos[axis] >= 2 * self.L:
            raise ParameterError(f"edge ({tuple(lower)}, axis {axis}) not in box")
        return axis * self.edges_per_axis + int(np.ravel_multi_index(pos, self.edge_shape(axis)))

    @cached_property
    def edge_endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper vertex index of every edge, in edge order."""
        idx = np.arange(self.n_vertices, dtype=np.int64).reshape(self.shape)
        lows = []
        for a in range(self.d):
            lows.append(np.take(idx, np.arange(2 * self.L), axis=a).ravel())
        lower = np.concatenate(lows)
        upper = lower + np.repeat([self.stride(a) for a in range(self.d)], self.edges_per_axis)
        return lower, upper

    def neighbors(self, x) -> Iterator[tuple[int, ...]]:
        for a in range(self.d):
            for s in (1, -1):
                y = list(x)
                y[a] += s
                if self.contains(y):
                    yield tuple(y)


@dataclass(frozen=True, eq=False)
class BondConfig:
    """Open/closed state of every in-box edge, packed one bit per edge."""

    box: LatticeBox
    p: float
    seed: int
    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        nbytes = (self.box.n_edges + 7) // 8
        if self.bits.dtype != np.uint8 or self.bits.shape != (nbytes,):
            raise ParameterError("bit array does not match the box edge count")

    @classmethod
    def from_open_mask(cls, box: LatticeBox, open_mask, p: float = float("nan"), seed: int = 0):
        mask = np.asarray(open_mask, dtype=bool)
        if mask.shape != (box.n_edges,):
            raise ParameterError(f"expected {box.n_edges} edge states, got {mask.shape}")
        return cls(box, p, seed, np.packbits(mask, bitorder="little"))

    @cached_property
    def open_mask(self) -> np.ndarray:
        mask = np.unpackbits(self.bits, count=self.box.n_edges, bitorder="little").astype(bool)
        mask.flags.writeable = False
        return mask

    def axis_open(self, axis: int) -> np.ndarray:
        """Open states of the edges along ``axis``, shaped like the lower-endpoint grid."""
        E = self.box.edges_per_axis
        return self.open_mask[axis * E:(axis + 1) * E].reshape(self.box.edge_shape(axis))

    def is_open(self, lower, axis: int) -> bool:
        return bool(self.open_mask[self.box.edge_index(lower, axis)])

    def edge_open(self, x, y) -> bool:
        """State of the edge {x, y}; edges leaving the box count as closed."""
        diff = [b - a for a, b in zip(x, y)]
        if sorted(map(abs, diff)) != [0] * (len(diff) - 1) + [1]:
            raise ParameterError(f"{tuple(x)} and {tuple(y)} are not adjacent")
        if not (self.box.contains(x) and self.box.contains(y)):
            return False
        axis = next(a for a, t in enumerate(diff) if t)
        lower = x if diff[axis] == 1 else y
        return self.is_open(lower, axis)

    @property
    def open_fraction(self) -> float:
        return float(self.open_mask.mean())

    @cached_property
    def neighbor_table(self) -> np.ndarray:
        """``(n_vertices, 2d)`` table; column ``2a`` is the +e_a neighbour, ``2a+1`` the -e_a one, -1 if closed."""
        box = self.box
        table = np.full((box.n_vertices, 2 * box.d), -1, dtype=np.int64)
        lower, upper = box.edge_endpoints
        is_open = self.open_mask
        E = box.edges_per_axis
        for a in range(box.d):
            sl = slice(a * E, (a + 1) * E)
            lo, up, op = lower[sl], upper[sl], is_open[sl]
            table[lo[op], 2 * a] = up[op]
            table[up[op], 2 * a + 1] = lo[op]
        table.flags.writeable = False
        return table

    @cached_property
    def degree(self) -> np.ndarray:
        return (self.neighbor_table >= 0).sum(axis=1)

    # -- serialization ---------------------------------------------------

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(_MAGIC, self.box.d, self.box.L, float(self.p), int(self.seed) & rng.MASK64)
        return header + self.bits.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> BondConfig:
        magic, d, L, p, seed = _HEADER.unpack_from(data)
        if magic != _MAGIC:
            raise ParameterError("not a bond configuration blob")
        box = get_box(d, L)
        bits = np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size).copy()
        return cls(box, p, seed, bits)

    def summary(self) -> str:
        lines = [
            f"d: {self.box.d}",
            f"L: {self.box.L}",
            f"p: {self.p!r}",
            f"seed: {self.seed}",
            f"vertices: {self.box.n_vertices}",
            f"edges: {self.box.n_edges}",
            f"open_edges: {int(self.open_mask.sum())}",
        ]
        return "\n".join(lines) + "\n"


@lru_cache(maxsize=32)
def get_box(d: int, L: int) -> LatticeBox:
    """Shared box instance, so cached index tables survive across samples."""
    return LatticeBox(d, L)


def _check_p(p: float):
    if not (0.0 <= p <= 1.0) or math.isnan(p):
        raise ParameterError(f"p must lie in [0, 1], got {p}")


def sample_config(d: int, L: int, p: float, seed: int) -> BondConfig:
    """Each in-box edge is open iff its counter-based uniform is below ``p``.

    Uniforms depend only on ``(seed, edge index)``, so configurations at
    different ``p`` with the same seed are monotonically coupled.
    """
    _check_p(p)
    box = get_box(d, L)
    u = rng.uniform_range(seed, 0, box.n_edges)
    return BondConfig.from_open_mask(box, u < p, p=float(p), seed=int(seed))


@dataclass(frozen=True, eq=False)
class ClusterLabeling:
    box: LatticeBox
    labels: np.ndarray = field(repr=False)
    sizes: np.ndarray = field(repr=False)
    giant: int
    crossing: frozenset

    @property
    def origin_label(self) -> int:
        return int(self.labels[self.box.origin])

    @property
    def sorted_sizes(self) -> list[int]:
        return sorted((int(s) for s in self.sizes[self.sizes > 0]), reverse=True)

    @property
    def n_clusters(self) -> int:
        return int((self.sizes > 0).sum())

    @property
    def giant_size(self) -> int:
        return int(self.sizes[self.giant])

    @property
    def giant_crossing(self) -> bool:
        return self.giant in self.crossing

    @property
    def origin_crossing(self) -> bool:
        return self.origin_label in self.crossing

    @property
    def origin_in_giant(self) -> bool:
        return self.origin_label == self.giant and self.giant_crossing

    def in_giant(self, index) -> np.ndarray | bool:
        """Membership in the box-crossing giant cluster (the finite-volume stand-in for the infinite cluster)."""
        if not self.giant_crossing:
            return np.zeros(np.shape(index), dtype=bool) if np.ndim(index) else False
        return self.labels[index] == self.giant

    def members(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)


def label_clusters(config: BondConfig) -> ClusterLabeling:
    """Connected components of the open subgraph, labelled by their minimum vertex index."""
    box = config.box
    lower, upper = box.edge_endpoints
    op = config.open_mask
    n = box.n_vertices
    graph = coo_matrix(
        (np.ones(int(op.sum()), dtype=np.int8), (lower[op], upper[op])), shape=(n, n)
    ).tocsr()
    _, raw = connected_components(graph, directed=False)
    _, first = np.unique(raw, return_index=True)
    labels = first[raw].astype(np.int64)
    sizes = np.bincount(labels, minlength=n)
    giant = int(np.argmax(sizes))

    grid = labels.reshape(box.shape)
    touching = None
    for a in range(box.d):
        for end in (0, 2 * box.L):
            face = np.unique(np.take(grid, end, axis=a))
            touching = face if touching is None else np.intersect1d(touching, face, assume_unique=True)
    return ClusterLabeling(box, labels, sizes, giant, frozenset(int(t) for t in touching))


@dataclass(frozen=True, eq=False)
class ConditionedSample:
    config: BondConfig
    labeling: ClusterLabeling
    attempts: int
    origin_in_giant: bool = True


def _seed_iter(seed_stream, tag: str) -> Iterator[int]:
    if isinstance(seed_stream, (int, np.integer)):
        k = 0
        while True:
            yield rng.derive_seed(int(seed_stream), tag, k)
            k += 1
    else:
        yield from (int(s) for s in seed_stream)


def condition_on_origin(d: int, L: int, p: float, seed_stream: int | Iterable[int],
                        max_attempts: int = 1000) -> ConditionedSample:
    """Rejection-sample a configuration whose origin lies in the crossing giant cluster.

    ``seed_stream`` is either a master seed (sub-seeds are derived from it) or
    an explicit iterable of configuration seeds.
    """
    _check_p(p)
    if max_attempts < 1:
        raise ParameterError("max_attempts must be >= 1")
    seeds = _seed_iter(seed_stream, "condition")
    attempts = 0
    for s in seeds:
        attempts += 1
        config = sample_config(d, L, p, s)
        labeling = label_clusters(config)
        if labeling.origin_in_giant:
            return ConditionedSample(config, labeling, attempts)
        if attempts >= max_attempts:
            break
    raise ConditioningError(attempts)


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    samples: int


def binomial_estimate(hits: int, samples: int) -> Estimate:
    q = hits / samples
    return Estimate(q, math.sqrt(q * (1.0 - q) / samples), samples)


def estimate_theta(d: int, L: int, p: float, samples: int, seed: int) -> Estimate:
    """Fraction of independent configurations whose origin cluster crosses the box."""
    _check_p(p)
    if samples < 1:
        raise ParameterError("samples must be >= 1")
    hits = 0
    for k in range(samples):
        config = sample_config(d, L, p, rng.derive_seed(seed, "theta", k))
        hits += label_clusters(config).origin_crossing
    return binomial_estimate(hits, samples)
