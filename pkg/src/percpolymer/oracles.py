"""Slow, independent reference computations used by the self-test and the test suite."""
from __future__ import annotations

import itertools
import math
from collections import deque

import numba
import numpy as np

from .perc import BondConfig
from .tubes import forced_edge_sets


def bfs_labels(config: BondConfig) -> np.ndarray:
    """Cluster labels (minimum vertex index) by breadth-first search over coordinates."""
    box = config.box
    labels = np.full(box.n_vertices, -1, dtype=np.int64)
    for start in range(box.n_vertices):
        if labels[start] >= 0:
            continue
        labels[start] = start
        queue = deque([box.coords(start)])
        while queue:
            x = queue.popleft()
            for y in box.neighbors(x):
                if config.edge_open(x, y):
                    yi = box.index(y)
                    if labels[yi] < 0:
                        labels[yi] = start
                        queue.append(y)
    return labels


@numba.njit(cache=True)
def _bfs_reach(table, start):
    seen = np.zeros(table.shape[0], dtype=np.bool_)
    queue = np.empty(table.shape[0], dtype=np.int64)
    seen[start] = True
    queue[0] = start
    head, tail = 0, 1
    while head < tail:
        x = queue[head]
        head += 1
        for c in range(table.shape[1]):
            y = table[x, c]
            if y >= 0 and not seen[y]:
                seen[y] = True
                queue[tail] = y
                tail += 1
    return seen


def origin_crossing_bfs(config: BondConfig) -> bool:
    """Whether the origin's cluster touches all 2d faces, by BFS from the origin."""
    box = config.box
    seen = _bfs_reach(config.neighbor_table, box.origin).reshape(box.shape)
    for a in range(box.d):
        for end in (0, 2 * box.L):
            if not np.take(seen, end, axis=a).any():
                return False
    return True


def tube_pattern_direct(config: BondConfig, base, m: int, axis: int = 0, sign: int = 1) -> bool:
    """Open-tube test by checking each forced edge individually."""
    fe = forced_edge_sets(config.box.d, m, base, axis, sign)

    def state(edge):
        lower, a = edge
        upper = list(lower)
        upper[a] += 1
        return config.edge_open(lower, tuple(upper))

    return all(state(e) for e in fe.open_required) and not any(state(e) for e in fe.closed_required)


def tube_good_direct(config: BondConfig, base, m: int, axis: int = 0, sign: int = 1) -> bool:
    fe = forced_edge_sets(config.box.d, m, base, axis, sign)
    box = config.box
    for lower, a in fe.boundary:
        upper = list(lower)
        upper[a] += 1
        if not (box.contains(lower) and box.contains(upper)):
            return False
        if not config.is_open(lower, a):
            return False
    return True


def brute_force_dwell(steps: np.ndarray, tubes, box, threshold: int):
    """Earliest ``(j, tube position)`` with ``X_j..X_{j+threshold}`` inside one tube, or None."""
    sets = [set(int(v) for v in t.vertex_indices(box)) for t in tubes]
    n = len(steps) - 1
    for j in range(0, n - threshold + 1):
        for k, s in enumerate(sets):
            if all(int(steps[i]) in s for i in range(j, j + threshold + 1)):
                return j, k
    return None


def lattice_heat_kernel(d: int, n: int, y) -> float:
    """Exact P_0[X_n = y] for simple random walk on the full lattice Z^d.

    Counts paths: split the ``n`` steps among the axes (multinomial), then
    each axis contributes a binomial count of +/- moves.
    """
    y = [abs(int(c)) for c in y]

    def axis_count(k, yi):
        if (k + yi) % 2 or yi > k:
            return 0
        return math.comb(k, (k + yi) // 2)

    # polynomial convolution over axes of sum_k C(n, k) * count_k
    counts = {0: 1}
    for a in range(d):
        nxt = {}
        for used, c in counts.items():
            for k in range(0, n - used + 1):
                ac = axis_count(k, y[a])
                if ac:
                    nxt[used + k] = nxt.get(used + k, 0) + c * math.comb(n - used, k) * ac
        counts = nxt
    total = counts.get(n, 0)
    return total / (2 * d) ** n


def exit_tail_enumeration(K: int, T: int) -> float:
    """P_0[tau_K >= T] by listing all 2^(T-1) paths; only for tiny T."""
    if T == 0:
        return 1.0
    inside = 0
    for signs in itertools.product((-1, 1), repeat=T - 1):
        x, ok = 0, True
        for s in signs:
            x += s
            if abs(x) > K:
                ok = False
                break
        inside += ok
    return inside / 2 ** (T - 1)
