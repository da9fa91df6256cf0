import math

import numpy as np
import pytest
from conftest import config_from_edges

from percpolymer import rng
from percpolymer.errors import ParameterError
from percpolymer.oracles import brute_force_dwell, exit_tail_enumeration, lattice_heat_kernel
from percpolymer.perc import condition_on_origin, label_clusters, sample_config
from percpolymer.tubes import Tube, TubeCensus, all_directions, forced_edge_sets, scan_open_tubes
from percpolymer.walk import (Trajectory, detect_dwell, estimate_An_curve, estimate_An_prob, exit_time_table,
                              exit_time_tail_1d, fit_heat_kernel, heat_kernel_probe, run_walk,
                              tube_stay_probability)


def _valid_steps(cfg, steps):
    box = cfg.box
    for a, b in zip(steps[:-1], steps[1:]):
        if a == b:
            assert cfg.degree[a] == 0
        else:
            assert cfg.edge_open(box.coords(a), box.coords(b))


def test_isolated_start_holds():
    cfg = sample_config(3, 3, 0.0, 0)
    w = run_walk(cfg, None, cfg.box.origin, 20, 1)
    assert np.all(w.steps == cfg.box.origin) and w.n_steps == 20


def test_walk_invariants_in_giant():
    cs = condition_on_origin(3, 8, 0.6, 2)
    w = run_walk(cs.config, cs.labeling, cs.config.box.origin, 2000, 3)
    _valid_steps(cs.config, w.steps)
    assert np.all(w.steps[1:] != w.steps[:-1])
    par = cs.config.box.parity_array[w.steps]
    assert np.array_equal(par, np.arange(len(par)) % 2)
    again = run_walk(cs.config, cs.labeling, (0, 0, 0), 2000, 3)
    assert np.array_equal(again.steps, w.steps)
    assert w.prefix(10).n_steps == 10
    assert w.to_text(cs.config.box).splitlines()[0] == "0 0 0 0"


def test_walk_bad_args():
    cfg = sample_config(2, 3, 0.5, 0)
    with pytest.raises(ParameterError):
        run_walk(cfg, None, 0, -1, 0)
    with pytest.raises(ParameterError):
        run_walk(cfg, None, (9, 9), 3, 0)


def test_uniform_steps_full_lattice():
    cfg = sample_config(3, 12, 1.0, 0)
    box = cfg.box
    counts = np.zeros(6)
    total = 0
    for s in range(25):
        w = run_walk(cfg, None, box.origin, 5000, rng.derive_seed(4, s))
        table = cfg.neighbor_table
        for a, b in zip(w.steps[:-1], w.steps[1:]):
            if cfg.degree[a] == 6:
                counts[int(np.flatnonzero(table[a] == b)[0])] += 1
                total += 1
    q = 1 / 6
    se = math.sqrt(q * (1 - q) / total)
    assert total > 100_000
    assert np.all(np.abs(counts / total - q) <= 3 * se + 1e-12)


def test_walk_confined_in_tube_until_base():
    m = 6
    fe = forced_edge_sets(3, m, (-3, 0, 0))
    cfg = config_from_edges(3, 8, closed_edges=fe.closed_required, background=True)
    tube = Tube((-3, 0, 0), m)
    verts = set(tube.vertex_indices(cfg.box).tolist())
    base = cfg.box.index((-3, 0, 0))
    for s in range(30):
        w = run_walk(cfg, None, (0, 0, 0), 300, s)
        for t, v in enumerate(w.steps):
            if int(v) not in verts:
                assert int(w.steps[t - 1]) == base
                break


def test_detect_dwell_trivial():
    box = sample_config(2, 4, 0.5, 0).box
    tube = Tube((1, 0), 2)
    census = TubeCensus(2, (tube,))
    far = Trajectory(0, np.full(20, box.index((-4, -4))), 0)
    assert not detect_dwell(far, census, box).found
    base = box.index((1, 0))
    sit = Trajectory(base, np.full(9, base), 0)
    rec = detect_dwell(sit, census, box)
    assert rec.found and rec.run == 8 and rec.j == 0 and rec.tube == tube
    with pytest.raises(ParameterError):
        detect_dwell(sit, census, box, m=3)


def test_detect_dwell_earliest_and_tie():
    box = sample_config(2, 4, 0.5, 0).box
    a, b = Tube((0, 0), 1, 0, 1), Tube((0, 0), 1, 1, 1)
    census = TubeCensus(1, (a, b))
    o = box.index((0, 0))
    steps = np.array([box.index((-1, 0)), o, o, o])
    rec = detect_dwell(Trajectory(steps[0], steps, 0), census, box, threshold=2)
    assert rec.found and rec.j == 1 and rec.tube == a


def test_dwell_matches_bruteforce_handcrafted():
    m = 2
    fe = forced_edge_sets(3, m, (1, 0, 0))
    cfg = config_from_edges(3, 4, closed_edges=fe.closed_required, background=True)
    lab = label_clusters(cfg)
    census = scan_open_tubes(cfg, lab, m)
    assert len(census.tubes) == 1
    found = 0
    for s in range(100):
        w = run_walk(cfg, lab, (0, 0, 0), 400, rng.derive_seed(8, s))
        rec = detect_dwell(w, census, cfg.box)
        ref = brute_force_dwell(w.steps, census.tubes, cfg.box, m**3)
        assert rec.found == (ref is not None)
        if ref is not None:
            found += 1
            assert rec.j == ref[0] and rec.run >= m**3
            assert int(w.steps[rec.j]) == cfg.box.index(rec.tube.base) or rec.j == 0
    assert found > 0


@pytest.mark.slow
def test_dwell_matches_bruteforce_random():
    hits = 0
    for k in range(300):
        cs = condition_on_origin(3, 30, 0.6, rng.derive_seed(9, "dw", k))
        census = scan_open_tubes(cs.config, cs.labeling, 2, all_directions(3))
        w = run_walk(cs.config, cs.labeling, cs.config.box.origin, 2000, rng.derive_seed(9, "walk", k))
        rec = detect_dwell(w, census, cs.config.box)
        touched = [t for t in census.tubes if np.isin(t.vertex_indices(cs.config.box), w.steps).any()]
        ref = brute_force_dwell(w.steps, touched, cs.config.box, 8)
        assert rec.found == (ref is not None)
        if ref is not None:
            hits += 1
            assert rec.j == ref[0]
            assert rec.tube == touched[ref[1]]
    assert hits > 0


def test_An_trivial():
    # m^3 > n: the run cannot fit
    assert estimate_An_prob(3, 6, 0.6, 20, 1.0, 5, 0).value == 0.0
    # no tubes at p = 1
    assert estimate_An_prob(3, 6, 1.0, 200, 0.3, 5, 0).value == 0.0
    with pytest.raises(ParameterError):
        estimate_An_prob(3, 6, 0.6, 5, 0.1, 5, 0)


def test_An_curve_is_coupled():
    curve = estimate_An_curve(2, 10, 0.65, [100, 400, 1600], 0.3, 30, 1, m=1)
    vals = [pt.estimate.value for pt in curve]
    assert vals == sorted(vals)
    assert vals[-1] > 0


def test_exit_time_small_cases():
    assert exit_time_tail_1d(1, 0) == 1.0
    assert exit_time_tail_1d(1, 1) == 1.0
    # tau_1 >= 2 needs X_1 inside {-1, 0, 1}, which always holds
    assert exit_time_tail_1d(1, 2) == exit_tail_enumeration(1, 2) == 1.0
    assert exit_time_tail_1d(1, 3) == exit_tail_enumeration(1, 3) == 0.5
    for K in (1, 2, 3, 4):
        for T in range(0, 14):
            assert exit_time_tail_1d(K, T) == pytest.approx(exit_tail_enumeration(K, T), abs=1e-15)
    with pytest.raises(ParameterError):
        exit_time_tail_1d(0, 3)


def test_exit_time_monotone():
    for K in (2, 5, 9):
        vals = [exit_time_tail_1d(K, T) for T in range(0, 200)]
        # exits only happen at times of one parity, so pairs of values are equal up to rounding
        assert all(a >= b * (1 - 1e-14) for a, b in zip(vals, vals[1:]))
    for T in (10, 100, 500):
        vals = [exit_time_tail_1d(K, T) for K in range(1, 15)]
        assert all(a <= b for a, b in zip(vals, vals[1:]))


def test_exit_time_table_positive():
    table = exit_time_table([10, 14, 18, 22])
    assert [t for _, t, _ in table] == [1000, 2744, 5832, 10648]
    assert all(v > 0 for _, _, v in table)


def _tube_config(m, base=(0, 0, 0), L=None):
    L = L or m + 3
    fe = forced_edge_sets(3, m, base)
    return config_from_edges(3, L, closed_edges=fe.closed_required, background=True), Tube(base, m)


def test_tube_stay_basic():
    cfg, tube = _tube_config(3)
    assert tube_stay_probability(cfg, tube, (0, 0, 0), 0) == 1.0
    # one step from the base: 1 of 6 open edges leads into the tube
    assert tube_stay_probability(cfg, tube, (0, 0, 0), 1) == pytest.approx(1 / 6, rel=1e-15)
    # interior vertices have only the two tube edges, the tip only one
    assert tube_stay_probability(cfg, tube, (2, 0, 0), 1) == 1.0
    with pytest.raises(ParameterError):
        tube_stay_probability(cfg, tube, (0, 1, 0), 1)


def test_tube_stay_monotone_and_product_rule():
    cfg, tube = _tube_config(4)
    box = cfg.box
    vals = [tube_stay_probability(cfg, tube, (2, 0, 0), T) for T in range(40)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    verts = set(tube.vertex_indices(box).tolist())
    table = cfg.neighbor_table
    for start in tube.vertices:
        s = box.index(start)
        nbrs = [int(y) for y in table[s] if y >= 0]
        for T in (1, 5, 12):
            rhs = sum(tube_stay_probability(cfg, tube, box.coords(y), T - 1) for y in nbrs if y in verts) / len(nbrs)
            assert tube_stay_probability(cfg, tube, start, T) == pytest.approx(rhs, rel=1e-12, abs=1e-300)


def test_tube_stay_dominates_interval_walk():
    m = 12
    cfg, tube = _tube_config(m, base=(-6, 0, 0), L=8)
    T = m**3
    mid = (0, 0, 0)
    assert tube_stay_probability(cfg, tube, mid, T) >= exit_time_tail_1d(m // 4, T)


def test_heat_kernel_trivial():
    cs = condition_on_origin(3, 5, 0.7, 0)
    o = cs.config.box.origin
    assert heat_kernel_probe(cs.config, cs.labeling, o, o, 0, 50, 0).value == 1.0
    assert heat_kernel_probe(cs.config, cs.labeling, o, (4, 0, 0), 2, 50, 0).value == 0.0


def test_lattice_heat_kernel_oracle():
    assert lattice_heat_kernel(1, 2, (0,)) == 0.5
    assert lattice_heat_kernel(2, 2, (0, 0)) == 4 / 16
    assert lattice_heat_kernel(3, 1, (1, 0, 0)) == 1 / 6
    total = sum(lattice_heat_kernel(2, 4, (x, y)) for x in range(-4, 5) for y in range(-4, 5))
    assert total == pytest.approx(1.0, abs=1e-15)


@pytest.mark.slow
def test_heat_kernel_full_lattice_n100():
    # box radius 30: reaching the boundary in 101 steps is a > 5 sigma event, far below the MC error
    cfg = sample_config(3, 30, 1.0, 0)
    lab = label_clusters(cfg)
    est = heat_kernel_probe(cfg, lab, (0, 0, 0), (0, 0, 0), 100, 200_000, 12)
    exact = lattice_heat_kernel(3, 100, (0, 0, 0))
    assert abs(est.value - exact) <= 3 * est.stderr


def test_fit_heat_kernel():
    recs = [(r2, n, 2.0 * n ** -1.5 * math.exp(-0.7 * r2 / n)) for n in (10, 20, 40) for r2 in (0, 4, 16)]
    fit = fit_heat_kernel(recs, 3, quantile=0.0)
    assert fit.c == pytest.approx(2.0, rel=1e-9) and fit.c_prime == pytest.approx(0.7, rel=1e-9)
    assert fit.violations == 0 and fit.zeros == 0
    fit = fit_heat_kernel(recs + [(100, 10, 0.0)], 3)
    assert fit.zeros == 1
