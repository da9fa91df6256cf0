"""Acceptance gate: one test per criterion, each printing a single PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are repeated
in the "acceptance criteria" section of the terminal summary.
"""
import math
import time

import numpy as np
import pytest
from conftest import figure_one_config, record_acceptance

from percpolymer import rng
from percpolymer.cli import main as cli_main
from percpolymer.disorder import EnvironmentField, delta_n, log_mgf, log_mgf_prime, tilted_site_factor
from percpolymer.errors import ConditioningError
from percpolymer.perc import condition_on_origin, label_clusters, sample_config
from percpolymer.polymer import martingale_test, mean_estimate, partition_bruteforce, partition_dp, w_alpha_matrix
from percpolymer.selftest import run_selftest
from percpolymer.tubes import (concentration_experiment, open_tube_mask, pattern_probability, scan_open_tubes,
                               theta_prime_estimate, tube_length)
from percpolymer.walk import estimate_An_curve, exit_time_tail_1d

pytestmark = pytest.mark.slow

SEED = 2024


def test_01_dp_bruteforce_equivalence():
    start = time.perf_counter()
    worst, done, k = 0.0, 0, 0
    while done < 100:
        d = 2 + k % 2
        p = (0.4, 0.6, 0.8)[(k // 2) % 3]
        law = ("gaussian", "rademacher")[(k // 6) % 2]
        beta = (0.3, 0.8)[(k // 12) % 2]
        L = 2 + k % 5
        n = 1 + k % 6
        k += 1
        try:
            cs = condition_on_origin(d, L, p, rng.derive_seed(SEED, "a1", k), max_attempts=500)
        except ConditioningError:
            continue
        field = EnvironmentField(law, rng.derive_seed(SEED, "a1-env", k))
        a = partition_dp(cs.config, cs.labeling, field, beta, n).w
        b = partition_bruteforce(cs.config, cs.labeling, field, beta, n).w
        worst = max(worst, abs(a - b) / b)
        done += 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 60
    record_acceptance(1, ok, f"100 instances, max relative difference {worst:.2e} (<= 1e-10), {elapsed:.1f}s (< 60s)")
    assert ok


def test_02_martingale_mean_one():
    start = time.perf_counter()
    cs = condition_on_origin(3, 12, 0.6, rng.derive_seed(SEED, "a2"))
    est = martingale_test(cs.config, cs.labeling, 0.3, 10, 10_000, rng.derive_seed(SEED, "a2-env"))
    elapsed = time.perf_counter() - start
    ok = abs(est.mean - 1) <= 3 * est.stderr and elapsed < 300
    record_acceptance(2, ok, f"mean W_10 = {est.mean:.5f} +- {est.stderr:.5f} (z = {est.z:+.2f}), "
                             f"10^4 environments, {elapsed:.0f}s (< 300s)")
    assert ok


def test_03_lambda_closed_forms():
    details, ok = [], log_mgf("gaussian", 1.0) == 0.5
    details.append(f"Gaussian Lambda(1) = {log_mgf('gaussian', 1.0)!r}")
    xs = np.arange(1_000_000)
    for beta in (0.3, 0.7):
        w = np.exp(beta * EnvironmentField("rademacher", rng.derive_seed(SEED, "a3", beta)).layer(1, xs))
        mean = w.mean()
        se = w.std(ddof=1) / math.sqrt(len(w)) / mean
        z = (math.log(mean) - log_mgf("rademacher", beta)) / se
        ok &= abs(z) <= 3
        details.append(f"Rademacher beta={beta}: z = {z:+.2f}")
    h = 1e-6
    fd_err = max(abs((log_mgf(law, b + h) - log_mgf(law, b - h)) / (2 * h) - log_mgf_prime(law, b))
                 for law in ("gaussian", "rademacher") for b in (0.3, 0.5, 0.7, 1.5))
    ok &= fd_err <= 1e-8
    details.append(f"max |Lambda' - finite difference| = {fd_err:.1e}")
    record_acceptance(3, ok, "; ".join(details))
    assert ok


def test_04_gaussian_change_of_measure_identity():
    worst = max(abs(tilted_site_factor("gaussian", b, delta_n(n)) - math.exp(-b * delta_n(n)))
                for b in (0.3, 0.5) for n in (1e3, 1e6))
    dn = abs(delta_n(math.e**4) - 2 ** -3.5)
    ok = worst <= 1e-12 and dn <= 1e-12
    record_acceptance(4, ok, f"max |factor - e^(-beta delta)| = {worst:.1e}; |delta_n(e^4) - 2^(-7/2)| = {dn:.1e}")
    assert ok


def test_05_tube_pattern_probability():
    d, m, p, N = 3, 2, 0.6, 100_000
    hits = 0
    for k in range(N):
        cfg = sample_config(d, 3, p, rng.derive_seed(SEED, "a5", k))
        hits += bool(open_tube_mask(cfg, m)[3, 3, 3])
    q = pattern_probability(d, m, p)
    se = math.sqrt(q * (1 - q) / N)
    freq = hits / N
    fig = figure_one_config()
    census = scan_open_tubes(fig, label_clusters(fig), 6)
    one_tube = len(census.tubes) == 1 and census.tubes[0].m == 6
    ok = abs(freq - q) <= 3 * se and one_tube and q == p**2 * (1 - p) ** 9
    record_acceptance(5, ok, f"frequency {freq:.6f} vs p^2(1-p)^9 = {q:.6f} (z = {(freq - q) / se:+.2f}); "
                             f"Figure-1 configuration: {len(census.tubes)} tube(s) of length "
                             f"{census.tubes[0].m if census.tubes else '-'}")
    assert ok


def test_06_fkg_direction():
    details, ok = [], True
    for m in (1, 2):
        est = theta_prime_estimate(3, 0.6, m, 20_000, rng.derive_seed(SEED, "a6", m), L=8)
        se = math.hypot(est.stderr, est.lower_bound_stderr)
        margin = (est.value - est.lower_bound) / se if se > 0 else math.inf
        ok &= est.value >= est.lower_bound - 3 * se
        details.append(f"m={m}: theta' = {est.value:.4e} vs bound {est.lower_bound:.4e} ({margin:+.2f} se)")
    record_acceptance(6, ok, "; ".join(details))
    assert ok


def test_07_exit_time_law():
    start = time.perf_counter()
    Ks = np.array([10, 14, 18, 22])
    vals = np.array([exit_time_tail_1d(int(K), int(K) ** 3) for K in Ks])
    elapsed = time.perf_counter() - start
    y = -np.log(vals)
    slope, intercept = np.polyfit(Ks, y, 1)
    fit = intercept + slope * Ks
    rel = np.max(np.abs(y - fit) / np.abs(fit))
    ok = bool(np.all(vals > 0)) and rel <= 0.25 and elapsed < 60
    record_acceptance(7, ok, f"P = {', '.join(f'{v:.3e}' for v in vals)}; -log P ~ {intercept:.3f} + {slope:.3f} K, "
                             f"max relative deviation {rel:.3%} (<= 25%), {elapsed:.2f}s")
    assert ok


def test_08_An_trend():
    start = time.perf_counter()
    eps = 0.3
    assert tube_length(10**3, eps) == tube_length(10**4, eps) == 2
    curve = estimate_An_curve(3, 30, 0.6, [10**3, 10**4], eps, 500, rng.derive_seed(SEED, "a8"))
    elapsed = time.perf_counter() - start
    lo, hi = curve[0].estimate, curve[1].estimate
    se = math.hypot(lo.stderr, hi.stderr)
    ok = hi.value >= lo.value - 3 * se and elapsed < 1200
    record_acceptance(8, ok, f"P[A_1000] = {lo.value:.3f} +- {lo.stderr:.3f}, P[A_10000] = {hi.value:.3f} +- "
                             f"{hi.stderr:.3f} (500 conditioned samples, m=2), {elapsed:.0f}s (< 1200s)")
    assert ok


def test_09_fractional_moment_decay():
    cs = condition_on_origin(3, 12, 0.6, rng.derive_seed(SEED, "a9"))
    env_seed = rng.derive_seed(SEED, "a9-env")
    vals = w_alpha_matrix(cs, 0.5, 0.5, [10, 40, 160], 1000, env_seed)
    first, last = mean_estimate(vals[:, 0]), mean_estimate(vals[:, 2])
    # the three columns come from the same 1000 environments, so the stderr of the drop is paired
    drop = mean_estimate(vals[:, 0] - vals[:, 2])
    z_paired = drop.mean / drop.stderr
    z_naive = drop.mean / math.hypot(first.stderr, last.stderr)
    control = w_alpha_matrix(cs, 0.5, 0.0, [10, 40, 160], 20, env_seed)
    ok = z_paired >= 3 and bool(np.all(control == 1.0))
    means = ", ".join(f"{v:.4f}" for v in vals.mean(axis=0))
    record_acceptance(9, ok, f"E[W^0.5] at n=10,40,160: {means}; drop {drop.mean:.4f} +- {drop.stderr:.4f} "
                             f"(paired z = {z_paired:.2f}, unpaired z = {z_naive:.2f}); beta=0 control exactly 1")
    assert ok


def _nonincreasing(rows, parity):
    f = [r.deviation_frequency for r in sorted(rows, key=lambda r: r.n) if r.parity == parity]
    return all(a >= b for a, b in zip(f, f[1:])), f


def test_10_concentration_trend():
    ok, details = True, []
    # stated configuration: d=3, p=0.6, m=2 at every n
    rows = concentration_experiment(3, 0.6, 0.675, [20, 40, 80], 500, rng.derive_seed(SEED, "a10"))
    assert {r.m for r in rows} == {2}
    degenerate = all(r.degenerate for r in rows)
    for parity in ("odd", "even"):
        good, f = _nonincreasing(rows, parity)
        ok &= good
        details.append(f"d=3 {parity}: {f}")
    if degenerate:
        details.append("d=3 rows degenerate (no good tube in any sample)")
    # supplementary non-degenerate configuration: d=2, p=0.8, m=1
    rows2 = concentration_experiment(2, 0.8, 0.4, [20, 40, 80], 500, rng.derive_seed(SEED, "a10-2d"))
    for parity in ("odd", "even"):
        good, f = _nonincreasing(rows2, parity)
        ok &= good
        details.append(f"d=2 {parity}: {[round(x, 3) for x in f]}")
    record_acceptance(10, ok, "; ".join(details))
    assert ok


def test_11_determinism(tmp_path):
    a, b = tmp_path / "st1", tmp_path / "st2"
    ok = run_selftest(a, stream=open("/dev/null", "w")) and run_selftest(b, stream=open("/dev/null", "w"))
    same_selftest = (a / "selftest.txt").read_bytes() == (b / "selftest.txt").read_bytes()
    cfg = tmp_path / "run.cfg"
    cfg.write_text("experiment = polymer\nmode = martingale\nd = 3\nL = 6\np = 0.6\nbeta = 0.3,0.5\nn = 5,10\n"
                   "env_samples = 50\nseed = 11\n")
    outs = []
    for name in ("r1", "r2"):
        assert cli_main(["polymer", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted((tmp_path / name).glob("*.csv"))})
    checksums = [[ln for ln in (tmp_path / name / "manifest.txt").read_text().splitlines()
                  if ln.startswith("output")] for name in ("r1", "r2")]
    same_runs = outs[0] == outs[1] and checksums[0] == checksums[1] and len(outs[0]) == 2
    ok = ok and same_selftest and same_runs
    record_acceptance(11, ok, f"selftest passed and reports identical: {same_selftest}; "
                              f"experiment rerun byte-identical ({len(outs[0])} CSV files, manifest checksums match): "
                              f"{same_runs}")
    assert ok


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-s"]))
