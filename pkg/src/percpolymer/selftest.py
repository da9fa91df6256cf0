"""Quick oracle suite: each check compares a fast routine against an independent slow one."""
from __future__ import annotations

import hashlib
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, oracles, rng
from .disorder import EnvironmentField, holder_cost, log_mgf, log_mgf_prime
from .perc import label_clusters, sample_config
from .polymer import partition_bruteforce, partition_dp
from .tubes import Tube, TubeCensus, forced_edge_sets, good_flags, open_tube_mask
from .walk import detect_dwell, exit_time_tail_1d, heat_kernel_probe, run_walk

SEED = 20240917


def _check_rng():
    a = rng.uniform_range(SEED, 0, 100_000)
    b = rng.uniform_range(SEED, 0, 100_000)
    mean_ok = abs(a.mean() - 0.5) < 4 * math.sqrt(1 / 12 / len(a))
    return bool(np.array_equal(a, b) and mean_ok and a.min() >= 0 and a.max() < 1), f"mean={a.mean():.5f}"


def _check_labels():
    bad = 0
    for k in range(20):
        d = 2 + k % 2
        cfg = sample_config(d, 3, 0.3 + 0.03 * k, rng.derive_seed(SEED, "labels", k))
        lab = label_clusters(cfg)
        if not np.array_equal(lab.labels, oracles.bfs_labels(cfg)):
            bad += 1
        if lab.origin_crossing != oracles.origin_crossing_bfs(cfg):
            bad += 1
    return bad == 0, f"mismatches={bad} over 20 configurations"


def _check_tubes():
    bad = 0
    for d, m in ((2, 1), (2, 3), (3, 1), (3, 2)):
        fe = forced_edge_sets(d, m)
        if len(fe.open_required) != m or len(fe.closed_required) != 2 * (d - 1) * m + 1:
            bad += 1
    for k in range(6):
        d, m = 2 + k % 2, 1 + k % 3
        cfg = sample_config(d, 3, 0.5, rng.derive_seed(SEED, "tubes", k))
        box = cfg.box
        for axis in range(d):
            for sign in (1, -1):
                mask = open_tube_mask(cfg, m, axis, sign)
                for v in range(box.n_vertices):
                    x = box.coords(v)
                    direct = oracles.tube_pattern_direct(cfg, x, m, axis, sign)
                    if bool(mask.flat[v]) != direct:
                        bad += 1
                bases = np.array([box.coords(v) for v in np.flatnonzero(mask)]).reshape(-1, d)
                if len(bases):
                    flags = good_flags(cfg, bases, m, axis, sign)
                    for b, f in zip(bases, flags):
                        if bool(f) != oracles.tube_good_direct(cfg, tuple(b), m, axis, sign):
                            bad += 1
    return bad == 0, f"mismatches={bad}"


def _check_dp():
    worst = 0.0
    count = 0
    for k in range(12):
        d = 2 + k % 2
        law = ("gaussian", "rademacher")[k % 2]
        cfg = sample_config(d, 3, 0.8, rng.derive_seed(SEED, "dp", k))
        lab = label_clusters(cfg)
        if not lab.origin_in_giant:
            continue
        field = EnvironmentField(law, rng.derive_seed(SEED, "dp-env", k))
        fast = partition_dp(cfg, lab, field, 0.7, 5).log_w
        slow = partition_bruteforce(cfg, lab, field, 0.7, 5).log_w
        worst = max(worst, abs(math.expm1(fast - slow)))
        count += 1
    return count > 0 and worst < 1e-10, f"instances={count} max_rel_diff={worst:.2e}"


def _check_lambda():
    x, w = np.polynomial.hermite_e.hermegauss(80)
    w = w / w.sum()
    errs = []
    for beta in (0.3, 1.0):
        errs.append(abs(math.log(np.sum(w * np.exp(beta * x))) - log_mgf("gaussian", beta)))
        errs.append(abs(math.log(0.5 * (math.exp(beta) + math.exp(-beta))) - log_mgf("rademacher", beta)))
        for law in ("gaussian", "rademacher"):
            h = 1e-5
            fd = (log_mgf(law, beta + h) - log_mgf(law, beta - h)) / (2 * h)
            errs.append(abs(fd - log_mgf_prime(law, beta)))
    # Hoelder cost against quadrature of the tilted Gaussian
    alpha, delta = 0.5, 0.2
    q = 1 / (1 - alpha)
    tilted = x - delta
    integrand = np.exp(q * (delta * tilted + log_mgf("gaussian", -delta)))
    errs.append(abs(np.sum(w * integrand) ** (1 - alpha) - holder_cost("gaussian", alpha, delta, 1)))
    worst = max(errs)
    return worst < 1e-8, f"max_err={worst:.2e}"


def _check_exit():
    worst = max(abs(exit_time_tail_1d(K, T) - oracles.exit_tail_enumeration(K, T))
                for K in (1, 2, 3) for T in range(0, 12))
    return worst < 1e-14, f"max_err={worst:.2e}"


def _check_heat():
    cfg = sample_config(2, 8, 1.0, 0)
    lab = label_clusters(cfg)
    worst = 0.0
    for y in ((0, 0), (1, 1), (2, 0)):
        est = heat_kernel_probe(cfg, lab, (0, 0), y, 4, 20_000, rng.derive_seed(SEED, "heat", *y))
        # only one of X_4, X_5 has the parity of y
        exact = oracles.lattice_heat_kernel(2, 4 + sum(y) % 2, y)
        z = abs(est.value - exact) / max(est.stderr, 1e-12)
        worst = max(worst, z)
    return worst < 4.0, f"max_z={worst:.2f}"


def _check_dwell():
    bad = 0
    for k in range(10):
        cfg = sample_config(2, 6, 0.6, rng.derive_seed(SEED, "dwell", k))
        lab = label_clusters(cfg)
        box = cfg.box
        tubes = []
        for axis in range(2):
            for sign in (1, -1):
                for v in np.flatnonzero(open_tube_mask(cfg, 1, axis, sign)):
                    tubes.append(Tube(tuple(int(c) for c in box.coords(v)), 1, axis, sign))
        census = TubeCensus(1, tuple(tubes))
        walk = run_walk(cfg, lab, box.origin, 200, rng.derive_seed(SEED, "dwell-walk", k))
        rec = detect_dwell(walk, census, box, threshold=3)
        ref = oracles.brute_force_dwell(walk.steps, tubes, box, 3)
        if (ref is None) != (not rec.found) or (ref is not None and ref[0] != rec.j):
            bad += 1
    return bad == 0, f"mismatches={bad} over 10 walks"


CHECKS = (
    ("rng-determinism", _check_rng),
    ("cluster-labels-vs-bfs", _check_labels),
    ("tube-patterns-vs-direct", _check_tubes),
    ("dp-vs-bruteforce", _check_dp),
    ("lambda-closed-forms", _check_lambda),
    ("exit-tail-vs-enumeration", _check_exit),
    ("heat-kernel-vs-lattice", _check_heat),
    ("dwell-vs-bruteforce", _check_dwell),
)


def run_selftest(out_dir: Path | None = None, stream=sys.stdout) -> bool:
    """Run every check, print one line each and write ``selftest.txt`` plus a manifest."""
    lines, ok_all = [], True
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check, not a crash of the suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        ok_all &= ok
        line = f"{'PASS' if ok else 'FAIL'} {name} {detail}"
        lines.append(line)
        print(line, file=stream)
    summary = f"{'all' if ok_all else 'not all'} {len(CHECKS)} oracle checks passed"
    lines.append(summary)
    print(summary, file=stream)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report = out_dir / "selftest.txt"
        report.write_text("\n".join(lines) + "\n")
        digest = hashlib.sha256(report.read_bytes()).hexdigest()
        (out_dir / "manifest.txt").write_text(
            f"artifact_version = {__version__}\nstatus = {'ok' if ok_all else 'failed'}\n"
            f"output = selftest.txt sha256:{digest}\n")
    return ok_all

