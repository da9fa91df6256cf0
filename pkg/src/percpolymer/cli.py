"""Command-line front end: ``percpolymer <subcommand> [--config FILE] [overrides]``.

Every run writes CSV tables and a ``manifest.txt`` into the output directory.
Exit status: 0 success, 2 usage or configuration error, 3 experiment failure.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import logging
import os
import sys
from pathlib import Path

import numpy as np
from scipy import sparse

from . import __version__, rng
from .config import MODES, RunConfig, coerce, load_config, override
from .errors import ConditioningError, ConfigError, GeometryError, GuardError, ParameterError

log = logging.getLogger("percpolymer")

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 2, 3
OUT_ENV = "PERCPOLYMER_OUT"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, bool):
        return str(int(v))
    return str(v)


class OutputSet:
    """Collects output files for one run and writes the manifest."""

    def __init__(self, directory: Path):
        self.directory = directory
        self.files: list[Path] = []

    def csv(self, name: str, header, rows) -> Path:
        path = self.directory / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        self.files.append(path)
        return path

    def text(self, name: str, content: str) -> Path:
        path = self.directory / name
        path.write_text(content)
        self.files.append(path)
        return path

    def manifest(self, cfg: RunConfig, started: str, finished: str, status: str) -> Path:
        lines = [f"artifact_version = {__version__}", f"started = {started}", f"finished = {finished}",
                 f"status = {status}"]
        lines += [f"config.{k} = {v}" for k, v in cfg.echo()]
        for path in self.files:
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            lines.append(f"output = {path.name} sha256:{digest}")
        path = self.directory / "manifest.txt"
        path.write_text("\n".join(lines) + "\n")
        return path


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _conditioned(cfg: RunConfig, p: float, tag: str):
    from .perc import condition_on_origin
    return condition_on_origin(cfg.d, cfg.L, p, rng.derive_seed(cfg.seed, cfg.experiment, tag), cfg.max_attempts)


# --- experiments -------------------------------------------------------------

def run_percolate(cfg: RunConfig, out: OutputSet):
    from .perc import estimate_theta
    rows = []
    for p in cfg.p:
        est = estimate_theta(cfg.d, cfg.L, p, cfg.samples, rng.derive_seed(cfg.seed, "percolate", p))
        rows.append((cfg.d, cfg.L, p, est.value, est.stderr, est.samples))
    out.csv("theta.csv", ("d", "L", "p", "theta", "stderr", "samples"), rows)


def run_tubes(cfg: RunConfig, out: OutputSet):
    from .perc import label_clusters, sample_config
    from .tubes import (all_directions, census_records, concentration_experiment, scan_open_tubes,
                        theta_prime_estimate, tube_length)
    if cfg.mode == "census":
        rows, records = [], []
        for p in cfg.p:
            config = sample_config(cfg.d, cfg.L, p, rng.derive_seed(cfg.seed, "tubes", p))
            labeling = label_clusters(config)
            for n in cfg.n:
                if n > cfg.L:
                    raise GeometryError(f"n={n} exceeds the box radius L={cfg.L}")
                m = cfg.m or tube_length(n, cfg.eps)
                if m < 1:
                    raise ParameterError(f"[eps log n] = {m} for n={n}; need at least 1")
                census = scan_open_tubes(config, labeling, m, all_directions(cfg.d), n=n, eps=cfg.eps)
                for parity in ("odd", "even"):
                    rows.append((p, n, m, parity, census.counts[parity], len(census.good_tubes), census.z[parity]))
                records.append(f"# p={_fmt(p)} n={n} m={m}\n" + census_records(census))
        out.csv("census.csv", ("p", "n", "m", "parity", "open_tubes", "good_tubes", "z"), rows)
        out.text("tubes.txt", "".join(records))
    elif cfg.mode == "concentration":
        rows = []
        for p in cfg.p:
            for r in concentration_experiment(cfg.d, p, cfg.eps, cfg.n, cfg.samples,
                                              rng.derive_seed(cfg.seed, "concentration", p)):
                rows.append((p, r.n, r.m, r.parity, r.samples, r.mean, r.std, r.deviation_frequency, r.degenerate))
        out.csv("concentration.csv",
                ("p", "n", "m", "parity", "samples", "mean_z", "std_z", "deviation_frequency", "degenerate"), rows)
    else:
        rows = []
        m = cfg.m or 1
        for p in cfg.p:
            est = theta_prime_estimate(cfg.d, p, m, cfg.samples, rng.derive_seed(cfg.seed, "theta-prime", p))
            rows.append((p, m, est.value, est.stderr, est.lower_bound, est.lower_bound_stderr,
                         est.pattern_prob, est.boundary_prob, est.theta.value, est.theta.stderr))
        out.csv("theta_prime.csv", ("p", "m", "theta_prime", "stderr", "lower_bound", "lower_bound_stderr",
                                    "pattern_prob", "boundary_prob", "theta", "theta_stderr"), rows)


def run_walk(cfg: RunConfig, out: OutputSet):
    from .walk import estimate_An_curve, exit_time_table, fit_heat_kernel, heat_kernel_probe
    if cfg.mode == "an":
        rows = []
        for p in cfg.p:
            curve = estimate_An_curve(cfg.d, cfg.L, p, cfg.n, cfg.eps, cfg.samples,
                                      rng.derive_seed(cfg.seed, "walk-an", p), cfg.max_attempts, cfg.m or None)
            rows += [(p, pt.n, pt.m, pt.estimate.value, pt.estimate.stderr, pt.estimate.samples) for pt in curve]
        out.csv("an.csv", ("p", "n", "m", "probability", "stderr", "samples"), rows)
    elif cfg.mode == "heat":
        rows, fits = [], []
        for p in cfg.p:
            cs = _conditioned(cfg, p, f"heat-{p!r}")
            box = cs.config.box
            recs = []
            for n in cfg.n:
                r = 0
                while r <= min(cfg.L, n):
                    y = (r,) + (0,) * (cfg.d - 1)
                    est = heat_kernel_probe(cs.config, cs.labeling, box.origin, y, n, cfg.samples,
                                            rng.derive_seed(cfg.seed, "heat", p, n, r))
                    rows.append((p, n, r, est.value, est.stderr, est.samples))
                    recs.append((r * r, n, est.value))
                    r = 1 if r == 0 else 2 * r
            fit = fit_heat_kernel(recs, cfg.d)
            fits.append((p, fit.c, fit.c_prime, fit.violations, fit.zeros, fit.points))
        out.csv("heat.csv", ("p", "n", "r", "probability", "stderr", "samples"), rows)
        out.csv("heat_fit.csv", ("p", "c", "c_prime", "violations", "zeros", "points"), fits)
    else:
        out.csv("exit.csv", ("K", "T", "tail"), exit_time_table(cfg.K))


def run_polymer(cfg: RunConfig, out: OutputSet):
    from .polymer import mean_estimate, strong_disorder_scan, w_alpha_matrix, w_samples
    if cfg.mode == "martingale":
        rows, samples = [], []
        for p in cfg.p:
            cs = _conditioned(cfg, p, f"martingale-{p!r}")
            for beta in cfg.beta:
                paths = w_samples(cs.config, cs.labeling, beta, cfg.n[-1], cfg.env_samples,
                                  rng.derive_seed(cfg.seed, "polymer-env", p), cfg.law)
                for n in cfg.n:
                    est = mean_estimate(np.exp(paths[:, n]))
                    lw = mean_estimate(paths[:, n])
                    rows.append((p, beta, n, est.mean, est.stderr, est.z, lw.mean, est.samples))
                    samples += [(p, beta, n, k, float(paths[k, n])) for k in range(len(paths))]
        out.csv("martingale.csv", ("p", "beta", "n", "mean_w", "stderr", "z", "mean_log_w", "env_samples"), rows)
        out.csv("log_w.csv", ("p", "beta", "n", "env", "log_w"), samples)
    elif cfg.mode == "moments":
        rows = []
        for p in cfg.p:
            cs = _conditioned(cfg, p, f"moments-{p!r}")
            for beta in cfg.beta:
                vals = w_alpha_matrix(cs, cfg.alpha, beta, cfg.n, cfg.env_samples,
                                      rng.derive_seed(cfg.seed, "polymer-env", p), cfg.law)
                first = vals[:, 0]
                for col, n in enumerate(cfg.n):
                    est = mean_estimate(vals[:, col])
                    diff = mean_estimate(first - vals[:, col])
                    rows.append((p, beta, cfg.alpha, n, est.mean, est.stderr, diff.mean, diff.stderr, est.samples))
        out.csv("moments.csv", ("p", "beta", "alpha", "n", "mean_w_alpha", "stderr", "drop_from_first",
                                "drop_stderr", "env_samples"), rows)
    else:
        rows = []
        for p in cfg.p:
            for r in strong_disorder_scan(cfg.d, cfg.L, p, list(cfg.beta), cfg.n, cfg.env_samples,
                                          cfg.cluster_samples, rng.derive_seed(cfg.seed, "scan", p), cfg.law,
                                          cfg.max_attempts):
                rows.append((p, r.beta, r.n, r.mean_log_w, r.stderr_log_w, r.mean_sqrt_w, r.stderr_sqrt_w, r.samples))
        out.csv("scan.csv", ("p", "beta", "n", "mean_log_w", "stderr_log_w", "mean_sqrt_w", "stderr_sqrt_w",
                             "samples"), rows)


def _graph_distances(config):
    from scipy.sparse.csgraph import breadth_first_order

    table = config.neighbor_table
    rows = np.repeat(np.arange(table.shape[0]), table.shape[1])
    cols = table.ravel()
    keep = cols >= 0
    graph = sparse.csr_matrix((np.ones(keep.sum()), (rows[keep], cols[keep])), shape=(table.shape[0],) * 2)
    order, pred = breadth_first_order(graph, config.box.origin, directed=False)
    dist = np.full(table.shape[0], np.iinfo(np.int64).max, dtype=np.int64)
    dist[order[0]] = 0
    for v in order[1:]:
        dist[v] = dist[pred[v]] + 1
    return dist


def run_com(cfg: RunConfig, out: OutputSet):
    from .polymer import change_of_measure_experiment
    from .tubes import all_directions, scan_open_tubes, tube_length
    rows = []
    for p in cfg.p:
        cs = _conditioned(cfg, p, f"com-{p!r}")
        for n in cfg.n:
            m = tube_length(n, cfg.eps)
            if m < 1:
                raise ParameterError(f"[eps log n] = {m} for n={n}; need at least 1")
            census = scan_open_tubes(cs.config, cs.labeling, m, all_directions(cfg.d))
            if not census.tubes:
                raise ConditioningError(cs.attempts, f"no open tube of length {m} in the origin's cluster")
            if cfg.tilt_m and cfg.tilt_m != m:
                raise ParameterError(f"tilt.m={cfg.tilt_m} differs from [eps log n] = {m} for n={n}")
            dist = _graph_distances(cs.config)
            if cfg.tilt_base:
                matches = [t for t in census.tubes if t.base == tuple(cfg.tilt_base)]
                if not matches:
                    raise ParameterError(f"no open tube of length {m} based at {cfg.tilt_base}")
                tube = matches[0]
            else:
                tube = min(census.good_tubes or census.tubes, key=lambda t: dist[cs.config.box.index(t.base)])
            j = cfg.tilt_j or int(dist[cs.config.box.index(tube.base)])
            for beta in cfg.beta:
                rep = change_of_measure_experiment(
                    cs.config, cs.labeling, n, cfg.eps, j, tube, cfg.alpha, beta, cfg.env_samples,
                    rng.derive_seed(cfg.seed, "com-env", p, n), cfg.law,
                    delta=cfg.tilt_delta if cfg.tilt_delta >= 0 else None)
                base = " ".join(str(c) for c in tube.base)
                rows.append((p, beta, n, rep.m, rep.j, rep.window, base, tube.direction, int(tube.good), rep.delta,
                             rep.n_sites, rep.frac_moment.mean, rep.frac_moment.stderr, rep.restricted_mean.mean,
                             rep.restricted_mean.stderr, rep.tilted_mean.mean, rep.tilted_mean.stderr,
                             rep.reweighted_mean.mean, rep.reweighted_mean.stderr, rep.cost, rep.cost_mc.mean,
                             rep.cost_mc.stderr, rep.bound, rep.bound_stderr, int(rep.holds)))
    out.csv("com.csv", ("p", "beta", "n", "m", "j", "window", "base", "direction", "good", "delta", "n_sites",
                        "frac_moment", "frac_moment_stderr", "restricted_mean", "restricted_mean_stderr",
                        "tilted_mean", "tilted_mean_stderr", "reweighted_mean", "reweighted_mean_stderr",
                        "cost", "cost_mc", "cost_mc_stderr", "bound", "bound_stderr", "holds"), rows)


RUNNERS = {"percolate": run_percolate, "tubes": run_tubes, "walk": run_walk, "polymer": run_polymer,
           "com": run_com}

# flag name -> config field
_FLAGS = {"mode": "mode", "d": "d", "L": "L", "p": "p", "beta": "beta", "alpha": "alpha", "eps": "eps",
          "n": "n", "m": "m", "K": "K", "law": "law", "samples": "samples", "env_samples": "env_samples",
          "cluster_samples": "cluster_samples", "seed": "seed", "max_attempts": "max_attempts", "out": "out",
          "tilt_j": "tilt_j", "tilt_base": "tilt_base", "tilt_m": "tilt_m",
          "tilt_delta": "tilt_delta"}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="percpolymer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    for name in RUNNERS:
        sp = sub.add_parser(name, help=f"{name} experiments (modes: {', '.join(MODES[name])})")
        sp.add_argument("--config", type=Path, help="key = value configuration file")
        for flag in _FLAGS:
            opt = "--" + flag.replace("_", "-")
            sp.add_argument(opt, dest=flag, default=None, metavar=flag.upper())
    st = sub.add_parser("selftest", help="run the oracle suite")
    st.add_argument("--out", default=None)
    return parser


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig(experiment=args.command)
    if cfg.experiment != args.command:
        cfg = override(cfg, experiment=args.command)
    updates = {}
    for flag, name in _FLAGS.items():
        raw = getattr(args, flag)
        if raw is None:
            continue
        try:
            updates[name] = coerce(name, raw)
        except ValueError:
            raise ConfigError(f"{flag}: bad value {raw!r}") from None
    cfg = override(cfg, **updates)
    if not cfg.out:
        cfg.out = os.environ.get(OUT_ENV, "") or str(Path("runs") / cfg.experiment)
    return cfg


def run_experiment(cfg: RunConfig) -> OutputSet:
    directory = Path(cfg.out)
    directory.mkdir(parents=True, exist_ok=True)
    out = OutputSet(directory)
    started = _now()
    log.info("running %s/%s into %s", cfg.experiment, cfg.mode, directory)
    try:
        RUNNERS[cfg.experiment](cfg, out)
    except Exception:
        out.manifest(cfg, started, _now(), "failed")
        raise
    out.manifest(cfg, started, _now(), "ok")
    return out


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"percpolymer: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    if args.command == "selftest":
        from .selftest import run_selftest
        out = args.out or os.environ.get(OUT_ENV, "") or str(Path("runs") / "selftest")
        ok = run_selftest(Path(out), stream=sys.stdout)
        return EXIT_OK if ok else EXIT_FAILURE
    try:
        cfg = _resolve(args)
    except ConfigError as exc:
        print(f"percpolymer: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        out = run_experiment(cfg)
    except (ConditioningError, GeometryError, ParameterError, GuardError) as exc:
        print(f"percpolymer: experiment failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    for path in out.files:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
