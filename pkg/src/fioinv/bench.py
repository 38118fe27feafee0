"""Benchmark runs: factor, solve, scaling sweeps and table reproductions.

Every run produces :class:`BenchRecord` rows with a fixed field order so
CSV headers stay stable; JSON records validate against
``bench_record.schema.json`` shipped with the package.
"""

import csv
import io
import json
import resource
import statistics
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from importlib import resources

import numpy as np

from .dense import complex_gaussian, derive_rng
from .errors import InvalidInputError
from .problems import make_ellipse_2d, make_gaussian_1d, make_uniform_1d
from .solver import InverseConfig, build_inverse, estimate_errors, solve

__all__ = ["DENSE_CHECK_MAX_N", "SCHEMA_VERSION", "TABLES", "BenchConfig", "BenchRecord",
           "ConfigError", "cmd_bench", "cmd_factor", "cmd_reproduce", "cmd_solve",
           "loglog_slope", "load_schema", "make_problem_from_config", "records_to_csv",
           "records_to_json", "scaling_series_csv"]

SCHEMA_VERSION = 1
DENSE_CHECK_MAX_N = 4096
PROBLEMS = ("uniform1d", "gauss1d", "ellipse2d")


class ConfigError(InvalidInputError):
    """A configuration value is invalid; ``field`` names the offender."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class BenchConfig:
    problem: str = "uniform1d"
    n: int = 1024
    sigma2: float = None
    eps_bff: float = None
    eps_peel: float = 1e-6
    eps_hif: float = None
    rank: int = None
    oversample: int = None
    leaf_size: int = None
    seed: int = 0
    solve_tol: float = 1e-8
    max_iter: int = 5000
    precond: str = "inverse"
    output: str = "json"
    dense_check: bool = False

    @property
    def dim(self):
        return 2 if self.problem == "ellipse2d" else 1

    @property
    def N(self):
        return self.n ** self.dim

    def validate(self):
        if self.problem not in PROBLEMS:
            raise ConfigError("problem", f"expected one of {PROBLEMS}, got {self.problem!r}")
        if not isinstance(self.n, (int, np.integer)) or self.n < 2 or self.n % 2:
            raise ConfigError("n", f"must be a positive even integer, got {self.n!r}")
        for name in ("eps_bff", "eps_peel", "eps_hif"):
            v = getattr(self, name)
            if v is not None and not 0 < v < 1:
                raise ConfigError(name, f"must lie in (0, 1), got {v}")
        if self.sigma2 is not None:
            if self.problem != "gauss1d":
                raise ConfigError("sigma2", "only applies to the gauss1d problem")
            if not self.sigma2 > 0:
                raise ConfigError("sigma2", f"must be positive, got {self.sigma2}")
        for name in ("rank", "leaf_size"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(name, f"must be positive, got {v}")
        if self.oversample is not None and self.oversample < 0:
            raise ConfigError("oversample", f"must be non-negative, got {self.oversample}")
        if not 0 < self.solve_tol < 1:
            raise ConfigError("solve_tol", f"must lie in (0, 1), got {self.solve_tol}")
        if self.max_iter < 1:
            raise ConfigError("max_iter", f"must be positive, got {self.max_iter}")
        if self.precond not in ("inverse", "adjoint"):
            raise ConfigError("precond", f"expected inverse or adjoint, got {self.precond!r}")
        if self.output not in ("json", "csv"):
            raise ConfigError("output", f"expected json or csv, got {self.output!r}")
        if self.dense_check and self.N > DENSE_CHECK_MAX_N:
            raise ConfigError("dense_check", f"dense oracles are refused above N={DENSE_CHECK_MAX_N} "
                                             f"(N={self.N})")
        return self

    def inverse_config(self):
        return InverseConfig(eps_bff=self.eps_bff, eps_peel=self.eps_peel, eps_hif=self.eps_hif,
                             peel_rank=self.rank, peel_oversample=self.oversample,
                             leaf_size=self.leaf_size, seed=self.seed)


def make_problem_from_config(cfg):
    if cfg.problem == "uniform1d":
        return make_uniform_1d(cfg.n)
    if cfg.problem == "gauss1d":
        return make_gaussian_1d(cfg.n, sigma2=0.1 if cfg.sigma2 is None else cfg.sigma2)
    return make_ellipse_2d(cfg.n)


@dataclass
class BenchRecord:
    schema_version: int
    command: str
    problem: str
    n: int
    N: int
    sigma2: float = None
    eps_bff: float = None
    eps_peel: float = None
    eps_hif: float = None
    seed: int = 0
    precond: str = None
    e_a: float = None
    e_s: float = None
    n_i: int = None
    converged: bool = None
    t_s: float = None
    n_i_adjoint: int = None
    t_s_adjoint: float = None
    t_butterfly: float = None
    t_peel: float = None
    t_hif: float = None
    t_build: float = None
    t_apply_G: float = None
    t_apply_GKH: float = None
    factor_bytes: int = None
    peak_rss_bytes: int = None
    config: dict = field(default_factory=dict)


CSV_FIELDS = tuple(f.name for f in fields(BenchRecord) if f.name != "config")


def _peak_rss():
    r = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return int(r if sys.platform == "darwin" else r * 1024)


def _factor_bytes(inv):
    b = inv.bf.nbytes
    for s in inv.g.stages:
        b += s.data.nbytes + s.indices.nbytes + s.indptr.nbytes
    if inv.g.root_labels.size:
        b += inv.g.root_lu[0].nbytes
    return int(b)


def _median_time(fn, repeats=3):
    fn()   # warm-up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _record(command, cfg, inv=None):
    rec = BenchRecord(SCHEMA_VERSION, command, cfg.problem, cfg.n, cfg.N, sigma2=cfg.sigma2,
                      seed=cfg.seed, config=asdict(cfg))
    if cfg.problem == "gauss1d" and cfg.sigma2 is None:
        rec.sigma2 = 0.1
    if inv is not None:
        c = inv.config
        rec.eps_bff, rec.eps_peel, rec.eps_hif = c.eps_bff, c.eps_peel, c.eps_hif
        t = inv.timings
        rec.t_butterfly = t.get("butterfly")
        rec.t_peel = t.get("peel")
        rec.t_hif = t.get("hif")
        rec.t_build = t.get("total")
        rec.factor_bytes = _factor_bytes(inv)
    return rec


def _apply_timings(inv, rec, seed):
    v = complex_gaussian(derive_rng(seed, 11), inv.N)
    rec.t_apply_G = _median_time(lambda: inv.apply_G(v))
    rec.t_apply_GKH = _median_time(lambda: inv.apply_G(inv.apply_KH(v)))


def _random_rhs(problem, seed):
    f = complex_gaussian(derive_rng(seed, 12), problem.N)
    return problem.matvec(f)


def cmd_factor(cfg, save=None, bf=None, timing=True):
    """Build the inverse factorization; returns ``(record, inverse)``."""
    cfg.validate()
    problem = make_problem_from_config(cfg)
    inv = build_inverse(problem, cfg.inverse_config(), bf=bf)
    rec = _record("factor", cfg, inv)
    if timing:
        _apply_timings(inv, rec, cfg.seed)
    if cfg.dense_check:
        rec.e_a, rec.e_s = estimate_errors(problem, inv, seed=cfg.seed)
    if save is not None:
        from .container import save_inverse
        save_inverse(inv, save)
    rec.peak_rss_bytes = _peak_rss()
    return rec, inv


def cmd_solve(cfg, inv=None, load=None, rhs=None):
    """Run CG with ``cfg.precond`` on ``K f = rhs`` (random ``rhs`` by default).

    The factorization comes from ``inv``, from the container at ``load``,
    or is built from ``cfg``.
    """
    cfg.validate()
    if inv is None and load is not None:
        from .container import load_inverse
        try:
            inv = load_inverse(load)
        except FileNotFoundError:
            raise InvalidInputError(f"no factorization at {load!r}; run 'fioinv factor --save "
                                    f"{load}' first or drop --load to build one") from None
    if inv is None:
        _, inv = cmd_factor(cfg, timing=False)
    problem = inv.problem
    if problem.N != cfg.N or problem.label != cfg.problem:
        raise InvalidInputError(f"factorization is for {problem.label} N={problem.N}, config asks "
                                f"for {cfg.problem} N={cfg.N}")
    u = _random_rhs(problem, cfg.seed) if rhs is None else np.asarray(rhs, dtype=np.complex128)
    if u.shape != (problem.N,):
        raise InvalidInputError(f"right-hand side has shape {u.shape}, expected ({problem.N},)")
    _, rep = solve(inv, u, precond=cfg.precond, tol=cfg.solve_tol, max_iter=cfg.max_iter)
    rec = _record("solve", cfg, inv)
    rec.precond = cfg.precond
    rec.n_i, rec.converged, rec.t_s = rep.iterations, rep.converged, rep.solve_time
    if cfg.dense_check:
        rec.e_a, rec.e_s = estimate_errors(problem, inv, seed=cfg.seed)
    rec.peak_rss_bytes = _peak_rss()
    return rec, inv


def _table_row(cfg, command, bf=None):
    rec, inv = cmd_factor(cfg, bf=bf, timing=True)
    rec.command = command
    u = _random_rhs(inv.problem, cfg.seed)
    _, ri = solve(inv, u, "inverse", tol=cfg.solve_tol, max_iter=cfg.max_iter)
    _, ra = solve(inv, u, "adjoint", tol=cfg.solve_tol, max_iter=cfg.max_iter)
    rec.precond = "inverse"
    rec.n_i, rec.converged, rec.t_s = ri.iterations, ri.converged, ri.solve_time
    rec.n_i_adjoint, rec.t_s_adjoint = ra.iterations, ra.solve_time
    if cfg.N <= DENSE_CHECK_MAX_N:
        rec.e_a, rec.e_s = estimate_errors(inv.problem, inv, seed=cfg.seed)
    rec.peak_rss_bytes = _peak_rss()
    return rec, inv


# (problem, sigma2, per-axis sizes, epsilons) in the published row order
TABLES = {
    "t3": ("uniform1d", None, (1024, 4096, 16384, 65536, 262144), (1e-6, 1e-3)),
    "t4": ("gauss1d", 0.1, (1024, 4096, 16384, 65536, 262144), (1e-5, 1e-3)),
    "t5": ("gauss1d", 0.05, (1024, 4096, 16384, 65536, 262144), (1e-4, 1e-3)),
    "t6": ("ellipse2d", None, (64, 128, 256, 512), (1e-3,)),
}


def cmd_reproduce(table_id, max_n, base=None, progress=None):
    """One record per ``(N, eps)`` row of the table, for ``N <= max_n``.

    The butterfly is built once per ``N`` and shared by that size's rows.
    ``e_a``/``e_s`` need dense products and are only filled for
    ``N <= DENSE_CHECK_MAX_N``.
    """
    if table_id not in TABLES:
        raise ConfigError("table", f"unknown table {table_id!r}; choose from {sorted(TABLES)}")
    problem, sigma2, sizes, epsilons = TABLES[table_id]
    base = base or BenchConfig()
    out = []
    for n in sizes:
        cfg0 = BenchConfig(**{**asdict(base), "problem": problem, "n": n, "sigma2": sigma2,
                              "dense_check": False})
        if cfg0.N > max_n:
            break
        bf = None
        for eps in epsilons:
            cfg = BenchConfig(**{**asdict(cfg0), "eps_peel": eps, "eps_hif": None})
            rec, inv = _table_row(cfg, f"reproduce-{table_id}", bf=bf)
            if bf is None:
                bf_time = inv.timings["butterfly"]
            rec.t_butterfly = bf_time
            rec.t_build = bf_time + rec.t_peel + rec.t_hif
            bf = inv.bf
            out.append(rec)
            if progress is not None:
                progress(rec)
    return out


def loglog_slope(ns, ts):
    """Least-squares slope of ``log t`` against ``log N``."""
    ns = np.asarray(ns, dtype=float)
    ts = np.asarray(ts, dtype=float)
    if ns.size < 2 or np.any(ts <= 0):
        raise InvalidInputError("need at least two sizes with positive times")
    return float(np.polyfit(np.log(ns), np.log(ts), 1)[0])


def cmd_bench(cfg, sizes, progress=None):
    """Scaling sweep over per-axis sizes; returns ``(records, slopes)``."""
    recs = []
    for n in sizes:
        c = BenchConfig(**{**asdict(cfg), "n": int(n), "dense_check": False})
        rec, inv = cmd_factor(c, timing=True)
        rec.command = "bench"
        recs.append(rec)
        if progress is not None:
            progress(rec)
        del inv
    slopes = {}
    if len(recs) >= 2:
        Ns = [r.N for r in recs]
        for key in ("t_butterfly", "t_peel", "t_hif", "t_build", "t_apply_G", "t_apply_GKH"):
            slopes[key] = loglog_slope(Ns, [getattr(r, key) for r in recs])
    return recs, slopes


def _plain(v):
    if isinstance(v, np.generic):
        return v.item()
    return v


def records_to_json(records):
    return json.dumps([{k: _plain(v) for k, v in asdict(r).items()} for r in records], indent=2)


def records_to_csv(records):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in records:
        d = asdict(r)
        w.writerow(["" if d[k] is None else _plain(d[k]) for k in CSV_FIELDS])
    return buf.getvalue()


def scaling_series_csv(records):
    """``(N, time)`` series for log-log plotting by external tools."""
    keys = ("t_butterfly", "t_peel", "t_hif", "t_build", "t_apply_G", "t_apply_GKH")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("N",) + keys)
    for r in records:
        w.writerow((r.N,) + tuple(getattr(r, k) for k in keys))
    return buf.getvalue()


def load_schema():
    text = resources.files("fioinv").joinpath("bench_record.schema.json").read_text()
    return json.loads(text)
