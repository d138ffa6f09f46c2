"""Seeded replication harness for the sampled-market experiments.

A replication is (sample a market at size t with a derived seed, solve
it, record estimates).  Replications are the unit of parallelism; each
one is pure given its seed, results are reduced in (t, rep) order, and
per-replication seeds depend only on (base_seed, t, rep), so output
files are byte-identical no matter how many workers run.  FISHER_INFER_THREADS
caps the worker pool.

CSV column sets are fixed:
  convergence: t,rep,seed,nsw_hat,nsw_star,abs_err
  clt:         rep,seed,standardized_nsw
  coverage:    rep,seed,lo,hi,covered
  qlin:        t,rep,seed,rev_hat,rev_star,abs_err
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .finite import solve_sample_eg, solve_sample_qeg
from .inference import ci_nsw, estimate_sigma2_nsw
from .longrun import LongRunEquilibrium, sigma2_nsw, solve_longrun_eg, solve_longrun_qeg
from .markets import (Linear1DValuation, LongRunSpec, sample_items, spec_from_dict,
                      spec_to_dict)
from .statkit import KSResult, RateFit, fit_rate, ks_normal_test, qq_points, summarize_reps

MODES = ("convergence", "clt", "coverage", "revenue_qlin", "single_solve")


@dataclass(frozen=True)
class ExperimentConfig:
    spec: LongRunSpec
    mode: str
    t_grid: tuple[int, ...]
    k: int
    base_seed: int = 0
    alpha: float = 0.05
    tol: float = 1e-9
    max_iter: int = 200_000
    method: str = "pr"
    out_dir: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        grid = tuple(int(t) for t in self.t_grid)
        if len(grid) == 0 or any(a >= b for a, b in zip(grid, grid[1:])):
            raise ValueError("t_grid must be nonempty and strictly ascending")
        object.__setattr__(self, "t_grid", grid)
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return {
        "spec": spec_to_dict(cfg.spec),
        "mode": cfg.mode,
        "t_grid": list(cfg.t_grid),
        "k": cfg.k,
        "base_seed": cfg.base_seed,
        "alpha": cfg.alpha,
        "tol": cfg.tol,
        "max_iter": cfg.max_iter,
        "method": cfg.method,
        "out_dir": cfg.out_dir,
    }


def config_from_dict(data: dict, base_dir: str = ".") -> ExperimentConfig:
    if "spec_path" in data:
        path = data["spec_path"]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        with open(path) as fh:
            spec = spec_from_dict(json.load(fh))
    else:
        spec = spec_from_dict(data["spec"])
    return ExperimentConfig(
        spec=spec,
        mode=data["mode"],
        t_grid=tuple(data["t_grid"]),
        k=int(data["k"]),
        base_seed=int(data.get("base_seed", 0)),
        alpha=float(data.get("alpha", 0.05)),
        tol=float(data.get("tol", 1e-9)),
        max_iter=int(data.get("max_iter", 200_000)),
        method=data.get("method", "pr"),
        out_dir=data.get("out_dir"),
    )


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh), base_dir=os.path.dirname(path) or ".")


def derive_seed(base_seed: int, t: int, rep: int) -> int:
    """Stable 64-bit seed for one replication, from (base_seed, t, rep) only."""
    digest = hashlib.blake2b(f"{base_seed}:{t}:{rep}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


# ---------------------------------------------------------------------------
# Replications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReplicationResult:
    t: int
    rep: int
    seed: int
    status: str
    wall_time: float
    nsw_hat: float = float("nan")
    rev_hat: float = float("nan")
    sigma2_hat: float = float("nan")
    ci: tuple[float, float] | None = None
    beta_hat: tuple[float, ...] = ()
    u_hat: tuple[float, ...] = ()
    comp_slack: float = float("nan")


def _replication(args) -> ReplicationResult:
    spec_dict, t, rep, seed, tol, max_iter, method, qlin, alpha = args
    spec = spec_from_dict(spec_dict)
    start = time.perf_counter()
    market = sample_items(spec, t, seed)
    if qlin:
        eq = solve_sample_qeg(market, tol=tol, max_iter=max_iter, method=method)
    else:
        eq = solve_sample_eg(market, tol=tol, max_iter=max_iter, method=method)
    wall = time.perf_counter() - start
    if not eq.certificate.certified:
        # recorded, not fatal: the row is flagged and skipped in summaries
        return ReplicationResult(t=t, rep=rep, seed=seed, status="uncertified",
                                 wall_time=wall)
    if qlin:
        comp = float(np.abs(eq.delta * (1.0 - eq.beta)).max())
        return ReplicationResult(t=t, rep=rep, seed=seed, status="ok", wall_time=wall,
                                 rev_hat=eq.rev, beta_hat=tuple(eq.beta),
                                 u_hat=tuple(eq.u), comp_slack=comp)
    sigma2_hat = estimate_sigma2_nsw(eq.p)
    lo, hi = ci_nsw(eq.nsw, sigma2_hat, t, alpha)
    return ReplicationResult(t=t, rep=rep, seed=seed, status="ok", wall_time=wall,
                             nsw_hat=eq.nsw, sigma2_hat=sigma2_hat, ci=(lo, hi),
                             beta_hat=tuple(eq.beta), u_hat=tuple(eq.u))


def _worker_cap(njobs: int) -> int:
    env = os.environ.get("FISHER_INFER_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, njobs))


def _run_jobs(jobs: list) -> list[ReplicationResult]:
    workers = _worker_cap(len(jobs))
    if workers == 1:
        results = [_replication(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replication, jobs,
                                    chunksize=max(1, len(jobs) // (4 * workers))))
    return sorted(results, key=lambda r: (r.t, r.rep))


def _jobs_for(config: ExperimentConfig, t_values, qlin: bool) -> list:
    spec_dict = spec_to_dict(config.spec)
    return [(spec_dict, t, rep, derive_seed(config.base_seed, t, rep),
             config.tol, config.max_iter, config.method, qlin, config.alpha)
            for t in t_values for rep in range(config.k)]


# ---------------------------------------------------------------------------
# CSV output; repr keeps every float bit so reruns compare byte-for-byte
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path: str, header: list[str], rows: list[tuple]) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _out_path(config: ExperimentConfig, out_dir: str | None, name: str) -> str | None:
    base = out_dir if out_dir is not None else config.out_dir
    if base is None:
        return None
    return os.path.join(base, name)


def _longrun_reference(spec: LongRunSpec, qlin: bool = False) -> LongRunEquilibrium | None:
    if not isinstance(spec.valuation, Linear1DValuation):
        return None
    try:
        return solve_longrun_qeg(spec) if qlin else solve_longrun_eg(spec)
    except (ValueError, RuntimeError):
        return None


# ---------------------------------------------------------------------------
# Experiment entry points
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceResult:
    rows: list[ReplicationResult]
    summary: list[dict]
    nsw_star: float | None
    beta_star: tuple[float, ...] | None
    nsw_rate: RateFit | None
    beta_rate: RateFit | None


def run_convergence_sweep(config: ExperimentConfig,
                          out_dir: str | None = None) -> ConvergenceResult:
    """Welfare error sweep over t_grid with k replications each.

    When the spec admits an exact long-run solution, absolute errors
    against it are tabulated and a log-log rate is fit to the mean
    error per t (and to the multiplier error norm).
    """
    star = _longrun_reference(config.spec)
    nsw_star = star.nsw_star if star is not None else None
    beta_star = tuple(star.beta_star) if star is not None else None
    rows = _run_jobs(_jobs_for(config, config.t_grid, qlin=False))

    csv_rows = []
    for r in rows:
        err = abs(r.nsw_hat - nsw_star) if nsw_star is not None else float("nan")
        csv_rows.append((r.t, r.rep, r.seed, r.nsw_hat,
                         nsw_star if nsw_star is not None else float("nan"), err))
    path = _out_path(config, out_dir, "convergence.csv")
    if path:
        _write_csv(path, ["t", "rep", "seed", "nsw_hat", "nsw_star", "abs_err"], csv_rows)

    summary = []
    for t in config.t_grid:
        good = [r for r in rows if r.t == t and r.status == "ok"]
        failed = sum(1 for r in rows if r.t == t and r.status != "ok")
        entry = {"t": t, "n_ok": len(good), "n_failed": failed,
                 "mean_nsw": float("nan"), "stderr_nsw": float("nan"),
                 "mean_abs_err": float("nan"), "mean_beta_err": float("nan")}
        if good:
            entry["mean_nsw"], entry["stderr_nsw"] = summarize_reps(
                [r.nsw_hat for r in good])
            if nsw_star is not None:
                entry["mean_abs_err"], _ = summarize_reps(
                    [abs(r.nsw_hat - nsw_star) for r in good])
            if beta_star is not None:
                entry["mean_beta_err"], _ = summarize_reps(
                    [float(np.linalg.norm(np.array(r.beta_hat) - np.array(beta_star)))
                     for r in good])
        summary.append(entry)

    nsw_rate = beta_rate = None
    if nsw_star is not None:
        pts = [(e["t"], e["mean_abs_err"]) for e in summary
               if e["n_ok"] > 0 and e["mean_abs_err"] > 0]
        if len(pts) >= 2:
            nsw_rate = fit_rate(pts)
        bpts = [(e["t"], e["mean_beta_err"]) for e in summary
                if e["n_ok"] > 0 and e["mean_beta_err"] > 0]
        if len(bpts) >= 2:
            beta_rate = fit_rate(bpts)
    return ConvergenceResult(rows=rows, summary=summary, nsw_star=nsw_star,
                             beta_star=beta_star, nsw_rate=nsw_rate, beta_rate=beta_rate)


@dataclass(frozen=True)
class CltResult:
    rows: list[ReplicationResult]
    samples: np.ndarray
    sigma2: float
    ks: KSResult | None
    qq: list[tuple[float, float]] | None
    degenerate: bool


def run_clt_experiment(config: ExperimentConfig, out_dir: str | None = None) -> CltResult:
    """Distribution of sqrt(t) (nsw_hat - nsw_star) at the largest grid t.

    Emits the k centered, scaled samples and tests them against
    N(0, sigma2_nsw) of the long-run market.  A zero-variance market is
    reported as degenerate instead of tested.
    """
    star = _longrun_reference(config.spec)
    if star is None:
        raise ValueError("clt experiment needs a 1-D linear spec with an exact solution")
    t = config.t_grid[-1]
    sig2 = sigma2_nsw(star)
    rows = _run_jobs(_jobs_for(config, [t], qlin=False))
    good = [r for r in rows if r.status == "ok"]
    samples = np.array([math.sqrt(t) * (r.nsw_hat - star.nsw_star) for r in good])

    path = _out_path(config, out_dir, "clt.csv")
    if path:
        _write_csv(path, ["rep", "seed", "standardized_nsw"],
                   [(r.rep, r.seed, math.sqrt(t) * (r.nsw_hat - star.nsw_star))
                    for r in good])

    degenerate = sig2 <= 0
    ks = qq = None
    if not degenerate and len(samples) >= 2:
        ks = ks_normal_test(samples, 0.0, math.sqrt(sig2))
        qq = qq_points(samples, 0.0, math.sqrt(sig2))
    return CltResult(rows=rows, samples=samples, sigma2=sig2, ks=ks, qq=qq,
                     degenerate=degenerate)


@dataclass(frozen=True)
class CoverageResult:
    rows: list[ReplicationResult]
    covered: list[bool]
    coverage: float
    stderr: float
    nsw_star: float


def run_coverage_experiment(config: ExperimentConfig,
                            out_dir: str | None = None) -> CoverageResult:
    """Empirical coverage of the NSW interval at the largest grid t."""
    star = _longrun_reference(config.spec)
    if star is None:
        raise ValueError("coverage experiment needs a 1-D linear spec with an exact solution")
    t = config.t_grid[-1]
    rows = _run_jobs(_jobs_for(config, [t], qlin=False))
    good = [r for r in rows if r.status == "ok"]
    # roundoff slack: zero-variance markets produce zero-width intervals
    # that sit within an ulp of the target; containment must not break there
    slack = 1e-12 * max(1.0, abs(star.nsw_star))
    covered = [bool(r.ci[0] - slack <= star.nsw_star <= r.ci[1] + slack)
               for r in good]

    path = _out_path(config, out_dir, "coverage.csv")
    if path:
        _write_csv(path, ["rep", "seed", "lo", "hi", "covered"],
                   [(r.rep, r.seed, r.ci[0], r.ci[1], c) for r, c in zip(good, covered)])

    k = len(covered)
    frac = sum(covered) / k if k else float("nan")
    stderr = math.sqrt(frac * (1.0 - frac) / k) if k else float("nan")
    return CoverageResult(rows=rows, covered=covered, coverage=frac, stderr=stderr,
                          nsw_star=star.nsw_star)


@dataclass(frozen=True)
class QlinRevenueResult:
    rows: list[ReplicationResult]
    summary: list[dict]
    rev_star: float
    rate: RateFit | None
    max_comp_slack: float


def run_qlin_revenue(config: ExperimentConfig,
                     out_dir: str | None = None) -> QlinRevenueResult:
    """Revenue error sweep for the quasilinear market over t_grid."""
    star = _longrun_reference(config.spec, qlin=True)
    if star is None:
        raise ValueError("revenue sweep needs a 1-D linear spec with an exact solution")
    rows = _run_jobs(_jobs_for(config, config.t_grid, qlin=True))

    path = _out_path(config, out_dir, "qlin.csv")
    if path:
        _write_csv(path, ["t", "rep", "seed", "rev_hat", "rev_star", "abs_err"],
                   [(r.t, r.rep, r.seed, r.rev_hat, star.rev,
                     abs(r.rev_hat - star.rev)) for r in rows])

    summary = []
    for t in config.t_grid:
        good = [r for r in rows if r.t == t and r.status == "ok"]
        entry = {"t": t, "n_ok": len(good),
                 "n_failed": sum(1 for r in rows if r.t == t and r.status != "ok"),
                 "mean_abs_err": float("nan"), "stderr_abs_err": float("nan")}
        if good:
            entry["mean_abs_err"], entry["stderr_abs_err"] = summarize_reps(
                [abs(r.rev_hat - star.rev) for r in good])
        summary.append(entry)
    pts = [(e["t"], e["mean_abs_err"]) for e in summary
           if e["n_ok"] > 0 and e["mean_abs_err"] > 0]
    rate = fit_rate(pts) if len(pts) >= 2 else None
    slacks = [r.comp_slack for r in rows if r.status == "ok"]
    return QlinRevenueResult(rows=rows, summary=summary, rev_star=star.rev, rate=rate,
                             max_comp_slack=max(slacks) if slacks else float("nan"))


def run_experiment(config: ExperimentConfig, out_dir: str | None = None):
    """Dispatch on config.mode."""
    if config.mode == "convergence":
        return run_convergence_sweep(config, out_dir)
    if config.mode == "clt":
        return run_clt_experiment(config, out_dir)
    if config.mode == "coverage":
        return run_coverage_experiment(config, out_dir)
    if config.mode == "revenue_qlin":
        return run_qlin_revenue(config, out_dir)
    raise ValueError(f"mode {config.mode!r} has no batch runner")


__all__ = [
    "MODES",
    "ExperimentConfig",
    "config_to_dict",
    "config_from_dict",
    "load_config",
    "derive_seed",
    "ReplicationResult",
    "ConvergenceResult",
    "run_convergence_sweep",
    "CltResult",
    "run_clt_experiment",
    "CoverageResult",
    "run_coverage_experiment",
    "QlinRevenueResult",
    "run_qlin_revenue",
    "run_experiment",
]
