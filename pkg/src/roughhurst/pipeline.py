"""End-to-end estimation runs and Monte Carlo studies."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .asymptotics import (
    AsymptoticSpec,
    clt_variance,
    confidence_interval,
    gamma_hat,
    integrated_vov_hat,
    rate,
    window_constant,
)
from .errors import DomainError, NumericError, PipelineError, RangeError, RoughHurstError, StudyError
from .hurst import (
    EstimationConfig,
    HurstEstimate,
    _pilot,
    _VhatCache,
    final_estimate,
    m_hat,
    pilot_window,
    semimartingale_gate,
)
from .io import write_json
from .simulate import ModelParams, derive_seed, simulate_market
from .stats import PriceSeries

log = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.2
ESTIMATORS = ("pilot", "bar_h", "hat_h", "final_h")
REPLICATE_FIELDS = (
    "n", "rep", "seed", "h_true", "pilot", "bar_h", "hat_h", "final_h", "m_hat", "k_hat",
    "gate_passed", "ci_lo", "ci_hi", "covered", "clamped", "clamp_rate", "error",
)  # fmt: skip


@dataclass
class RunReport:
    command: str
    config_echo: dict
    estimate: HurstEstimate | None = None
    asymptotics: AsymptoticSpec | None = None
    mc_summary: dict | None = None
    timings: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    replicates: list = field(default_factory=list, repr=False)

    def as_dict(self, timings: bool = True) -> dict:
        out = {
            "command": self.command,
            "config_echo": self.config_echo,
            "estimate": None if self.estimate is None else self.estimate.as_dict(),
            "asymptotics": None if self.asymptotics is None else self.asymptotics.as_dict(),
            "mc_summary": self.mc_summary,
            "notes": list(self.notes),
        }
        if timings:
            out["timings"] = dict(self.timings)
        return out


class _Timer:
    def __init__(self, sink: dict):
        self.sink = sink

    def __call__(self, name, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kw)
        finally:
            self.sink[name] = self.sink.get(name, 0.0) + time.perf_counter() - t0


def null_gamma_hats(series: PriceSeries, cfg: EstimationConfig) -> tuple[float, float, float]:
    """Variance functionals calibrated to the H = 1/2 hypothesis: roughness
    1/2 and the pilot window, where the gate statistic is evaluated."""
    return gamma_hat(series, 0.5, pilot_window(series.delta), cfg.lam, cfg.t)


def _fallback_estimate(series: PriceSeries, cfg: EstimationConfig, cause: PipelineError) -> HurstEstimate:
    pilot, clamped, k_tilde = _pilot(series, cfg, _VhatCache(series, cfg.t))
    return HurstEstimate(
        pilot=pilot,
        iterates=(pilot,),
        m_hat=m_hat(pilot, series.delta),
        bar_h=math.nan,
        h_u=math.nan,
        k_hat=k_tilde,
        hat_h=math.nan,
        k_tilde=k_tilde,
        u=math.nan,
        clamped=clamped,
        diagnostics={"fallback": str(cause)},
    )


def run_estimate(series: PriceSeries, cfg: EstimationConfig, echo: dict | None = None) -> RunReport:
    """Estimate, attach a confidence interval, then apply the H = 1/2 gate.

    If the rough estimator fails after the pilot stage (for instance an
    order M above 8, typical when H is 1/2) the gate still decides: when it
    keeps H = 1/2 the report carries that verdict, otherwise the failure
    propagates. Interval failures (a negative variance aggregate or too few
    variance blocks at small n) leave ``ci`` unset and are recorded in ``notes``.
    """
    timings: dict[str, float] = {}
    timed = _Timer(timings)
    config_echo = {"estimation": cfg.as_dict(), "n": series.n, "delta": series.delta, "label": series.label}
    if echo:
        config_echo.update(echo)
    report = RunReport("estimate", config_echo, timings=timings)
    try:
        est = timed("estimate", final_estimate, series, cfg)
        failure = None
    except PipelineError as exc:
        if exc.stage == "pilot":
            raise
        est = _fallback_estimate(series, cfg, exc)
        failure = exc

    try:
        gh_null = timed("gamma_hat_null", null_gamma_hats, series, cfg)
    except RoughHurstError as exc:
        raise PipelineError("variance", exc) from exc

    asym = gh = None
    if failure is None:
        try:
            gh = timed("gamma_hat", gamma_hat, series, est.hat_h, est.k_hat, cfg.lam, cfg.t)
            ivov = timed("ivov", integrated_vov_hat, series, est, cfg)
            theta = window_constant(est.k_hat, est.hat_h, series.delta)
            var = timed("clt_variance", clt_variance, est.hat_h, est.m_hat, gh, cfg, ivov, theta)
            if var < 0:
                raise NumericError(f"negative asymptotic variance {var:.4g}")
            ci = confidence_interval(est.hat_h, var, series.delta, cfg.ci_level)
            asym = AsymptoticSpec(gh, var, rate(est.hat_h, series.delta), ci, True, ivov, theta)
            est = replace(est, ci=ci)
        except (NumericError, DomainError, RangeError) as exc:
            report.notes.append(f"confidence interval unavailable: {exc}")

    try:
        est = timed("gate", semimartingale_gate, series, cfg, est, gh_null)
    except RoughHurstError as exc:
        raise PipelineError("gate", exc) from exc
    if failure is not None:
        if est.gate_passed:
            raise failure
        report.notes.append(f"rough estimator unavailable, gate kept H=1/2: {failure}")
    diag = dict(est.diagnostics)
    # an interval built on a clamped inversion is reported but not trusted
    diag["ci_reliable"] = est.ci is not None and not est.clamped
    diag["gamma_hats_null"] = list(gh_null)
    if gh is not None:
        diag["gamma_hats"] = list(gh)
    report.estimate = replace(est, diagnostics=diag)
    report.asymptotics = asym
    return report


# ---------------------------------------------------------------------------
# Monte Carlo


def _replicate(task) -> dict:
    model, n, delta, cfg, rep, seed = task
    row = dict.fromkeys(REPLICATE_FIELDS)
    row.update(n=n, rep=rep, seed=seed, h_true=model.H, error="")
    try:
        market = simulate_market(model, n, delta, seed)
        row["clamp_rate"] = market.clamp_rate
        est = run_estimate(market.series, cfg).estimate
    except RoughHurstError as exc:
        row["error"] = str(exc)
        return row
    row.update(
        pilot=est.pilot, bar_h=est.bar_h, hat_h=est.hat_h, final_h=est.final_h,
        m_hat=est.m_hat, k_hat=est.k_hat, gate_passed=est.gate_passed, clamped=est.clamped,
    )  # fmt: skip
    if est.ci is not None:
        row["ci_lo"], row["ci_hi"] = est.ci
        row["covered"] = est.ci[0] <= model.H <= est.ci[1]
    return row


def _err_stats(values: np.ndarray, truth: float) -> dict:
    v = values[np.isfinite(values)]
    if v.size == 0:
        return {"count": 0, "bias": None, "rmse": None, "median_abs_error": None}
    e = v - truth
    return {
        "count": int(v.size),
        "bias": float(e.mean()),
        "rmse": float(math.sqrt(np.mean(e**2))),
        "median_abs_error": float(np.median(np.abs(e))),
    }


def _col(rows, key) -> np.ndarray:
    return np.array([np.nan if r[key] is None else float(r[key]) for r in rows])


def summarize(rows: list[dict], h_true: float) -> dict:
    """Aggregate one level of a study from its per-replicate rows."""
    ok = [r for r in rows if not r["error"]]
    out = {
        "reps": len(rows),
        "failures": len(rows) - len(ok),
        "failure_rate": (len(rows) - len(ok)) / len(rows),
        "h_true": h_true,
    }
    for key in ESTIMATORS:
        out[key] = _err_stats(_col(ok, key), h_true)
    with_ci = [r for r in ok if r["covered"] is not None]
    out["ci_count"] = len(with_ci)
    out["coverage"] = sum(bool(r["covered"]) for r in with_ci) / len(with_ci) if with_ci else None
    out["gate_pass_rate"] = sum(bool(r["gate_passed"]) for r in ok) / len(ok) if ok else None
    out["final_half_rate"] = sum(r["final_h"] == 0.5 for r in ok) / len(ok) if ok else None
    out["clamped_rate"] = sum(bool(r["clamped"]) for r in ok) / len(ok) if ok else None
    clamp = _col([r for r in rows if r["clamp_rate"] is not None], "clamp_rate")
    out["mean_vol_clamp_rate"] = float(clamp.mean()) if clamp.size else None
    return out


def rate_slope(ns, rmses) -> float | None:
    """Least-squares slope of log RMSE on log n."""
    pts = [(n, r) for n, r in zip(ns, rmses) if r is not None and r > 0]
    if len(pts) < 2:
        return None
    x, y = np.log([p[0] for p in pts]), np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


def _fmt_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def write_replicates_csv(rows: list[dict], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPLICATE_FIELDS)
        for r in rows:
            w.writerow([_fmt_cell(r[k]) for k in REPLICATE_FIELDS])


def run_mc_study(
    model: ModelParams,
    n: int,
    reps: int,
    cfg: EstimationConfig,
    master_seed: int,
    n_ladder: list[int] | None = None,
    workers: int = 1,
    out_dir: str | Path | None = None,
    horizon: float = 1.0,
) -> RunReport:
    """Simulate ``reps`` markets per sample size and estimate each.

    Sampling interval is ``horizon / n``. Replicate seeds depend only on the
    master seed, the ladder level and the replicate index, so the summary
    does not depend on ``workers``. With ``out_dir`` the per-replicate table
    and the summary are written there.
    """
    if reps < 1:
        raise DomainError(f"reps must be >= 1, got {reps}")
    sizes = list(n_ladder) if n_ladder else [n]
    tasks = []
    for level, size in enumerate(sizes):
        level_seed = derive_seed(master_seed, level)
        for rep in range(reps):
            tasks.append((model, size, horizon / size, cfg, rep, derive_seed(level_seed, rep)))
    t0 = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_replicate, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        rows = [_replicate(t) for t in tasks]
    elapsed = time.perf_counter() - t0
    rows.sort(key=lambda r: (r["n"], r["rep"]))

    levels = {size: summarize([r for r in rows if r["n"] == size], model.H) for size in sizes}
    summary = {"levels": [dict(n=size, delta=horizon / size, **levels[size]) for size in sizes]}
    summary["rate_slope_log_n"] = rate_slope(sizes, [levels[s]["hat_h"]["rmse"] for s in sizes])
    summary["expected_slope"] = -1 / (4 * model.H + 2) if model.H < 0.5 else None

    echo = {
        "estimation": cfg.as_dict(),
        "model": dataclasses.asdict(model),
        "n": n,
        "n_ladder": sizes,
        "reps": reps,
        "seed": master_seed,
        "horizon": horizon,
    }
    report = RunReport("mc", echo, mc_summary=summary, timings={"replicates": elapsed})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_replicates_csv(rows, out / "replicates.csv")
        summary["replicates_csv"] = "replicates.csv"
        write_json(summary, out / "summary.json")
    failures = sum(1 for r in rows if r["error"])
    if failures > MAX_FAILURE_RATE * len(rows):
        first = next(r["error"] for r in rows if r["error"])
        raise StudyError(f"{failures} of {len(rows)} replicates failed; first failure: {first}")
    if failures:
        log.warning("%d of %d replicates failed", failures, len(rows))
    report.replicates = rows
    return report
