"""Estimation pipeline for the roughness index of volatility.

pilot -> debiased iterates -> randomized window -> final estimate -> H=1/2 gate.

Every autocovariance statistic is taken from :func:`roughhurst.stats.v_hat`,
which shares one prefix-sum array per series.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy import optimize

from .errors import (
    ConfigError,
    DegenerateDataError,
    DomainError,
    NumericError,
    PipelineError,
    RangeError,
    RoughHurstError,
)
from .stats import PriceSeries, phi_const, v_hat

MAX_M = 8
_FLOOR_SNAP = 1e-9


def ifloor(x: float) -> int:
    """Floor that forgives float noise just below an integer."""
    r = round(x)
    if abs(x - r) <= _FLOOR_SNAP * max(1.0, abs(x)):
        return int(r)
    return math.floor(x)


def iceil(x: float) -> int:
    r = round(x)
    if abs(x - r) <= _FLOOR_SNAP * max(1.0, abs(x)):
        return int(r)
    return math.ceil(x)


@dataclass(frozen=True)
class EstimationConfig:
    """Tuning constants of the estimator; every field has a usable default.

    ``lam`` is the block-length exponent of the variance estimators and
    ``r_rule`` the exponent in ``r_n = ceil(delta**-r_rule)``.
    """

    ell1: int = 3
    ell2: int = 4
    q: float = 1.0
    r_rule: float = 0.125
    lam: float = 0.3
    h_lo: float = 1e-3
    h_hi: float = 0.5 - 1e-3
    invert_tol: float = 1e-8
    seed_u: int = 0
    t: float | None = None
    ci_level: float = 0.95

    def __post_init__(self):
        if self.ell1 == self.ell2:
            raise ConfigError("ell1 and ell2 must differ")
        if min(self.ell1, self.ell2) < 3:
            raise ConfigError("both lags must be >= 3")
        if not self.q > 0:
            raise ConfigError(f"q must be positive, got {self.q}")
        if not 0 < self.r_rule < 0.25:
            raise ConfigError(f"r_rule must lie in (0, 1/4), got {self.r_rule}")
        if not 0 < self.lam < 0.5:
            raise ConfigError(f"lambda must lie in (0, 1/2), got {self.lam}")
        if not 0 < self.h_lo < self.h_hi < 0.5:
            raise ConfigError(f"need 0 < h_lo < h_hi < 1/2, got ({self.h_lo}, {self.h_hi})")
        if not self.invert_tol > 0:
            raise ConfigError("invert_tol must be positive")
        if not 0 < self.ci_level < 1:
            raise ConfigError(f"ci_level must lie in (0, 1), got {self.ci_level}")
        if self.t is not None and not self.t > 0:
            raise ConfigError(f"t must be positive, got {self.t}")
        if not _ratio_is_monotone(self.ell1, self.ell2, self.h_lo, self.h_hi):
            raise ConfigError(f"Phi ratio for lags ({self.ell1}, {self.ell2}) is not strictly monotone on [{self.h_lo}, {self.h_hi}]")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class HurstEstimate:
    pilot: float
    iterates: tuple[float, ...]
    m_hat: int
    bar_h: float
    h_u: float
    k_hat: int
    hat_h: float
    k_tilde: int
    u: float
    clamped: bool
    final_h: float | None = None
    gate_passed: bool | None = None
    ci: tuple[float, float] | None = None
    diagnostics: dict = field(default_factory=dict, compare=False)

    def as_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# ratio of limit constants and its inverse


def phi_ratio(H, ell1: int, ell2: int):
    """``Phi(H, ell1) / Phi(H, ell2)``; scalar or array ``H`` in (0, 1/2)."""
    h = np.asarray(H, dtype=float)
    if np.any(h >= 0.5) or np.any(h <= 0):
        raise DomainError(f"ratio undefined outside (0, 1/2), got H={H}")
    return phi_const(H, ell1) / phi_const(H, ell2)


@lru_cache(maxsize=64)
def _ratio_is_monotone(ell1: int, ell2: int, h_lo: float, h_hi: float, points: int = 10_000) -> bool:
    vals = phi_ratio(np.linspace(h_lo, h_hi, points), ell1, ell2)
    d = np.diff(vals)
    return bool(np.all(d > 0) or np.all(d < 0))


def invert_phi_ratio(r: float, cfg: EstimationConfig) -> tuple[float, bool]:
    """Solve ``phi_ratio(H) = r`` on ``[h_lo, h_hi]`` by bisection.

    Returns ``(H, clamped)``; out-of-range ratios map to the endpoint on their side.
    """
    if not math.isfinite(r):
        raise DegenerateDataError(f"autocovariance ratio is not finite ({r})")
    lo, hi = cfg.h_lo, cfg.h_hi
    f_lo = float(phi_ratio(lo, cfg.ell1, cfg.ell2))
    f_hi = float(phi_ratio(hi, cfg.ell1, cfg.ell2))
    if r == f_lo:
        return lo, False
    if r == f_hi:
        return hi, False
    increasing = f_hi > f_lo
    if (r < f_lo) if increasing else (r > f_lo):
        return lo, True
    if (r > f_hi) if increasing else (r < f_hi):
        return hi, True
    root = optimize.bisect(
        lambda h: phi_ratio(h, cfg.ell1, cfg.ell2) - r, lo, hi, xtol=cfg.invert_tol, rtol=4 * np.finfo(float).eps, maxiter=200
    )
    return float(root), False


# ---------------------------------------------------------------------------
# bias-cancelling weights and their orders


def vandermonde_weights(M: int) -> tuple[np.ndarray, np.ndarray]:
    """Solve ``V_M w = e_M`` with ``V_M[p, m] = (m+1)**-p``.

    Returns the raw solution and its Euclidean normalization.
    """
    if M < 1:
        raise DomainError(f"M must be >= 1, got {M}")
    if M > MAX_M:
        raise NumericError(f"M={M} exceeds the supported maximum {MAX_M} (Vandermonde system ill-conditioned)")
    m = np.arange(1, M + 1, dtype=float)
    V = m[None, :] ** -np.arange(M, dtype=float)[:, None]
    e = np.zeros(M)
    e[-1] = 1.0
    w_tilde = np.linalg.solve(V, e)
    return w_tilde, w_tilde / np.linalg.norm(w_tilde)


def m_of_h(H: float) -> int:
    """Number of window multiples needed to cancel the bias at roughness ``H``."""
    if not 0 < H <= 0.5:
        raise DomainError(f"H must lie in (0, 1/2], got {H}")
    return math.floor(0.5 - H + 1 / (4 * H)) + 1


def h_threshold(j: int) -> float:
    """Roughness values at which ``m_of_h`` jumps: ``1/2 - H + 1/(4H) = j``."""
    if j < 1:
        raise DomainError(f"j must be >= 1, got {j}")
    return (math.sqrt(4 * j * j - 4 * j + 5) - 2 * j + 1) / 4


def m_hat(pilot: float, delta: float) -> int:
    """Estimate of ``m_of_h`` with an inflation that vanishes as delta -> 0."""
    if not 0 < pilot <= 0.5:
        raise DomainError(f"pilot must lie in (0, 1/2], got {pilot}")
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    return math.floor(0.5 - pilot + 1 / (4 * pilot) + delta**0.25 * math.log(1 / delta)) + 1


# ---------------------------------------------------------------------------
# the estimators


class _VhatCache:
    """Memoizes autocovariances of one series at one evaluation time."""

    def __init__(self, series: PriceSeries, t: float | None):
        self.series = series
        self.t = t
        self.values: dict[tuple[int, int], float] = {}

    def __call__(self, ell: int, k: int) -> float:
        key = (ell, k)
        if key not in self.values:
            self.values[key] = v_hat(self.series, ell, k, self.t).value_hat
        return self.values[key]


def _check_capacity(series: PriceSeries, cfg: EstimationConfig, k: int, label: str) -> None:
    last = series.index_of(cfg.t)
    need = (max(cfg.ell1, cfg.ell2) + 2) * k
    if last - need + 1 < 1:
        raise RangeError(f"{label}: window {k} needs more than {need} increments, series has {last}")


def _combined_ratio(vh: _VhatCache, cfg: EstimationConfig, weights: np.ndarray, k: int, exponent: float) -> float:
    m = np.arange(1, weights.size + 1)
    coef = weights * m**exponent
    num = sum(c * vh(cfg.ell1, int(mi * k)) for c, mi in zip(coef, m))
    den = sum(c * vh(cfg.ell2, int(mi * k)) for c, mi in zip(coef, m))
    if den == 0:
        raise DegenerateDataError(f"combined lag-{cfg.ell2} autocovariance vanished at window {k}")
    return num / den


def pilot_window(delta: float) -> int:
    return max(1, ifloor(delta**-0.5))


def _pilot(series: PriceSeries, cfg: EstimationConfig, vh: _VhatCache) -> tuple[float, bool, int]:
    k = pilot_window(series.delta)
    _check_capacity(series, cfg, k, "pilot")
    den = vh(cfg.ell2, k)
    if den == 0:
        raise DegenerateDataError(f"lag-{cfg.ell2} autocovariance is zero at window {k}; is the price constant?")
    h, clamped = invert_phi_ratio(vh(cfg.ell1, k) / den, cfg)
    return h, clamped, k


def pilot_estimate(series: PriceSeries, cfg: EstimationConfig) -> float:
    """Ratio estimator at window ``[delta**-1/2]``; consistent for any H."""
    return _pilot(series, cfg, _VhatCache(series, cfg.t))[0]


def _refine(series, cfg, pilot, m_hat_value, vh) -> tuple[list[float], bool]:
    if m_hat_value < 1:
        raise DomainError(f"m_hat must be >= 1, got {m_hat_value}")
    iterates = [pilot]
    clamped = False
    for j in range(1, m_hat_value):
        hj = h_threshold(j)
        k = max(1, ifloor(series.delta ** (-2 * hj / (2 * hj + 1))))
        last = series.index_of(cfg.t)
        need = (max(cfg.ell1, cfg.ell2) + 2) * j * k
        if last - need + 1 < 1:
            raise RangeError(f"refine step (j={j}, m={j}): window {j * k} exceeds series capacity")
        _, w = vandermonde_weights(j)
        h, c = invert_phi_ratio(_combined_ratio(vh, cfg, w, k, 0.5 - iterates[-1]), cfg)
        iterates.append(h)
        clamped |= c
    return iterates, clamped


def refine(series: PriceSeries, cfg: EstimationConfig, pilot: float, m_hat: int) -> list[float]:
    """Debiased iterates at the threshold windows; the last entry is the
    refined estimate used to set the final window."""
    return _refine(series, cfg, pilot, m_hat, _VhatCache(series, cfg.t))[0]


def randomized_window(
    bar_h: float,
    delta: float,
    cfg: EstimationConfig,
    u: float,
    r_n: int | None = None,
    q_n: float | None = None,
) -> tuple[float, int]:
    """Randomized roughness level and the window it selects.

    ``r_n`` and ``q_n`` default to ``ceil(delta**-r_rule)`` and ``q / log(1/delta)``.
    """
    if not 0 <= u < 1:
        raise DomainError(f"u must lie in [0, 1), got {u}")
    if r_n is None:
        r_n = iceil(delta**-cfg.r_rule)
    if q_n is None:
        q_n = cfg.q / math.log(1 / delta)
    h_u = (math.floor(r_n * (bar_h + q_n) + u) + 1) / r_n
    k_hat = max(1, ifloor(delta ** (-2 * h_u / (2 * h_u + 1))))
    return h_u, k_hat


def draw_u(seed_u: int) -> float:
    return float(np.random.default_rng(seed_u).random())


def _stage(name):
    def wrap(fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except PipelineError:
            raise
        except RoughHurstError as exc:
            raise PipelineError(name, exc) from exc

    return wrap


def final_estimate(series: PriceSeries, cfg: EstimationConfig) -> HurstEstimate:
    """Run pilot, refinement and the randomized-window debiased estimator.

    The gate fields ``final_h``, ``gate_passed`` and ``ci`` stay unset.
    """
    vh = _VhatCache(series, cfg.t)
    pilot, clamped, k_tilde = _stage("pilot")(_pilot, series, cfg, vh)
    mh = _stage("m_hat")(m_hat, pilot, series.delta)
    if mh > MAX_M:
        raise PipelineError("m_hat", NumericError(f"estimated M={mh} exceeds the supported maximum {MAX_M} (pilot {pilot:.4g})"))
    iterates, c = _stage("refine")(_refine, series, cfg, pilot, mh, vh)
    clamped |= c
    bar_h = iterates[-1]
    u = draw_u(cfg.seed_u)
    h_u, k_hat = _stage("window")(randomized_window, bar_h, series.delta, cfg, u)

    def last_step():
        last = series.index_of(cfg.t)
        need = (max(cfg.ell1, cfg.ell2) + 2) * mh * k_hat
        if last - need + 1 < 1:
            raise RangeError(f"window {mh}x{k_hat} exceeds series capacity ({last} increments)")
        _, w = vandermonde_weights(mh)
        return invert_phi_ratio(_combined_ratio(vh, cfg, w, k_hat, 0.5 - bar_h), cfg)

    hat_h, c = _stage("final")(last_step)
    clamped |= c
    diag = {"v_hat": {f"{ell},{k}": val for (ell, k), val in sorted(vh.values.items())}}
    diag["weights"] = vandermonde_weights(mh)[1].tolist()
    return HurstEstimate(
        pilot=pilot,
        iterates=tuple(iterates),
        m_hat=mh,
        bar_h=bar_h,
        h_u=h_u,
        k_hat=k_hat,
        hat_h=hat_h,
        k_tilde=k_tilde,
        u=u,
        clamped=clamped,
        diagnostics=diag,
    )


def gate_threshold(delta: float, ell2: int, gamma_hats: tuple[float, float, float]) -> float:
    """Threshold on the pilot-window lag-``ell2`` autocovariance above which
    the H = 1/2 hypothesis is rejected."""
    from .asymptotics import gamma_nu

    agg = sum(gamma_nu(nu, ell2, 1.0, ell2, 1.0, 0.5, True) * g for nu, g in zip((1, 2, 3), gamma_hats))
    if not agg >= 0:
        raise NumericError(f"negative variance aggregate {agg:.4g} in gate threshold; variance estimates inconsistent")
    return delta**0.75 * math.log(1 / delta) * math.sqrt(agg)


def gate_verdict(statistic: float, threshold: float) -> bool:
    """True when the statistic rejects H = 1/2 (strict inequality)."""
    return abs(statistic) > threshold


def semimartingale_gate(
    series: PriceSeries,
    cfg: EstimationConfig,
    est: HurstEstimate,
    gamma_hats: tuple[float, float, float],
) -> HurstEstimate:
    """Keep the rough estimate only if the pilot-window autocovariance is
    significantly nonzero; otherwise report H = 1/2."""
    k = pilot_window(series.delta)
    stat = v_hat(series, cfg.ell2, k, cfg.t).value_hat
    tau = gate_threshold(series.delta, cfg.ell2, gamma_hats)
    passed = gate_verdict(stat, tau)
    diag = dict(est.diagnostics)
    diag["gate"] = {"statistic": stat, "threshold": tau}
    return replace(est, final_h=est.hat_h if passed else 0.5, gate_passed=passed, diagnostics=diag)


# ---------------------------------------------------------------------------
# scaling-regression baseline


def scaling_regression_from_log_rv(log_rv, q_list, lag_list, block_dt: float) -> float:
    """Mean of slope/q from regressing log m(q, lag) on log(lag * block_dt)."""
    y = np.asarray(log_rv, dtype=float)
    lags = np.asarray(lag_list, dtype=int)
    if lags.size < 2 or np.any(lags < 1):
        raise DomainError("need at least two positive lags")
    if y.size < 2 * lags.max():
        raise RangeError(f"{y.size} blocks too few for lag {lags.max()}")
    x = np.log(lags * block_dt)
    ratios = []
    for q in q_list:
        if not q > 0:
            raise DomainError(f"moments q must be positive, got {q}")
        logm = []
        for lag in lags:
            dy = np.diff(y[::lag])
            logm.append(math.log(np.mean(np.abs(dy) ** q)))
        slope = np.polyfit(x, logm, 1)[0]
        ratios.append(slope / q)
    return float(np.mean(ratios))


def scaling_regression_baseline(series: PriceSeries, k_day: int, q_list, lag_list) -> float:
    """Roughness from power variations of log daily realized variance.

    Blocks of ``k_day`` increments form the daily realized variances.
    """
    if k_day < 1:
        raise DomainError(f"k_day must be >= 1, got {k_day}")
    if series.n < 2 * k_day * max(lag_list):
        raise RangeError(f"series of {series.n} increments too short for k_day={k_day}, lags up to {max(lag_list)}")
    blocks = series.n // k_day
    rv = (series.increments[: blocks * k_day] ** 2).reshape(blocks, k_day).sum(axis=1)
    if np.any(rv <= 0):
        raise DegenerateDataError("a daily realized variance is zero; log undefined")
    return scaling_regression_from_log_rv(np.log(rv), q_list, lag_list, k_day * series.delta)


__all__ = [
    "EstimationConfig",
    "HurstEstimate",
    "draw_u",
    "final_estimate",
    "gate_threshold",
    "gate_verdict",
    "h_threshold",
    "invert_phi_ratio",
    "m_hat",
    "m_of_h",
    "phi_ratio",
    "pilot_estimate",
    "pilot_window",
    "randomized_window",
    "refine",
    "scaling_regression_baseline",
    "scaling_regression_from_log_rv",
    "semimartingale_gate",
    "vandermonde_weights",
]
