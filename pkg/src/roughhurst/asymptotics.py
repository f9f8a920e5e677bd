"""Asymptotic covariance constants, variance functionals and confidence intervals."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy import special, stats

from .errors import DomainError, NumericError, RangeError
from .hurst import EstimationConfig, HurstEstimate, phi_ratio, vandermonde_weights
from .stats import BINOM4, PriceSeries, phi_const, v_hat

# below this distance from 1/4 the gamma_2 formula is replaced by its limit
QUARTER_EPS = 1e-6
PHI_FLOOR = 1e-12
DERIV_STEP = 1e-5


@dataclass(frozen=True)
class AsymptoticSpec:
    gamma_hats: tuple[float, float, float]
    variance: float
    rate: float
    ci: tuple[float, float]
    kappa_optimal: bool = True
    ivov: float | None = None
    theta: float | None = None

    def __post_init__(self):
        if self.variance < 0:
            raise NumericError(f"negative asymptotic variance {self.variance}")
        if self.ci[0] > self.ci[1]:
            raise NumericError("confidence interval bounds out of order")

    def as_dict(self) -> dict:
        return asdict(self)


def _double_diff(fn: Callable[[np.ndarray], np.ndarray], theta, theta_p, a, b, sign) -> float:
    # canonical argument order makes the result exactly symmetric; the
    # alternating sum cancels heavily, hence extended precision
    if (b, theta_p) < (a, theta):
        a, theta, b, theta_p = b, theta_p, a, theta
    off = 2 - np.arange(5, dtype=np.longdouble)
    u = np.longdouble(a) + off * np.longdouble(theta)
    v = np.longdouble(b) + off * np.longdouble(theta_p)
    arg = u[:, None] - v[None, :] if sign == "minus" else u[:, None] + v[None, :]
    w = BINOM4.astype(np.longdouble)
    return float(np.sum(np.outer(w, w) * fn(arg)))


def _abs_pow(alpha):
    return lambda x: np.abs(x) ** np.longdouble(alpha)


def _x6_log(x):
    ax = np.abs(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(ax > 0, ax**6 * np.log(np.where(ax > 0, ax, 1)), 0)


def beta_h(H: float, q: float) -> float:
    """Limit ratio of the randomized window to ``delta**(-2H/(2H+1))``."""
    return math.exp(2 * q / (2 * H + 1) ** 2)


def gamma_nu(
    nu: int,
    ell: float,
    theta: float,
    ell_p: float,
    theta_p: float,
    H: float,
    kappa_optimal: bool = True,
) -> float:
    """Covariance constant of the limit of two autocovariance statistics.

    ``nu = 1`` weighs the integrated ``sigma**8``, ``nu = 2`` the squared
    integrated vol-of-vol and ``nu = 3`` the cross term. The first and third
    constants only contribute at the rate-optimal window exponent.
    """
    if not (theta > 0 and theta_p > 0):
        raise DomainError("window constants must be positive")
    if not 0 < H <= 0.5:
        raise DomainError(f"H must lie in (0, 1/2], got {H}")
    a, b = ell * theta, ell_p * theta_p
    tt = theta * theta_p
    if nu == 1:
        if not kappa_optimal:
            return 0.0
        return _double_diff(_abs_pow(3.0), theta, theta_p, a, b, "minus") / (3 * tt ** (2 * H + 2))
    if nu == 2:
        if abs(H - 0.25) < QUARTER_EPS:
            dd = _double_diff(_x6_log, theta, theta_p, a, b, "minus") + _double_diff(_x6_log, theta, theta_p, a, b, "plus")
            return dd / (5760 * tt**2.5)
        f = _abs_pow(4 * H + 5)
        dd = _double_diff(f, theta, theta_p, a, b, "minus") + _double_diff(f, theta, theta_p, a, b, "plus")
        pre = special.gamma(1 + 2 * H) ** 2 * (1 - 1 / math.cos(2 * math.pi * H))
        return float(pre * dd / (4 * special.gamma(6 + 4 * H) * tt ** (2 * H + 2)))
    if nu == 3:
        if not kappa_optimal:
            return 0.0
        f = _abs_pow(2 * H + 4)
        dd = _double_diff(f, theta, theta_p, a, b, "plus") + _double_diff(f, theta, theta_p, a, b, "minus")
        den = 8 * (H + 0.5) * (H + 1) * (H + 1.5) * (H + 2) * tt ** (2 * H + 2)
        return -dd / den
    raise DomainError(f"nu must be 1, 2 or 3, got {nu}")


def gamma_matrix(nu: int, ell: int, ell_p: int, H: float, M: int, q: float, theta: float | None = None) -> np.ndarray:
    """``M x M`` matrix of constants for window multiples ``theta*m`` and ``theta*m'``.

    ``theta`` defaults to the limit window constant ``beta_h(H, q)``.
    """
    if not 1 <= M <= 8:
        raise DomainError(f"M must lie in 1..8, got {M}")
    base = beta_h(H, q) if theta is None else theta
    out = np.empty((M, M))
    for i in range(M):
        for j in range(M):
            out[i, j] = gamma_nu(nu, ell, base * (i + 1), ell_p, base * (j + 1), H, True)
    return out


def weights_wmh(M: int, H: float) -> np.ndarray:
    """Vandermonde weights reweighted by ``m**(1/2+H)`` and normalized to sum 1."""
    _, w = vandermonde_weights(M)
    m = np.arange(1, M + 1)
    raw = w * m ** (0.5 + H)
    s = raw.sum()
    if s == 0 or not math.isfinite(s):
        raise NumericError(f"weight normalization vanished for M={M}, H={H}")
    return raw / s


def gamma_hat(
    series: PriceSeries, hat_h: float, k_hat: int, lam: float, t: float | None = None
) -> tuple[float, float, float]:
    """Estimates of the three integrated functionals from block increments.

    Blocks have length ``K = k_hat * [delta**-lam]``; spot volatilities use
    windows of ``k_hat`` increments starting right after each block boundary.
    """
    delta = series.delta
    big_k = k_hat * math.floor(delta**-lam + 1e-9)
    if big_k < 1:
        raise RangeError("block length must be >= 1")
    last = series.index_of(t)
    blocks = last // big_k
    if blocks < 2:
        raise RangeError(f"only {blocks} blocks of length {big_k} in {last} increments")
    x = series.samples
    dx = x[big_k : blocks * big_k + 1 : big_k] - x[0 : (blocks - 1) * big_k + 1 : big_k]
    s = series.sq_prefix
    starts = 1 + big_k * np.arange(blocks - 1)  # spot windows for i = 0 .. blocks-2
    c_sum = s[starts + k_hat - 1] - s[starts - 1]
    dc = np.diff(c_sum) / (k_hat * delta)  # dc[i-1] for i = 1 .. blocks-2
    span = big_k * delta
    g1 = np.sum(dx[:-1] ** 4 * dx[1:] ** 4) / (9 * span**3)
    g2 = span ** (1 - 4 * hat_h) / 3 * np.sum(dc**4)
    g3 = span ** (-1 - 2 * hat_h) / 3 * np.sum(dc**2 * dx[1 : blocks - 1] ** 4)
    return float(g1), float(g2), float(g3)


def phi_log_derivative(H: float, ell1: int, ell2: int, step: float = DERIV_STEP) -> float:
    """``phi(H) / phi'(H)`` with a central difference for the derivative."""
    lo, hi = H - step, H + step
    if lo <= 0 or hi >= 0.5:
        raise NumericError(f"H={H} too close to the boundary for a derivative step of {step}")
    d = (phi_ratio(hi, ell1, ell2) - phi_ratio(lo, ell1, ell2)) / (2 * step)
    return float(phi_ratio(H, ell1, ell2) / d)


def clt_variance(
    hat_h: float,
    m: int,
    gamma_hats: tuple[float, float, float],
    cfg: EstimationConfig,
    ivov: float | None = None,
    theta: float | None = None,
) -> float:
    """Asymptotic variance of the rate-scaled final estimator.

    ``ivov`` is the integrated vol-of-vol; when given, the variance is
    normalized by its square so that it is invariant under rescaling of log
    prices. ``theta`` overrides the window constant of the covariance matrices.
    """
    if not all(math.isfinite(g) for g in gamma_hats):
        raise NumericError(f"non-finite variance functionals {gamma_hats}")
    if ivov is not None and not ivov > 0:
        raise NumericError(f"integrated vol-of-vol estimate must be positive, got {ivov}")
    lags = (cfg.ell1, cfg.ell2)
    phis = [phi_const(hat_h, ell) for ell in lags]
    if min(abs(p) for p in phis) < PHI_FLOOR:
        raise NumericError(f"limit constants vanish at H={hat_h}; use the H=1/2 gate instead")
    w = weights_wmh(m, hat_h)
    total = 0.0
    for i, li in enumerate(lags):
        for j, lj in enumerate(lags):
            inner = sum(
                float(w @ gamma_matrix(nu, li, lj, hat_h, m, cfg.q, theta) @ w) * g
                for nu, g in zip((1, 2, 3), gamma_hats)
            )
            total += (-1) ** (i + j) / (phis[i] * phis[j]) * inner
    norm = 1.0 if ivov is None else ivov**2
    return phi_log_derivative(hat_h, *lags) ** 2 * total / norm


def integrated_vov_hat(series: PriceSeries, est: HurstEstimate, cfg: EstimationConfig) -> float:
    """Integrated vol-of-vol read off the debiased lag-``ell2`` combination
    at the final window."""
    _, w = vandermonde_weights(est.m_hat)
    m = np.arange(1, est.m_hat + 1)
    combo = sum(
        wi * mi ** (0.5 - est.bar_h) * v_hat(series, cfg.ell2, int(mi * est.k_hat), cfg.t).value_hat
        for wi, mi in zip(w, m)
    )
    scale = (est.k_hat * series.delta) ** (2 * est.hat_h) * phi_const(est.hat_h, cfg.ell2)
    scale *= float(np.sum(w * m ** (0.5 - est.bar_h + 2 * est.hat_h)))
    return float(combo / scale)


def window_constant(k_hat: int, hat_h: float, delta: float) -> float:
    """Realized constant ``k_hat * delta**(2H/(2H+1))`` of the final window."""
    return k_hat * delta ** (2 * hat_h / (2 * hat_h + 1))


def rate(hat_h: float, delta: float) -> float:
    return delta ** (1 / (4 * hat_h + 2))


def confidence_interval(hat_h: float, variance: float, delta: float, level: float) -> tuple[float, float]:
    """Symmetric normal interval, clipped to [0, 1/2]."""
    if variance < 0:
        raise NumericError(f"negative variance {variance}")
    if not 0 < level < 1:
        raise DomainError(f"level must lie in (0, 1), got {level}")
    z = stats.norm.ppf(0.5 * (1 + level))
    hw = z * math.sqrt(variance) * rate(hat_h, delta)
    return max(0.0, hat_h - hw), min(0.5, hat_h + hw)
