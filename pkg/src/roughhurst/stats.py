"""Grid conventions, difference operators and raw autocovariance statistics.

All statistics are computed from one array of squared log-price increments
and its prefix sums, so that every spot-volatility window sum is a difference
of two prefix-sum entries and each autocovariance costs O(n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Literal

import numpy as np
from scipy import integrate, special

from .errors import DataError, DomainError, NumericError, RangeError

# relative slack when snapping t/delta to an integer grid index
_GRID_SNAP = 1e-9

BINOM4 = np.array([1.0, -4.0, 6.0, -4.0, 1.0])


@dataclass(frozen=True, eq=False)
class PriceSeries:
    """Uniformly sampled log prices.

    Parameters
    ----------
    samples : array_like
        Log prices ``x_0, x_1, ..., x_n`` on the grid ``i * delta``.
    delta : float
        Sampling interval, in units of the horizon.
    label : str, optional
        Instrument identifier, carried through to reports.
    """

    samples: np.ndarray
    delta: float
    label: str = ""

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float)
        if x.ndim != 1 or x.size < 2:
            raise DataError("a price series needs at least 2 samples")
        if not np.all(np.isfinite(x)):
            raise DataError("price series contains non-finite samples")
        if not (math.isfinite(self.delta) and self.delta > 0):
            raise DataError(f"delta must be finite and positive, got {self.delta!r}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def n(self) -> int:
        """Number of increments."""
        return self.samples.size - 1

    @property
    def horizon(self) -> float:
        return self.n * self.delta

    @cached_property
    def increments(self) -> np.ndarray:
        return np.diff(self.samples)

    @cached_property
    def sq_prefix(self) -> np.ndarray:
        """``S[m] = sum_{i<=m} (x_i - x_{i-1})**2`` with ``S[0] = 0``."""
        s = np.empty(self.samples.size)
        s[0] = 0.0
        np.cumsum(self.increments**2, out=s[1:])
        return s

    def index_of(self, t: float | None) -> int:
        """Grid index ``[t / delta]``, defaulting to the last sample."""
        if t is None:
            return self.n
        return grid_index(t, self.delta)


@dataclass(frozen=True)
class DiffSpec:
    """A finite-difference operator of given order and step.

    ``forward`` evaluates ``sum_i (-1)**(order-i) C(order,i) f(x + i*step)``;
    ``central`` evaluates ``sum_i (-1)**i C(order,i) f(x + (order/2 - i)*step)``.
    """

    order: int
    step: float
    kind: Literal["forward", "central"] = "central"

    def __post_init__(self):
        if not 1 <= self.order <= 8:
            raise DomainError(f"difference order must be in 1..8, got {self.order}")
        if not (math.isfinite(self.step) and self.step > 0):
            raise DomainError(f"difference step must be finite and positive, got {self.step}")
        if self.kind not in ("forward", "central"):
            raise DomainError(f"unknown difference kind {self.kind!r}")

    def coefficients(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (weights, offsets) so that the operator is ``sum w * f(x + offsets)``."""
        i = np.arange(self.order + 1)
        binom = special.comb(self.order, i, exact=False)
        if self.kind == "forward":
            return (-1.0) ** (self.order - i) * binom, i * self.step
        return (-1.0) ** i * binom, (self.order / 2 - i) * self.step

    def apply(self, f: Callable[[float], float], x: float) -> float:
        w, off = self.coefficients()
        return float(sum(wi * f(x + oi) for wi, oi in zip(w, off)))


def grid_index(t: float, delta: float) -> int:
    """``[t / delta]``, snapping ratios within float noise of an integer."""
    r = t / delta
    nearest = round(r)
    if abs(r - nearest) <= _GRID_SNAP * max(1.0, abs(r)):
        return int(nearest)
    return math.floor(r)


def floor_frac(x: float) -> tuple[int, float]:
    """Integer part (floor) and fractional part of ``x``."""
    if not math.isfinite(x):
        raise DomainError(f"floor_frac needs a finite argument, got {x!r}")
    i = math.floor(x)
    frac = x - i
    if frac >= 1.0:  # x slightly below an integer can round up
        i, frac = i + 1, 0.0
    return int(i), frac


def central_diff4(f: Callable[[float], float], h: float, x: float) -> float:
    """Fourth central difference ``sum_i (-1)**i C(4,i) f(x + (2-i)h)``."""
    return DiffSpec(4, h, "central").apply(f, x)


def double_central_diff4(
    alpha: float,
    theta: float,
    theta_p: float,
    a: float,
    b: float,
    sign: Literal["minus", "plus"] = "minus",
) -> float:
    """Apply a fourth central difference in ``a`` (step ``theta``) and in ``b``
    (step ``theta_p``) to ``|a - b|**alpha`` or ``|a + b|**alpha``.

    This is the literal 25-term double sum.
    """
    if not (theta > 0 and theta_p > 0):
        raise DomainError("difference steps must be positive")
    if not alpha > 0:
        raise DomainError("exponent must be positive")
    off = 2.0 - np.arange(5)
    u = a + off * theta
    v = b + off * theta_p
    if sign == "minus":
        arg = u[:, None] - v[None, :]
    elif sign == "plus":
        arg = u[:, None] + v[None, :]
    else:
        raise DomainError(f"sign must be 'minus' or 'plus', got {sign!r}")
    return float(BINOM4 @ np.abs(arg) ** alpha @ BINOM4)


def _window_count(series: PriceSeries, j: int, k: int) -> None:
    if k < 1:
        raise DomainError(f"window length must be >= 1, got {k}")
    if j < 1:
        raise RangeError(f"spot window must start at index >= 1, got {j}")
    if j + k - 1 > series.n:
        raise RangeError(f"spot window [{j}, {j + k - 1}] exceeds series with {series.n} increments")


def spot_vol(series: PriceSeries, t: float, k: int) -> float:
    """Realized variance of the ``k`` increments starting at ``[t/delta]``,
    divided by ``k * delta``."""
    j = series.index_of(t)
    _window_count(series, j, k)
    s = series.sq_prefix
    return (s[j + k - 1] - s[j - 1]) / (k * series.delta)


def spot_vol_path(series: PriceSeries, k: int, last: int | None = None) -> np.ndarray:
    """All spot-volatility estimates using increments ``1..last``.

    Entry ``j - 1`` holds the estimate whose window starts at increment ``j``.
    """
    last = series.n if last is None else last
    if k < 1:
        raise DomainError(f"window length must be >= 1, got {k}")
    if last - k + 1 < 1:
        raise RangeError(f"window {k} does not fit in {last} increments")
    s = series.sq_prefix
    return (s[k : last + 1] - s[: last - k + 1]) / (k * series.delta)


@dataclass(frozen=True)
class AutocovStat:
    """Realized autocovariance of spot-volatility increments at lag ``ell``
    windows of length ``k``."""

    ell: int
    k: int
    value_hat: float
    t: float
    terms: int = field(default=0, compare=False)


def v_hat(series: PriceSeries, ell: int, k: int, t: float | None = None) -> AutocovStat:
    """Autocovariance statistic of spot-volatility increments.

    Sums ``(c[i+k] - c[i]) * (c[i+(ell+1)k] - c[i+ell k])`` over
    ``i = 1 .. [t/delta] - (ell+2)k + 1`` and multiplies by ``delta``.
    """
    if ell < 0:
        raise DomainError(f"lag must be >= 0, got {ell}")
    if k < 1:
        raise DomainError(f"window length must be >= 1, got {k}")
    last = series.index_of(t)
    if last > series.n:
        raise RangeError(f"t={t} lies beyond the series horizon {series.horizon}")
    count = last - (ell + 2) * k + 1
    if count < 1:
        raise RangeError(f"series too short for (ell={ell}, k={k}): {last} increments")
    c = spot_vol_path(series, k, last)
    d = c[k:] - c[:-k]
    val = series.delta * float(np.dot(d[:count], d[ell * k : ell * k + count]))
    return AutocovStat(ell, k, val, last * series.delta, count)


def v_tilde(series: PriceSeries, ell: int, k: int, t: float | None, H: float) -> float:
    """``v_hat`` rescaled by ``(k delta)**(-2H)``."""
    if not 0 < H <= 0.5:
        raise DomainError(f"H must lie in (0, 1/2], got {H}")
    return (k * series.delta) ** (-2 * H) * v_hat(series, ell, k, t).value_hat


def kernel_constant(H: float) -> float:
    """Normalizing constant ``K_H`` of the power-law kernel."""
    return special.gamma(H + 0.5) / math.sqrt(math.sin(math.pi * H) * special.gamma(2 * H + 1))


def phi_const(H, ell):
    """Limit constant linking the lag-``ell`` autocovariance to integrated VoV.

    Accepts scalar or array ``H``.
    """
    h = np.asarray(H, dtype=float)
    if np.any(h <= 0) or np.any(h > 0.5):
        raise DomainError(f"H must lie in (0, 1/2], got {H}")
    if ell < 2:
        raise DomainError(f"lag must be >= 2, got {ell}")
    p = 2 * h + 2
    num = (
        (ell + 2.0) ** p
        - 4 * (ell + 1.0) ** p
        + 6 * float(ell) ** p
        - 4 * (ell - 1.0) ** p
        + (ell - 2.0) ** p
    )
    out = num / (2 * (2 * h + 1) * (2 * h + 2))
    return float(out) if out.ndim == 0 else out


def _g_integrated(t, H):
    """Antiderivative of the kernel: ``K_H**-1 t_+**(H+1/2) / (H+1/2)``."""
    t = np.asarray(t, dtype=float)
    return np.where(t > 0, np.abs(t) ** (H + 0.5), 0.0) / (kernel_constant(H) * (H + 0.5))


def _second_diff_g(v, H):
    return _g_integrated(v + 2, H) - 2 * _g_integrated(v + 1, H) + _g_integrated(v, H)


def _second_diff_g_asymptotic(v, H):
    # even-order Taylor series of the central second difference about v+1
    x = v + 1.0
    a = H + 0.5
    scale = 1.0 / (kernel_constant(H) * a)
    total = 0.0
    for order, fact in ((2, 2.0), (4, 24.0), (6, 720.0)):
        coef = math.prod(a - i for i in range(order))
        total = total + 2 * coef * x ** (a - order) / fact
    return scale * total


# beyond this abscissa the second difference is evaluated by its series
_TAIL_START = 64.0


def phi_const_integral(H: float, ell: int, tol: float = 1e-9) -> float:
    """Quadrature evaluation of the overlap integral of two second differences
    of the integrated kernel, lag ``ell`` apart.

    Independent of :func:`phi_const`; used to cross-check it. On ``[-2, L]``
    the integrand is evaluated directly and split at its kinks; on ``[L, inf)``
    both factors use a three-term Taylor series whose dropped term is
    ``O(v**(H-15/2))``, far below ``tol`` once integrated.
    """
    if not 0 < H < 0.5:
        raise DomainError(f"H must lie in (0, 1/2), got {H}")
    if ell < 2:
        raise DomainError(f"lag must be >= 2, got {ell}")

    def near(v):
        return float(_second_diff_g(v, H) * _second_diff_g(v + ell, H))

    def far(v):
        return _second_diff_g_asymptotic(v, H) * _second_diff_g_asymptotic(v + ell, H)

    edges = [-2.0, -1.0, 0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, _TAIL_START]
    total, err = 0.0, 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, e = integrate.quad(near, lo, hi, limit=200, epsabs=tol / 20, epsrel=1e-12)
        total += val
        err += e
    val, e = integrate.quad(far, _TAIL_START, np.inf, limit=200, epsabs=tol / 20, epsrel=1e-12)
    total += val
    err += e
    if err > tol:
        raise NumericError(f"quadrature for H={H}, ell={ell} reached only {err:.2e} (target {tol:.0e})")
    return total
