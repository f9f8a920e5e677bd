"""Rough-volatility market simulator used as the verification oracle.

The squared volatility is a Riemann-Liouville convolution of the power-law
kernel against the Brownian drivers, discretized on the observation grid:

    c_i = c0 + a t_i + sum_{j<i} g_H(t_i - t_j) (eta_j dW_j + etahat_j dWhat_j)

with the same construction one level down for eta**2 and etahat**2. Prices
follow a left-point Euler scheme, so the price increment over cell ``j``
shares the Brownian increment ``dW_j`` with the volatility from ``t_{j+1}``
on; this produces the leverage-type bias the estimators must remove.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import DomainError, NumericError
from .stats import PriceSeries, grid_index, kernel_constant

log = logging.getLogger(__name__)

CLAMP_WARN_RATE = 0.05
CSV_HEADER = "t,x,c,sigma,eta,etahat"


@dataclass(frozen=True)
class ModelParams:
    """Parameters of the canonical rough-volatility sub-model.

    ``eta0`` and ``etahat0`` are initial vol-of-vol levels (not squared).
    ``theta_vec`` and ``vartheta_vec`` load the 4-dimensional driver onto
    ``eta**2`` and ``etahat**2``; ``rho`` is the 2x4 correlation between
    ``(W, What)`` and that driver.
    """

    H: float = 0.3
    H_eta: float = 0.5
    H_etahat: float = 0.5
    c0: float = 1.0
    eta0: float = 0.5
    etahat0: float = 0.5
    a: float = 0.0
    b: float = 0.0
    theta_vec: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    vartheta_vec: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    rho: tuple[tuple[float, ...], ...] = ((0.0,) * 4, (0.0,) * 4)
    c_min: float = 1e-4
    x0: float = 0.0

    def __post_init__(self):
        for name in ("H", "H_eta", "H_etahat"):
            v = getattr(self, name)
            if not 0 < v <= 0.5:
                raise DomainError(f"{name} must lie in (0, 1/2], got {v}")
        if not self.c0 > 0:
            raise DomainError(f"c0 must be positive, got {self.c0}")
        if self.eta0 < 0 or self.etahat0 < 0:
            raise DomainError("eta0 and etahat0 must be nonnegative")
        if not 0 < self.c_min < self.c0:
            raise DomainError(f"need 0 < c_min < c0, got c_min={self.c_min}")
        object.__setattr__(self, "theta_vec", tuple(float(v) for v in self.theta_vec))
        object.__setattr__(self, "vartheta_vec", tuple(float(v) for v in self.vartheta_vec))
        object.__setattr__(self, "rho", tuple(tuple(float(v) for v in row) for row in self.rho))
        if len(self.theta_vec) != 4 or len(self.vartheta_vec) != 4:
            raise DomainError("loading vectors must have 4 components")
        if np.shape(self.rho) != (2, 4):
            raise DomainError("rho must be a 2x4 array")
        self.driver_factor()  # validates positive semidefiniteness

    def driver_factor(self) -> np.ndarray:
        """Matrix ``L`` with ``L @ L.T`` the 6x6 driver correlation.

        Column order is ``(W, What, Wbar_1..Wbar_4)``.
        """
        corr = np.eye(6)
        r = np.asarray(self.rho)
        corr[:2, 2:] = r
        corr[2:, :2] = r.T
        w, v = np.linalg.eigh(corr)
        if w.min() < -1e-12:
            raise DomainError(f"driver correlation matrix is not positive semidefinite (min eigenvalue {w.min():.3e})")
        return v * np.sqrt(np.clip(w, 0.0, None))

    @classmethod
    def with_leverage(cls, rho_lev: float, **kw) -> "ModelParams":
        """Model whose only cross-correlation links ``W`` and ``Wbar_1``."""
        return cls(rho=((rho_lev, 0.0, 0.0, 0.0), (0.0,) * 4), **kw)


@dataclass(frozen=True, eq=False)
class SimulatedMarket:
    series: PriceSeries
    sigma_path: np.ndarray
    c_path: np.ndarray
    eta_path: np.ndarray
    etahat_path: np.ndarray
    params: ModelParams
    seed: int
    dW: np.ndarray = field(repr=False)
    clamp_count: int = 0

    @property
    def clamp_rate(self) -> float:
        return self.clamp_count / self.c_path.size

    @property
    def clamp_warning(self) -> bool:
        return self.clamp_rate > CLAMP_WARN_RATE

    @property
    def t_grid(self) -> np.ndarray:
        return np.arange(self.c_path.size) * self.series.delta


def derive_seed(master_seed: int, index: int) -> int:
    """Per-replicate 64-bit seed, independent of scheduling order."""
    ss = np.random.SeedSequence([int(master_seed) & (2**64 - 1), int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


def kernel_weights(H: float, n: int, delta: float) -> np.ndarray:
    """``[0, g_H(delta), g_H(2 delta), ..., g_H(n delta)]``."""
    w = np.empty(n + 1)
    w[0] = 0.0
    w[1:] = (np.arange(1, n + 1) * delta) ** (H - 0.5) / kernel_constant(H)
    return w


def rl_convolve(weights: np.ndarray, noise: np.ndarray, method: str = "fft") -> np.ndarray:
    """``out[i] = sum_m weights[m] * noise[i - m]`` for ``i = 0..len(noise)``."""
    n = noise.size
    if weights.size != n + 1:
        raise ValueError("weights must have one more entry than noise")
    if method == "fft":
        return signal.fftconvolve(weights, noise)[: n + 1]
    if method == "direct":
        return np.convolve(weights, noise)[: n + 1]
    raise ValueError(f"unknown convolution method {method!r}")


def sample_fgn(n: int, H: float, delta: float, seed: int) -> np.ndarray:
    """Exact fractional Gaussian noise by circulant embedding.

    Returns ``n`` increments of fractional Brownian motion on step ``delta``.
    """
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if not 0 < H < 1:
        raise DomainError(f"H must lie in (0, 1), got {H}")
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    rng = np.random.default_rng(seed)
    scale = delta**H
    if n == 1:
        return scale * rng.standard_normal(1)
    j = np.arange(n + 1, dtype=float)
    gam = 0.5 * (np.abs(j + 1) ** (2 * H) - 2 * j ** (2 * H) + np.abs(j - 1) ** (2 * H))
    row = np.concatenate([gam, gam[-2:0:-1]])
    m = row.size
    eig = np.fft.fft(row).real
    if eig.min() < -1e-8:
        raise NumericError(f"circulant embedding not nonnegative for n={n}, H={H}: min eigenvalue {eig.min():.3e}")
    eig = np.clip(eig, 0.0, None)
    z = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    y = np.fft.fft(np.sqrt(eig / m) * z)
    return scale * y.real[:n]


def simulate_market(
    params: ModelParams, n: int, delta: float, seed: int, method: str = "fft"
) -> SimulatedMarket:
    """Simulate ``n`` steps of the model on the grid ``i * delta``."""
    if n < 2:
        raise DomainError(f"n must be >= 2, got {n}")
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, 6)) @ params.driver_factor().T * math.sqrt(delta)
    dW, dWhat, dWbar = z[:, 0], z[:, 1], z[:, 2:]
    t = np.arange(n + 1) * delta

    def vov(level, loadings, h):
        drive = dWbar @ np.asarray(loadings)
        if not drive.any():
            return np.full(n + 1, level**2), 0
        raw = level**2 + rl_convolve(kernel_weights(h, n, delta), drive, method)
        neg = raw < 0
        return np.where(neg, 0.0, raw), neg

    eta_sq, eta_clamped = vov(params.eta0, params.theta_vec, params.H_eta)
    etahat_sq, etahat_clamped = vov(params.etahat0, params.vartheta_vec, params.H_etahat)
    eta, etahat = np.sqrt(eta_sq), np.sqrt(etahat_sq)

    noise = eta[:-1] * dW + etahat[:-1] * dWhat
    c_raw = params.c0 + params.a * t + rl_convolve(kernel_weights(params.H, n, delta), noise, method)
    c_clamped = c_raw < params.c_min
    c = np.where(c_clamped, params.c_min, c_raw)
    sigma = np.sqrt(c)

    x = np.empty(n + 1)
    x[0] = params.x0
    np.cumsum(params.b * delta + sigma[:-1] * dW, out=x[1:])
    x[1:] += params.x0

    clamped = np.asarray(c_clamped | eta_clamped | etahat_clamped)
    count = int(np.count_nonzero(clamped))
    market = SimulatedMarket(
        series=PriceSeries(x, delta, label="simulated"),
        sigma_path=sigma,
        c_path=c,
        eta_path=eta,
        etahat_path=etahat,
        params=params,
        seed=int(seed),
        dW=dW,
        clamp_count=count,
    )
    if market.clamp_warning:
        log.warning("positivity clamp active on %.1f%% of grid points", 100 * market.clamp_rate)
    return market


def true_gammas(market: SimulatedMarket, t: float | None = None) -> tuple[float, float, float]:
    """Trapezoidal integrals of sigma**8, vov**2 and sigma**4 * vov over [0, t],
    where ``vov = eta**2 + etahat**2``."""
    last = market.series.n if t is None else grid_index(t, market.series.delta)
    if last > market.series.n:
        raise DomainError(f"t={t} beyond the simulated horizon")
    sl = slice(0, last + 1)
    c = market.c_path[sl]
    vov = market.eta_path[sl] ** 2 + market.etahat_path[sl] ** 2
    dx = market.series.delta
    return (
        float(np.trapezoid(c**4, dx=dx)),
        float(np.trapezoid(vov**2, dx=dx)),
        float(np.trapezoid(c**2 * vov, dx=dx)),
    )


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)


def _bias_profile(ell: int, k: int, H: float) -> float:
    """``int_0^1 s**2 (1/k) sum_i D3[(ell-1-(i+s)/k)_+^(H+1/2)] ds``.

    ``s**2`` comes from interpolating both the stochastic integral and the
    ``sigma*eta`` increment linearly inside a grid cell.
    """
    s = 0.5 * (_GL_NODES + 1.0)
    y = ell - 1 - (np.arange(k)[:, None] + s[None, :]) / k
    a = H + 0.5

    def pw(v):
        return np.where(v > 0, np.abs(v) ** a, 0.0)

    d3 = pw(y + 3) - 3 * pw(y + 2) + 3 * pw(y + 1) - pw(y)
    inner = d3.mean(axis=0)
    return float(0.5 * np.sum(_GL_WEIGHTS * s**2 * inner))


def bias_oracle(market: SimulatedMarket, ell: int, k: int, t: float | None = None) -> float:
    """Latent leverage bias of the lag-``ell`` autocovariance with window ``k``.

    The time integral is discretized cell by cell on the simulation grid;
    inside a cell the stochastic integral and the ``sigma*eta`` increment are
    interpolated linearly from the stored Brownian increments and grid values.
    """
    if ell < 2:
        raise DomainError(f"lag must be >= 2, got {ell}")
    if k < 1:
        raise DomainError(f"window must be >= 1, got {k}")
    delta = market.series.delta
    last = market.series.n if t is None else grid_index(t, delta)
    if last > market.series.n:
        raise DomainError(f"t={t} beyond the simulated horizon")
    H = market.params.H
    se = market.sigma_path * market.eta_path
    cells = market.sigma_path[:last] * market.dW[:last] * np.diff(se[: last + 1])
    pref = -2.0 / (kernel_constant(H) * (H + 0.5)) * (k * delta) ** (-0.5 - H)
    return pref * delta * _bias_profile(ell, k, H) * float(cells.sum())


def write_paths_csv(market: SimulatedMarket, path: str | Path) -> None:
    """Dump all latent paths, one row per grid point, 17 significant digits."""
    data = np.column_stack(
        [market.t_grid, market.series.samples, market.c_path, market.sigma_path, market.eta_path, market.etahat_path]
    )
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=CSV_HEADER, comments="")
