"""Estimation of the roughness index of stochastic volatility from
high-frequency log prices, with a rough-volatility market simulator."""

from .asymptotics import AsymptoticSpec, clt_variance, confidence_interval, gamma_hat, gamma_matrix, gamma_nu, weights_wmh
from .errors import (
    ConfigError,
    DataError,
    DomainError,
    NumericError,
    PipelineError,
    RangeError,
    RoughHurstError,
    StudyError,
)
from .hurst import (
    EstimationConfig,
    HurstEstimate,
    final_estimate,
    invert_phi_ratio,
    pilot_estimate,
    refine,
    scaling_regression_baseline,
    semimartingale_gate,
    vandermonde_weights,
)
from .io import ingest_csv
from .pipeline import RunReport, run_estimate, run_mc_study
from .simulate import ModelParams, SimulatedMarket, simulate_market
from .stats import PriceSeries, phi_const, spot_vol, v_hat

__version__ = "0.1.0"

__all__ = [
    "AsymptoticSpec",
    "ConfigError",
    "DataError",
    "DomainError",
    "EstimationConfig",
    "HurstEstimate",
    "ModelParams",
    "NumericError",
    "PipelineError",
    "PriceSeries",
    "RangeError",
    "RoughHurstError",
    "RunReport",
    "SimulatedMarket",
    "StudyError",
    "clt_variance",
    "confidence_interval",
    "final_estimate",
    "gamma_hat",
    "gamma_matrix",
    "gamma_nu",
    "ingest_csv",
    "invert_phi_ratio",
    "phi_const",
    "pilot_estimate",
    "refine",
    "run_estimate",
    "run_mc_study",
    "scaling_regression_baseline",
    "semimartingale_gate",
    "simulate_market",
    "spot_vol",
    "v_hat",
    "vandermonde_weights",
    "weights_wmh",
]
