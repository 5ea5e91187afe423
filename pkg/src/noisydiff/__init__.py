"""Adaptive estimation and noise detection for ergodic diffusions observed with noise."""

from .estimate import (AsymptoticCovariance, EstimationResult, adaptive_estimate, estimate_lambda,
                       lga_estimate, plugin_asymptotic_cov, quasi_lik1, quasi_lik2)
from .model import (DiffusionModel, OUSpec, ParameterBox, brownian_model, c_dagger, c_matrix, c_tau,
                    ou_model, bench_ou_spec)
from .noisetest import NoiseTestResult, component_sum_series, noise_test
from .sampling import LocalMeanSeries, SamplingScheme, derive_scheme, local_means
from .simulate import NoiseSpec, PathConfig, add_noise, simulate_latent

__version__ = "0.1.0"
