"""Sample paths of the latent diffusion and noisy observations of them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import expm
from scipy.signal import lfilter

from .model import DiffusionModel, OUSpec

NOISE_DISTRIBUTIONS = ("gaussian", "scaled_uniform", "scaled_rademacher")
_FOURTH_MOMENT = {"gaussian": 3.0, "scaled_uniform": 9.0 / 5.0, "scaled_rademacher": 1.0}


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class PathConfig:
    n: int
    h: float
    substeps: int = 8
    seed: int = 0
    exact_ou: bool = True

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need n >= 2")
        if not self.h > 0:
            raise ValueError("step h must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")


@dataclass(frozen=True)
class NoiseSpec:
    """Additive observation noise Lambda^{1/2} eps with standardised i.i.d. eps."""

    Lambda: np.ndarray
    distribution: str = "gaussian"

    def __post_init__(self):
        L = np.atleast_2d(np.asarray(self.Lambda, dtype=float))
        if L.shape[0] != L.shape[1] or not np.allclose(L, L.T, rtol=0, atol=1e-14):
            raise ValueError("Lambda must be a symmetric square matrix")
        if self.distribution not in NOISE_DISTRIBUTIONS:
            raise ValueError(f"unknown noise distribution {self.distribution!r}")
        object.__setattr__(self, "Lambda", L)

    @property
    def fourth_moment_per_component(self) -> np.ndarray:
        return np.full(self.Lambda.shape[0], _FOURTH_MOMENT[self.distribution])

    def draw(self, rng: np.random.Generator, size: tuple) -> np.ndarray:
        if self.distribution == "gaussian":
            return rng.standard_normal(size)
        if self.distribution == "scaled_uniform":
            return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size)
        return rng.choice(np.array([-1.0, 1.0]), size=size)


def psd_sqrt(M, tol: float = 1e-12) -> np.ndarray:
    """Symmetric positive semi-definite square root via eigendecomposition."""
    M = np.asarray(M, dtype=float)
    w, Q = np.linalg.eigh(0.5 * (M + M.T))
    if w.min(initial=0.0) < -tol:
        raise ValueError(f"matrix is not positive semi-definite (eigenvalue {w.min():.3e})")
    return (Q * np.sqrt(np.clip(w, 0.0, None))) @ Q.T


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def ou_transition(spec: OUSpec, h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact one-step map X_{t+h} = F X_t + g + N(0, S).

    F and the offset g come from one exponential of the drift augmented by its
    shift column (valid for singular B); S from Van Loan's block exponential.
    """
    B, mu, A = spec.B, spec.mu_shift, spec.A
    d = B.shape[0]
    aug = np.zeros((d + 1, d + 1))
    aug[:d, :d] = B
    aug[:d, d] = mu
    E = expm(aug * h)
    F, g = E[:d, :d], E[:d, d]
    C = A @ A.T
    vl = np.zeros((2 * d, 2 * d))
    vl[:d, :d] = -B
    vl[:d, d:] = C
    vl[d:, d:] = B.T
    V = expm(vl * h)
    S = V[d:, d:].T @ V[:d, d:]
    return F, g, 0.5 * (S + S.T)


def _affine_recursion(F: np.ndarray, x0: np.ndarray, forcing: np.ndarray) -> np.ndarray:
    """x_{i+1} = F x_i + forcing_i for all i, returning x_0..x_n."""
    n, d = forcing.shape
    out = np.empty((n + 1, d))
    out[0] = x0
    w, V = np.linalg.eig(F)
    if np.linalg.cond(V) < 1e8:
        Vinv = np.linalg.inv(V)
        z0 = Vinv @ x0
        u = forcing.astype(complex) @ Vinv.T
        z = np.empty((n, d), dtype=complex)
        for k in range(d):
            z[:, k], _ = lfilter([1.0], [1.0, -w[k]], u[:, k], zi=[w[k] * z0[k]])
        out[1:] = (z @ V.T).real
        return out
    x = x0.copy()
    for i in range(n):
        x = F @ x + forcing[i]
        out[i + 1] = x
    return out


def simulate_latent(model: DiffusionModel, beta, alpha, cfg: PathConfig, x0=None,
                    rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Latent states X_0, X_h, ..., X_{nh} as an ``(n+1, d)`` array."""
    beta = np.asarray(beta, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if x0 is None:
        if model.ou is None:
            raise ValueError("x0 is required for models without an OU spec")
        x0 = model.ou.x0
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (model.state_dim,):
        raise ValueError(f"x0 must have shape ({model.state_dim},)")
    rng = _as_rng(cfg.seed) if rng is None else rng
    d = model.state_dim

    if cfg.exact_ou and model.name == "ou":
        spec = OUSpec.from_params(alpha, beta, x0)
        F, g, S = ou_transition(spec, cfg.h)
        try:
            L = np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            L = psd_sqrt(S)
        eta = rng.standard_normal((cfg.n, d)) @ L.T
        path = _affine_recursion(F, x0, eta + g)
    else:
        path = _euler_maruyama(model, beta, alpha, cfg, x0, rng)
    if not np.all(np.isfinite(path)):
        bad = int(np.argmax(~np.all(np.isfinite(path), axis=1)))
        raise SimulationError(f"non-finite state at observation {bad} (t = {bad * cfg.h:.6g})")
    return path


def _euler_maruyama(model, beta, alpha, cfg, x0, rng) -> np.ndarray:
    s = cfg.substeps
    dt = cfg.h / s
    r = model.wiener_dim
    out = np.empty((cfg.n + 1, model.state_dim))
    out[0] = x0
    x = x0.copy()
    sq = np.sqrt(dt)
    for i in range(cfg.n):
        dw = rng.standard_normal((s, r)) * sq
        for k in range(s):
            x = x + model.drift(x, beta) * dt + model.diffusion(x, alpha) @ dw[k]
        if not np.all(np.isfinite(x)):
            raise SimulationError(f"Euler scheme exploded at observation {i + 1} (t = {(i + 1) * cfg.h:.6g})")
        out[i + 1] = x
    return out


def add_noise(path, noise: NoiseSpec, seed=None) -> np.ndarray:
    """Y_i = X_i + Lambda^{1/2} eps_i."""
    path = np.asarray(path, dtype=float)
    if path.ndim != 2 or path.shape[1] != noise.Lambda.shape[0]:
        raise ValueError("path dimension does not match Lambda")
    if not np.any(noise.Lambda):
        return path.copy()
    root = psd_sqrt(noise.Lambda)
    eps = noise.draw(_as_rng(seed), path.shape)
    return path + eps @ root.T
