"""Adaptive local-mean estimators, the LGA baseline and plug-in covariances.

Stage 1 estimates the noise covariance from one-step increments, stage 2
maximises the diffusion contrast on block means given that estimate, stage 3
maximises the drift contrast given both.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import (DiffusionModel, ParameterBox, c_deriv_alpha, c_matrix, drift_jacobian,
                    noise_weight, vech, vech_indices)
from .optimize import OptimizerOptions, StageInfo, maximize_in_box
from .sampling import LocalMeanSeries, SamplingScheme, local_means
from .simulate import psd_sqrt


class SingularCovarianceError(np.linalg.LinAlgError):
    def __init__(self, block: int):
        super().__init__(f"covariance c_n^tau is singular at block j = {block}")
        self.block = block


@dataclass
class EstimationResult:
    method: str
    alpha_hat: np.ndarray
    beta_hat: np.ndarray
    rates: dict
    stages: list[StageInfo]
    Lambda_hat: Optional[np.ndarray] = None
    stderr: Optional[dict] = None
    covariance: Optional["AsymptoticCovariance"] = field(default=None, repr=False)

    @property
    def theta_eps_hat(self) -> Optional[np.ndarray]:
        return None if self.Lambda_hat is None else vech(self.Lambda_hat)

    @property
    def converged(self) -> bool:
        return all(s.converged for s in self.stages)

    def as_dict(self) -> dict:
        out = {
            "method": self.method,
            "alpha_hat": self.alpha_hat.tolist(),
            "beta_hat": self.beta_hat.tolist(),
            "rates": dict(self.rates),
            "stages": [vars(s) for s in self.stages],
        }
        if self.Lambda_hat is not None:
            out["theta_eps_hat"] = self.theta_eps_hat.tolist()
            out["Lambda_hat"] = self.Lambda_hat.tolist()
        if self.stderr is not None:
            out["stderr"] = {k: np.asarray(v).tolist() for k, v in self.stderr.items()}
        return out


# ---------------------------------------------------------------------------
# noise covariance

def estimate_lambda(raw) -> np.ndarray:
    """Half the mean outer product of one-step increments."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim == 1:
        raw = raw[:, None]
    n = raw.shape[0] - 1
    if n < 1:
        raise ValueError("need at least two observations")
    dY = np.diff(raw, axis=0)
    L = dY.T @ dY / (2 * n)
    return 0.5 * (L + L.T)


# ---------------------------------------------------------------------------
# Gaussian contrasts shared by the local-mean and LGA estimators

def _factor(C: np.ndarray, offset: int = 0):
    """Inverse and log-determinant of one or a stack of SPD matrices."""
    try:
        L = np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        if C.ndim == 2:
            raise SingularCovarianceError(offset) from None
        for j in range(C.shape[0]):
            try:
                np.linalg.cholesky(C[j])
            except np.linalg.LinAlgError:
                raise SingularCovarianceError(offset + j) from None
        raise
    logdet = 2.0 * np.log(np.diagonal(L, axis1=-2, axis2=-1)).sum(axis=-1)
    eye = np.broadcast_to(np.eye(C.shape[-1]), C.shape)
    Linv = np.linalg.solve(L, eye)
    return np.swapaxes(Linv, -1, -2) @ Linv, logdet


def _cov(model, points, alpha, extra):
    if model.constant_diffusion:
        return c_matrix(model, points[:1], alpha)[0] + extra
    return c_matrix(model, points, alpha) + extra


def _diffusion_contrast(alpha, points, incr, var_scale, extra, model, with_grad, offset=1):
    """-1/2 sum_j [ (var_scale C_j)^{-1}[[incr_j incr_j^T]] + log det C_j ]."""
    alpha = np.asarray(alpha, dtype=float)
    K = incr.shape[0]
    C = _cov(model, points, alpha, extra)
    Cinv, logdet = _factor(C, offset)
    if C.ndim == 2:
        S = incr.T @ incr
        value = -0.5 * (np.sum(Cinv * S) / var_scale + K * logdet)
    else:
        quad = np.einsum("ki,kij,kj->k", incr, Cinv, incr)
        value = -0.5 * (quad.sum() / var_scale + logdet.sum())
    if not with_grad:
        return float(value)
    x = points[:1] if C.ndim == 2 else points
    dC = c_deriv_alpha(model, x, alpha)
    if C.ndim == 2:
        dC = dC[:, 0]
        P = Cinv @ S @ Cinv
        grad = -0.5 * (-np.einsum("ij,mij->m", P, dC) / var_scale + K * np.einsum("ij,mji->m", Cinv, dC))
    else:
        u = np.einsum("kij,kj->ki", Cinv, incr)
        grad = -0.5 * (-np.einsum("ki,mkij,kj->m", u, dC, u) / var_scale
                       + np.einsum("kij,mkji->m", Cinv, dC))
    return float(value), grad


def _drift_contrast(beta, points, incr, step, Cinv, model, with_grad):
    """-1/(2 step) sum_j r_j^T C_j^{-1} r_j with r_j = incr_j - step b(point_j)."""
    beta = np.asarray(beta, dtype=float)
    r = incr - step * model.drift(points, beta)
    if Cinv.ndim == 2:
        u = r @ Cinv
    else:
        u = np.einsum("kij,kj->ki", Cinv, r)
    value = -0.5 * np.sum(u * r) / step
    if not with_grad:
        return float(value)
    J = drift_jacobian(model, points, beta)
    return float(value), np.einsum("kdm,kd->m", J, u)


def _block_design(lm: LocalMeanSeries):
    m = lm.means
    if m.shape[0] < 3:
        raise ValueError("need at least three local means")
    return m[:-2], m[2:] - m[1:-1]


def _noise_extra(Lambda, scheme: SamplingScheme) -> np.ndarray:
    return noise_weight(scheme.tau, scheme.delta) * np.asarray(Lambda, dtype=float)


def quasi_lik1(alpha, Lambda, lm: LocalMeanSeries, model: DiffusionModel, with_grad: bool = False):
    """Diffusion contrast on local means given a noise covariance."""
    points, incr = _block_design(lm)
    s = lm.scheme
    return _diffusion_contrast(alpha, points, incr, (2.0 / 3.0) * s.delta,
                               _noise_extra(Lambda, s), model, with_grad)


def quasi_lik2(beta, Lambda, alpha, lm: LocalMeanSeries, model: DiffusionModel, with_grad: bool = False):
    """Drift contrast on local means; the drift is evaluated at the lagged block."""
    points, incr = _block_design(lm)
    s = lm.scheme
    C = _cov(model, points, np.asarray(alpha, dtype=float), _noise_extra(Lambda, s))
    Cinv, _ = _factor(C, 1)
    return _drift_contrast(beta, points, incr, s.delta, Cinv, model, with_grad)


def lga_lik1(alpha, raw, h: float, model: DiffusionModel, with_grad: bool = False):
    raw = np.asarray(raw, dtype=float)
    return _diffusion_contrast(alpha, raw[:-1], np.diff(raw, axis=0), h, 0.0, model, with_grad, offset=0)


def lga_lik2(beta, alpha, raw, h: float, model: DiffusionModel, with_grad: bool = False):
    raw = np.asarray(raw, dtype=float)
    C = _cov(model, raw[:-1], np.asarray(alpha, dtype=float), 0.0)
    Cinv, _ = _factor(C, 0)
    return _drift_contrast(beta, raw[:-1], np.diff(raw, axis=0), h, Cinv, model, with_grad)


# ---------------------------------------------------------------------------
# estimators

def _check_inputs(raw, model, box_alpha, box_beta):
    raw = np.asarray(raw, dtype=float)
    if raw.ndim == 1:
        raw = raw[:, None]
    if raw.shape[1] != model.state_dim:
        raise ValueError(f"data has {raw.shape[1]} columns, model state dimension is {model.state_dim}")
    model.check_boxes(box_alpha, box_beta)
    return raw


def adaptive_estimate(raw, scheme: SamplingScheme, model: DiffusionModel,
                      box_alpha: ParameterBox, box_beta: ParameterBox,
                      opts: OptimizerOptions | None = None,
                      stderr: bool = False, noise_fourth_moment=None) -> EstimationResult:
    """Noise covariance, then diffusion, then drift parameters, each conditioned on the last."""
    opts = opts or OptimizerOptions()
    raw = _check_inputs(raw, model, box_alpha, box_beta)
    Lam = estimate_lambda(raw)
    lm = local_means(raw, scheme)
    K = scheme.k - 2

    alpha_hat, info_a = maximize_in_box(
        lambda a: quasi_lik1(a, Lam, lm, model, with_grad=True),
        box_alpha, opts, scale=K, name="alpha")
    beta_hat, info_b = maximize_in_box(
        lambda b: quasi_lik2(b, Lam, alpha_hat, lm, model, with_grad=True),
        box_beta, opts, scale=K, name="beta")
    lam_info = StageInfo(name="Lambda", iterations=0, objective=float("nan"), converged=True, best_start=0)
    result = EstimationResult(
        method="lmm", alpha_hat=alpha_hat, beta_hat=beta_hat, Lambda_hat=Lam,
        rates={"lambda": float(np.sqrt(scheme.n)), "alpha": float(np.sqrt(scheme.k)),
               "beta": float(np.sqrt(scheme.k * scheme.delta))},
        stages=[lam_info, info_a, info_b],
    )
    if stderr:
        for name, est, box in (("alpha", alpha_hat, box_alpha), ("beta", beta_hat, box_beta)):
            if np.any(box.on_boundary(est)):
                warnings.warn(f"{name} estimate lies on the box boundary; plug-in covariance may be invalid",
                              RuntimeWarning, stacklevel=2)
        cov = plugin_asymptotic_cov(result, lm, model, scheme, noise_fourth_moment)
        result.covariance = cov
        result.stderr = cov.stderr
    return result


def lga_estimate(raw, h: float, model: DiffusionModel, box_alpha: ParameterBox,
                 box_beta: ParameterBox, opts: OptimizerOptions | None = None) -> EstimationResult:
    """Local Gaussian approximation on raw increments, treating data as noise free."""
    opts = opts or OptimizerOptions()
    raw = _check_inputs(raw, model, box_alpha, box_beta)
    n = raw.shape[0] - 1
    alpha_hat, info_a = maximize_in_box(
        lambda a: lga_lik1(a, raw, h, model, with_grad=True), box_alpha, opts, scale=n, name="alpha")
    beta_hat, info_b = maximize_in_box(
        lambda b: lga_lik2(b, alpha_hat, raw, h, model, with_grad=True), box_beta, opts, scale=n, name="beta")
    return EstimationResult(
        method="lga", alpha_hat=alpha_hat, beta_hat=beta_hat,
        rates={"alpha": float(np.sqrt(n)), "beta": float(np.sqrt(n * h))},
        stages=[info_a, info_b],
    )


# ---------------------------------------------------------------------------
# plug-in asymptotic covariance

@dataclass
class AsymptoticCovariance:
    W1: np.ndarray
    I22: np.ndarray
    J22: np.ndarray
    I33: np.ndarray
    J33: np.ndarray
    full_cov: np.ndarray
    stderr: dict


def noise_w1(Lambda, fourth_moment=None) -> np.ndarray:
    """Asymptotic covariance of sqrt(n)(vech Lambda_hat - vech Lambda), indexed by vech pairs."""
    Lam = np.asarray(Lambda, dtype=float)
    d = Lam.shape[0]
    m4 = np.full(d, 3.0) if fourth_moment is None else np.broadcast_to(np.asarray(fourth_moment, float), (d,))
    R = psd_sqrt(_clip_psd(Lam))
    rows, cols = vech_indices(d)
    l1, l2 = rows[:, None], cols[:, None]
    l3, l4 = rows[None, :], cols[None, :]
    kurt = np.einsum("ak,bk,k->ab", R[rows] * R[cols], R[rows] * R[cols], m4 - 3.0)
    gauss = 1.5 * (Lam[l1, l3] * Lam[l2, l4] + Lam[l1, l4] * Lam[l2, l3])
    return _sym(kurt + gauss)


def _clip_psd(M):
    w, Q = np.linalg.eigh(0.5 * (M + M.T))
    return (Q * np.clip(w, 0.0, None)) @ Q.T


def _sym(A):
    return 0.5 * (A + np.swapaxes(A, -1, -2))


def plugin_asymptotic_cov(result: EstimationResult, lm: LocalMeanSeries, model: DiffusionModel,
                          scheme: SamplingScheme, noise_fourth_moment=None) -> AsymptoticCovariance:
    """Sandwich covariance with invariant-measure averages replaced by block averages."""
    if result.Lambda_hat is None:
        raise ValueError("plug-in covariance needs a local-mean result with a noise estimate")
    Lam = _clip_psd(result.Lambda_hat)
    alpha, beta = result.alpha_hat, result.beta_hat
    x = lm.means
    k = x.shape[0]
    d = model.state_dim
    c = np.broadcast_to(c_matrix(model, x, alpha), (k, d, d))
    boundary = scheme.tau == 2.0
    C = c + 3.0 * Lam if boundary else c
    Cinv, _ = _factor(np.ascontiguousarray(C), 0)

    dc = np.broadcast_to(c_deriv_alpha(model, x, alpha), (model.n_alpha, k, d, d))
    G = Cinv[None] @ dc
    J22 = 0.5 * np.einsum("akij,bkji->ab", G, G) / k
    Abar = _sym(0.75 * G @ Cinv[None])
    Ac = Abar @ c[None]
    I22 = np.einsum("akij,bkji->ab", Ac, Ac)
    if boundary:
        AL = Abar @ Lam
        I22 = I22 + 4.0 * np.einsum("akij,bkji->ab", Ac, AL) + 12.0 * np.einsum("akij,bkji->ab", AL, AL)
    I22 = I22 / k

    jac = drift_jacobian(model, x, beta)
    f = np.einsum("kdm,kde->kme", jac, Cinv)
    I33 = np.einsum("kad,kde,kbe->ab", f, c, f) / k
    J33 = np.einsum("kdm,kde,ken->mn", jac, Cinv, jac) / k

    W1 = noise_w1(Lam, noise_fourth_moment)
    try:
        J22i = np.linalg.inv(J22)
        J33i = np.linalg.inv(J33)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"singular information block: {exc}") from None
    V2 = _sym(J22i @ I22 @ J22i)
    V3 = _sym(J33i @ I33 @ J33i)
    q = W1.shape[0]
    sizes = [q, model.n_alpha, model.n_beta]
    full = np.zeros((sum(sizes),) * 2)
    full[:q, :q] = W1
    full[q:q + sizes[1], q:q + sizes[1]] = V2
    full[q + sizes[1]:, q + sizes[1]:] = V3
    rates = result.rates
    stderr = {
        "theta_eps": np.sqrt(np.clip(np.diag(W1), 0, None)) / rates["lambda"],
        "alpha": np.sqrt(np.clip(np.diag(V2), 0, None)) / rates["alpha"],
        "beta": np.sqrt(np.clip(np.diag(V3), 0, None)) / rates["beta"],
    }
    return AsymptoticCovariance(W1=W1, I22=I22, J22=J22, I33=I33, J33=J33, full_cov=full, stderr=stderr)
