"""Parametric diffusion models dX = b(X, beta) dt + a(X, alpha) dW.

Coefficient callables are vectorised over leading axes: ``drift(x, beta)``
maps ``x`` of shape ``(..., d)`` to ``(..., d)`` and ``diffusion(x, alpha)``
maps it to ``(..., d, r)``. Optional derivative callables follow the same
convention with the parameter index placed last (drift Jacobian,
``(..., d, m2)``) or first (diffusion derivative, ``(m1, ..., d, r)``).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

ArrayFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

FD_REL_STEP = 1e-6


@dataclass(frozen=True)
class ParameterBox:
    """Axis-aligned compact box of admissible parameter values."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError(f"box bounds must be 1-d of equal length, got {lo.shape} and {hi.shape}")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("box is empty: lower > upper in some component")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_pairs(cls, pairs) -> "ParameterBox":
        arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1])

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, x, atol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def on_boundary(self, x, rtol: float = 1e-8) -> np.ndarray:
        width = self.upper - self.lower
        tol = rtol * np.maximum(width, 1.0)
        x = np.asarray(x, dtype=float)
        return (np.abs(x - self.lower) <= tol) | (np.abs(x - self.upper) <= tol)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lower, self.upper)


@dataclass(frozen=True)
class DiffusionModel:
    """A parametric diffusion with optional analytic parameter derivatives.

    ``constant_diffusion`` declares that ``a`` does not depend on the state;
    contrasts then evaluate ``c`` once instead of per block.
    """

    state_dim: int
    wiener_dim: int
    n_alpha: int
    n_beta: int
    drift: ArrayFn
    diffusion: ArrayFn
    drift_jacobian_beta: Optional[ArrayFn] = None
    diffusion_deriv_alpha: Optional[ArrayFn] = None
    constant_diffusion: bool = False
    name: str = "generic"
    ou: Optional["OUSpec"] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        for attr in ("state_dim", "wiener_dim", "n_alpha", "n_beta"):
            if int(getattr(self, attr)) < 1:
                raise ValueError(f"{attr} must be a positive integer")

    def check_boxes(self, box_alpha: ParameterBox, box_beta: ParameterBox) -> None:
        if box_alpha.dim != self.n_alpha:
            raise ValueError(f"alpha box has dimension {box_alpha.dim}, model expects {self.n_alpha}")
        if box_beta.dim != self.n_beta:
            raise ValueError(f"beta box has dimension {box_beta.dim}, model expects {self.n_beta}")


def c_matrix(model: DiffusionModel, x, alpha) -> np.ndarray:
    """c(x, alpha) = a a^T, shape ``(..., d, d)``."""
    a = model.diffusion(np.asarray(x, dtype=float), np.asarray(alpha, dtype=float))
    return a @ np.swapaxes(a, -1, -2)


def c_dagger(model: DiffusionModel, x, alpha, Lambda) -> np.ndarray:
    return c_matrix(model, x, alpha) + 3.0 * np.asarray(Lambda, dtype=float)


def noise_weight(tau: float, delta: float) -> float:
    """Factor 3 * delta**((2 - tau)/(tau - 1)) multiplying Lambda in c_n^tau."""
    if not tau > 1.0:
        raise ValueError(f"tau must exceed 1, got {tau}")
    if tau > 2.0:
        raise ValueError(f"tau must lie in (1, 2], got {tau}")
    if not delta > 0:
        raise ValueError("block duration must be positive")
    return 3.0 * delta ** ((2.0 - tau) / (tau - 1.0))


def c_tau(model: DiffusionModel, x, alpha, Lambda, scheme) -> np.ndarray:
    """c(x, alpha) + 3 delta^((2-tau)/(tau-1)) Lambda for a sampling scheme."""
    w = noise_weight(scheme.tau, scheme.delta)
    if w == 3.0:
        return c_dagger(model, x, alpha, Lambda)
    return c_matrix(model, x, alpha) + w * np.asarray(Lambda, dtype=float)


def _fd_steps(theta: np.ndarray) -> np.ndarray:
    return FD_REL_STEP * (1.0 + np.abs(theta))


def c_deriv_alpha(model: DiffusionModel, x, alpha) -> np.ndarray:
    """Derivatives of c w.r.t. each alpha component, shape ``(m1, ..., d, d)``."""
    x = np.asarray(x, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if model.diffusion_deriv_alpha is not None:
        a = model.diffusion(x, alpha)
        da = model.diffusion_deriv_alpha(x, alpha)
        prod = da @ np.swapaxes(a, -1, -2)
        return prod + np.swapaxes(prod, -1, -2)
    steps = _fd_steps(alpha)
    out = []
    for i, s in enumerate(steps):
        e = np.zeros_like(alpha)
        e[i] = s
        out.append((c_matrix(model, x, alpha + e) - c_matrix(model, x, alpha - e)) / (2 * s))
    return np.stack(out)


def drift_jacobian(model: DiffusionModel, x, beta) -> np.ndarray:
    """d b / d beta, shape ``(..., d, m2)``."""
    x = np.asarray(x, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if model.drift_jacobian_beta is not None:
        return model.drift_jacobian_beta(x, beta)
    steps = _fd_steps(beta)
    cols = []
    for i, s in enumerate(steps):
        e = np.zeros_like(beta)
        e[i] = s
        cols.append((model.drift(x, beta + e) - model.drift(x, beta - e)) / (2 * s))
    return np.stack(cols, axis=-1)


# ---------------------------------------------------------------------------
# Ornstein-Uhlenbeck instance

def vech(M) -> np.ndarray:
    """Stack the lower triangle column by column: (1,1), (2,1), ..., (d,d)."""
    M = np.asarray(M)
    d = M.shape[-1]
    rows, cols = vech_indices(d)
    return M[..., rows, cols]


def vech_indices(d: int) -> tuple[np.ndarray, np.ndarray]:
    # column-major lower triangle == row-major upper triangle, transposed
    cols, rows = np.triu_indices(d)
    return rows, cols


def unvech(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    q = v.shape[-1]
    d = int(round((np.sqrt(8 * q + 1) - 1) / 2))
    if d * (d + 1) // 2 != q:
        raise ValueError(f"length {q} is not triangular")
    rows, cols = vech_indices(d)
    M = np.zeros(v.shape[:-1] + (d, d))
    M[..., rows, cols] = v
    M[..., cols, rows] = v
    return M


@dataclass(frozen=True)
class OUSpec:
    """dX = (B X + mu_shift) dt + A dW with symmetric A.

    Parameters are laid out as ``beta = (vec_colmajor(B), mu_shift)`` and
    ``alpha = vech(A)``; for d = 2 this gives B = [[b1, b3], [b2, b4]],
    shift (b5, b6) and A = [[a1, a2], [a2, a3]].
    """

    B: np.ndarray
    mu_shift: np.ndarray
    A: np.ndarray
    x0: np.ndarray

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        mu = np.atleast_1d(np.asarray(self.mu_shift, dtype=float))
        x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        d = B.shape[0]
        if B.shape != (d, d) or A.shape != (d, d) or mu.shape != (d,) or x0.shape != (d,):
            raise ValueError("inconsistent OU dimensions")
        if not np.allclose(A, A.T, rtol=0, atol=1e-14):
            raise ValueError("diffusion matrix A must be symmetric")
        for name, val in (("B", B), ("A", A), ("mu_shift", mu), ("x0", x0)):
            object.__setattr__(self, name, val)
        if np.max(np.linalg.eigvals(B).real) >= 0:
            warnings.warn("drift matrix has an eigenvalue with non-negative real part; "
                          "the OU process is not ergodic", RuntimeWarning, stacklevel=2)

    @property
    def dim(self) -> int:
        return self.B.shape[0]

    @property
    def alpha(self) -> np.ndarray:
        return vech(self.A)

    @property
    def beta(self) -> np.ndarray:
        return np.concatenate([self.B.ravel(order="F"), self.mu_shift])

    @classmethod
    def from_params(cls, alpha, beta, x0) -> "OUSpec":
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        d = x0.size
        beta = np.asarray(beta, dtype=float)
        if beta.size != d * d + d:
            raise ValueError(f"OU drift needs {d * d + d} parameters, got {beta.size}")
        B = beta[: d * d].reshape(d, d, order="F")
        return cls(B=B, mu_shift=beta[d * d:], A=unvech(alpha), x0=x0)

    def stationary_mean(self) -> np.ndarray:
        return -np.linalg.solve(self.B, self.mu_shift)


def ou_model(d: int = 2, spec: Optional[OUSpec] = None) -> DiffusionModel:
    """Multivariate OU model with closed-form parameter derivatives."""
    if spec is not None:
        d = spec.dim
    rows, cols = vech_indices(d)
    m1 = rows.size
    m2 = d * d + d

    def split(beta):
        B = beta[: d * d].reshape(d, d, order="F")
        return B, beta[d * d:]

    def drift(x, beta):
        B, mu = split(np.asarray(beta, dtype=float))
        return x @ B.T + mu

    def diffusion(x, alpha):
        A = unvech(alpha)
        return np.broadcast_to(A, x.shape[:-1] + (d, d))

    def drift_jac(x, beta):
        # b_i = sum_k B[i,k] x_k + mu_i ; B[i,k] is beta[k*d + i]
        J = np.zeros(x.shape[:-1] + (d, m2))
        for i in range(d):
            for k in range(d):
                J[..., i, k * d + i] = x[..., k]
            J[..., i, d * d + i] = 1.0
        return J

    basis = np.zeros((m1, d, d))
    for idx, (i, j) in enumerate(zip(rows, cols)):
        basis[idx, i, j] = 1.0
        basis[idx, j, i] = 1.0

    def diffusion_deriv(x, alpha):
        return np.broadcast_to(basis[(slice(None),) + (None,) * (x.ndim - 1)],
                               (m1,) + x.shape[:-1] + (d, d))

    return DiffusionModel(
        state_dim=d, wiener_dim=d, n_alpha=m1, n_beta=m2,
        drift=drift, diffusion=diffusion,
        drift_jacobian_beta=drift_jac, diffusion_deriv_alpha=diffusion_deriv,
        constant_diffusion=True, name="ou", ou=spec,
    )


def brownian_model(d: int = 1) -> DiffusionModel:
    """Standard Brownian motion: b = 0, a = alpha * I with a scalar alpha; beta is unused."""

    def drift(x, beta):
        return np.zeros_like(x) + 0.0 * beta[0]

    def diffusion(x, alpha):
        return np.broadcast_to(alpha[0] * np.eye(d), x.shape[:-1] + (d, d))

    return DiffusionModel(state_dim=d, wiener_dim=d, n_alpha=1, n_beta=1,
                          drift=drift, diffusion=diffusion,
                          constant_diffusion=True, name="brownian")


# Benchmark 2-d OU used by the simulation study and the CLI defaults.
BENCH_OU_ALPHA = np.array([1.0, 0.1, 1.0])
BENCH_OU_BETA = np.array([-1.0, -0.1, -0.1, -1.0, 1.0, 1.0])
BENCH_OU_X0 = np.array([1.0, 1.0])


def bench_ou_spec() -> OUSpec:
    return OUSpec.from_params(BENCH_OU_ALPHA, BENCH_OU_BETA, BENCH_OU_X0)


def default_ou_boxes(d: int = 2) -> tuple[ParameterBox, ParameterBox]:
    """Boxes that keep A positive definite near the truth.

    c = A A^T is invariant under flipping the sign of an eigenvalue of A, so
    the off-diagonal range is kept narrow enough to exclude the mirrored
    solutions. Diagonal entries reach 500 so the noise-inflated LGA fit fits.
    """
    rows, cols = vech_indices(d)
    lo = np.where(rows == cols, 0.1, -0.5)
    hi = np.where(rows == cols, 500.0, 0.5)
    m2 = d * d + d
    return ParameterBox(lo, hi), ParameterBox(np.full(m2, -100.0), np.full(m2, 100.0))
