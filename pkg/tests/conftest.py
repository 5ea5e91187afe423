import numpy as np
import pytest

from noisydiff.model import DiffusionModel

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def _nonlinear_model(analytic: bool = True) -> DiffusionModel:
    """2-d model with state-dependent coefficients, used for gradient checks.

    b_i(x) = beta1 - beta2 x_i + beta3 sin(x_other)
    a(x)   = alpha1 I + alpha2 diag(1 / (1 + x_i^2))
    """

    def drift(x, beta):
        other = x[..., ::-1]
        return beta[0] - beta[1] * x + beta[2] * np.sin(other)

    def diag(v):
        out = np.zeros(v.shape + (v.shape[-1],))
        idx = np.arange(v.shape[-1])
        out[..., idx, idx] = v
        return out

    def diffusion(x, alpha):
        return diag(alpha[0] + alpha[1] / (1.0 + x ** 2))

    def jac(x, beta):
        other = x[..., ::-1]
        return np.stack([np.ones_like(x), -x, np.sin(other)], axis=-1)

    def dda(x, alpha):
        return np.stack([diag(np.ones_like(x)), diag(1.0 / (1.0 + x ** 2))])

    return DiffusionModel(state_dim=2, wiener_dim=2, n_alpha=2, n_beta=3, drift=drift,
                          diffusion=diffusion,
                          drift_jacobian_beta=jac if analytic else None,
                          diffusion_deriv_alpha=dda if analytic else None,
                          name="nonlinear")


@pytest.fixture
def nonlinear_model():
    return _nonlinear_model()


@pytest.fixture
def nonlinear_model_fd():
    return _nonlinear_model(analytic=False)


def scalar_model(drift=None, diffusion=None, n_beta: int = 1) -> DiffusionModel:
    """1-d model; by default b = beta and a = alpha."""
    return DiffusionModel(
        state_dim=1, wiener_dim=1, n_alpha=1, n_beta=n_beta,
        drift=drift or (lambda x, b: np.zeros_like(x) + b[0]),
        diffusion=diffusion or (lambda x, a: np.broadcast_to(a[0], x.shape[:-1] + (1, 1)).copy()),
        diffusion_deriv_alpha=lambda x, a: np.ones((1,) + x.shape[:-1] + (1, 1)),
        constant_diffusion=diffusion is None,
    )
