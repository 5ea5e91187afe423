"""Multistart box-constrained maximisation with a quasi-Newton inner solver."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .model import ParameterBox

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class OptimizerOptions:
    n_starts: int = 5
    maxiter: int = 500
    gtol: float = 1e-8
    seed: int = 0


@dataclass(frozen=True)
class StageInfo:
    name: str
    iterations: int
    objective: float
    converged: bool
    best_start: int
    message: str = ""


def projected_gradient(x, g, box: ParameterBox) -> np.ndarray:
    """Ascent gradient with components that would push outside the box removed."""
    pg = np.array(g, dtype=float)
    at_lo = x <= box.lower
    at_hi = x >= box.upper
    pg[at_lo & (pg < 0)] = 0.0
    pg[at_hi & (pg > 0)] = 0.0
    return pg


def maximize_in_box(fun: Callable, box: ParameterBox, opts: OptimizerOptions,
                    scale: float = 1.0, name: str = "stage", x_start=None) -> tuple[np.ndarray, StageInfo]:
    """Maximise ``fun(x) -> (value, grad)`` over ``box``.

    Starts: ``x_start`` (if given), the box centre, then seeded uniform draws
    until ``opts.n_starts`` starts have run. The best objective wins; ties go
    to the earliest start. ``scale`` divides the objective for the inner
    solver so the gradient tolerance is relative to a per-term contrast.
    """
    rng = np.random.default_rng(opts.seed)
    starts = [] if x_start is None else [box.clip(x_start)]
    starts.append(box.center)
    while len(starts) < opts.n_starts:
        starts.append(box.sample(rng))

    def neg(x):
        try:
            v, g = fun(x)
        except np.linalg.LinAlgError:
            return np.inf, np.zeros_like(x)
        if not np.isfinite(v):
            return np.inf, np.zeros_like(x)
        return -v / scale, -np.asarray(g) / scale

    bounds = list(zip(box.lower, box.upper))
    best = None
    total_iter = 0
    for i, x0 in enumerate(starts):
        lbfgs = {"maxiter": opts.maxiter, "gtol": opts.gtol, "ftol": 1e-15}
        res = minimize(neg, x0, jac=True, method="L-BFGS-B", bounds=bounds, options=lbfgs)
        total_iter += int(res.nit)
        if not res.success and np.isfinite(res.fun) and res.nit < opts.maxiter:
            # a failed line search often only needs a fresh curvature history
            again = minimize(neg, res.x, jac=True, method="L-BFGS-B", bounds=bounds, options=lbfgs)
            total_iter += int(again.nit)
            if again.fun <= res.fun:
                res = again
        if not np.isfinite(res.fun):
            continue
        if best is None or res.fun < best[1].fun:
            best = (i, res)
    if best is None:
        raise RuntimeError(f"{name}: objective was not finite at any start")
    i, res = best
    x = box.clip(res.x)
    value, grad = fun(x)
    pg = projected_gradient(x, np.asarray(grad) / scale, box)
    converged = bool(res.success) or float(np.max(np.abs(pg), initial=0.0)) < opts.gtol * (1 + abs(value / scale))
    if not converged:
        log.warning("%s did not converge: %s", name, res.message)
    return x, StageInfo(name=name, iterations=total_iter, objective=float(value),
                        converged=converged, best_start=i, message=str(res.message))
