"""ADMM solver for E-3DTV regularized HSI denoising.

Solves

    min  tau * sum_n ||U_n||_1 + lam * ||E||_1
    s.t. Y = X + E,  D_n X = U_n V_n^T,  V_n^T V_n = I   (n = 1, 2, 3)

on the mode-3 unfolding of the input cube.  ``D_n`` are the circular
difference operators of :mod:`e3dtv.tensor_core`.
"""

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .regularizer import FactorPair, procrustes_v, soft_threshold
from .tensor_core import (as_hsi, diff, diff_adjoint, difference_eigenvalues,
                          fold3, solve_x_system, unfold3)

__all__ = [
    "NumericalError",
    "SolverConfig",
    "SolverReport",
    "DenoiseState",
    "denoise",
    "init_state",
    "update_x",
    "update_e",
    "update_u",
    "update_v",
    "update_multipliers",
]

log = logging.getLogger(__name__)

MODES = (1, 2, 3)


class NumericalError(RuntimeError):
    """A solver produced non-finite values or an inner solve failed."""


@dataclass
class SolverConfig:
    """Tunables shared by the denoising and compressed-sensing solvers.

    ``tau`` and ``lam`` default to ``C * sqrt(hw)`` and ``1 / sqrt(hw)`` when
    left as ``None`` (see :meth:`resolved`).  ``baseline_3dtv`` turns the
    solver into plain anisotropic 3DTV: full rank, ``V_n = I``, no V-update.
    """

    tau: float | None = None
    lam: float | None = None
    c: float = 0.0004
    rank: int = 3
    mu0: float = 1e-2
    mu_growth: float = 1.05
    mu_max: float = 1e6
    eps1: float = 1e-6
    eps2: float = 1e-6
    max_iters: int = 200
    baseline_3dtv: bool = False
    # penalty on the measurement constraint, relative to mu (CS only)
    mu4_factor: float = 10.0
    cg_tol: float = 1e-8
    cg_maxiter: int = 500

    def resolved(self, shape):
        """Return a copy with ``tau``/``lam`` filled in and fields validated."""
        h, w, s = shape
        hw = h * w
        cfg = SolverConfig(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        if cfg.lam is None:
            cfg.lam = 1.0 / math.sqrt(hw)
        if cfg.tau is None:
            cfg.tau = cfg.c * math.sqrt(hw)
        if cfg.baseline_3dtv:
            cfg.rank = s
        cfg.validate(s)
        return cfg

    def validate(self, s):
        if self.tau is not None and not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.lam is not None and not self.lam > 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if not self.baseline_3dtv and not 1 <= self.rank < s:
            raise ValueError(f"rank must satisfy 1 <= rank < s={s}, got {self.rank}")
        if not (self.eps1 > 0 and self.eps2 > 0):
            raise ValueError("eps1 and eps2 must be positive")
        if not self.mu0 > 0 or not self.mu_max >= self.mu0:
            raise ValueError("need 0 < mu0 <= mu_max")
        if not self.mu_growth >= 1:
            raise ValueError(f"mu_growth must be >= 1, got {self.mu_growth}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.mu4_factor > 0:
            raise ValueError("mu4_factor must be positive")


@dataclass
class SolverReport:
    """Per-iteration diagnostics of an ADMM run."""

    iterations: int = 0
    converged: bool = False
    res_data: list = field(default_factory=list)
    res_grad: list = field(default_factory=list)
    objective: list = field(default_factory=list)
    mu: list = field(default_factory=list)
    wall_time: float = 0.0

    def record(self, res_data, res_grad, objective, mu):
        self.iterations += 1
        self.res_data.append(float(res_data))
        self.res_grad.append(float(res_grad))
        self.objective.append(float(objective))
        self.mu.append(float(mu))

    def rows(self):
        """Tabular form: ``(iteration, mu, res_data, res_grad, objective)``."""
        return [(i + 1, self.mu[i], self.res_data[i], self.res_grad[i], self.objective[i])
                for i in range(self.iterations)]


@dataclass
class DenoiseState:
    x: np.ndarray
    e: np.ndarray
    factors: list
    m: list
    gamma: np.ndarray
    mu: float
    shape: tuple
    eig: np.ndarray = None

    def grad(self, n):
        """Unfolded ``D_n X``."""
        return unfold3(diff(fold3(self.x, self.shape), n))


def _grad_adjoint(g, n, shape):
    return unfold3(diff_adjoint(fold3(g, shape), n))


def _leading_factors(g, r):
    _, _, vt = np.linalg.svd(g, full_matrices=False)
    v = vt[:r].T.copy()
    return FactorPair(g @ v, v)


def init_state(y, cfg):
    """Warm start: ``X = Y``, ``E = 0``, ``V_n`` from the SVD of ``D_n Y``."""
    y = as_hsi(y)
    shape = y.shape
    ym = unfold3(y).copy()
    factors = []
    for n in MODES:
        g = unfold3(diff(y, n))
        if cfg.baseline_3dtv:
            factors.append(FactorPair(g.copy(), np.eye(shape[2])))
        else:
            factors.append(_leading_factors(g, cfg.rank))
    zeros = np.zeros_like(ym)
    return DenoiseState(
        x=ym, e=zeros.copy(), factors=factors, m=[zeros.copy() for _ in MODES],
        gamma=zeros.copy(), mu=cfg.mu0, shape=shape, eig=difference_eigenvalues(*shape),
    )


def update_x(state, y):
    """X-step: FFT solve of ``(mu I + mu sum D_n^* D_n) X = H_x``."""
    mu = state.mu
    hx = mu * (y - state.e) + state.gamma
    for n, fp, mn in zip(MODES, state.factors, state.m):
        hx = hx + _grad_adjoint(mu * fp.product() - mn, n, state.shape)
    return solve_x_system(hx, state.shape, mu, eig=state.eig)


def update_e(state, y, lam):
    """E-step: ``S_{lam/mu}(Y - X + Gamma/mu)``."""
    return soft_threshold(y - state.x + state.gamma / state.mu, lam / state.mu)


def update_u(state, n, tau):
    """U-step for mode ``n``: ``S_{tau/mu}((D_n X + M_n/mu) V_n)``."""
    w = state.grad(n) + state.m[n - 1] / state.mu
    return soft_threshold(w @ state.factors[n - 1].v, tau / state.mu)


def update_v(state, n):
    """V-step for mode ``n``: Procrustes fit of ``U_n V^T`` to ``D_n X + M_n/mu``.

    A zero ``U_n`` leaves the previous ``V_n`` in place.
    """
    fp = state.factors[n - 1]
    w = state.grad(n) + state.m[n - 1] / state.mu
    if not np.any(w.T @ fp.u):
        return fp.v
    return procrustes_v(w, fp.u)


def update_multipliers(state, y, cfg):
    """Dual ascent on ``M_n`` and ``Gamma`` followed by the penalty increase."""
    mu = state.mu
    for i, n in enumerate(MODES):
        state.m[i] = state.m[i] + mu * (state.grad(n) - state.factors[i].product())
    state.gamma = state.gamma + mu * (y - state.x - state.e)
    state.mu = min(mu * cfg.mu_growth, cfg.mu_max)
    return state


def _residuals(state, y, ynorm2):
    r_data = float(np.sum((y - state.x - state.e) ** 2)) / ynorm2
    r_grad = max(float(np.sum((state.grad(n) - fp.product()) ** 2))
                 for n, fp in zip(MODES, state.factors)) / ynorm2
    return r_data, r_grad


def _check_finite(state, it):
    arrays = [state.x, state.e, state.gamma, *state.m]
    arrays += [a for fp in state.factors for a in (fp.u, fp.v)]
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise NumericalError(f"non-finite iterate at iteration {it}")


def denoise(y, cfg=None, callback=None):
    """Denoise an HSI cube.

    Parameters
    ----------
    y : ndarray, shape (h, w, s)
        Noisy cube, ideally scaled to [0, 1].
    cfg : SolverConfig, optional
    callback : callable, optional
        Called as ``callback(state, iteration)`` after each iteration.

    Returns
    -------
    x, e : ndarray, shape (h, w, s)
        Clean estimate and sparse noise.
    report : SolverReport
    """
    t0 = time.perf_counter()
    y = as_hsi(y)
    cfg = (cfg or SolverConfig()).resolved(y.shape)
    state = init_state(y, cfg)
    ym = unfold3(y)
    ynorm2 = float(np.sum(ym * ym)) or 1.0
    report = SolverReport()

    for it in range(1, cfg.max_iters + 1):
        mu = state.mu
        state.x = update_x(state, ym)
        state.e = update_e(state, ym, cfg.lam)
        for n in MODES:
            fp = state.factors[n - 1]
            fp.u = update_u(state, n, cfg.tau)
            if not cfg.baseline_3dtv:
                fp.v = update_v(state, n)
        r_data, r_grad = _residuals(state, ym, ynorm2)
        obj = cfg.tau * sum(np.abs(fp.u).sum() for fp in state.factors) \
            + cfg.lam * np.abs(state.e).sum()
        update_multipliers(state, ym, cfg)
        _check_finite(state, it)
        report.record(r_data, r_grad, obj, mu)
        if callback is not None:
            callback(state, it)
        if r_data <= cfg.eps1 and r_grad <= cfg.eps2:
            report.converged = True
            break

    report.wall_time = time.perf_counter() - t0
    log.info("denoise: %d iterations, converged=%s, %.2fs",
             report.iterations, report.converged, report.wall_time)
    return fold3(state.x, y.shape).copy(order="F"), fold3(state.e, y.shape).copy(order="F"), report
