"""Compressed-sensing reconstruction with the E-3DTV prior.

Measurements are ``y = Psi(Z)`` with ``Psi = D . H . P``: a random
permutation ``P`` of the (zero-padded) flattened cube, the orthonormal
Walsh-Hadamard transform ``H`` and a random row subsampler ``D``.  The
reconstruction solves

    min  tau * sum_n ||U_n||_1 + 1/2 ||E||_F^2
    s.t. y = Psi(Z),  Z = X + E,  D_n X = U_n V_n^T,  V_n^T V_n = I

by ADMM.
"""

import logging
import time
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .denoise import MODES, NumericalError, SolverConfig, SolverReport
from .regularizer import FactorPair, procrustes_v, soft_threshold
from .tensor_core import (diff, diff_adjoint, difference_eigenvalues, fold3,
                          solve_x_system, unfold3)

__all__ = [
    "fwht",
    "CompressiveOperator",
    "build_operator",
    "CsState",
    "solve_z",
    "reconstruct",
    "default_cs_config",
]

log = logging.getLogger(__name__)


def fwht(a):
    """Unnormalized fast Walsh-Hadamard transform (Sylvester order) of a 1-D array."""
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if n & (n - 1):
        raise ValueError(f"length must be a power of two, got {n}")
    h = 1
    while h < n:
        v = a.reshape(-1, 2, h)
        a = np.stack((v[:, 0] + v[:, 1], v[:, 0] - v[:, 1]), axis=1).reshape(n)
        h *= 2
    return a


@dataclass(frozen=True)
class CompressiveOperator:
    """Permuted Walsh-Hadamard sampling operator.

    Fully determined by ``(h, w, s, ratio, seed)``; see :func:`build_operator`.
    Signals are flattened in the canonical unfolding order, zero-padded to
    ``n_pad``, permuted (``z_pad[perm]``), transformed with the orthonormal
    Hadamard transform and sampled at ``sample_idx``.
    """

    h: int
    w: int
    s: int
    ratio: float
    seed: int
    n: int
    n_pad: int
    m: int
    perm: np.ndarray
    sample_idx: np.ndarray

    @property
    def dims(self):
        return (self.h, self.w, self.s)

    def _flat(self, z):
        z = np.asarray(z, dtype=np.float64)
        if z.shape == self.dims:
            z = z.ravel(order="F")
        elif z.shape == (self.h * self.w, self.s):
            z = z.ravel(order="F")
        if z.shape != (self.n,):
            raise ValueError(f"signal of shape {z.shape} does not match operator dims {self.dims}")
        return z

    def apply(self, z):
        """``Psi z``: length-``m`` measurement vector."""
        zp = np.zeros(self.n_pad)
        zp[: self.n] = self._flat(z)
        t = fwht(zp[self.perm]) / np.sqrt(self.n_pad)
        return t[self.sample_idx]

    def adjoint(self, y):
        """``Psi^* y``: flat length-``n`` signal."""
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.m,):
            raise ValueError(f"measurement vector must have length {self.m}, got {y.shape}")
        t = np.zeros(self.n_pad)
        t[self.sample_idx] = y
        v = fwht(t) / np.sqrt(self.n_pad)
        out = np.empty(self.n_pad)
        out[self.perm] = v
        return out[: self.n]

    def adjoint_matrix(self, y):
        """``Psi^* y`` unfolded to ``(h*w, s)``."""
        return self.adjoint(y).reshape((self.h * self.w, self.s), order="F")


def build_operator(h, w, s, ratio, seed=0):
    """Construct the sampling operator for an ``h x w x s`` cube.

    ``m = round(ratio * h*w*s)`` measurements are drawn without replacement
    from the ``n_pad = 2**ceil(log2(h*w*s))`` Hadamard rows.  Row 0 (the
    all-ones row) is always kept: it is the only row that sees the cube's
    mean, which the difference operators cannot recover either.
    """
    if min(h, w, s) < 1:
        raise ValueError("dimensions must be positive")
    if not 0 < ratio <= 1:
        raise ValueError(f"sampling ratio must lie in (0, 1], got {ratio}")
    n = h * w * s
    n_pad = 1 << (n - 1).bit_length()
    m = int(round(ratio * n))
    if m < 1:
        raise ValueError(f"ratio {ratio} yields no measurements for n={n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_pad)
    rest = 1 + rng.choice(n_pad - 1, size=m - 1, replace=False)
    sample_idx = np.sort(np.concatenate(([0], rest)))
    if not np.array_equal(np.sort(perm), np.arange(n_pad)):
        raise RuntimeError("permutation is not a bijection")
    return CompressiveOperator(h, w, s, float(ratio), int(seed), n, n_pad, m, perm, sample_idx)


# (rank, tau) for low (<= 1 %) and high sampling ratios; desk-size cubes
# without noise want a tenth of the tau used on full-size scenes
_LOW_RATE = (4, 0.0075)
_HIGH_RATE = (7, 0.015)
DESK_TAU_SCALE = 0.1


def default_cs_config(ratio, tau_scale=DESK_TAU_SCALE, **overrides):
    """Solver settings for sampling ratio ``ratio``.

    Low ratios get a smaller rank and weaker sparsity weight than high
    ones.  ``tau_scale`` multiplies the tabulated ``tau``; keyword
    arguments override any :class:`SolverConfig` field.
    """
    rank, tau = _LOW_RATE if ratio <= 0.01 else _HIGH_RATE
    params = dict(rank=rank, tau=tau * tau_scale, mu0=1e-2, mu_growth=1.05, max_iters=300)
    params.update(overrides)
    return SolverConfig(**params)


@dataclass
class CsState:
    z: np.ndarray
    x: np.ndarray
    e: np.ndarray
    factors: list
    m: list
    gamma1: np.ndarray
    gamma2: np.ndarray
    mu: np.ndarray  # (mu1, mu2, mu3, mu4, mu5)
    shape: tuple
    eig: np.ndarray = None
    cg_iters: int = 0

    def grad(self, n):
        return unfold3(diff(fold3(self.x, self.shape), n))


def solve_z(state, y, op, tol=1e-8, maxiter=500, residuals=None):
    """Z-step: CG on ``(mu4 Psi^*Psi + mu5 I) Z = rhs``.

    ``rhs = mu5 (X + E) + mu4 Psi^* y + Psi^* Gamma1 - Gamma2``.  When
    ``residuals`` is a list the relative residual of every CG iterate is
    appended to it.
    """
    mu4, mu5 = state.mu[3], state.mu[4]
    n = op.n
    rhs = (mu5 * (state.x + state.e) - state.gamma2).ravel(order="F") \
        + op.adjoint(mu4 * y + state.gamma1)
    if mu4 == 0:
        state.cg_iters = 0
        return (rhs / mu5).reshape(state.x.shape, order="F")

    def matvec(v):
        v = np.ravel(v)
        return mu4 * op.adjoint(op.apply(v)) + mu5 * v

    a = LinearOperator((n, n), matvec=matvec, dtype=np.float64)
    bnorm = np.linalg.norm(rhs) or 1.0
    count = [0]

    def cb(xk):
        count[0] += 1
        if residuals is not None:
            residuals.append(float(np.linalg.norm(rhs - matvec(xk)) / bnorm))

    x0 = state.z.ravel(order="F")
    sol, info = cg(a, rhs, x0=x0, rtol=tol, atol=0.0, maxiter=maxiter, callback=cb)
    if info != 0:
        raise NumericalError(f"CG did not converge within {maxiter} iterations")
    state.cg_iters = count[0]
    return sol.reshape(state.x.shape, order="F")


def _init_state(op, y, cfg):
    shape = op.dims
    z = op.adjoint_matrix(y)
    factors = []
    for n in MODES:
        g = unfold3(diff(fold3(z, shape), n))
        if cfg.baseline_3dtv:
            factors.append(FactorPair(g.copy(), np.eye(shape[2])))
        else:
            _, _, vt = np.linalg.svd(g, full_matrices=False)
            v = vt[: cfg.rank].T.copy()
            factors.append(FactorPair(g @ v, v))
    zeros = np.zeros_like(z)
    mu = np.array([cfg.mu0, cfg.mu0, cfg.mu0, cfg.mu4_factor * cfg.mu0, cfg.mu0])
    return CsState(z=z, x=z.copy(), e=zeros.copy(), factors=factors,
                   m=[zeros.copy() for _ in MODES], gamma1=np.zeros(op.m),
                   gamma2=zeros.copy(), mu=mu, shape=shape,
                   eig=difference_eigenvalues(*shape))


def _update_x(state):
    mu1, mu2, mu3, _, mu5 = state.mu
    hx = mu5 * (state.z - state.e) + state.gamma2
    for i, n in enumerate(MODES):
        fp = state.factors[i]
        g = fold3(state.mu[i] * fp.product() - state.m[i], state.shape)
        hx = hx + unfold3(diff_adjoint(g, n))
    return solve_x_system(hx, state.shape, (mu1, mu2, mu3, mu5), eig=state.eig)


def reconstruct(y, op, cfg=None, callback=None):
    """Recover a cube from measurements ``y = op.apply(z)``.

    Returns
    -------
    z : ndarray, shape (h, w, s)
        Reconstruction consistent with the measurements (the method's output).
    x : ndarray, shape (h, w, s)
        Its regularized component, ``z = x + e``.
    report : SolverReport
        ``res_data`` holds ``max(||y - Psi Z||, ||Z - X - E||) / ||y||`` and
        ``res_grad`` the worst ``||D_n X - U_n V_n^T||_F^2 / ||y||^2``.  The
        run stops once they fall below ``eps1`` and ``eps2``.
    """
    t0 = time.perf_counter()
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (op.m,):
        raise ValueError(f"expected {op.m} measurements, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("measurements contain non-finite values")
    cfg = (cfg or default_cs_config(op.ratio)).resolved(op.dims)
    state = _init_state(op, y, cfg)
    ynorm = float(np.linalg.norm(y)) or 1.0
    report = SolverReport()

    for it in range(1, cfg.max_iters + 1):
        mu = state.mu.copy()
        state.z = solve_z(state, y, op, tol=cfg.cg_tol, maxiter=cfg.cg_maxiter)
        state.x = _update_x(state)
        state.e = (mu[4] * (state.z - state.x) + state.gamma2) / (1.0 + mu[4])
        for i, n in enumerate(MODES):
            fp = state.factors[i]
            w = state.grad(n) + state.m[i] / mu[i]
            fp.u = soft_threshold(w @ fp.v, cfg.tau / mu[i])
            if not cfg.baseline_3dtv and np.any(w.T @ fp.u):
                fp.v = procrustes_v(w, fp.u)

        meas = y - op.apply(state.z)
        res_grad = []
        for i, n in enumerate(MODES):
            r = state.grad(n) - state.factors[i].product()
            res_grad.append(float(np.sum(r * r)))
            state.m[i] = state.m[i] + mu[i] * r
        state.gamma1 = state.gamma1 + mu[3] * meas
        split = state.z - state.x - state.e
        state.gamma2 = state.gamma2 + mu[4] * split
        state.mu = np.minimum(state.mu * cfg.mu_growth, cfg.mu_max * np.array([1, 1, 1, cfg.mu4_factor, 1]))

        r_data = max(np.linalg.norm(meas), np.linalg.norm(split)) / ynorm
        r_grad = max(res_grad) / ynorm ** 2
        obj = cfg.tau * sum(np.abs(fp.u).sum() for fp in state.factors) \
            + 0.5 * float(np.sum(state.e ** 2))
        arrays = [state.z, state.x, state.e, state.gamma1, state.gamma2, *state.m]
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise NumericalError(f"non-finite iterate at iteration {it}")
        report.record(r_data, r_grad, obj, mu[4])
        if callback is not None:
            callback(state, it)
        if r_data <= cfg.eps1 and r_grad <= cfg.eps2:
            report.converged = True
            break

    report.wall_time = time.perf_counter() - t0
    log.info("reconstruct: %d iterations, converged=%s, %.2fs",
             report.iterations, report.converged, report.wall_time)
    shape = op.dims
    return (fold3(state.z, shape).copy(order="F"), fold3(state.x, shape).copy(order="F"), report)
