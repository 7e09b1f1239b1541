"""E-3DTV / 3DTV measures and the proximal steps they need."""

from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.linalg import expm

from .tensor_core import diff

__all__ = [
    "FactorPair",
    "soft_threshold",
    "procrustes_v",
    "tv3d_measure",
    "etv_measure",
    "equivalence_oracle",
]


@dataclass
class FactorPair:
    """Factorization ``G = u @ v.T`` of one gradient map, ``v`` column-orthonormal."""

    u: np.ndarray
    v: np.ndarray

    @property
    def rank(self):
        return self.v.shape[1]

    def product(self):
        return self.u @ self.v.T

    def check(self, tol=1e-10):
        hw, r = self.u.shape
        s = self.v.shape[0]
        if self.v.shape[1] != r:
            raise ValueError("u and v disagree on rank")
        if not (r < s and r < hw):
            raise ValueError(f"rank {r} must be below both {hw} and {s}")
        err = np.abs(self.v.T @ self.v - np.eye(r)).max()
        if err > tol:
            raise ValueError(f"v is not column-orthonormal (max deviation {err:.2e})")


def soft_threshold(x, delta):
    """Element-wise shrinkage, the proximal map of ``delta * |.|``."""
    if not delta > 0:
        raise ValueError(f"threshold must be positive, got {delta}")
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - delta, 0.0)


def _fix_signs(b, c):
    # Flip paired singular vectors so the largest-magnitude entry of each
    # left vector is non-negative; b @ c.T is unchanged.
    idx = np.argmax(np.abs(b), axis=0)
    sgn = np.sign(b[idx, np.arange(b.shape[1])])
    sgn[sgn == 0] = 1.0
    return b * sgn, c * sgn


def procrustes_v(w, u):
    """Column-orthonormal ``V`` minimizing ``||u V^T - w||_F``.

    With ``A = w^T u = B D C^T`` (condensed SVD) the minimizer is ``B C^T``,
    which is also the maximizer of ``<A, V>`` over ``V^T V = I``.
    """
    w = np.asarray(w, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if w.ndim != 2 or u.ndim != 2 or w.shape[0] != u.shape[0]:
        raise ValueError(f"shapes {w.shape} and {u.shape} are not conformable")
    a = w.T @ u
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite input to Procrustes update")
    if not np.any(a):
        raise ValueError("Procrustes update is undefined for w^T u = 0")
    b, _, ct = np.linalg.svd(a, full_matrices=False)
    b, c = _fix_signs(b, ct.T)
    return b @ c.T


def tv3d_measure(x):
    """Anisotropic 3DTV: sum of l1 norms of the three circular gradient maps."""
    return float(sum(np.abs(diff(x, n)).sum() for n in (1, 2, 3)))


def _row_space(g, tol):
    _, sv, vt = np.linalg.svd(g, full_matrices=True)
    k = int(np.sum(sv > tol * max(sv[0], 1.0))) if sv.size and sv[0] > 0 else 0
    return k, vt.T


def _orthogonal(theta, r):
    # SO(r) as the exponential of a skew matrix
    a = np.zeros((r, r))
    a[np.triu_indices(r, 1)] = theta
    return expm(a - a.T)


def etv_measure(g, r, restarts=8, seed=0, rank_tol=1e-10):
    """Enhanced-TV sparsity of one unfolded gradient map.

    Computes ``min ||U||_1`` subject to ``g = U V^T`` and ``V^T V = I`` with
    ``V`` of width ``r``.  Every feasible ``V`` has ``g V = M Q`` for a fixed
    ``M = [g V0, 0]`` (``V0`` spanning the row space of ``g``) and some
    orthogonal ``Q``, so the search runs over ``O(r)``.  This is a
    multi-start local search; it is a diagnostic, not a certified optimum.

    Raises
    ------
    ValueError
        If ``rank(g) > r`` (no feasible factorization).
    """
    g = np.asarray(g, dtype=np.float64)
    if r < 1 or r > g.shape[1]:
        raise ValueError(f"rank must be in [1, {g.shape[1]}], got {r}")
    if not np.any(g):
        return 0.0
    k, vfull = _row_space(g, rank_tol)
    if k > r:
        raise ValueError(f"rank(g) = {k} exceeds r = {r}: constraint set is empty")
    m = np.zeros((g.shape[0], r))
    m[:, :k] = g @ vfull[:, :k]
    if r == 1:
        return float(np.abs(m).sum())

    reflect = np.eye(r)
    reflect[-1, -1] = -1.0
    npar = r * (r - 1) // 2
    rng = np.random.default_rng(seed)
    best = np.abs(m).sum()
    for flip in (np.eye(r), reflect):
        def obj(t):
            return np.abs(m @ _orthogonal(t, r) @ flip).sum()

        starts = [np.zeros(npar)] + [rng.uniform(-np.pi, np.pi, npar) for _ in range(restarts)]
        if r == 2:
            # one angle: dense scan, then polish the best cell
            grid = np.linspace(-np.pi, np.pi, 721)
            vals = [obj(np.array([t])) for t in grid]
            starts = [np.array([grid[int(np.argmin(vals))]])]
        for t0 in starts:
            res = optimize.minimize(obj, t0, method="Nelder-Mead",
                                    options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000})
            best = min(best, res.fun)
    return float(best)


def _stiefel_candidates(s, r, vfull, steps, rng, n_random):
    if r == 1:
        qs = [np.ones((1, 1)), -np.ones((1, 1))]
    else:
        qs = []
        for t in np.linspace(0.0, 2 * np.pi, steps, endpoint=False):
            c, sn = np.cos(t), np.sin(t)
            rot = np.array([[c, -sn], [sn, c]])
            qs.append(rot)
            qs.append(rot @ np.diag([1.0, -1.0]))
    # Completions of the row-space basis rotated over O(r), plus generic
    # Stiefel samples that are almost surely infeasible.
    cands = [vfull[:, :r] @ q for q in qs]
    for _ in range(n_random):
        q, _ = np.linalg.qr(rng.standard_normal((s, r)))
        cands.append(q)
    return cands


def equivalence_oracle(g, r, tol=1e-8, steps=360, n_random=200, seed=0):
    """Numerically check that the two E-TV formulations agree on ``g``.

    Over a grid of column-orthonormal ``V`` the oracle checks that

    * ``||g - g V V^T||_F^2 = ||g||_F^2 - ||g V||_F^2`` (the norm identity
      behind both directions of the equivalence);
    * ``V`` satisfies the norm constraint ``||g V||_F = ||g||_F`` exactly when
      ``(g V, V)`` is an exact factorization ``g = U V^T``;
    * for every exact factorization ``(U, V)``, ``U = g V`` and
      ``||U||_F = ||g||_F``;
    * the minimum of ``||g V||_1`` over norm-feasible ``V`` equals the
      minimum of ``||U||_1`` over factorizations, and neither undercuts
      :func:`etv_measure` by more than ``tol``.

    Only small instances are accepted (``hw <= 12``, ``s <= 4``, ``r <= 2``,
    ``r < s``).
    """
    g = np.asarray(g, dtype=np.float64)
    hw, s = g.shape
    if hw > 12 or s > 4 or r > 2:
        raise ValueError("oracle is restricted to hw <= 12, s <= 4, r <= 2")
    if not 1 <= r < s:
        raise ValueError(f"rank must satisfy 1 <= r < s, got r={r}, s={s}")
    k, vfull = _row_space(g, 1e-10)
    if k > r:
        raise ValueError(f"rank(g) = {k} exceeds r = {r}: constraint set is empty")

    g2 = float(np.sum(g * g))
    scale = max(g2, 1.0)
    rng = np.random.default_rng(seed)
    min10 = np.inf
    min11 = np.inf
    for v in _stiefel_candidates(s, r, vfull, steps, rng, n_random):
        if np.abs(v.T @ v - np.eye(r)).max() > tol:
            return False
        gv = g @ v
        gv2 = float(np.sum(gv * gv))
        resid2 = float(np.sum((g - gv @ v.T) ** 2))
        if abs(resid2 - (g2 - gv2)) > tol * scale:
            return False
        feas10 = g2 - gv2 <= tol * scale
        # the only U with g = U V^T is U = g V (right-multiply by V)
        u = gv
        feas11 = resid2 <= tol * scale
        if feas10 != feas11:
            return False
        if feas11:
            if abs(float(np.sum(u * u)) - g2) > tol * scale:
                return False
            min11 = min(min11, float(np.abs(u).sum()))
        if feas10:
            min10 = min(min10, float(np.abs(gv).sum()))
    if not np.isfinite(min10) or abs(min10 - min11) > tol * max(min10, 1.0):
        return False
    return etv_measure(g, r) <= min10 + tol * max(min10, 1.0)
