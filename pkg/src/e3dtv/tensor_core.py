"""Tensor layout, circular difference operators and the FFT linear solver.

An HSI is held as a float64 array of shape ``(h, w, s)``.  Its mode-3
unfolding is the ``(h*w, s)`` matrix whose rows enumerate spatial positions
in column-major order (``row = i + h*j``) and whose columns are bands.  For a
Fortran-ordered array this unfolding is a zero-copy reshape.
"""

import numpy as np

__all__ = [
    "as_hsi",
    "unfold3",
    "fold3",
    "diff",
    "diff_adjoint",
    "gradient_stack",
    "difference_eigenvalues",
    "build_fft_denominator",
    "solve_x_system",
]

_MODES = (1, 2, 3)


def as_hsi(x):
    """Validate ``x`` as an HSI tensor and return it as Fortran-ordered float64."""
    x = np.asfortranarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"HSI tensor must be 3-way, got shape {x.shape}")
    if min(x.shape) < 1:
        raise ValueError(f"HSI dimensions must be positive, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("HSI tensor contains non-finite values")
    return x


def unfold3(x):
    """Mode-3 unfolding ``(h, w, s) -> (h*w, s)``."""
    x = np.asarray(x)
    h, w, s = x.shape
    return np.reshape(x, (h * w, s), order="F")


def fold3(m, shape):
    """Inverse of :func:`unfold3` for a tensor of shape ``(h, w, s)``."""
    h, w, s = shape
    m = np.asarray(m)
    if m.shape != (h * w, s):
        raise ValueError(f"cannot fold {m.shape} into {tuple(shape)}")
    return np.reshape(m, (h, w, s), order="F")


def _axis(mode):
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")
    return mode - 1


def diff(x, mode):
    """Circular forward difference ``x[i] - x[i+1]`` along ``mode`` (1, 2 or 3)."""
    ax = _axis(mode)
    x = np.asarray(x, dtype=np.float64)
    return x - np.roll(x, -1, axis=ax)


def diff_adjoint(g, mode, shape=None):
    """Adjoint of :func:`diff`: ``g[i] - g[i-1]`` with wraparound."""
    ax = _axis(mode)
    g = np.asarray(g, dtype=np.float64)
    if shape is not None and g.shape != tuple(shape):
        raise ValueError(f"gradient map shape {g.shape} does not match {tuple(shape)}")
    return g - np.roll(g, 1, axis=ax)


def gradient_stack(x):
    """Return the three gradient maps ``(g1, g2, g3)`` of ``x``."""
    return tuple(diff(x, n) for n in _MODES)


def _kernel(shape, mode):
    # Convolution kernel of the mode-n difference: +1 at the origin, -1 one
    # step backwards (circularly).  Size-1 axes give a zero kernel.
    k = np.zeros(shape)
    k[0, 0, 0] += 1.0
    idx = [0, 0, 0]
    idx[_axis(mode)] = -1
    k[tuple(idx)] -= 1.0
    return k


def difference_eigenvalues(h, w, s):
    """Per-mode eigenvalue fields ``|fftn(D_n)|**2``, stacked as ``(3, h, w, s)``."""
    shape = (h, w, s)
    if min(shape) < 1:
        raise ValueError(f"dimensions must be positive, got {shape}")
    return np.stack([np.abs(np.fft.fftn(_kernel(shape, n))) ** 2 for n in _MODES])


def build_fft_denominator(h, w, s):
    """Eigenvalue field of ``sum_n D_n^* D_n`` on the 3-D DFT grid."""
    return difference_eigenvalues(h, w, s).sum(axis=0)


def solve_x_system(hx, shape, mu, eig=None):
    """Solve ``(mu5 I + sum_n mu_n D_n^* D_n) X = hx`` by 3-D FFT diagonalization.

    Parameters
    ----------
    hx : ndarray
        Right-hand side, either unfolded ``(h*w, s)`` or folded ``(h, w, s)``.
    shape : tuple
        ``(h, w, s)``.
    mu : float or sequence of 4 floats
        A scalar gives the uniform system ``mu I + mu sum D^*D``.  A 4-vector
        ``(mu1, mu2, mu3, mu5)`` weights the three gradient terms and the
        identity separately.
    eig : ndarray, optional
        Precomputed :func:`difference_eigenvalues` for ``shape``.

    Returns
    -------
    ndarray
        Solution in the same layout as ``hx``.
    """
    w_grad, w_id = _weights(mu)
    hx = np.asarray(hx, dtype=np.float64)
    if not np.all(np.isfinite(hx)):
        raise ValueError("right-hand side contains non-finite values")
    unfolded = hx.ndim == 2
    rhs = fold3(hx, shape) if unfolded else hx
    if rhs.shape != tuple(shape):
        raise ValueError(f"rhs shape {rhs.shape} does not match {tuple(shape)}")
    if eig is None:
        eig = difference_eigenvalues(*shape)
    denom = w_id + np.tensordot(w_grad, eig, axes=1)
    x = np.real(np.fft.ifftn(np.fft.fftn(rhs) / denom))
    return unfold3(x) if unfolded else x


def _weights(mu):
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    if mu.size == 1:
        w_grad, w_id = np.full(3, mu[0]), mu[0]
    elif mu.size == 4:
        w_grad, w_id = mu[:3], mu[3]
    else:
        raise ValueError("mu must be a scalar or a 4-vector (mu1, mu2, mu3, mu5)")
    if not np.all(np.isfinite(mu)) or w_id <= 0 or np.any(w_grad < 0):
        raise ValueError(f"penalty weights must be positive, got {mu.tolist()}")
    return w_grad, w_id
