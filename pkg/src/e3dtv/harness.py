"""Synthetic phantoms, the six simulated noise cases and quality indices."""

import csv
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage
from skimage.metrics import structural_similarity

from .tensor_core import as_hsi, fold3

__all__ = [
    "gen_phantom",
    "NoiseSpec",
    "apply_noise",
    "psnr",
    "ssim",
    "ergas",
    "QualityReport",
    "quality_report",
]

# band ranges of the 224-band reference cube; rescaled for other band counts
_REF_BANDS = 224
_DEADLINE_BANDS = (91, 130)
_STRIPE_BANDS = (161, 190)
STRIPE_AMPLITUDE = 0.2
PSNR_CAP = 100.0


def gen_phantom(h, w, s, rank=3, smoothness=2.0, seed=0, blobs=6):
    """Low-rank, piecewise-smooth HSI with values in [0, 1].

    The unfolded cube is ``A @ B.T``: every column of ``A`` is a sum of
    blurred random disks and rectangles, every column of ``B`` a smooth
    positive spectral signature.  Both factors are non-negative, so dividing
    by the maximum keeps the rank intact.
    """
    if min(h, w, s, rank) < 1:
        raise ValueError("dimensions and rank must be positive")
    rng = np.random.default_rng(seed)
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    a = np.empty((h * w, rank))
    for c in range(rank):
        img = np.full((h, w), 0.1 + 0.2 * rng.random())
        for _ in range(blobs):
            ci, cj = rng.uniform(0, h), rng.uniform(0, w)
            amp = rng.uniform(0.3, 1.0)
            if rng.random() < 0.5:
                rad = rng.uniform(0.1, 0.3) * min(h, w)
                img[(ii - ci) ** 2 + (jj - cj) ** 2 <= rad ** 2] += amp
            else:
                hi, hj = rng.uniform(0.1, 0.3) * h, rng.uniform(0.1, 0.3) * w
                img[(np.abs(ii - ci) <= hi) & (np.abs(jj - cj) <= hj)] += amp
        if smoothness > 0:
            img = ndimage.gaussian_filter(img, smoothness, mode="wrap")
        a[:, c] = img.ravel(order="F")
    t = np.linspace(0.0, 1.0, s)
    b = np.empty((s, rank))
    for c in range(rank):
        centers = rng.uniform(0, 1, 3)
        widths = rng.uniform(0.1, 0.4, 3)
        heights = rng.uniform(0.2, 1.0, 3)
        b[:, c] = 0.05 + sum(hgt * np.exp(-0.5 * ((t - ctr) / wd) ** 2)
                             for ctr, wd, hgt in zip(centers, widths, heights))
    x = np.clip(a, 0, None) @ b.T
    x /= x.max()
    return np.asfortranarray(fold3(x, (h, w, s)))


@dataclass(frozen=True)
class NoiseSpec:
    """Description of a simulated corruption.

    ``gaussian_sigma`` and ``impulse_ratio`` are either a number (same for
    every band) or a ``(low, high)`` pair, in which case each band draws its
    own value uniformly.  Band ranges are 1-based and inclusive; ``None``
    disables the structure.  With ``sigma_is_variance`` the Gaussian level is
    read as a variance instead of a standard deviation.
    """

    case: str = "a"
    gaussian_sigma: float | tuple = 0.0
    impulse_ratio: float | tuple = 0.0
    deadline_bands: tuple | None = None
    stripe_bands: tuple | None = None
    seed: int = 0
    sigma_is_variance: bool = False
    deadline_count: tuple = (3, 10)
    deadline_width: tuple = (1, 3)
    stripe_count: tuple = (20, 40)

    @classmethod
    def for_case(cls, case, s, seed=0, **overrides):
        """Preset for simulated noise case ``'a'`` .. ``'f'`` on an ``s``-band cube."""
        case = case.lower()
        dl = scale_band_range(_DEADLINE_BANDS, s)
        st = scale_band_range(_STRIPE_BANDS, s)
        presets = {
            "a": dict(gaussian_sigma=0.1),
            "b": dict(gaussian_sigma=0.1, deadline_bands=dl),
            "c": dict(gaussian_sigma=0.075, impulse_ratio=0.15),
            "d": dict(gaussian_sigma=0.075, impulse_ratio=0.15, deadline_bands=dl),
            "e": dict(gaussian_sigma=(0.0, 0.2), impulse_ratio=(0.0, 0.2), deadline_bands=dl),
            "f": dict(gaussian_sigma=(0.0, 0.2), impulse_ratio=(0.0, 0.2),
                      deadline_bands=dl, stripe_bands=st),
        }
        if case not in presets:
            raise ValueError(f"unknown noise case {case!r}; expected one of a-f")
        params = {**presets[case], **overrides}
        return cls(case=case, seed=seed, **params)

    def validate(self, s):
        for name in ("gaussian_sigma", "impulse_ratio"):
            lo, hi = _range(getattr(self, name))
            if lo < 0 or hi < lo:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        lo, hi = _range(self.impulse_ratio)
        if hi > 1:
            raise ValueError(f"impulse ratio must lie in [0, 1], got {self.impulse_ratio}")
        for name in ("deadline_bands", "stripe_bands"):
            rng = getattr(self, name)
            if rng is not None and not (1 <= rng[0] <= rng[1] <= s):
                raise ValueError(f"{name} {rng} outside [1, {s}]")


def scale_band_range(ref, s):
    """Map a 1-based band range of the 224-band reference cube onto ``s`` bands."""
    lo = max(1, int(round(ref[0] * s / _REF_BANDS)))
    hi = max(lo, min(s, int(round(ref[1] * s / _REF_BANDS))))
    return (lo, hi)


def _range(v):
    if np.ndim(v) == 0:
        return float(v), float(v)
    lo, hi = v
    return float(lo), float(hi)


def _per_band(v, s, rng):
    lo, hi = _range(v)
    if np.ndim(v) == 0:
        return np.full(s, lo)
    return rng.uniform(lo, hi, s)


def apply_noise(x, spec):
    """Corrupt ``x`` according to ``spec``; the result is not clipped.

    Stages run in a fixed order (Gaussian, impulse, deadlines, stripes), each
    with its own generator spawned from ``spec.seed``.  Applying a spec that
    holds only some stages and then one that holds the rest, with the same
    seed, gives the same bits as the combined spec.
    """
    x = as_hsi(x)
    h, w, s = x.shape
    spec.validate(s)
    g_rng, i_rng, d_rng, s_rng = (np.random.default_rng(c)
                                  for c in np.random.SeedSequence(spec.seed).spawn(4))
    y = x.copy(order="F")

    sigma = _per_band(spec.gaussian_sigma, s, g_rng)
    if spec.sigma_is_variance:
        sigma = np.sqrt(sigma)
    if np.any(sigma > 0):
        y += g_rng.standard_normal((h, w, s)) * sigma

    ratio = _per_band(spec.impulse_ratio, s, i_rng)
    if np.any(ratio > 0):
        for k in range(s):
            n_imp = int(round(ratio[k] * h * w))
            if n_imp == 0:
                continue
            flat = i_rng.choice(h * w, size=n_imp, replace=False)
            band = y[:, :, k].ravel(order="F")
            band[flat] = i_rng.integers(0, 2, n_imp).astype(np.float64)
            y[:, :, k] = band.reshape((h, w), order="F")

    if spec.deadline_bands is not None:
        lo, hi = spec.deadline_bands
        for k in range(lo - 1, hi):
            count = d_rng.integers(spec.deadline_count[0], spec.deadline_count[1] + 1)
            for _ in range(count):
                width = d_rng.integers(spec.deadline_width[0], spec.deadline_width[1] + 1)
                j = d_rng.integers(0, w)
                y[:, j:j + width, k] = 0.0

    if spec.stripe_bands is not None:
        lo, hi = spec.stripe_bands
        for k in range(lo - 1, hi):
            count = min(h, s_rng.integers(spec.stripe_count[0], spec.stripe_count[1] + 1))
            rows = s_rng.choice(h, size=count, replace=False)
            signs = s_rng.choice([-1.0, 1.0], size=count)
            y[rows, :, k] += STRIPE_AMPLITUDE * signs[:, None]
    return y


def without_structure(spec):
    """The Gaussian/impulse part of ``spec`` alone."""
    return replace(spec, deadline_bands=None, stripe_bands=None)


def _check_pair(ref, est):
    ref = np.asarray(ref, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape or ref.ndim != 3:
        raise ValueError(f"shape mismatch: {ref.shape} vs {est.shape}")
    return ref, est


def psnr(ref, est, peak=1.0):
    """Per-band PSNR in dB (capped at 100) and its mean over bands."""
    ref, est = _check_pair(ref, est)
    mse = np.mean((ref - est) ** 2, axis=(0, 1))
    with np.errstate(divide="ignore"):
        bands = np.where(mse > 0, 10 * np.log10(peak ** 2 / np.where(mse > 0, mse, 1.0)), PSNR_CAP)
    bands = np.minimum(bands, PSNR_CAP)
    return bands, float(bands.mean())


def ssim(ref, est, data_range=1.0):
    """Per-band SSIM (11x11 Gaussian window, sigma 1.5) and its mean."""
    ref, est = _check_pair(ref, est)
    bands = np.array([
        structural_similarity(ref[:, :, k], est[:, :, k], data_range=data_range,
                              gaussian_weights=True, sigma=1.5,
                              use_sample_covariance=False, K1=0.01, K2=0.03)
        for k in range(ref.shape[2])
    ])
    return bands, float(bands.mean())


def ergas(ref, est, ratio_scale=1.0):
    """ERGAS: ``100 * scale * sqrt(mean_k (RMSE_k / mean_k)^2)``."""
    ref, est = _check_pair(ref, est)
    means = ref.mean(axis=(0, 1))
    if np.any(means == 0):
        raise ValueError("ERGAS is undefined for a reference band with zero mean")
    rmse = np.sqrt(np.mean((ref - est) ** 2, axis=(0, 1)))
    return float(100.0 * ratio_scale * np.sqrt(np.mean((rmse / means) ** 2)))


@dataclass
class QualityReport:
    psnr_db: float
    ssim: float
    ergas: float
    band_psnr: np.ndarray
    band_ssim: np.ndarray

    def write_csv(self, path):
        """One row per band, then a ``mean`` summary row carrying ERGAS."""
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["band", "psnr_db", "ssim", "ergas"])
            for k, (p, q) in enumerate(zip(self.band_psnr, self.band_ssim), start=1):
                wr.writerow([k, f"{p:.6f}", f"{q:.6f}", ""])
            wr.writerow(["mean", f"{self.psnr_db:.6f}", f"{self.ssim:.6f}", f"{self.ergas:.6f}"])


def quality_report(ref, est, ratio_scale=1.0):
    bp, mp = psnr(ref, est)
    bs, ms = ssim(ref, est)
    return QualityReport(mp, ms, ergas(ref, est, ratio_scale), bp, bs)
