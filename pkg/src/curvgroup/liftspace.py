"""Lifting of 2-D images into the 5-D space of position, orientation,
intensity and curvature.

The orientation score is built with cake wavelets: oriented quadrature
filters whose Fourier supports are angular wedges shaped by a cubic
B-spline. Curvature is read off the best exponential-curve fit, obtained
from the eigen-decomposition of the Gaussian Hessian of the score
expressed in the rotating frame ``(xi, eta, theta)``.

Coordinate conventions used throughout the package:

* arrays are indexed ``[y, x]`` (row, column); ``x`` grows to the right,
  ``y`` grows downwards;
* angles are measured from ``+x`` towards ``+y``;
* orientations are line orientations with period pi, discretized into
  bins ``theta_k = -pi/2 + k*pi/n_theta``;
* curvature is ``dtheta/ds`` along the canonical direction
  ``(cos theta, sin theta)`` of a bin.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy import fft as sfft
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from skimage.morphology import skeletonize

from ._io import atomic_write

__all__ = [
    "FilterBank",
    "OrientationScore",
    "LiftedPoint",
    "LiftedFeatureMap",
    "preprocess",
    "normalize_channel",
    "cake_wavelet_bank",
    "orientation_score",
    "dominant_orientation",
    "bin_angles",
    "angle_to_bin",
    "curvature_confidence",
    "multiscale_curvature",
    "curvature_at",
    "interest_points",
    "lift5d",
    "crop_patch",
    "fallback_junctions",
    "write_l5d",
    "read_l5d",
    "lifted_to_json",
    "lifted_from_json",
]

BETA = 0.2          # rad per pixel, balances angular against spatial axes
SIGMA_THETA = 0.4   # rad, orientation blur of the Hessian
KAPPA_CAP = 0.5     # 1/px
SIGMA_NORM = 16.0   # px, local luminosity/contrast window
CLIP_STD = 3.0


# ---------------------------------------------------------------------------
# intensity preprocessing
# ---------------------------------------------------------------------------

def normalize_channel(channel: np.ndarray, sigma: float = SIGMA_NORM) -> np.ndarray:
    """Local mean/std normalization mapped affinely to [0, 1].

    Each pixel is standardized against a Gaussian-weighted neighbourhood,
    clipped to +-3 standard deviations and mapped to ``(z + 3) / 6``.
    A constant channel maps to the constant 0.5.
    """
    c = np.asarray(channel, dtype=np.float64)
    mean = ndimage.gaussian_filter(c, sigma, mode="reflect")
    var = ndimage.gaussian_filter((c - mean) ** 2, sigma, mode="reflect")
    std = np.sqrt(np.maximum(var, 0.0))
    scale = np.maximum(std, 1e-12 * max(1.0, float(np.abs(c).max(initial=0.0))))
    z = np.where(std > 0, (c - mean) / scale, 0.0)
    z = np.clip(z, -CLIP_STD, CLIP_STD)
    return (z + CLIP_STD) / (2 * CLIP_STD)


def preprocess(red: np.ndarray, green: np.ndarray | None = None,
               sigma: float = SIGMA_NORM) -> np.ndarray:
    """Normalize red/green channels and combine them as sqrt(g^2 + r^2).

    With a single channel, it is used for both. The combination is divided
    by sqrt(2) so the result lies in [0, 1].
    """
    r = np.asarray(red, dtype=np.float64)
    g = r if green is None else np.asarray(green, dtype=np.float64)
    if r.ndim != 2 or g.shape != r.shape:
        raise ValueError(f"channel shapes differ or are not 2-D: {r.shape} vs {g.shape}")
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(g))):
        raise ValueError("non-finite pixel in input channels")
    rn = normalize_channel(r, sigma)
    gn = rn if green is None else normalize_channel(g, sigma)
    return combine_channels(rn, gn)


def combine_channels(red_n: np.ndarray, green_n: np.ndarray) -> np.ndarray:
    return np.sqrt(green_n ** 2 + red_n ** 2) / np.sqrt(2.0)


# ---------------------------------------------------------------------------
# cake wavelets and orientation scores
# ---------------------------------------------------------------------------

def _bspline3(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    out = np.zeros_like(ax)
    inner = ax < 1
    outer = (ax >= 1) & (ax < 2)
    out[inner] = 2.0 / 3.0 - ax[inner] ** 2 + 0.5 * ax[inner] ** 3
    out[outer] = (2.0 - ax[outer]) ** 3 / 6.0
    return out


def bin_angles(n_theta: int) -> np.ndarray:
    """Bin centres ``-pi/2 + k*pi/n_theta`` for ``k = 0..n_theta-1``."""
    return -np.pi / 2 + np.arange(n_theta) * np.pi / n_theta


def angle_to_bin(theta: np.ndarray | float, n_theta: int) -> np.ndarray:
    """Nearest orientation bin of (line) angles, any real input."""
    d = np.pi / n_theta
    k = np.rint((np.asarray(theta, dtype=np.float64) + np.pi / 2) / d)
    return np.mod(k, n_theta).astype(np.int64)


def wrap_line_angle(theta):
    """Wrap angles to the line-orientation interval [-pi/2, pi/2)."""
    return np.mod(np.asarray(theta, dtype=np.float64) + np.pi / 2, np.pi) - np.pi / 2


@dataclass
class FilterBank:
    """Cake-wavelet bank.

    ``spectra[k]`` is the (centred, ``fftshift``-ed) Fourier transform of the
    k-th filter and ``kernels[k]`` its spatial counterpart, centred in an
    odd ``spatial_size`` grid.
    """

    n_theta: int
    spatial_size: int
    kernels: np.ndarray
    spectra: np.ndarray
    radial: np.ndarray
    cutoff: float
    cutoff_width: float

    @property
    def angles(self) -> np.ndarray:
        return bin_angles(self.n_theta)

    def frequency_grid(self) -> tuple[np.ndarray, np.ndarray]:
        w = 2 * np.pi * np.fft.fftshift(np.fft.fftfreq(self.spatial_size))
        wy, wx = np.meshgrid(w, w, indexing="ij")
        return wx, wy

    def coverage(self) -> np.ndarray:
        """Summed filter energy per frequency, averaged over +-omega.

        Equals ``sum_k |FT(Re psi_k)|^2 + |FT(Im psi_k)|^2``; flat (=1) over
        the passband makes the real/imaginary transform a tight frame.
        """
        e = np.sum(np.abs(self.spectra) ** 2, axis=0)
        mirrored = e[::-1, ::-1]
        return 0.5 * (e + mirrored)

    def correlation_spectra(self, shape: tuple[int, int]) -> np.ndarray:
        """Conjugate DFTs of the filters embedded in a ``shape`` grid (cached)."""
        cache = self.__dict__.setdefault("_corr_cache", {})
        if shape not in cache:
            S, p = self.spatial_size, self.spatial_size // 2
            big = np.zeros((self.n_theta,) + tuple(shape), dtype=np.complex128)
            ys = (np.arange(S) - p) % shape[0]
            xs = (np.arange(S) - p) % shape[1]
            big[:, ys[:, None], xs[None, :]] = self.kernels
            cache[shape] = np.conj(sfft.fft2(big, axes=(1, 2)))
            if len(cache) > 8:
                cache.pop(next(iter(cache)))
        return cache[shape]

    def passband(self) -> np.ndarray:
        """Boolean mask of the passband annulus on the frequency grid."""
        wx, wy = self.frequency_grid()
        rho = np.hypot(wx, wy)
        lo = 2 * np.pi / self.spatial_size
        return (rho >= lo - 1e-12) & (rho <= self.cutoff * np.pi + 1e-12)


def cake_wavelet_bank(n_theta: int = 18, spatial_size: int = 65, *,
                      cutoff: float = 0.8, cutoff_width: float = 0.1) -> FilterBank:
    """Build ``n_theta`` cake wavelets on a ``spatial_size`` square grid.

    Angular profile: square root of a periodized cubic B-spline, so the
    energies of neighbouring wedges sum to one. Radial profile: flat up to
    ``cutoff * Nyquist``, Gaussian roll-off of width ``cutoff_width * pi``
    beyond. The DC sample is zero.
    """
    if n_theta < 2:
        raise ValueError(f"n_theta must be >= 2, got {n_theta}")
    if spatial_size < 3 or spatial_size % 2 == 0:
        raise ValueError(f"spatial_size must be odd and >= 3, got {spatial_size}")
    S = spatial_size
    w = 2 * np.pi * np.fft.fftshift(np.fft.fftfreq(S))
    wy, wx = np.meshgrid(w, w, indexing="ij")
    rho = np.hypot(wx, wy)
    phi = np.arctan2(wy, wx)
    rc = cutoff * np.pi
    radial = np.where(rho <= rc, 1.0,
                      np.exp(-((rho - rc) ** 2) / (2 * (cutoff_width * np.pi) ** 2)))
    radial[rho == 0] = 0.0

    dth = np.pi / n_theta
    spectra = np.zeros((n_theta, S, S), dtype=np.float64)
    for k, theta in enumerate(bin_angles(n_theta)):
        centre = theta + np.pi / 2          # frequency direction normal to the line
        d = np.mod((phi - centre) / dth + n_theta / 2, n_theta) - n_theta / 2
        prof = sum(_bspline3(d + m * n_theta) for m in range(-2, 3))
        side = np.cos(phi - centre)
        half = np.where(side > 0, 1.0, np.where(side < 0, 0.0, 0.5))
        spectra[k] = np.sqrt(2.0) * radial * np.sqrt(np.maximum(prof, 0.0)) * half

    kernels = np.empty((n_theta, S, S), dtype=np.complex128)
    for k in range(n_theta):
        spatial = np.fft.ifft2(np.fft.ifftshift(spectra[k]))
        kernels[k] = np.fft.fftshift(spatial)
    return FilterBank(n_theta, S, kernels, spectra, radial, cutoff, cutoff_width)


@dataclass
class OrientationScore:
    """Complex orientation score ``values[k, y, x]``."""

    values: np.ndarray
    n_theta: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[1:]

    def ridge(self) -> np.ndarray:
        """Real part of the negated score (dark-line detector)."""
        return -self.values.real


def orientation_score(image: np.ndarray, bank: FilterBank) -> OrientationScore:
    """Correlate ``image`` with every filter of ``bank``.

    The image is reflect-padded by half a filter before the FFT-based
    correlation, so the output has the image's shape.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("image must be 2-D")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    h, w = img.shape
    p = bank.spatial_size // 2
    padded = np.pad(img, p, mode="reflect" if min(h, w) > p else "symmetric")
    # zero-fill up to fast FFT sizes; the extra rows never reach the output
    # window because the padding already covers the filter's half-width
    shape = (sfft.next_fast_len(h + 2 * p), sfft.next_fast_len(w + 2 * p))
    resp = sfft.ifft2(sfft.fft2(padded, s=shape)[None] * bank.correlation_spectra(shape),
                      axes=(1, 2))
    out = np.ascontiguousarray(resp[:, p:p + h, p:p + w])
    return OrientationScore(out, bank.n_theta)


def dominant_orientation(score: OrientationScore, rtol: float = 1e-9) -> np.ndarray:
    """Per-pixel bin index maximizing Re(-U); ties go to the smallest index.

    Responses within ``rtol`` (relative to the largest magnitude in the
    score) of the pixel maximum count as ties.
    """
    r = score.ridge()
    tol = rtol * max(float(np.abs(r).max(initial=0.0)), 1e-300)
    best = r.max(axis=0)
    return np.argmax(r >= best[None] - tol, axis=0).astype(np.int64)


# ---------------------------------------------------------------------------
# curvature
# ---------------------------------------------------------------------------

def _gauss_derivs(f: np.ndarray, sigma: float, sigma_theta: float):
    """Gaussian derivatives of ``f[theta, y, x]`` up to second order.

    Orientation derivatives are spectral (the theta axis is periodic and
    only ``n_theta`` samples long, so finite stencils are too coarse).
    """
    n = f.shape[0]
    nu = 2 * np.pi * np.fft.fftfreq(n, d=np.pi / n)
    F = np.fft.fft(f, axis=0)
    blur = np.exp(-0.5 * (nu * sigma_theta) ** 2)

    def th(order):
        mult = ((1j * nu) ** order * blur)[:, None, None]
        return np.real(np.fft.ifft(F * mult, axis=0))

    def sp(a, oy, ox):
        return ndimage.gaussian_filter(a, (0, sigma, sigma), order=(0, oy, ox),
                                       mode=("wrap", "reflect", "reflect"), truncate=4.0)

    f0, f1 = th(0), th(1)
    return {
        "xx": sp(f0, 0, 2), "xy": sp(f0, 1, 1), "yy": sp(f0, 2, 0),
        "xt": sp(f1, 0, 1), "yt": sp(f1, 1, 0), "tt": sp(th(2), 0, 0),
    }


def _kappa_from_derivs(g: dict, th: np.ndarray, beta: float, kappa_cap: float) -> np.ndarray:
    c, s = np.cos(th), np.sin(th)
    fxx, fxy, fyy = g["xx"], g["xy"], g["yy"]
    H = np.empty(np.shape(fxx) + (3, 3))
    H[..., 0, 0] = c * c * fxx + 2 * c * s * fxy + s * s * fyy
    H[..., 1, 1] = s * s * fxx - 2 * c * s * fxy + c * c * fyy
    H[..., 0, 1] = H[..., 1, 0] = -c * s * fxx + (c * c - s * s) * fxy + c * s * fyy
    H[..., 0, 2] = H[..., 2, 0] = beta * (c * g["xt"] + s * g["yt"])
    H[..., 1, 2] = H[..., 2, 1] = beta * (-s * g["xt"] + c * g["yt"])
    H[..., 2, 2] = beta * beta * g["tt"]
    evals, evecs = np.linalg.eigh(H)
    pick = np.argmin(np.abs(evals), axis=-1)
    vec = np.take_along_axis(evecs, pick[..., None, None], axis=-1)[..., 0]
    c_xi, c_phi = vec[..., 0], vec[..., 2]

    small = np.abs(c_xi) < 1e-6
    sgn = np.where(c_phi * np.where(c_xi == 0, 1.0, c_xi) < 0, -1.0, 1.0)
    safe = np.where(small, 1.0, c_xi)
    kappa = np.where(small, sgn * kappa_cap, beta * c_phi / safe)
    return np.clip(kappa, -kappa_cap, kappa_cap)


def curvature_confidence(score: OrientationScore, sigma: float, *,
                         sigma_theta: float = SIGMA_THETA, beta: float = BETA,
                         kappa_cap: float = KAPPA_CAP,
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Curvature and ridge confidence of the score at spatial scale ``sigma``.

    Returns ``(kappa, confidence)``, both shaped like the score. The
    curvature comes from the Hessian eigenvector with the smallest absolute
    eigenvalue, taken in the balanced coordinates ``(xi, eta, theta/beta)``.
    Confidence is the scale-normalized negative spatial Laplacian,
    floored at zero.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    g = _gauss_derivs(score.ridge(), sigma, sigma_theta)
    th = bin_angles(score.n_theta)[:, None, None]
    kappa = _kappa_from_derivs(g, th, beta, kappa_cap)
    conf = np.maximum(0.0, -(sigma ** 2) * (g["xx"] + g["yy"]))
    return kappa, conf


def _gauss_taps(sigma: float, order: int) -> np.ndarray:
    """Correlation taps of ``gaussian_filter1d`` (read off its impulse response)."""
    r = int(4.0 * sigma + 0.5)
    delta = np.zeros(2 * r + 1)
    delta[r] = 1.0
    return ndimage.gaussian_filter1d(delta, sigma, order=order, mode="constant", truncate=4.0)[::-1]


def curvature_at(score: OrientationScore, scales: Sequence[float], bins, ys, xs, *,
                 sigma_theta: float = SIGMA_THETA, beta: float = BETA,
                 kappa_cap: float = KAPPA_CAP) -> tuple[np.ndarray, np.ndarray]:
    """Multi-scale curvature at the samples ``(bins, ys, xs)`` only.

    Agrees with :func:`multiscale_curvature` indexed at those samples up to
    rounding: spatial derivatives are evaluated as dot products over each
    sample's neighbourhood instead of filtering whole volumes. Returns
    ``(kappa, scale_index)``.
    """
    if len(scales) == 0:
        raise ValueError("need at least one scale")
    ordered = sorted(float(v) for v in scales)
    if ordered[0] <= 0:
        raise ValueError(f"sigma must be positive, got {ordered[0]}")
    bins, ys, xs = (np.asarray(a, dtype=np.int64).reshape(-1) for a in (bins, ys, xs))
    th = bin_angles(score.n_theta)[bins]
    f = score.ridge()
    n = f.shape[0]
    nu = 2 * np.pi * np.fft.fftfreq(n, d=np.pi / n)
    F = np.fft.fft(f, axis=0)
    blur = np.exp(-0.5 * (nu * sigma_theta) ** 2)
    R = int(4.0 * ordered[-1] + 0.5)
    padded = []
    for o in range(3):
        vol = np.real(np.fft.ifft(F * ((1j * nu) ** o * blur)[:, None, None], axis=0))
        # numpy "symmetric" padding is ndimage's "reflect" boundary
        padded.append(np.pad(vol, ((0, 0), (R, R), (R, R)), mode="symmetric"))
    ks, cs = [], []
    for sigma in ordered:
        r = int(4.0 * sigma + 0.5)
        off = np.arange(-r, r + 1)
        yy = (ys + R)[:, None, None] + off[None, :, None]
        xx = (xs + R)[:, None, None] + off[None, None, :]
        nb = [p[bins[:, None, None], yy, xx] for p in padded]
        t = [_gauss_taps(sigma, o) for o in range(3)]

        def d(o, oy, ox):
            return np.einsum("nij,i,j->n", nb[o], t[oy], t[ox])

        g = {"xx": d(0, 0, 2), "xy": d(0, 1, 1), "yy": d(0, 2, 0),
             "xt": d(1, 0, 1), "yt": d(1, 1, 0), "tt": d(2, 0, 0)}
        ks.append(_kappa_from_derivs(g, th, beta, kappa_cap))
        cs.append(np.maximum(0.0, -(sigma ** 2) * (g["xx"] + g["yy"])))
    idx = np.argmax(np.stack(cs), axis=0)
    kap = np.take_along_axis(np.stack(ks), idx[None], axis=0)[0]
    return kap, idx


def multiscale_curvature(score: OrientationScore, scales: Sequence[float],
                         **kwargs) -> tuple[np.ndarray, np.ndarray]:
    """Per (x, theta), keep the curvature of the scale with largest confidence.

    Returns ``(kappa_map, scale_index)`` where ``scale_index`` refers to the
    scales sorted ascending; exact ties resolve to the smallest scale.
    """
    if len(scales) == 0:
        raise ValueError("need at least one scale")
    ordered = sorted(float(s) for s in scales)
    kappas, confs = [], []
    for s in ordered:
        k, c = curvature_confidence(score, s, **kwargs)
        kappas.append(k)
        confs.append(c)
    conf = np.stack(confs)
    idx = np.argmax(conf, axis=0)
    kmap = np.take_along_axis(np.stack(kappas), idx[None], axis=0)[0]
    return kmap, idx


def confidences(score: OrientationScore, scales: Sequence[float], **kwargs) -> np.ndarray:
    """Stacked confidence maps for ``sorted(scales)``."""
    return np.stack([curvature_confidence(score, s, **kwargs)[1] for s in sorted(scales)])


# ---------------------------------------------------------------------------
# lifted points
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LiftedPoint:
    x: int
    y: int
    theta_bin: int
    f: float
    kappa: float
    n_theta: int = 18

    @property
    def theta(self) -> float:
        return -np.pi / 2 + self.theta_bin * np.pi / self.n_theta


@dataclass
class LiftedFeatureMap:
    """Ordered set of lifted points stored column-wise.

    A patch additionally carries its ``center`` and half-size ``s_o``.
    """

    width: int
    height: int
    n_theta: int
    x: np.ndarray
    y: np.ndarray
    theta_bin: np.ndarray
    f: np.ndarray
    kappa: np.ndarray
    center: tuple[int, int] | None = None
    s_o: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.int64).reshape(-1)
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        self.theta_bin = np.asarray(self.theta_bin, dtype=np.int64).reshape(-1)
        self.f = np.asarray(self.f, dtype=np.float64).reshape(-1)
        self.kappa = np.asarray(self.kappa, dtype=np.float64).reshape(-1)
        n = self.x.size
        if not all(a.size == n for a in (self.y, self.theta_bin, self.f, self.kappa)):
            raise ValueError("lifted columns have different lengths")

    def __len__(self) -> int:
        return int(self.x.size)

    def __iter__(self) -> Iterator[LiftedPoint]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> LiftedPoint:
        return LiftedPoint(int(self.x[i]), int(self.y[i]), int(self.theta_bin[i]),
                           float(self.f[i]), float(self.kappa[i]), self.n_theta)

    @property
    def theta(self) -> np.ndarray:
        return bin_angles(self.n_theta)[self.theta_bin]

    def subset(self, idx: np.ndarray, **extra) -> "LiftedFeatureMap":
        return LiftedFeatureMap(self.width, self.height, self.n_theta,
                                self.x[idx], self.y[idx], self.theta_bin[idx],
                                self.f[idx], self.kappa[idx], meta=dict(self.meta), **extra)

    def validate(self) -> None:
        if len(self) and (self.x.min() < 0 or self.x.max() >= self.width
                          or self.y.min() < 0 or self.y.max() >= self.height):
            raise ValueError("lifted point outside image")
        if len(self) and (self.theta_bin.min() < 0 or self.theta_bin.max() >= self.n_theta):
            raise ValueError("invalid orientation bin")
        if not np.all(np.isfinite(self.kappa)):
            raise ValueError("non-finite curvature")
        keys = self.y * self.width + self.x
        if np.unique(keys).size != keys.size:
            raise ValueError("duplicate (x, y) in lifted map")


def interest_points(mask: np.ndarray) -> np.ndarray:
    """Coordinates ``(x, y)`` of mask pixels equal to 1, in row-major order."""
    m = np.asarray(mask)
    ys, xs = np.nonzero(m == 1)
    return np.stack([xs, ys], axis=1).astype(np.int64)


def lift5d(image: np.ndarray, theta_map: np.ndarray, kappa_map: np.ndarray,
           mask: np.ndarray) -> LiftedFeatureMap:
    """Build the 5-D feature map from preprocessed image, maps and mask.

    ``theta_map`` holds dominant-orientation bins ``[y, x]``; ``kappa_map``
    is the ``[theta, y, x]`` curvature map, sampled at the dominant bin.
    """
    img = np.asarray(image, dtype=np.float64)
    n_theta = kappa_map.shape[0]
    if not (img.shape == theta_map.shape == kappa_map.shape[1:] == np.shape(mask)):
        raise ValueError("inconsistent dimensions among image, maps and mask")
    pts = interest_points(mask)
    xs, ys = pts[:, 0], pts[:, 1]
    bins = theta_map[ys, xs]
    return LiftedFeatureMap(img.shape[1], img.shape[0], n_theta, xs, ys, bins,
                            img[ys, xs], kappa_map[bins, ys, xs])


def crop_patch(lifted: LiftedFeatureMap, center: tuple[int, int], s_o: int = 25
               ) -> LiftedFeatureMap:
    """Keep points with ``|x - x_i| <= s_o`` and ``|y - y_i| <= s_o``."""
    cx, cy = int(center[0]), int(center[1])
    if not (0 <= cx < lifted.width and 0 <= cy < lifted.height):
        raise ValueError(f"patch centre {center} outside the image")
    keep = np.nonzero((np.abs(lifted.x - cx) <= s_o) & (np.abs(lifted.y - cy) <= s_o))[0]
    return lifted.subset(keep, center=(cx, cy), s_o=int(s_o))


def fallback_junctions(mask: np.ndarray, radius: float = 5.0) -> list[tuple[int, int]]:
    """Skeleton branch points, merged when closer than ``radius`` pixels.

    A naive stand-in for a proper junction detector.
    """
    skel = skeletonize(np.asarray(mask) != 0)
    nb = ndimage.convolve(skel.astype(np.int32), np.ones((3, 3), dtype=np.int32),
                          mode="constant") - skel
    ys, xs = np.nonzero(skel & (nb >= 3))
    pts = np.stack([xs, ys], axis=1).astype(np.float64)
    if len(pts) == 0:
        return []
    # single-linkage grouping of nearby branch pixels
    pairs = cKDTree(pts).query_pairs(radius, output_type="ndarray")
    n = len(pts)
    adj = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    ncomp, lab = connected_components(adj, directed=False)
    out = []
    for c in range(ncomp):
        p = pts[lab == c].mean(axis=0)
        out.append((int(round(p[0])), int(round(p[1]))))
    return sorted(out, key=lambda t: (t[1], t[0]))


# ---------------------------------------------------------------------------
# .l5d files
# ---------------------------------------------------------------------------

L5D_MAGIC = b"L5D1"
_L5D_HEADER = struct.Struct("<4sIIII")
_L5D_RECORD = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<u2"),
                        ("f", "<f8"), ("k", "<f8")])


def l5d_bytes(lifted: LiftedFeatureMap) -> bytes:
    rec = np.empty(len(lifted), dtype=_L5D_RECORD)
    rec["x"], rec["y"], rec["t"] = lifted.x, lifted.y, lifted.theta_bin
    rec["f"], rec["k"] = lifted.f, lifted.kappa
    head = _L5D_HEADER.pack(L5D_MAGIC, lifted.width, lifted.height, lifted.n_theta, len(lifted))
    return head + rec.tobytes()


def l5d_from_bytes(data: bytes) -> LiftedFeatureMap:
    if len(data) < _L5D_HEADER.size:
        raise ValueError("truncated .l5d header")
    magic, w, h, nt, count = _L5D_HEADER.unpack_from(data)
    if magic != L5D_MAGIC:
        raise ValueError(f"bad .l5d magic {magic!r}")
    need = _L5D_HEADER.size + count * _L5D_RECORD.itemsize
    if len(data) != need:
        raise ValueError(f".l5d size mismatch: expected {need} bytes, got {len(data)}")
    rec = np.frombuffer(data, dtype=_L5D_RECORD, count=count, offset=_L5D_HEADER.size)
    return LiftedFeatureMap(w, h, nt, rec["x"], rec["y"], rec["t"], rec["f"], rec["k"])


def write_l5d(path: str | os.PathLike, lifted: LiftedFeatureMap, json_mirror: bool = True) -> None:
    atomic_write(path, l5d_bytes(lifted))
    if json_mirror:
        atomic_write(os.fspath(path) + ".json", json.dumps(lifted_to_json(lifted), indent=1).encode())


def read_l5d(path: str | os.PathLike) -> LiftedFeatureMap:
    with open(path, "rb") as fh:
        lifted = l5d_from_bytes(fh.read())
    side = os.fspath(path) + ".json"
    if os.path.exists(side):
        with open(side) as fh:
            doc = json.load(fh)
        if doc.get("center") is not None:
            lifted.center = tuple(doc["center"])
            lifted.s_o = doc.get("s_o")
        lifted.meta = doc.get("meta", {})
    return lifted


def lifted_to_json(lifted: LiftedFeatureMap) -> dict:
    return {
        "width": lifted.width, "height": lifted.height, "n_theta": lifted.n_theta,
        "center": list(lifted.center) if lifted.center is not None else None,
        "s_o": lifted.s_o,
        "meta": lifted.meta,
        "points": [
            {"x": int(p.x), "y": int(p.y), "theta_bin": int(p.theta_bin),
             "f": float(p.f), "kappa": float(p.kappa)}
            for p in lifted
        ],
    }


def lifted_from_json(doc: dict) -> LiftedFeatureMap:
    pts = doc["points"]
    col = lambda k: [p[k] for p in pts]  # noqa: E731
    out = LiftedFeatureMap(doc["width"], doc["height"], doc["n_theta"],
                           col("x"), col("y"), col("theta_bin"), col("f"), col("kappa"),
                           meta=doc.get("meta", {}))
    if doc.get("center") is not None:
        out.center = tuple(doc["center"])
        out.s_o = doc.get("s_o")
    return out
