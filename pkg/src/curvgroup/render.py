"""Colour-coded maps of lifted patches and cluster overlays (RGB uint8)."""

from __future__ import annotations

import numpy as np
from skimage.color import hsv2rgb

from .cluster import NOISE
from .liftspace import LiftedFeatureMap

__all__ = ["PALETTE", "NOISE_RGB", "orientation_rgb", "curvature_rgb", "cluster_rgb", "gray_rgb"]

NOISE_RGB = (128, 128, 128)
PALETTE = np.array([
    (230, 25, 75), (60, 180, 75), (0, 130, 200), (245, 130, 48), (145, 30, 180),
    (70, 240, 240), (240, 50, 230), (210, 245, 60), (0, 128, 128), (170, 110, 40),
    (128, 0, 0), (0, 0, 128), (128, 128, 0), (255, 225, 25), (0, 0, 0),
    (220, 190, 255), (170, 255, 195), (255, 215, 180), (250, 190, 212), (100, 60, 20),
], dtype=np.uint8)


def gray_rgb(image: np.ndarray | None, shape: tuple[int, int], fade: float = 0.35) -> np.ndarray:
    """Faded grayscale backdrop (white when no image is given)."""
    if image is None:
        return np.full(shape + (3,), 255, dtype=np.uint8)
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img.mean(axis=2)
    lo, hi = float(img.min()), float(img.max())
    norm = (img - lo) / (hi - lo) if hi > lo else np.ones_like(img)
    v = 255 * (1 - fade + fade * norm)
    return np.repeat(np.clip(np.rint(v), 0, 255).astype(np.uint8)[..., None], 3, axis=2)


def orientation_rgb(lifted: LiftedFeatureMap, image=None) -> np.ndarray:
    """Hue encodes the orientation bin over the pi period."""
    out = gray_rgb(image, (lifted.height, lifted.width))
    if len(lifted):
        hsv = np.stack([lifted.theta_bin / lifted.n_theta, np.ones(len(lifted)),
                        np.ones(len(lifted))], axis=1)
        rgb = np.clip(np.rint(hsv2rgb(hsv[None])[0] * 255), 0, 255).astype(np.uint8)
        out[lifted.y, lifted.x] = rgb
    return out


_NEG = np.array([33.0, 102.0, 172.0])
_MID = np.array([225.0, 225.0, 225.0])
_POS = np.array([178.0, 24.0, 43.0])


def curvature_rgb(lifted: LiftedFeatureMap, image=None) -> np.ndarray:
    """Diverging blue-gray-red scale over ``[-max|kappa|, max|kappa|]`` of the patch."""
    out = gray_rgb(image, (lifted.height, lifted.width))
    if len(lifted):
        kmax = float(np.abs(lifted.kappa).max())
        t = lifted.kappa / kmax if kmax > 0 else np.zeros(len(lifted))
        a = np.abs(t)[:, None]
        end = np.where(t[:, None] < 0, _NEG, _POS)
        rgb = (1 - a) * _MID + a * end
        out[lifted.y, lifted.x] = np.clip(np.rint(rgb), 0, 255).astype(np.uint8)
    return out


def cluster_rgb(lifted: LiftedFeatureMap, labels, image=None) -> np.ndarray:
    """One palette colour per group; noise points in gray."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size != len(lifted):
        raise ValueError("one label per lifted point required")
    out = gray_rgb(image, (lifted.height, lifted.width))
    if len(lifted):
        col = PALETTE[(np.maximum(labels, 1) - 1) % len(PALETTE)].copy()
        col[labels == NOISE] = NOISE_RGB
        out[lifted.y, lifted.x] = col
    return out
