"""Affinity matrix of a lifted patch under the 5-D connectivity kernel."""

from __future__ import annotations

import json
import os

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from ._io import atomic_write
from .kernel import KernelBank, KernelWeights, pair_weights
from .liftspace import LiftedFeatureMap

__all__ = ["DENSE_LIMIT", "candidate_pairs", "build_affinity", "dump_affinity", "load_affinity"]

DENSE_LIMIT = 4000
SPARSE_DROP = 1e-12   # relative to the matrix maximum
CHUNK = 200_000


def candidate_pairs(x: np.ndarray, y: np.ndarray, bank: KernelBank) -> np.ndarray:
    """Unordered pairs ``i < j`` close enough to be inside the kernel support."""
    nx, ny, _ = bank.dims
    radius = float(np.hypot(nx // 2, ny // 2)) + 1e-9
    pts = np.column_stack([x, y]).astype(np.float64)
    if len(pts) < 2:
        return np.zeros((0, 2), dtype=np.int64)
    pairs = cKDTree(pts).query_pairs(radius, output_type="ndarray").astype(np.int64)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order]


def build_affinity(patch: LiftedFeatureMap, bank: KernelBank, weights: KernelWeights,
                   *, dense_limit: int = DENSE_LIMIT):
    """``A[i, j] = w5(p_i, p_j)`` with zero diagonal.

    Each unordered pair is evaluated once and written to both triangles,
    so the result is bitwise symmetric. Returns a dense array up to
    ``dense_limit`` points and a CSR matrix beyond.
    """
    n = len(patch)
    if n == 0:
        raise ValueError("empty patch")
    pairs = candidate_pairs(patch.x, patch.y, bank)
    th = patch.theta
    vals = np.empty(len(pairs))
    for lo in range(0, len(pairs), CHUNK):
        i, j = pairs[lo:lo + CHUNK, 0], pairs[lo:lo + CHUNK, 1]
        vals[lo:lo + CHUNK] = pair_weights(
            bank, weights,
            patch.x[i], patch.y[i], th[i], patch.f[i], patch.kappa[i],
            patch.x[j], patch.y[j], th[j], patch.f[j], patch.kappa[j])

    if n <= dense_limit:
        A = np.zeros((n, n))
        A[pairs[:, 0], pairs[:, 1]] = vals
        A[pairs[:, 1], pairs[:, 0]] = vals
        return A
    peak = vals.max() if len(vals) else 0.0
    keep = vals > SPARSE_DROP * peak if peak > 0 else np.zeros(len(vals), bool)
    i, j, v = pairs[keep, 0], pairs[keep, 1], vals[keep]
    A = sparse.coo_matrix((np.concatenate([v, v]), (np.concatenate([i, j]), np.concatenate([j, i]))),
                          shape=(n, n)).tocsr()
    A.sort_indices()
    return A


def dump_affinity(path: str | os.PathLike, A, patch: LiftedFeatureMap | None = None) -> None:
    """Raw little-endian f64 row-major matrix plus ``<path>.json`` sidecar."""
    dense = A.toarray() if sparse.issparse(A) else np.asarray(A)
    atomic_write(path, np.ascontiguousarray(dense, dtype="<f8").tobytes())
    side = {"N": int(dense.shape[0]), "dtype": "float64", "order": "row-major"}
    if patch is not None:
        side["points"] = [
            {"index": k, "x": int(patch.x[k]), "y": int(patch.y[k]),
             "theta_bin": int(patch.theta_bin[k]), "f": float(patch.f[k]),
             "kappa": float(patch.kappa[k])}
            for k in range(len(patch))
        ]
    atomic_write(str(path) + ".json", json.dumps(side, indent=1).encode())


def load_affinity(path: str | os.PathLike) -> np.ndarray:
    with open(str(path) + ".json") as fh:
        n = json.load(fh)["N"]
    data = np.fromfile(path, dtype="<f8")
    if data.size != n * n:
        raise ValueError("affinity dump size does not match sidecar")
    return data.reshape(n, n)
