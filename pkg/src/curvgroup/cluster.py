"""Self-tuning spectral clustering.

The number of groups is read from how well the leading eigenvectors of the
normalized affinity can be rotated onto the coordinate axes.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import linalg, sparse
from numba import njit
from scipy.sparse.linalg import eigsh

__all__ = [
    "NOISE",
    "SpectralParams",
    "ClusterResult",
    "Alignment",
    "normalized_spectrum",
    "alignment_cost",
    "select_k_and_cluster",
    "default_min_cluster_size",
]

NOISE = -1


def default_min_cluster_size(n: int) -> int:
    return max(5, int(np.ceil(0.01 * n)))


@dataclass(frozen=True)
class SpectralParams:
    n_c: int = 20
    min_cluster_size: int | None = None   # None -> max(5, 1% of N)
    max_sweeps: int = 200
    step: float = 0.1
    tol: float = 1e-10
    plateau: float = 0.01
    selection: str = "plateau"            # or "argmin"
    incremental: bool = True

    def __post_init__(self):
        if self.n_c < 2:
            raise ValueError("n_c must be >= 2")
        if self.min_cluster_size is not None and self.min_cluster_size < 1:
            raise ValueError("min_cluster_size must be >= 1")
        if self.selection not in ("plateau", "argmin"):
            raise ValueError("selection must be 'plateau' or 'argmin'")


@dataclass
class ClusterResult:
    labels: np.ndarray
    K: int
    Q_clust: float
    costs: dict[int, float] = field(default_factory=dict)
    converged: dict[int, bool] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def noise(self) -> np.ndarray:
        return np.flatnonzero(self.labels == NOISE)

    def to_json(self) -> dict:
        return {
            "K": int(self.K),
            "Q_clust": float(self.Q_clust),
            "labels": [int(v) for v in self.labels],
            "noise": [int(v) for v in self.noise],
            "costs": {str(k): float(v) for k, v in self.costs.items()},
            # wall-clock times vary run to run; they are kept out of the
            # serialized result so equal inputs give equal bytes
            "timings": {},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ClusterResult":
        return cls(np.asarray(doc["labels"], dtype=np.int64), int(doc["K"]), float(doc["Q_clust"]),
                   {int(k): float(v) for k, v in doc.get("costs", {}).items()},
                   timings=dict(doc.get("timings", {})))

    def dumps(self) -> str:
        return json.dumps(self.to_json())


# ---------------------------------------------------------------------------
# spectrum
# ---------------------------------------------------------------------------

def normalized_spectrum(A, m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top ``m`` eigenpairs of ``D^-1/2 A D^-1/2`` over the non-isolated points.

    Returns ``(eigenvalues, eigenvectors, active)``; eigenvalues descend,
    eigenvectors are rows over ``active`` (indices with nonzero degree).
    """
    is_sparse = sparse.issparse(A)
    deg = np.asarray(A.sum(axis=1)).reshape(-1)
    active = np.flatnonzero(deg > 0)
    if active.size == 0:
        return np.zeros(0), np.zeros((0, 0)), active
    d = 1.0 / np.sqrt(deg[active])
    if is_sparse:
        sub = A.tocsr()[active][:, active]
        L = sparse.diags(d) @ sub @ sparse.diags(d)
        L = 0.5 * (L + L.T)
    else:
        sub = np.asarray(A)[np.ix_(active, active)]
        L = d[:, None] * sub * d[None, :]
        L = 0.5 * (L + L.T)
    n = active.size
    m = int(min(m, n))
    if is_sparse and n > 2 * m + 1:
        w, v = eigsh(L, k=m, which="LA", v0=np.full(n, 1.0 / np.sqrt(n)))
    else:
        dense = L.toarray() if is_sparse else L
        try:
            w, v = linalg.eigh(dense, subset_by_index=[n - m, n - 1])
        except linalg.LinAlgError:
            # the subset driver can fail on highly degenerate spectra
            w, v = linalg.eigh(dense, driver="evd")
            w, v = w[n - m:], v[:, n - m:]
    order = np.argsort(-w, kind="stable")
    w, v = w[order], v[:, order]
    # fix eigenvector signs so results do not depend on the solver
    for c in range(v.shape[1]):
        k = np.argmax(np.abs(v[:, c]))
        if v[k, c] < 0:
            v[:, c] = -v[:, c]
    return w, v, active


# ---------------------------------------------------------------------------
# rotation alignment
# ---------------------------------------------------------------------------

@dataclass
class Alignment:
    J: float
    Z: np.ndarray
    assign: np.ndarray
    angles: np.ndarray
    converged: bool


@njit(cache=True)
def _rotation(K, pi, pj, angles):
    R = np.eye(K)
    for k in range(angles.size):
        i, j = pi[k], pj[k]
        c, s = np.cos(angles[k]), np.sin(angles[k])
        for r in range(K):
            a, b = R[r, i], R[r, j]
            R[r, i] = c * a + s * b
            R[r, j] = -s * a + c * b
    return R


def _cost(Z: np.ndarray) -> float:
    Z2 = Z * Z
    M2 = Z2.max(axis=1)
    return float((Z2 / M2[:, None]).sum())


@njit(cache=True)
def _angle_grad(W, R, pi, pj, angles):
    # M_k = G_k^T M_{k-1} G_k with M_{-1} = W R^T; dJ/d(angle_k) = M_k[j, i] - M_k[i, j]
    K = W.shape[0]
    M = W @ R.T
    grad = np.empty(angles.size)
    for k in range(angles.size):
        i, j = pi[k], pj[k]
        c, s = np.cos(angles[k]), np.sin(angles[k])
        for q in range(K):
            a, b = M[i, q], M[j, q]
            M[i, q] = c * a + s * b
            M[j, q] = -s * a + c * b
        for r in range(K):
            a, b = M[r, i], M[r, j]
            M[r, i] = c * a + s * b
            M[r, j] = -s * a + c * b
        grad[k] = M[j, i] - M[i, j]
    return grad


def _gradient(V, pi, pj, angles):
    R = _rotation(V.shape[1], pi, pj, angles)
    Z = V @ R
    a = np.abs(Z)
    m = np.argmax(a, axis=1)
    rows = np.arange(Z.shape[0])
    M = a[rows, m]
    dZ = 2 * Z / (M * M)[:, None]
    s2 = (Z * Z).sum(axis=1)
    dZ[rows, m] -= 2 * s2 / M ** 3 * np.sign(Z[rows, m])
    return _angle_grad(V.T @ dZ, R, pi, pj, angles)


def _probe(V, pi, pj, angles, J, h):
    # derivative-free step for kinks where tied row maxima cancel the gradient
    K = V.shape[1]
    best, best_J = None, J
    for k in range(angles.size):
        for sgn in (1.0, -1.0):
            trial = angles.copy()
            trial[k] += sgn * h
            Jt = _cost(V @ _rotation(K, pi, pj, trial))
            if Jt < best_J:
                best, best_J = trial, Jt
    return best, best_J


def alignment_cost(V: np.ndarray, *, max_sweeps: int = 200, step: float = 0.1,
                   tol: float = 1e-10) -> Alignment:
    """Rotate the columns of ``V`` towards the axes by Givens-angle descent.

    The cost is ``sum_ij Z_ij^2 / max_j Z_ij^2`` with ``Z = V R``. Starting
    from zero angles, each sweep takes a gradient step on all angles,
    halving the step until the cost drops and doubling it after a success.
    Step and stopping tolerance refer to the cost per row. When the line
    search stalls, single angles are probed by +-``step`` before giving up.
    Returns the best rotation found.
    """
    V0 = np.asarray(V, dtype=np.float64)
    if V0.ndim != 2 or V0.shape[1] < 2:
        raise ValueError("need at least two columns")
    if np.any(np.all(V0 == 0, axis=1)):
        raise ValueError("rows of V must be nonzero")
    # J is invariant to row scale; unit rows keep the gradient well scaled
    V = V0 / np.linalg.norm(V0, axis=1, keepdims=True)
    K = V.shape[1]
    pi, pj = (np.array(v, dtype=np.int64) for v in zip(*combinations(range(K), 2)))
    angles = np.zeros(pi.size)
    N = V.shape[0]
    J = _cost(V)
    converged = False
    alpha = step
    for _ in range(max_sweeps):
        g = _gradient(V, pi, pj, angles) / N
        improved = False
        while alpha > 1e-10:
            trial = angles - alpha * g
            Jt = _cost(V @ _rotation(K, pi, pj, trial))
            if Jt < J:
                improved = True
                break
            alpha *= 0.5
        alpha *= 2.0
        if not improved:
            trial, Jt = _probe(V, pi, pj, angles, J, step)
            if trial is None:
                converged = True
                break
            alpha = step
        gain = (J - Jt) / N
        angles, J = trial, Jt
        if gain < tol:
            converged = True
            break
    Z = V0 @ _rotation(K, pi, pj, angles)
    return Alignment(J, Z, np.argmax(np.abs(Z), axis=1), angles, converged)


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------

def _drop_small(labels: np.ndarray, min_size: int) -> tuple[np.ndarray, int]:
    out = np.full(labels.shape, NOISE, dtype=np.int64)
    ids = [g for g in np.unique(labels) if g != NOISE]
    # renumber surviving groups in order of first appearance
    keep = [g for g in ids if np.count_nonzero(labels == g) >= min_size]
    keep.sort(key=lambda g: int(np.flatnonzero(labels == g)[0]))
    for new, g in enumerate(keep, start=1):
        out[labels == g] = new
    return out, len(keep)


def select_k_and_cluster(A, params: SpectralParams | None = None) -> ClusterResult:
    params = params or SpectralParams()
    t0 = time.perf_counter()
    n = A.shape[0]
    min_size = params.min_cluster_size or default_min_cluster_size(n)
    labels = np.full(n, NOISE, dtype=np.int64)

    w, V, active = normalized_spectrum(A, params.n_c)
    t_eig = time.perf_counter() - t0
    n_act = active.size
    if n_act < 2:
        if n_act == 1 and min_size <= 1:
            labels[active] = 1
            return ClusterResult(labels, 1, 1.0, timings={"eig": t_eig, "total": t_eig})
        return ClusterResult(labels, 0, 0.0, timings={"eig": t_eig, "total": t_eig})

    costs: dict[int, float] = {}
    converged: dict[int, bool] = {}
    results: dict[int, Alignment] = {}
    prev = None
    for K in range(2, min(params.n_c, n_act) + 1):
        Vk = V[:, :K].copy()
        if params.incremental and prev is not None:
            Vk[:, :K - 1] = prev.Z
        Vk[np.all(Vk == 0, axis=1), 0] = 1e-150
        al = alignment_cost(Vk, max_sweeps=params.max_sweeps, step=params.step, tol=params.tol)
        results[K], costs[K], converged[K] = al, al.J, al.converged
        prev = al
    t_rot = time.perf_counter() - t0 - t_eig

    norm = {K: J / n_act for K, J in costs.items()}
    best = min(norm.values())
    if params.selection == "argmin":
        K_sel = min(K for K, v in norm.items() if v == best)
    else:
        K_sel = max(K for K, v in norm.items() if v - best <= params.plateau)
    al = results[K_sel]
    q = float(np.clip(2.0 - al.J / n_act, 0.0, 1.0))
    labels[active] = al.assign + 1
    labels, K = _drop_small(labels, min_size)
    total = time.perf_counter() - t0
    return ClusterResult(labels, K, q, costs, converged,
                         {"eig": t_eig, "rotate": t_rot, "total": total})
