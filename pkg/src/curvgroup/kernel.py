"""Monte Carlo estimate of the 5-D connectivity kernel.

Random paths of the stochastic direction process with curvature diffusion
start at the origin heading along ``+x``. Every visited state drops one
count into the nearest ``(x, y, theta)`` cell of a grid. One grid per
initial curvature makes up a :class:`KernelBank`.

Grid arrays are shaped ``(n_theta, n_y, n_x)`` with the spatial origin at
the centre cell. Axis ``theta`` holds the relative orientation
``j * pi / n_theta`` (line orientations, period pi).
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ._io import atomic_write

__all__ = [
    "PathParams",
    "KernelGrid",
    "KernelBank",
    "KernelWeights",
    "default_dims",
    "kappa_lattice",
    "simulate_paths",
    "build_bank",
    "eval_gamma",
    "gamma_many",
    "connectivity_weight",
    "pair_weights",
    "project2d",
    "write_k5d",
    "read_k5d",
    "K5DError",
]

BLOCK = 4096  # paths per RNG block


@dataclass(frozen=True)
class PathParams:
    """Random-path settings. ``sigma_kappa_diff`` is the per-step curvature noise."""

    ds: float = 1.0
    H: int = 17
    n: int = 100_000
    sigma_kappa_diff: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if not self.ds > 0:
            raise ValueError("ds must be positive")
        if self.H < 1 or self.n < 1:
            raise ValueError("H and n must be >= 1")
        if self.sigma_kappa_diff < 0:
            raise ValueError("sigma_kappa_diff must be >= 0")


@dataclass(frozen=True)
class KernelWeights:
    sigma_kappa_exp: float = 1.0
    sigma_int: float = 0.1

    def __post_init__(self):
        if not (self.sigma_kappa_exp > 0 and self.sigma_int > 0):
            raise ValueError("kernel weight scales must be positive")


@dataclass
class KernelGrid:
    kappa0: float
    values: np.ndarray          # (n_theta, n_y, n_x)
    kept: int = 0               # deposited states
    dropped: int = 0            # states that fell outside the grid

    @property
    def dims(self) -> tuple[int, int, int]:
        nt, ny, nx = self.values.shape
        return nx, ny, nt

    @property
    def mass(self) -> float:
        """Fraction of deposited states that landed inside the grid."""
        total = self.kept + self.dropped
        return self.kept / total if total else float(self.values.sum())

    @property
    def spill(self) -> float:
        # defined as the complement so that mass + spill == 1 in floats too
        return 1.0 - self.mass


def default_dims(H: int, ds: float = 1.0, n_theta: int = 18) -> tuple[int, int, int]:
    """``(n_x, n_y, n_theta)`` large enough for a straight path of ``H`` steps."""
    side = 2 * math.ceil(H * ds) + 1
    return side, side, n_theta


def kappa_lattice(kappa_min: float, kappa_max: float, dkappa: float) -> np.ndarray:
    if kappa_min > kappa_max:
        raise ValueError("kappa_min > kappa_max")
    if not dkappa > 0:
        raise ValueError("dkappa must be positive")
    count = int(round((kappa_max - kappa_min) / dkappa)) + 1
    return kappa_min + dkappa * np.arange(count)


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

def _block_counts(kappa0: float, dims, params: PathParams, n_paths: int,
                  ss: np.random.SeedSequence, mirror_noise: bool) -> tuple[np.ndarray, int]:
    nx, ny, nt = dims
    H = params.H
    rng = np.random.default_rng(ss)
    noise = rng.standard_normal((n_paths, max(H - 2, 0)))
    if mirror_noise:
        noise = -noise
    ds = params.ds
    # kappa_s for s = 0..H-2, theta_s / position_s for s = 0..H-1
    kap = np.empty((n_paths, max(H - 1, 0)))
    if H > 1:
        kap[:, 0] = kappa0
        if H > 2:
            kap[:, 1:] = kappa0 + np.cumsum(ds * params.sigma_kappa_diff * noise, axis=1)
    theta = np.zeros((n_paths, H))
    theta[:, 1:] = np.cumsum(ds * kap, axis=1)
    x = np.zeros((n_paths, H))
    y = np.zeros((n_paths, H))
    x[:, 1:] = np.cumsum(ds * np.cos(theta[:, :-1]), axis=1)
    y[:, 1:] = np.cumsum(ds * np.sin(theta[:, :-1]), axis=1)

    ix = np.rint(x).astype(np.int64) + nx // 2
    iy = np.rint(y).astype(np.int64) + ny // 2
    it = np.mod(np.rint(theta / (np.pi / nt)).astype(np.int64), nt)
    inside = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
    flat = (it[inside] * ny + iy[inside]) * nx + ix[inside]
    counts = np.bincount(flat, minlength=nt * ny * nx)
    return counts, int(inside.size - flat.size)


def simulate_paths(kappa0: float, dims: tuple[int, int, int], params: PathParams, *,
                   slice_index: int = 0, mirror_noise: bool = False,
                   workers: int | None = None) -> KernelGrid:
    """Histogram ``params.n`` random paths started at curvature ``kappa0``.

    ``dims`` is ``(n_x, n_y, n_theta)``; ``n_x`` and ``n_y`` must be odd.
    Paths are split into fixed blocks seeded from
    ``(seed, slice_index, block)``, so the result does not depend on how
    blocks are scheduled. ``mirror_noise`` negates every curvature draw.
    """
    nx, ny, nt = (int(d) for d in dims)
    if nx % 2 == 0 or ny % 2 == 0:
        raise ValueError("grid n_x and n_y must be odd")
    n_blocks = -(-params.n // BLOCK)
    sizes = [min(BLOCK, params.n - b * BLOCK) for b in range(n_blocks)]
    seqs = [np.random.SeedSequence([params.seed, slice_index, b]) for b in range(n_blocks)]

    def job(b):
        return _block_counts(kappa0, (nx, ny, nt), params, sizes[b], seqs[b], mirror_noise)

    if workers is None:
        workers = min(n_blocks, os.cpu_count() or 1)
    if workers > 1 and n_blocks > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(job, range(n_blocks)))
    else:
        results = [job(b) for b in range(n_blocks)]

    counts = np.zeros(nt * ny * nx, dtype=np.int64)
    dropped = 0
    for c, d in results:          # block order
        counts += c
        dropped += d
    total = params.n * params.H
    values = (counts / total).reshape(nt, ny, nx)
    return KernelGrid(float(kappa0), values, int(counts.sum()), dropped)


# ---------------------------------------------------------------------------
# bank
# ---------------------------------------------------------------------------

@dataclass
class KernelBank:
    kappas: np.ndarray
    grids: np.ndarray           # (n_kappa, n_theta, n_y, n_x)
    params: PathParams
    dkappa: float
    normalization: str = "mass"
    spill: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.kappas = np.asarray(self.kappas, dtype=np.float64)
        self.grids = np.asarray(self.grids, dtype=np.float64)
        if self.grids.ndim != 4 or self.grids.shape[0] != self.kappas.size:
            raise ValueError("grids must be (n_kappa, n_theta, n_y, n_x)")
        if self.kappas.size > 1 and not np.all(np.diff(self.kappas) > 0):
            raise ValueError("kappa list must be strictly increasing")

    @property
    def n_kappa(self) -> int:
        return int(self.kappas.size)

    @property
    def dims(self) -> tuple[int, int, int]:
        _, nt, ny, nx = self.grids.shape
        return nx, ny, nt

    def slice_index(self, kappa) -> np.ndarray:
        k = (np.asarray(kappa, dtype=np.float64) - self.kappas[0]) / self.dkappa
        return np.clip(np.rint(k), 0, self.n_kappa - 1).astype(np.int64)

    def grid(self, i: int) -> KernelGrid:
        return KernelGrid(float(self.kappas[i]), self.grids[i])

    def fingerprint(self) -> str:
        return bank_key(float(self.kappas[0]), float(self.kappas[-1]), self.dkappa,
                        self.dims, self.params)


def bank_key(kappa_min: float, kappa_max: float, dkappa: float, dims, params: PathParams) -> str:
    """Content hash of everything that determines a bank."""
    doc = {"kappa_min": kappa_min, "kappa_max": kappa_max, "dkappa": dkappa,
           "dims": [int(d) for d in dims], "params": asdict(params), "block": BLOCK}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def build_bank(kappa_min: float, kappa_max: float, dkappa: float,
               dims: tuple[int, int, int], params: PathParams, *,
               workers: int | None = None) -> KernelBank:
    kappas = kappa_lattice(kappa_min, kappa_max, dkappa)
    grids, spill = [], []
    for i, k in enumerate(kappas):
        g = simulate_paths(float(k), dims, params, slice_index=i, workers=workers)
        grids.append(g.values)
        spill.append(g.spill)
    return KernelBank(kappas, np.stack(grids), params, float(dkappa), spill=np.array(spill))


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def gamma_many(bank: KernelBank, x0, y0, t0, x1, y1, t1, kappa) -> np.ndarray:
    """Vectorized :func:`eval_gamma` over broadcastable arrays (angles in radians)."""
    x0, y0, t0, x1, y1, t1, kappa = np.broadcast_arrays(
        *(np.asarray(a, dtype=np.float64) for a in (x0, y0, t0, x1, y1, t1, kappa)))
    nx, ny, nt = bank.dims
    dx, dy = x1 - x0, y1 - y0
    c, s = np.cos(t0), np.sin(t0)
    u = c * dx + s * dy + nx // 2
    v = -s * dx + c * dy + ny // 2
    w = np.mod(t1 - t0, np.pi) / (np.pi / nt)
    out = np.zeros(u.shape)
    ok = (u >= 0) & (u <= nx - 1) & (v >= 0) & (v <= ny - 1)
    if not ok.any():
        return out
    u, v, w = u[ok], v[ok], w[ok]
    ks = bank.slice_index(kappa[ok])

    u0 = np.minimum(np.floor(u).astype(np.int64), nx - 2) if nx > 1 else np.zeros(u.shape, np.int64)
    v0 = np.minimum(np.floor(v).astype(np.int64), ny - 2) if ny > 1 else np.zeros(v.shape, np.int64)
    w0 = np.floor(w).astype(np.int64)
    fu, fv, fw = u - u0, v - v0, w - w0
    w0 %= nt
    w1 = (w0 + 1) % nt
    u1 = np.minimum(u0 + 1, nx - 1)
    v1 = np.minimum(v0 + 1, ny - 1)
    G = bank.grids
    acc = np.zeros(u.shape)
    for wi, ww in ((w0, 1 - fw), (w1, fw)):
        for vi, wv in ((v0, 1 - fv), (v1, fv)):
            for ui, wu in ((u0, 1 - fu), (u1, fu)):
                acc += ww * wv * wu * G[ks, wi, vi, ui]
    out[ok] = acc
    return out


def eval_gamma(bank: KernelBank, frm: tuple[float, float, float],
               to: tuple[float, float, float], kappa: float) -> float:
    """Kernel density for a move from ``frm`` to ``to`` given curvature ``kappa``.

    Points are ``(x, y, theta)`` in pixel coordinates with ``theta`` in
    radians. The nearest curvature slice is used, values are trilinear in
    ``(x, y, theta)`` and zero outside the grid.
    """
    return float(gamma_many(bank, frm[0], frm[1], frm[2], to[0], to[1], to[2], kappa))


def _line_gamma(bank, x0, y0, t0, k0, x1, y1, t1):
    # a line element may be traversed either way; the reversed direction
    # carries the opposite curvature sign
    fwd = gamma_many(bank, x0, y0, t0, x1, y1, t1, k0)
    bwd = gamma_many(bank, x0, y0, t0 + np.pi, x1, y1, t1, -np.asarray(k0))
    return 0.5 * (fwd + bwd)


def pair_weights(bank: KernelBank, weights: KernelWeights,
                 xp, yp, tp, fp, kp, xq, yq, tq, fq, kq) -> np.ndarray:
    """Vectorized :func:`connectivity_weight` over arrays of point pairs."""
    g_pq = _line_gamma(bank, xp, yp, tp, kp, xq, yq, tq)
    g_qp = _line_gamma(bank, xq, yq, tq, kq, xp, yp, tp)
    dk = np.asarray(kp, dtype=np.float64) - np.asarray(kq, dtype=np.float64)
    df = np.asarray(fp, dtype=np.float64) - np.asarray(fq, dtype=np.float64)
    ek = np.exp(-(dk * dk) / weights.sigma_kappa_exp ** 2)
    ef = np.exp(-(df * df) / weights.sigma_int ** 2)
    return ek * ef * (0.5 * (g_pq + g_qp))


def connectivity_weight(p, q, bank: KernelBank, weights: KernelWeights) -> float:
    """Symmetric 5-D weight between two lifted points.

    ``p`` and ``q`` need ``x, y, theta, f, kappa`` attributes
    (e.g. :class:`curvgroup.liftspace.LiftedPoint`).
    """
    return float(pair_weights(bank, weights, p.x, p.y, p.theta, p.f, p.kappa,
                              q.x, q.y, q.theta, q.f, q.kappa))


def project2d(grid: KernelGrid | np.ndarray, normalize: bool = True) -> np.ndarray:
    """Sum over orientations; by default scaled so the maximum is 1.

    With ``normalize=False`` the projection keeps the grid's mass.
    """
    values = grid.values if isinstance(grid, KernelGrid) else np.asarray(grid)
    img = values.sum(axis=0)
    peak = img.max()
    return img / peak if normalize and peak > 0 else img


# ---------------------------------------------------------------------------
# .k5d files
# ---------------------------------------------------------------------------

class K5DError(ValueError):
    pass


_K5D_MAGIC = b"K5D1"
_K5D_VERSION = 1
_K5D_HEADER = struct.Struct("<4sIIIIIdddIQdQ")


def k5d_bytes(bank: KernelBank) -> bytes:
    nx, ny, nt = bank.dims
    p = bank.params
    head = _K5D_HEADER.pack(_K5D_MAGIC, _K5D_VERSION, nx, ny, nt, bank.n_kappa,
                            float(bank.kappas[0]), float(bank.dkappa), float(p.ds),
                            int(p.H), int(p.n), float(p.sigma_kappa_diff), int(p.seed))
    body = head + np.ascontiguousarray(bank.grids, dtype="<f8").tobytes()
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def k5d_from_bytes(data: bytes) -> KernelBank:
    if len(data) < _K5D_HEADER.size + 4:
        raise K5DError("truncated .k5d data")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise K5DError("CRC mismatch")
    (magic, version, nx, ny, nt, nk, kmin, dk, ds, H, n, sig,
     seed) = _K5D_HEADER.unpack_from(body)
    if magic != _K5D_MAGIC:
        raise K5DError(f"bad magic {magic!r}")
    if version != _K5D_VERSION:
        raise K5DError(f"unsupported version {version}")
    expected = _K5D_HEADER.size + 8 * nk * nt * ny * nx
    if len(body) != expected:
        raise K5DError("payload size does not match header")
    grids = np.frombuffer(body, dtype="<f8", offset=_K5D_HEADER.size).reshape(nk, nt, ny, nx)
    params = PathParams(ds=ds, H=H, n=n, sigma_kappa_diff=sig, seed=seed)
    kappas = kmin + dk * np.arange(nk)
    return KernelBank(kappas, grids.astype(np.float64), params, dk)


def write_k5d(path: str | os.PathLike, bank: KernelBank) -> None:
    atomic_write(path, k5d_bytes(bank))


def read_k5d(path: str | os.PathLike) -> KernelBank:
    with open(path, "rb") as fh:
        return k5d_from_bytes(fh.read())
