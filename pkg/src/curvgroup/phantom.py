"""Synthetic stimuli with analytic ground truth.

Elements are parametric curves (sine, circle, Euler spiral, segment)
stroked onto a 201x201 canvas. Each stroke pixel inherits orientation and
curvature from the nearest centreline sample. Curvature along an element is
signed with respect to its traversal direction; lifting converts it to the
canonical direction of the pixel's orientation bin.

Units are the ground-truth groups. Several elements may share a unit (a
parent vessel and its branches); pixels where different units overlap
carry all of their labels.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from . import netpbm
from ._io import atomic_write
from .liftspace import LiftedFeatureMap, angle_to_bin, bin_angles, wrap_line_angle

__all__ = [
    "CATEGORIES",
    "ElementSpec",
    "PhantomSpec",
    "Stroke",
    "PhantomCase",
    "sample_element",
    "render_element",
    "generate",
    "default_spec",
    "three_circles",
    "lift_ground_truth",
    "save_case",
]

CATEGORIES = ("A", "B", "C", "D", "E", "A1", "B1", "C1", "D1", "E1")
SIZE = 201
STEP = 0.05          # centreline sampling, px of arclength
DASH = (8.0, 5.0)    # on, off (px)


@dataclass(frozen=True)
class ElementSpec:
    """One parametric curve.

    ``kind`` and its ``params``:

    * ``sine``: ``amplitude, omega, length, cx, cy, rotation`` -- the curve
      ``y = amplitude * sin(omega * x)`` for ``|x| <= length/2``, rotated and
      centred at ``(cx, cy)``;
    * ``circle``: ``radius, cx, cy`` and optional ``t0, t1`` (arc range);
    * ``euler_spiral``: ``x0, y0, heading, kappa0, c, length`` with
      ``kappa(s) = kappa0 + c * s``;
    * ``segment``: ``x0, y0, x1, y1``.
    """

    kind: str
    params: dict
    unit: int = 1
    dash: bool = False


@dataclass(frozen=True)
class PhantomSpec:
    category: str
    seed: int = 0
    elements: tuple[ElementSpec, ...] = ()
    width: float = 3.0
    size: int = SIZE
    dash_pattern: tuple[float, float] = DASH
    foreground: float = 0.0
    background: float = 1.0
    challenges: tuple[str, ...] = ()

    def __post_init__(self):
        if self.category not in CATEGORIES and self.category != "three_circles":
            raise ValueError(f"unknown category {self.category!r}")
        if self.width < 1:
            raise ValueError("stroke width must be >= 1 px")

    def to_json(self) -> dict:
        d = asdict(self)
        d["elements"] = [asdict(e) for e in self.elements]
        return d

    @classmethod
    def from_json(cls, doc: dict) -> "PhantomSpec":
        doc = dict(doc)
        doc["elements"] = tuple(ElementSpec(**e) for e in doc.get("elements", ()))
        doc["dash_pattern"] = tuple(doc.get("dash_pattern", DASH))
        doc["challenges"] = tuple(doc.get("challenges", ()))
        return cls(**doc)


# ---------------------------------------------------------------------------
# elements
# ---------------------------------------------------------------------------

@dataclass
class Stroke:
    """Sampled centreline of an element."""

    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray     # traversal direction, radians
    kappa: np.ndarray       # d(heading)/ds
    s: np.ndarray           # arclength


def _cumlen(x, y):
    seg = np.hypot(np.diff(x), np.diff(y))
    return np.concatenate([[0.0], np.cumsum(seg)])


def sample_element(kind: str, params: dict, step: float = STEP) -> Stroke:
    p = dict(params)
    if kind == "circle":
        r = float(p["radius"])
        if not r > 0:
            raise ValueError("circle radius must be positive")
        t0, t1 = float(p.get("t0", 0.0)), float(p.get("t1", 2 * np.pi))
        t = np.arange(t0, t1, step / r)
        x = p["cx"] + r * np.cos(t)
        y = p["cy"] + r * np.sin(t)
        return Stroke(x, y, t + np.pi / 2, np.full(t.shape, 1.0 / r), r * (t - t0))
    if kind == "sine":
        a, w, L = float(p["amplitude"]), float(p["omega"]), float(p["length"])
        if not L > 0:
            raise ValueError("sine length must be positive")
        if w < 0:
            raise ValueError("omega must be >= 0")
        u = np.arange(-L / 2, L / 2, step / np.sqrt(1 + (a * w) ** 2))
        v = a * np.sin(w * u)
        dv = a * w * np.cos(w * u)
        kap = -a * w * w * np.sin(w * u) / (1 + dv * dv) ** 1.5
        rot = float(p.get("rotation", 0.0))
        c, s = np.cos(rot), np.sin(rot)
        x = p["cx"] + c * u - s * v
        y = p["cy"] + s * u + c * v
        return Stroke(x, y, np.arctan2(dv, 1.0) + rot, kap, _cumlen(x, y))
    if kind == "euler_spiral":
        L = float(p["length"])
        if not L > 0:
            raise ValueError("spiral length must be positive")
        s = np.arange(0.0, L, step)
        k0, c = float(p.get("kappa0", 0.0)), float(p["c"])
        head = float(p.get("heading", 0.0)) + k0 * s + 0.5 * c * s * s
        # trapezoidal integration of the unit tangent
        dx = np.concatenate([[0.0], 0.5 * (np.cos(head[1:]) + np.cos(head[:-1])) * step])
        dy = np.concatenate([[0.0], 0.5 * (np.sin(head[1:]) + np.sin(head[:-1])) * step])
        x = p["x0"] + np.cumsum(dx)
        y = p["y0"] + np.cumsum(dy)
        return Stroke(x, y, head, k0 + c * s, s)
    if kind == "segment":
        x0, y0, x1, y1 = (float(p[k]) for k in ("x0", "y0", "x1", "y1"))
        L = float(np.hypot(x1 - x0, y1 - y0))
        if not L > 0:
            raise ValueError("segment length must be positive")
        s = np.arange(0.0, L, step)
        x = x0 + (x1 - x0) * s / L
        y = y0 + (y1 - y0) * s / L
        h = np.full(s.shape, np.arctan2(y1 - y0, x1 - x0))
        return Stroke(x, y, h, np.zeros(s.shape), s)
    raise ValueError(f"unknown element kind {kind!r}")


def _dash_keep(s: np.ndarray, pattern: tuple[float, float]) -> np.ndarray:
    on, off = pattern
    return np.mod(s, on + off) < on


def render_element(kind: str, params: dict, dash: bool = False, *, width: float = 3.0,
                   size: int = SIZE, dash_pattern: tuple[float, float] = DASH):
    """Stroke one element.

    Returns ``(mask, theta, kappa, dist)`` arrays of shape ``(size, size)``:
    the stroke, the line orientation and canonical curvature of the nearest
    centreline sample, and the distance to it (``inf`` off the stroke).
    """
    st = sample_element(kind, params)
    inside = (st.x > -width) & (st.x < size - 1 + width) & (st.y > -width) & (st.y < size - 1 + width)
    st = Stroke(st.x[inside], st.y[inside], st.heading[inside], st.kappa[inside], st.s[inside])
    # butt caps: a pixel is inked when its nearest centreline sample is "on"
    on = _dash_keep(st.s, dash_pattern) if dash else np.ones(st.s.shape, bool)
    mask = np.zeros((size, size), bool)
    theta = np.zeros((size, size))
    kappa = np.zeros((size, size))
    dist = np.full((size, size), np.inf)
    if not on.any():
        return mask, theta, kappa, dist
    xs, ys = st.x, st.y
    tree = cKDTree(np.column_stack([xs, ys]))
    half = width / 2.0
    x0 = max(int(np.floor(xs.min() - half)), 0)
    x1 = min(int(np.ceil(xs.max() + half)), size - 1)
    y0 = max(int(np.floor(ys.min() - half)), 0)
    y1 = min(int(np.ceil(ys.max() + half)), size - 1)
    gy, gx = np.mgrid[y0:y1 + 1, x0:x1 + 1]
    d, idx = tree.query(np.column_stack([gx.ravel(), gy.ravel()]), distance_upper_bound=half + 1e-9)
    hit = np.isfinite(d)
    hit[hit] = on[idx[hit]]
    px, py = gx.ravel()[hit], gy.ravel()[hit]
    j = idx[hit]
    head = st.heading[j]
    line = wrap_line_angle(head)
    # canonical direction opposes traversal when the wrap shifted by pi
    flip = np.where(np.cos(head - line) >= 0, 1.0, -1.0)
    mask[py, px] = True
    theta[py, px] = line
    kappa[py, px] = flip * st.kappa[j]
    dist[py, px] = d[hit]
    return mask, theta, kappa, dist


# ---------------------------------------------------------------------------
# cases
# ---------------------------------------------------------------------------

@dataclass
class PhantomCase:
    spec: PhantomSpec
    image: np.ndarray           # (size, size), foreground on background
    gt_orientation: np.ndarray  # line orientation per stroke pixel, 0 elsewhere
    gt_curvature: np.ndarray    # canonical curvature per stroke pixel
    membership: np.ndarray      # (n_units, size, size) bool
    units: list[int] = field(default_factory=list)

    @property
    def mask(self) -> np.ndarray:
        return self.membership.any(axis=0)

    @property
    def n_units(self) -> int:
        return len(self.units)

    def point_labels(self) -> list[list[int]]:
        """Unit ids per stroke pixel, row-major (the lifting order)."""
        ys, xs = np.nonzero(self.mask)
        cols = self.membership[:, ys, xs]
        return [[self.units[u] for u in np.flatnonzero(cols[:, k])] for k in range(ys.size)]


def generate(spec: PhantomSpec) -> PhantomCase:
    n = spec.size
    units = sorted({e.unit for e in spec.elements})
    if not units:
        raise ValueError("phantom has no elements")
    member = np.zeros((len(units), n, n), bool)
    theta = np.zeros((n, n))
    kappa = np.zeros((n, n))
    best = np.full((n, n), np.inf)
    for e in spec.elements:
        m, th, k, d = render_element(e.kind, e.params, e.dash, width=spec.width, size=n,
                                     dash_pattern=spec.dash_pattern)
        member[units.index(e.unit)] |= m
        # ties keep the earlier element
        closer = d < best
        theta[closer] = th[closer]
        kappa[closer] = k[closer]
        best[closer] = d[closer]
    image = np.full((n, n), spec.background)
    image[member.any(axis=0)] = spec.foreground
    return PhantomCase(spec, image, theta, kappa, member, units)


def lift_ground_truth(case: PhantomCase, n_theta: int = 18) -> LiftedFeatureMap:
    """Lifted map built from the analytic ground truth instead of estimates."""
    ys, xs = np.nonzero(case.mask)
    n = case.spec.size
    theta = case.gt_orientation[ys, xs]
    bins = angle_to_bin(theta, n_theta)
    # a bin near +-pi/2 may point opposite to the continuous orientation
    flip = np.where(np.cos(theta - bin_angles(n_theta)[bins]) >= 0, 1.0, -1.0)
    return LiftedFeatureMap(
        n, n, n_theta, xs, ys, bins,
        case.image[ys, xs], flip * case.gt_curvature[ys, xs],
        meta={"source": "phantom", "category": case.spec.category, "seed": case.spec.seed},
    )


def save_case(case: PhantomCase, out_dir: str | os.PathLike, stem: str | None = None,
              n_theta: int = 18) -> dict:
    """Write ``<stem>.pgm``, ``<stem>.l5d`` (+ JSON mirror), ``<stem>.labels.json``
    and ``<stem>.spec.json``. Returns the written paths."""
    from .liftspace import write_l5d

    os.makedirs(out_dir, exist_ok=True)
    stem = stem or f"{case.spec.category}_{case.spec.seed}"
    base = os.path.join(out_dir, stem)
    img8 = np.clip(np.rint(case.image * 255), 0, 255).astype(np.uint8)
    netpbm.write(base + ".pgm", img8)
    write_l5d(base + ".l5d", lift_ground_truth(case, n_theta))
    atomic_write(base + ".labels.json",
                 json.dumps({"units": case.units, "labels": case.point_labels()}).encode())
    atomic_write(base + ".spec.json", json.dumps(case.spec.to_json(), indent=1).encode())
    return {k: base + ext for k, ext in (("image", ".pgm"), ("lifted", ".l5d"),
                                         ("labels", ".labels.json"), ("spec", ".spec.json"))}


# ---------------------------------------------------------------------------
# category suite
# ---------------------------------------------------------------------------

def _sine(unit, cx, cy, rot, amp=15.0, omega=2 * np.pi / 160, length=190.0, dash=False):
    return ElementSpec("sine", {"amplitude": amp, "omega": omega, "length": length,
                                "cx": cx, "cy": cy, "rotation": rot}, unit, dash)


def _branch(unit, parent: ElementSpec, u: float, side: float, c: float, length: float,
            dash=False) -> ElementSpec:
    """Euler spiral leaving a sine parent tangentially at local abscissa ``u``."""
    p = parent.params
    a, w, rot = p["amplitude"], p["omega"], p["rotation"]
    v = a * np.sin(w * u)
    cr, sr = np.cos(rot), np.sin(rot)
    x0 = p["cx"] + cr * u - sr * v
    y0 = p["cy"] + sr * u + cr * v
    head = np.arctan2(a * w * np.cos(w * u), 1.0) + rot
    k0 = -a * w * w * np.sin(w * u) / (1 + (a * w * np.cos(w * u)) ** 2) ** 1.5
    return ElementSpec("euler_spiral", {"x0": float(x0), "y0": float(y0), "heading": float(head),
                                        "kappa0": float(k0), "c": side * c, "length": length},
                       unit, dash)


def default_spec(category: str, seed: int = 0) -> PhantomSpec:
    """Category layout with seed-dependent jitter of positions and angles.

    Challenging variants reuse the base layout and change only the
    parameters listed in ``challenges``.
    """
    if category not in CATEGORIES:
        raise ValueError(f"unknown category {category!r}")
    base = category[0]
    hard = category.endswith("1")
    rng = np.random.default_rng([seed, ord(base)])
    jx, jy = rng.uniform(-4, 4, 2)
    jr = rng.uniform(-0.05, 0.05)
    c0 = (SIZE - 1) / 2
    dash = hard
    challenges: list[str] = ["dash"] if hard else []
    omega = 2 * np.pi / 160

    if base == "A":
        angle = 0.55 if hard else 1.2
        if hard:
            challenges.append("crossing_angle")
        els = [_sine(1, c0 + jx, c0 + jy, jr, dash=dash),
               _sine(2, c0 + jx, c0 + jy, jr + angle, amp=12.0, dash=dash)]
    elif base == "B":
        parent = _sine(1, c0 + jx, c0 - 35 + jy, jr, amp=12.0, dash=dash)
        curl = 0.0009 if hard else 0.0004
        if hard:
            challenges.append("curvature")
        els = [parent, _branch(1, parent, -15.0, 1.0, curl, 95.0, dash),
               _sine(2, c0 + jx, c0 + 60 + jy, jr, amp=10.0, dash=dash)]
    elif base == "C":
        gap = 10.0 if hard else 13.0
        if hard:
            challenges.append("spacing")
        els = [_sine(1, c0 + jx, c0 - gap / 2 + jy, jr, amp=20.0, omega=omega, dash=dash),
               _sine(2, c0 + jx, c0 + gap / 2 + jy, jr, amp=20.0, omega=omega, dash=dash)]
    elif base == "D":
        parent = _sine(1, c0 + jx, c0 - 20 + jy, jr, amp=12.0, dash=dash)
        angle = 0.7 if hard else 1.3
        if hard:
            challenges.append("crossing_angle")
        els = [parent, _branch(1, parent, -40.0, 1.0, 0.0005, 90.0, dash),
               _sine(2, c0 + 25 + jx, c0 + jy, jr + angle, amp=10.0, length=170.0, dash=dash)]
    else:  # E
        parent = _sine(1, c0 + jx, c0 - 30 + jy, jr, amp=10.0, dash=dash)
        spacing = 30.0 if hard else 45.0
        if hard:
            challenges.append("spacing")
        els = [parent,
               _branch(1, parent, -50.0, 1.0, 0.0005, 80.0, dash),
               _branch(1, parent, -50.0 + spacing, 1.0, 0.0005, 75.0, dash),
               _sine(2, c0 + jx, c0 + 65 + jy, jr, amp=8.0, dash=dash)]
    return PhantomSpec(category, seed, tuple(els), challenges=tuple(challenges))


def three_circles(radii=(40.0, 45.0, 50.0), seed: int = 0) -> PhantomSpec:
    """Three mutually crossing circles around the canvas centre."""
    rng = np.random.default_rng([seed, 3])
    c0 = (SIZE - 1) / 2
    phase = rng.uniform(0, 2 * np.pi)
    offset = 22.0
    els = []
    for k, r in enumerate(radii):
        a = phase + 2 * np.pi * k / 3
        els.append(ElementSpec("circle", {"radius": float(r), "cx": float(c0 + offset * np.cos(a)),
                                          "cy": float(c0 + offset * np.sin(a))}, k + 1))
    return PhantomSpec("three_circles", seed, tuple(els))
