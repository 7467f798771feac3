"""End-to-end grouping: lift, kernel bank (cached), affinity, clustering.

Everything a run depends on lives in :class:`RunConfig`, so a run can be
repeated from its saved config alone.
"""

from __future__ import annotations

import json
import os
import time
from functools import lru_cache
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from . import affinity as aff
from ._io import atomic_write
from . import cluster as cl
from . import kernel as kn
from . import liftspace as ls
from . import phantom as ph
from .evaluation import CaseOutcome, match_details, stage_weights, units_from_class_map

__all__ = [
    "ConfigError",
    "RunConfig",
    "steps_for",
    "bank_for",
    "Discretization",
    "discretize",
    "lift_image",
    "group_patch",
    "PatchRun",
    "run_phantom",
    "run_suite",
    "AnnotatedImage",
    "run_annotated",
    "load_annotated",
]


class ConfigError(ValueError):
    """Invalid run parameter; the message names the parameter."""


@dataclass(frozen=True)
class RunConfig:
    n_theta: int = 18
    scales: tuple[float, ...] = (1.5, 2.5, 3.5)
    kappa_min: float = -0.1
    kappa_max: float = 0.1
    kappa_step: float = 0.01
    sigma_kappa_diff: float = 0.001
    sigma_kappa_exp: float = 1.0
    sigma_int: float = 0.275
    s_o: int = 25
    paths: int = 100_000
    steps: int | None = None        # None: one third of the patch size
    ds: float = 1.0
    seed: int = 1
    n_c: int = 20
    min_cluster_size: int | None = None
    margin: int = 24                # context pixels around a patch when lifting
    cache_dir: str = "kernel-cache"

    def __post_init__(self):
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))
        self.validate()

    def validate(self) -> None:
        checks = [
            ("n_theta", self.n_theta >= 2),
            ("scales", len(self.scales) > 0 and all(s > 0 for s in self.scales)),
            ("kappa_min", self.kappa_min <= self.kappa_max),
            ("kappa_step", self.kappa_step > 0),
            ("sigma_kappa_diff", self.sigma_kappa_diff >= 0),
            ("sigma_kappa_exp", self.sigma_kappa_exp > 0),
            ("sigma_int", self.sigma_int > 0),
            ("s_o", self.s_o >= 1),
            ("paths", self.paths >= 1),
            ("steps", self.steps is None or self.steps >= 1),
            ("ds", self.ds > 0),
            ("seed", self.seed >= 0),
            ("n_c", self.n_c >= 2),
            ("min_cluster_size", self.min_cluster_size is None or self.min_cluster_size >= 1),
            ("margin", self.margin >= 0),
        ]
        for name, ok in checks:
            if not ok:
                raise ConfigError(f"invalid value for {name}: {getattr(self, name)!r}")

    def to_json(self) -> dict:
        d = asdict(self)
        d["scales"] = list(self.scales)
        return d

    @classmethod
    def from_json(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return cls(**doc)

    def updated(self, **overrides) -> "RunConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    @property
    def weights(self) -> kn.KernelWeights:
        return kn.KernelWeights(self.sigma_kappa_exp, self.sigma_int)

    @property
    def spectral(self) -> cl.SpectralParams:
        return cl.SpectralParams(n_c=self.n_c, min_cluster_size=self.min_cluster_size)


def steps_for(patch_size: int) -> int:
    """Path length in steps: one third of the patch side."""
    return max(1, int(round(patch_size / 3)))


def patch_size(lifted: ls.LiftedFeatureMap) -> int:
    return max(patch_dims(lifted))


def patch_dims(lifted: ls.LiftedFeatureMap) -> tuple[int, int]:
    """``(n_x, n_y)`` of the patch window (the whole image when not cropped)."""
    if lifted.s_o is not None:
        side = 2 * int(lifted.s_o) + 1
        return side, side
    return lifted.width, lifted.height


@dataclass(frozen=True)
class Discretization:
    """Kernel lattice for one patch and the patch's points placed on it."""

    steps: int
    dims: tuple[int, int, int]
    kappas: np.ndarray
    slices: np.ndarray      # nearest kappa slice per lifted point


def discretize(lifted: ls.LiftedFeatureMap, cfg: RunConfig) -> Discretization:
    """The discretization that precedes kernel estimation (timed as ``disc``)."""
    if lifted.n_theta != cfg.n_theta:
        raise ConfigError(f"n_theta: patch has {lifted.n_theta} orientations, config {cfg.n_theta}")
    steps = cfg.steps or steps_for(patch_size(lifted))
    dims = kn.default_dims(steps, cfg.ds, cfg.n_theta)
    kappas = kn.kappa_lattice(cfg.kappa_min, cfg.kappa_max, cfg.kappa_step)
    slices = np.clip(np.rint((lifted.kappa - kappas[0]) / cfg.kappa_step), 0, kappas.size - 1)
    return Discretization(steps, dims, kappas, slices.astype(np.int64))


# ---------------------------------------------------------------------------
# kernel bank cache
# ---------------------------------------------------------------------------

def bank_for(cfg: RunConfig, steps: int, cache_dir: str | None = None,
             workers: int | None = None) -> tuple[kn.KernelBank, float, bool]:
    """Load or build the bank for ``cfg``.

    Returns ``(bank, build_seconds, from_cache)``. The build time of a cached
    bank is the one recorded when it was first built.
    """
    params = kn.PathParams(cfg.ds, steps, cfg.paths, cfg.sigma_kappa_diff, cfg.seed)
    dims = kn.default_dims(steps, cfg.ds, cfg.n_theta)
    key = kn.bank_key(cfg.kappa_min, cfg.kappa_max, cfg.kappa_step, dims, params)
    cache_dir = cache_dir if cache_dir is not None else cfg.cache_dir
    if cache_dir:
        path = os.path.join(cache_dir, f"bank-{key}.k5d")
        meta = path + ".json"
        if os.path.exists(path) and os.path.exists(meta):
            with open(meta) as fh:
                seconds = float(json.load(fh)["build_seconds"])
            return kn.read_k5d(path), seconds, True
    t0 = time.perf_counter()
    bank = kn.build_bank(cfg.kappa_min, cfg.kappa_max, cfg.kappa_step, dims, params, workers=workers)
    seconds = time.perf_counter() - t0
    if cache_dir:
        kn.write_k5d(path, bank)
        doc = {"key": key, "build_seconds": seconds, "params": asdict(params), "dims": list(dims),
               "kappa_min": cfg.kappa_min, "kappa_max": cfg.kappa_max, "kappa_step": cfg.kappa_step}
        atomic_write(meta, json.dumps(doc, indent=1).encode())
    return bank, seconds, False


# ---------------------------------------------------------------------------
# lifting
# ---------------------------------------------------------------------------

@lru_cache(maxsize=4)
def _filter_bank(n_theta: int) -> ls.FilterBank:
    return ls.cake_wavelet_bank(n_theta)


def lift_image(image: np.ndarray, mask: np.ndarray, cfg: RunConfig,
               center: tuple[int, int] | None = None, *, normalized: np.ndarray | None = None,
               bank: ls.FilterBank | None = None) -> tuple[ls.LiftedFeatureMap, float]:
    """Lift the mask pixels of ``image`` (whole image or one patch).

    ``normalized`` may carry the preprocessed image when several patches
    share it. The returned time covers the orientation score, dominant
    orientation and curvature of the window actually processed.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        norm = normalized if normalized is not None else ls.preprocess(img[..., 0], img[..., 1])
    else:
        norm = normalized if normalized is not None else ls.preprocess(img)
    m = np.asarray(mask)
    if m.shape != norm.shape:
        raise ValueError("mask and image sizes differ")
    h, w = norm.shape
    t0 = time.perf_counter()
    if center is None:
        y0, y1, x0, x1 = 0, h, 0, w
        sel = m == 1
    else:
        cx, cy = int(center[0]), int(center[1])
        if not (0 <= cx < w and 0 <= cy < h):
            raise ValueError(f"patch centre {center} outside the image")
        r = cfg.s_o + cfg.margin
        y0, y1, x0, x1 = max(cy - r, 0), min(cy + r + 1, h), max(cx - r, 0), min(cx + r + 1, w)
        yy, xx = np.mgrid[0:h, 0:w]
        sel = (m == 1) & (np.abs(xx - cx) <= cfg.s_o) & (np.abs(yy - cy) <= cfg.s_o)
    win = norm[y0:y1, x0:x1]
    fb = bank or _filter_bank(cfg.n_theta)
    score = ls.orientation_score(win, fb)
    theta = ls.dominant_orientation(score)
    ys, xs = np.nonzero(sel[y0:y1, x0:x1])
    bins = theta[ys, xs]
    kap, _ = ls.curvature_at(score, cfg.scales, bins, ys, xs)
    order = np.lexsort((xs + x0, ys + y0))
    lifted = ls.LiftedFeatureMap(w, h, cfg.n_theta, (xs + x0)[order], (ys + y0)[order],
                                 bins[order], win[ys, xs][order], kap[order])
    if center is not None:
        lifted = ls.crop_patch(lifted, center, cfg.s_o)
    return lifted, time.perf_counter() - t0


# ---------------------------------------------------------------------------
# grouping
# ---------------------------------------------------------------------------

@dataclass
class PatchRun:
    result: cl.ClusterResult
    affinity: np.ndarray
    timings: dict[str, float] = field(default_factory=dict)
    cached_bank: bool = False


def group_patch(lifted: ls.LiftedFeatureMap, bank: kn.KernelBank, cfg: RunConfig) -> PatchRun:
    t0 = time.perf_counter()
    A = aff.build_affinity(lifted, bank, cfg.weights)
    t1 = time.perf_counter()
    res = cl.select_k_and_cluster(A, cfg.spectral)
    t2 = time.perf_counter()
    return PatchRun(res, A, {"affinity": t1 - t0, "clust": t2 - t1})


def run_phantom(spec: ph.PhantomSpec, cfg: RunConfig, bank: kn.KernelBank | None = None,
                kernel_seconds: float = 0.0) -> tuple[CaseOutcome, PatchRun, ph.PhantomCase]:
    """Group a phantom lifted from its ground truth and score it."""
    t0 = time.perf_counter()
    case = ph.generate(spec)
    lifted = ph.lift_ground_truth(case, cfg.n_theta)
    t1 = time.perf_counter()
    disc = discretize(lifted, cfg)
    t_disc = time.perf_counter() - t1
    if bank is None:
        bank, kernel_seconds, _ = bank_for(cfg, disc.steps)
    run = group_patch(lifted, bank, cfg)
    detail = match_details(run.result.labels, case.point_labels())
    out = CaseOutcome(
        case_id=f"{spec.category}-{spec.seed}", category=spec.category, correct=detail.correct,
        Q_clust=run.result.Q_clust,
        timings={"disc": t_disc, "kernel": kernel_seconds, **run.timings},
        weights=stage_weights(*patch_dims(lifted), cfg.n_theta, disc.kappas.size, len(lifted)),
        size=(lifted.width, lifted.height),
        params={"sigma_int": cfg.sigma_int, "sigma_kappa_diff": cfg.sigma_kappa_diff},
    )
    run.timings["lift"] = t1 - t0
    return out, run, case


def _save_phantom_run(out_dir: str, outcome: CaseOutcome, run: PatchRun, case: ph.PhantomCase,
                      n_theta: int) -> None:
    from . import netpbm, render

    case_dir = os.path.join(out_dir, outcome.case_id)
    paths = ph.save_case(case, case_dir, outcome.case_id, n_theta)
    stem = os.path.join(case_dir, outcome.case_id)
    atomic_write(stem + ".result.json", run.result.dumps().encode())
    atomic_write(stem + ".timings.json",
                 json.dumps({"timings": outcome.timings, "weights": outcome.weights}, indent=1).encode())
    lifted = ls.read_l5d(paths["lifted"])
    netpbm.write(stem + ".clusters.ppm", render.cluster_rgb(lifted, run.result.labels, case.image))


def run_suite(cfg: RunConfig, categories: Sequence[str] = ph.CATEGORIES, seed: int = 0,
              out_dir: str | None = None, jobs: int = 1) -> list[CaseOutcome]:
    """Generate, group and score one phantom per category.

    With ``jobs > 1`` cases run concurrently on a shared read-only bank;
    results are identical, only the recorded wall-clock times differ.
    Each case writes into its own ``out_dir/<case id>/`` directory.
    """
    bank, secs, _ = bank_for(cfg, cfg.steps or steps_for(ph.SIZE))

    def one(cat):
        spec = ph.three_circles(seed=seed) if cat == "three_circles" else ph.default_spec(cat, seed)
        outcome, run, case = run_phantom(spec, cfg, bank, secs)
        if out_dir:
            _save_phantom_run(out_dir, outcome, run, case, cfg.n_theta)
        return outcome

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            return list(ex.map(one, categories))
    return [one(cat) for cat in categories]


# ---------------------------------------------------------------------------
# annotated retinal images
# ---------------------------------------------------------------------------

@dataclass
class AnnotatedImage:
    """One image with vessel mask, junction list and artery/vein class map."""

    name: str
    image: np.ndarray
    mask: np.ndarray
    classes: np.ndarray              # label image, 0 = unlabeled
    class_map: dict
    junctions: list[tuple[int, int]] | None = None   # None: skeleton fallback


def load_annotated(directory: str) -> list[AnnotatedImage]:
    """Read an annotated image set.

    Layout: ``classes.json`` (pixel value -> class name) and, per image
    ``<name>``, the image ``<name>.ppm`` or ``<name>.pgm``, the vessel mask
    ``<name>.mask.pgm``, the class label map ``<name>.av.pgm`` and an
    optional ``<name>.junctions.json`` list of ``[x, y]``.
    """
    from . import netpbm

    with open(os.path.join(directory, "classes.json")) as fh:
        class_map = {str(k): v for k, v in json.load(fh).items()}
    items = []
    for fname in sorted(os.listdir(directory)):
        name, ext = os.path.splitext(fname)
        if ext not in (".ppm", ".pgm") or "." in name:
            continue
        base = os.path.join(directory, name)
        junctions = None
        if os.path.exists(base + ".junctions.json"):
            with open(base + ".junctions.json") as fh:
                junctions = [tuple(int(v) for v in p) for p in json.load(fh)]
        items.append(AnnotatedImage(name, netpbm.read_gray(base + ext), netpbm.read_mask(base + ".mask.pgm"),
                                    netpbm.read(base + ".av.pgm")[0], class_map, junctions))
    if not items:
        raise FileNotFoundError(f"no annotated images in {directory}")
    return items


def run_annotated(item: AnnotatedImage, cfg: RunConfig, bank: kn.KernelBank | None = None,
                  kernel_seconds: float = 0.0) -> list[tuple[CaseOutcome, PatchRun]]:
    """Group one patch per junction of an annotated image and score each.

    Ground-truth units are the connected components of each vessel class.
    Mask pixels without a class label are left out of the patch, since
    they cannot be scored.
    """
    img = np.asarray(item.image, dtype=np.float64)
    if img.ndim == 3:
        norm = ls.preprocess(img[..., 0], img[..., 1])
    else:
        norm = ls.preprocess(img)
    units, _ = units_from_class_map(item.classes, item.class_map)
    junctions = item.junctions if item.junctions is not None else ls.fallback_junctions(item.mask)
    if bank is None:
        bank, kernel_seconds, _ = bank_for(cfg, cfg.steps or steps_for(2 * cfg.s_o + 1))
    out = []
    for j, center in enumerate(junctions):
        lifted, t_lift = lift_image(img, item.mask, cfg, center, normalized=norm)
        keep = np.flatnonzero(units[lifted.y, lifted.x] > 0)
        lifted = lifted.subset(keep, center=lifted.center, s_o=lifted.s_o)
        if len(lifted) < 2:
            continue
        t0 = time.perf_counter()
        disc = discretize(lifted, cfg)
        t_disc = time.perf_counter() - t0
        run = group_patch(lifted, bank, cfg)
        run.timings["lift"] = t_lift
        gt = units[lifted.y, lifted.x].tolist()
        detail = match_details(run.result.labels, gt)
        out.append((CaseOutcome(
            case_id=f"{item.name}-{j}", category="retina", correct=detail.correct,
            Q_clust=run.result.Q_clust,
            timings={"disc": t_disc, "kernel": kernel_seconds, "affinity": run.timings["affinity"],
                     "clust": run.timings["clust"]},
            weights=stage_weights(*patch_dims(lifted), cfg.n_theta, disc.kappas.size, len(lifted)),
            size=patch_dims(lifted),
            params={"sigma_int": cfg.sigma_int, "sigma_kappa_diff": cfg.sigma_kappa_diff}), run))
    return out
