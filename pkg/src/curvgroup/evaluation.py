"""Scoring of groupings against ground truth and report tables."""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

from .cluster import NOISE

__all__ = [
    "JACCARD_MIN",
    "MatchDetail",
    "CaseOutcome",
    "match_partition",
    "match_details",
    "cdr",
    "stage_weights",
    "timing_report",
    "category_table",
    "format_table1",
    "format_table2",
    "report_json",
    "units_from_class_map",
]

JACCARD_MIN = 0.8
STAGES = ("disc", "kernel", "affinity", "clust")


@dataclass
class MatchDetail:
    correct: bool
    pairs: list[tuple[int, int, float]]   # (gt unit, predicted group, jaccard)
    unmatched: list[int]


def _normalize_gt(gt, n: int) -> list[frozenset]:
    out = []
    for item in gt:
        if isinstance(item, (list, tuple, set, frozenset, np.ndarray)):
            out.append(frozenset(int(v) for v in item))
        else:
            out.append(frozenset([int(item)]))
    if len(out) != n:
        raise ValueError(f"ground truth covers {len(out)} points, prediction {n}")
    return out


def match_details(pred_labels, gt_labels, threshold: float = JACCARD_MIN) -> MatchDetail:
    """Greedy one-to-one matching of ground-truth units to predicted groups.

    ``gt_labels`` holds one label or a collection of labels per point
    (several at crossings). Points the prediction calls noise are left out.
    For unit ``g`` and group ``u`` the overlap is
    ``|P_g & S_u| / |core(P_g) | S_u|`` where ``core`` drops points that also
    belong to another unit, so a crossing pixel never counts against a
    unit when it is given to another.
    """
    pred = np.asarray(pred_labels, dtype=np.int64).reshape(-1)
    gt = _normalize_gt(gt_labels, pred.size)
    keep = pred != NOISE
    units = sorted({g for labs in gt for g in labs})
    groups = sorted(set(pred[keep].tolist()))
    scores = []
    for g in units:
        in_g = np.array([g in labs for labs in gt]) & keep
        core = in_g & np.array([len(labs) == 1 for labs in gt])
        for u in groups:
            s_u = pred == u
            inter = np.count_nonzero(in_g & s_u)
            if inter == 0:
                continue
            union = np.count_nonzero(core | s_u)
            scores.append((inter / union, g, u))
    scores.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_g, used_u, pairs = set(), set(), []
    for j, g, u in scores:
        if g in used_g or u in used_u:
            continue
        used_g.add(g)
        used_u.add(u)
        pairs.append((g, u, j))
    unmatched = [g for g in units if g not in used_g]
    ok = not unmatched and all(j >= threshold for _, _, j in pairs) and bool(units)
    return MatchDetail(ok, sorted(pairs), unmatched)


def match_partition(pred_labels, gt_labels, threshold: float = JACCARD_MIN) -> bool:
    return match_details(pred_labels, gt_labels, threshold).correct


# ---------------------------------------------------------------------------
# outcomes and reports
# ---------------------------------------------------------------------------

@dataclass
class CaseOutcome:
    case_id: str
    category: str
    correct: bool
    Q_clust: float
    timings: dict[str, float] = field(default_factory=dict)   # disc, kernel, affinity, clust
    weights: dict[str, float] = field(default_factory=dict)
    size: tuple[int, int] = (51, 51)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(v < 0 for v in self.timings.values()):
            raise ValueError("timings must be >= 0")
        if any(v <= 0 for v in self.weights.values()):
            raise ValueError("weights must be > 0")


def stage_weights(n_x: int, n_y: int, n_theta: int, n_kappa: int, n_points: int) -> dict[str, float]:
    w_disc = float(n_x * n_y * n_theta)
    return {"disc": w_disc, "kernel": w_disc * n_kappa,
            "affinity": float(n_points) ** 2, "clust": float(n_points) ** 2}


def cdr(outcomes: Sequence[CaseOutcome], by_category: bool = False):
    """Fraction of correct cases, overall or as an ordered per-category dict."""
    if not outcomes:
        raise ValueError("no outcomes")
    if not by_category:
        return sum(o.correct for o in outcomes) / len(outcomes)
    groups: dict[str, list[CaseOutcome]] = OrderedDict()
    for o in sorted(outcomes, key=lambda o: o.category):
        groups.setdefault(o.category, []).append(o)
    return OrderedDict((k, sum(o.correct for o in v) / len(v)) for k, v in groups.items())


def timing_report(outcomes: Sequence[CaseOutcome], n_c: int = 20) -> dict:
    """Plain and weighted mean time per stage.

    Clustering time is divided by ``n_c`` before averaging.
    """
    if not outcomes:
        raise ValueError("no outcomes")
    rows = {}
    for st in STAGES:
        t = np.array([o.timings.get(st, 0.0) for o in outcomes], dtype=np.float64)
        if st == "clust":
            t = t / n_c
        w = np.array([o.weights.get(st, 1.0) for o in outcomes], dtype=np.float64)
        rows[st] = {"mean": float(t.mean()), "weighted_mean": float((w * t).sum() / w.sum())}
    return rows


def category_table(outcomes: Sequence[CaseOutcome]) -> list[dict]:
    rows = []
    per = cdr(outcomes, by_category=True)
    for cat, value in per.items():
        sub = [o for o in outcomes if o.category == cat]
        p = sub[0].params
        rows.append({"category": cat, "cases": len(sub), "size": list(sub[0].size),
                     "sigma_int": p.get("sigma_int"), "sigma_kappa_diff": p.get("sigma_kappa_diff"),
                     "CDR": value, "Q_clust": float(np.mean([o.Q_clust for o in sub]))})
    rows.append({"category": "All", "cases": len(outcomes), "size": None,
                 "sigma_int": _mean_param(outcomes, "sigma_int"),
                 "sigma_kappa_diff": _mean_param(outcomes, "sigma_kappa_diff"),
                 "CDR": cdr(outcomes), "Q_clust": float(np.mean([o.Q_clust for o in outcomes]))})
    return rows


def _mean_param(outcomes, key):
    vals = [o.params[key] for o in outcomes if o.params.get(key) is not None]
    return float(np.mean(vals)) if vals else None


def _fmt(v, spec=".4g"):
    if v is None:
        return "-"
    if isinstance(v, (list, tuple)):
        return "x".join(str(int(a)) for a in v)
    return format(v, spec) if isinstance(v, float) else str(v)


def format_table1(outcomes: Sequence[CaseOutcome]) -> str:
    head = ["Category", "Cases", "Size", "sigma_int", "sigma_kappa", "CDR%", "Q_clust"]
    body = [[r["category"], str(r["cases"]), _fmt(r["size"]), _fmt(r["sigma_int"]),
             _fmt(r["sigma_kappa_diff"]), f"{r['CDR']:.4f}", f"{r['Q_clust']:.4f}"]
            for r in category_table(outcomes)]
    return _align([head] + body)


def format_table2(outcomes: Sequence[CaseOutcome], n_c: int = 20) -> str:
    rep = timing_report(outcomes, n_c)
    head = ["", "t_disc", "t_kernel", "t_affinity", "t_clust"]
    body = [["mean"] + [f"{rep[s]['mean']:.4f}" for s in STAGES],
            ["weighted mean"] + [f"{rep[s]['weighted_mean']:.4f}" for s in STAGES]]
    return _align([head] + body)


def _align(rows: list[list[str]]) -> str:
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def report_json(outcomes: Sequence[CaseOutcome], n_c: int = 20) -> str:
    doc = {"table1": category_table(outcomes), "table2": timing_report(outcomes, n_c),
           "cases": [asdict(o) for o in outcomes]}
    return json.dumps(doc, indent=1, default=float)


# ---------------------------------------------------------------------------
# ground-truth ingestion
# ---------------------------------------------------------------------------

def units_from_class_map(label_map: np.ndarray, class_map: dict) -> tuple[np.ndarray, dict]:
    """Split a class label image into connected vessel units.

    ``class_map`` maps pixel values to class names (e.g. ``{"1": "artery",
    "2": "vein"}``); value 0 is background. Each 8-connected component of a
    class becomes its own unit. Returns ``(unit_map, unit_classes)``.
    """
    img = np.asarray(label_map)
    units = np.zeros(img.shape, dtype=np.int64)
    classes = {}
    nxt = 1
    for value in sorted(int(k) for k in class_map):
        if value == 0:
            continue
        comp, count = ndimage.label(img == value, structure=np.ones((3, 3)))
        for c in range(1, count + 1):
            units[comp == c] = nxt
            classes[nxt] = class_map[str(value)] if str(value) in class_map else class_map[value]
            nxt += 1
    return units, classes
