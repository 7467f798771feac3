"""Command-line interface.

Subcommands: phantom, lift, kernel, cluster, eval, render, pipeline.
Numeric parameters come from ``--config FILE`` (JSON) overridden by flags.
Every run writes its resolved configuration next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time


from . import affinity as aff
from . import evaluation as ev
from . import kernel as kn
from . import liftspace as ls
from . import netpbm, render
from ._io import atomic_write
from . import phantom as ph
from .pipeline import (ConfigError, RunConfig, bank_for, discretize, group_patch, lift_image,
                       patch_dims, steps_for)

__all__ = ["main", "run", "build_parser"]


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _point(text: str) -> tuple[int, int]:
    try:
        x, y = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y, got {text!r}")
    return x, y


_PARAM_FLAGS = {
    # flag: (config field, type)
    "--n-theta": ("n_theta", int),
    "--scales": ("scales", _floats),
    "--kappa-min": ("kappa_min", float),
    "--kappa-max": ("kappa_max", float),
    "--kappa-step": ("kappa_step", float),
    "--sigma-kappa-diff": ("sigma_kappa_diff", float),
    "--sigma-kappa-exp": ("sigma_kappa_exp", float),
    "--sigma-int": ("sigma_int", float),
    "--s-o": ("s_o", int),
    "--paths": ("paths", int),
    "--steps": ("steps", int),
    "--step-length": ("ds", float),
    "--seed": ("seed", int),
    "--max-k": ("n_c", int),
    "--min-cluster-size": ("min_cluster_size", int),
    "--margin": ("margin", int),
    "--cache-dir": ("cache_dir", str),
}


def _add_params(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("parameters")
    g.add_argument("--config", help="JSON file with parameters (flags override it)")
    for flag, (name, typ) in _PARAM_FLAGS.items():
        g.add_argument(flag, dest=name, type=typ, default=None)
    g.add_argument("--workers", type=int, default=None, help="threads for path simulation")


def _resolve(args) -> RunConfig:
    doc = {}
    if args.config:
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"--config: cannot read {args.config}: {exc}")
        doc.pop("command", None)
        doc.pop("paths_io", None)
    for name, _ in _PARAM_FLAGS.values():
        v = getattr(args, name, None)
        if v is not None:
            doc[name] = v
    return RunConfig.from_json(doc)


def _write_json(path: str, doc) -> None:
    atomic_write(path, (json.dumps(doc, indent=1, sort_keys=True) + "\n").encode())


def _stem(path: str) -> str:
    for ext in (".result.json", ".json"):
        if path.endswith(ext):
            return path[: -len(ext)]
    return os.path.splitext(path)[0]


def _save_config(out_path: str, cfg: RunConfig, command: str, io: dict) -> None:
    stem = os.path.join(out_path, command) if os.path.isdir(out_path) else _stem(out_path)
    _write_json(stem + ".config.json", cfg.to_json() | {"command": command, "paths_io": io})


def _need(path: str | None, flag: str) -> str:
    if not path:
        raise UsageError(f"{flag} is required")
    if not os.path.exists(path):
        raise UsageError(f"{flag}: no such file {path}")
    return path


def _read_labels(path: str) -> list:
    with open(path) as fh:
        doc = json.load(fh)
    return doc["labels"] if isinstance(doc, dict) else doc


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_phantom(args, cfg: RunConfig) -> int:
    cats = list(ph.CATEGORIES) if args.category == "all" else [args.category]
    written = {}
    for cat in cats:
        if cat == "three_circles":
            spec = ph.three_circles(seed=args.phantom_seed)
        elif cat in ph.CATEGORIES:
            spec = ph.default_spec(cat, args.phantom_seed)
        else:
            raise UsageError(f"--category: unknown category {cat!r}")
        case = ph.generate(spec)
        written[cat] = ph.save_case(case, args.out_dir, f"{cat}_{args.phantom_seed}", cfg.n_theta)
    _save_config(args.out_dir, cfg, "phantom", {"out_dir": args.out_dir, "written": written})
    return 0


def cmd_lift(args, cfg: RunConfig) -> int:
    img = netpbm.read_gray(_need(args.image, "--image"))
    mask = netpbm.read_mask(_need(args.mask, "--mask"))
    if mask.shape != img.shape[:2]:
        raise UsageError("--mask: size differs from --image")
    lifted, t = lift_image(img, mask, cfg, args.center)
    ls.write_l5d(args.out, lifted)
    stem = os.path.splitext(args.out)[0]
    if args.render:
        netpbm.write(stem + ".orientation.ppm", render.orientation_rgb(lifted, img))
        netpbm.write(stem + ".curvature.ppm", render.curvature_rgb(lifted, img))
    _write_json(stem + ".timings.json", {"timings": {"lift": t}})
    _save_config(args.out, cfg, "lift", {"image": args.image, "mask": args.mask,
                                         "center": args.center, "out": args.out})
    return 0


def _steps(cfg: RunConfig, size: int | None) -> int:
    return cfg.steps or steps_for(size or 2 * cfg.s_o + 1)


def cmd_kernel(args, cfg: RunConfig) -> int:
    if not args.out:
        raise UsageError("--out is required")
    steps = _steps(cfg, args.patch_size)
    params = kn.PathParams(cfg.ds, steps, cfg.paths, cfg.sigma_kappa_diff, cfg.seed)
    dims = kn.default_dims(steps, cfg.ds, cfg.n_theta)
    t0 = time.perf_counter()
    bank = kn.build_bank(cfg.kappa_min, cfg.kappa_max, cfg.kappa_step, dims, params, workers=args.workers)
    t = time.perf_counter() - t0
    atomic_write(args.out, kn.k5d_bytes(bank))
    stem = os.path.splitext(args.out)[0]
    _write_json(stem + ".timings.json", {"timings": {"kernel": t}})
    _save_config(args.out, cfg.updated(steps=steps), "kernel",
                 {"out": args.out, "slices": bank.n_kappa, "dims": list(dims)})
    return 0


def _prepare(args, cfg: RunConfig, lifted: ls.LiftedFeatureMap):
    """Discretize the patch and get its bank; returns ``(bank, times)``."""
    if len(lifted) == 0:
        raise UsageError("--patch: patch has no points")
    t0 = time.perf_counter()
    disc = discretize(lifted, cfg)
    times = {"disc": time.perf_counter() - t0}
    if args.bank:
        bank = kn.read_k5d(_need(args.bank, "--bank"))
        times["kernel"] = 0.0
        if bank.dims[2] != lifted.n_theta:
            raise UsageError(f"--bank: bank has {bank.dims[2]} orientations, patch has {lifted.n_theta}")
    else:
        bank, times["kernel"], _ = bank_for(cfg, disc.steps, workers=args.workers)
    return bank, times


def _cluster_outputs(out: str, lifted, bank, run, cfg, command, io, times, image=None,
                     dump=None) -> None:
    doc = run.result.to_json()
    stem = _stem(out)
    # wall-clock times live in the .timings.json sidecar
    _write_json(out, doc)
    nx, ny = patch_dims(lifted)
    _write_json(stem + ".timings.json",
                {"timings": times | run.timings,
                 "weights": ev.stage_weights(nx, ny, lifted.n_theta, bank.n_kappa, len(lifted))})
    netpbm.write(stem + ".clusters.ppm", render.cluster_rgb(lifted, run.result.labels, image))
    if dump:
        aff.dump_affinity(dump, run.affinity, lifted)
    _save_config(out, cfg, command, io)


def cmd_cluster(args, cfg: RunConfig) -> int:
    lifted = ls.read_l5d(_need(args.patch, "--patch"))
    bank, times = _prepare(args, cfg, lifted)
    run = group_patch(lifted, bank, cfg)
    _cluster_outputs(args.out, lifted, bank, run, cfg, "cluster",
                     {"patch": args.patch, "bank": args.bank, "out": args.out},
                     times, dump=args.dump_affinity)
    return 0


def cmd_pipeline(args, cfg: RunConfig) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    image = None
    times = {}
    if args.patch:
        lifted = ls.read_l5d(_need(args.patch, "--patch"))
        stem = os.path.splitext(os.path.basename(args.patch))[0]
    else:
        image = netpbm.read_gray(_need(args.image, "--image"))
        mask = netpbm.read_mask(_need(args.mask, "--mask"))
        if mask.shape != image.shape[:2]:
            raise UsageError("--mask: size differs from --image")
        lifted, times["lift"] = lift_image(image, mask, cfg, args.center)
        stem = os.path.splitext(os.path.basename(args.image))[0]
        ls.write_l5d(os.path.join(args.out_dir, stem + ".l5d"), lifted)
    bank, more = _prepare(args, cfg, lifted)
    run = group_patch(lifted, bank, cfg)
    out = os.path.join(args.out_dir, stem + ".result.json")
    _cluster_outputs(out, lifted, bank, run, cfg, "pipeline",
                     {"patch": args.patch, "image": args.image, "mask": args.mask,
                      "center": args.center, "bank": args.bank, "out_dir": args.out_dir},
                     times | more, image=image)
    if args.labels:
        detail = ev.match_details(run.result.labels, _read_labels(args.labels))
        _write_json(os.path.join(args.out_dir, stem + ".match.json"),
                    {"correct": detail.correct, "pairs": detail.pairs, "unmatched": detail.unmatched})
    return 0


def cmd_render(args, cfg: RunConfig) -> int:
    lifted = ls.read_l5d(_need(args.patch, "--patch"))
    image = netpbm.read_gray(args.image) if args.image else None
    if args.mode == "clusters":
        with open(_need(args.result, "--result")) as fh:
            labels = json.load(fh)["labels"]
        if len(labels) != len(lifted):
            raise UsageError("--result: label count differs from patch size")
        rgb = render.cluster_rgb(lifted, labels, image)
    elif args.mode == "orientation":
        rgb = render.orientation_rgb(lifted, image)
    else:
        rgb = render.curvature_rgb(lifted, image)
    atomic_write(args.out, netpbm.encode(rgb))
    _save_config(args.out, cfg, "render", {"patch": args.patch, "result": args.result,
                                           "mode": args.mode, "out": args.out})
    return 0


def cmd_eval(args, cfg: RunConfig) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    if args.suite:
        from .pipeline import run_suite

        cats = list(ph.CATEGORIES) if args.categories is None else args.categories.split(",")
        outcomes = run_suite(cfg, cats, args.phantom_seed, os.path.join(args.out_dir, "cases"),
                             jobs=args.jobs)
    elif args.dataset:
        from .pipeline import load_annotated, run_annotated

        outcomes = []
        for item in load_annotated(_need(args.dataset, "--dataset")):
            for outcome, run in run_annotated(item, cfg):
                outcomes.append(outcome)
                _write_json(os.path.join(args.out_dir, "cases", outcome.case_id + ".result.json"),
                            run.result.to_json())
        if not outcomes:
            raise UsageError("--dataset: no patch could be grouped")
    else:
        results, labels = args.result or [], args.labels or []
        if not results or len(results) != len(labels):
            raise UsageError("--result and --labels must be given the same number of times")
        outcomes = []
        for r, l in zip(results, labels):
            with open(_need(r, "--result")) as fh:
                res = json.load(fh)
            detail = ev.match_details(res["labels"], _read_labels(_need(l, "--labels")))
            name = os.path.basename(r).split(".")[0]
            side = _stem(r) + ".timings.json"
            if os.path.exists(side):
                with open(side) as fh:
                    doc = json.load(fh)
                timings, weights = doc["timings"], doc["weights"]
            else:
                # no sidecar: weights for a default-size patch
                side = 2 * cfg.s_o + 1
                nk = kn.kappa_lattice(cfg.kappa_min, cfg.kappa_max, cfg.kappa_step).size
                timings, weights = {}, ev.stage_weights(side, side, cfg.n_theta, nk, len(res["labels"]))
            outcomes.append(ev.CaseOutcome(name, name.split("_")[0].split("-")[0], detail.correct,
                                           float(res["Q_clust"]), timings, weights,
                                           params={"sigma_int": cfg.sigma_int,
                                                   "sigma_kappa_diff": cfg.sigma_kappa_diff}))
    t1 = ev.format_table1(outcomes)
    t2 = ev.format_table2(outcomes, cfg.n_c)
    atomic_write(os.path.join(args.out_dir, "table1.txt"), t1.encode())
    atomic_write(os.path.join(args.out_dir, "table2.txt"), t2.encode())
    atomic_write(os.path.join(args.out_dir, "report.json"), ev.report_json(outcomes, cfg.n_c).encode())
    _save_config(args.out_dir, cfg, "eval", {"out_dir": args.out_dir, "suite": args.suite})
    sys.stdout.write(t1 + "\n" + t2)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="curvgroup", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate synthetic stimuli with ground truth")
    p.add_argument("--category", default="all", help="A..E, A1..E1, three_circles or all")
    p.add_argument("--phantom-seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    _add_params(p)

    p = sub.add_parser("lift", help="lift an image and mask into the 5-D space")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--center", type=_point, help="patch centre X,Y (whole image if omitted)")
    p.add_argument("--out", required=True, help="output .l5d")
    p.add_argument("--render", action="store_true", help="also write orientation/curvature maps")
    _add_params(p)

    p = sub.add_parser("kernel", help="estimate a kernel bank")
    p.add_argument("--out", required=True, help="output .k5d")
    p.add_argument("--patch-size", type=int, help="patch side used to derive --steps")
    _add_params(p)

    p = sub.add_parser("cluster", help="affinity and self-tuning clustering of a patch")
    p.add_argument("--patch", required=True)
    p.add_argument("--bank", help="bank .k5d (default: build or reuse a cached bank)")
    p.add_argument("--out", required=True, help="result JSON")
    p.add_argument("--dump-affinity", help="write the affinity matrix here")
    _add_params(p)

    p = sub.add_parser("eval", help="score results and write report tables")
    p.add_argument("--result", action="append")
    p.add_argument("--labels", action="append")
    p.add_argument("--suite", action="store_true", help="run the phantom suite")
    p.add_argument("--categories", help="comma-separated subset for --suite")
    p.add_argument("--jobs", type=int, default=1, help="cases run concurrently in --suite")
    p.add_argument("--dataset", help="directory of annotated images (see README)")
    p.add_argument("--phantom-seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    _add_params(p)

    p = sub.add_parser("render", help="colour-coded maps and cluster overlays")
    p.add_argument("--patch", required=True)
    p.add_argument("--result")
    p.add_argument("--mode", choices=("clusters", "orientation", "curvature"), default="clusters")
    p.add_argument("--image")
    p.add_argument("--out", required=True)
    _add_params(p)

    p = sub.add_parser("pipeline", help="lift, kernel, affinity, cluster and render one patch")
    p.add_argument("--patch", help="lifted patch .l5d")
    p.add_argument("--image")
    p.add_argument("--mask")
    p.add_argument("--center", type=_point)
    p.add_argument("--bank")
    p.add_argument("--labels", help="ground-truth labels JSON to score against")
    p.add_argument("--out-dir", default=".")
    _add_params(p)
    return parser


COMMANDS = {"phantom": cmd_phantom, "lift": cmd_lift, "kernel": cmd_kernel, "cluster": cmd_cluster,
            "eval": cmd_eval, "render": cmd_render, "pipeline": cmd_pipeline}


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _resolve(args)
        if args.command == "pipeline" and not args.patch and not (args.image and args.mask):
            raise UsageError("pipeline needs --patch or both --image and --mask")
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError, kn.K5DError, netpbm.NetpbmError,
            FileNotFoundError, ValueError) as exc:
        print(f"curvgroup {args.command}: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
