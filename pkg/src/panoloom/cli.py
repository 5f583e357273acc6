"""Command-line entry point.

Every run writes ``run.json`` into ``--out`` with the resolved configuration.
Exit codes: 0 ok, 2 usage, 3 validation, 4 routing, 5 numeric.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .curation import SCALE_BAND, curate, emit_manifest, read_poses, write_rejections
from .erp import CROP_COUNT, CROP_FOV_DEG, CROP_SIZE, ErpFrame, five_crop_set
from .errors import PanoloomError, UsageError, ValidationError
from .frameio import list_frames, read_erpf, read_frame, read_grid_cells, write_erpf, write_png
from .metrics import (
    LOOP_BUFFER,
    LOOP_EPS,
    PSNR_CAP,
    PSNR_WINDOWS,
    embedding_provider,
    frechet_distance,
    loop_consistency,
    psnr_windows,
    read_feature_matrix,
    similarity_curve,
    ssim,
    write_csv_report,
    write_curve_svg,
    write_json_report,
)
from .oracle import load_scene, random_scene, render_erp, to_uint8
from .scheduler import DEFAULT_TEMPORAL_COMPRESSION, plan_segments
from .synthesis import (
    DEFAULT_COVERAGE,
    DEFAULT_COVERAGE_RADIUS,
    DEFAULT_RESOLUTION,
    OccupancyGrid,
    plan_waypoints,
    route_and_resample,
)
from .trajectory import (
    DEFAULT_UNIFORM_TOL,
    TRAJECTORY_KINDS,
    decompose,
    read_flowscale,
    read_manifest,
    recompose,
    standard_trajectory,
    validate_uniform,
    write_flowscale,
    write_manifest,
)

log = logging.getLogger("panoloom")

CACHE_ENV = "PANOLOOM_CACHE"
PROVIDERS = ("raw_pixel", "dct_lowfreq", "external_file")


def sample_indices(n: int, k: int) -> list[int]:
    """``k`` indices spread evenly over ``[0, n-1]``, both ends included."""
    if k < 1 or n < k:
        raise ValidationError(f"cannot sample {k} frames from {n}")
    if k == 1:
        return [0]
    return [int(np.floor(x + 0.5)) for x in np.linspace(0, n - 1, k)]


# --- helpers --------------------------------------------------------------------


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run(out: Path, args, extra: dict | None = None) -> None:
    config = {k: v for k, v in vars(args).items() if k != "func"}
    config = json.loads(json.dumps(config, default=str))
    record = {"version": __version__, "config": config}
    if extra:
        record.update(extra)
    (out / "run.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_scene(args):
    if args.scene is not None:
        return load_scene(args.scene)
    return random_scene(args.scene_seed if args.scene_seed is not None else args.seed)


def _cache_key(scene, position, width, height, supersample) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(scene.to_dict(), sort_keys=True).encode())
    h.update(np.asarray(position, dtype="<f8").tobytes())
    h.update(f"{width}x{height}x{supersample}".encode())
    return h.hexdigest()


def _render_cached(scene, position, width, height, supersample) -> ErpFrame:
    cache = os.environ.get(CACHE_ENV)
    if not cache:
        return render_erp(scene, position, width, height, supersample=supersample)
    target = Path(cache) / f"{_cache_key(scene, position, width, height, supersample)}.erpf"
    if target.exists():
        return read_erpf(target)
    frame = render_erp(scene, position, width, height, supersample=supersample)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = target.with_suffix(f".tmp{os.getpid()}")
    write_erpf(tmp, frame)
    os.replace(tmp, target)
    return frame


def _read_sequence(source: str) -> list[np.ndarray]:
    paths = list_frames(source)
    if not paths:
        raise ValidationError(f"{source}: no frames found")
    return [read_frame(p) for p in paths]


def _features(source: str, provider: str):
    if provider == "external_file" or Path(source).suffix == ".fseq":
        return embedding_provider("external_file", path=source)
    return embedding_provider(provider, frames=_read_sequence(source))


def _parse_windows(items) -> list[tuple[int, int]]:
    if not items:
        return list(PSNR_WINDOWS)
    out = []
    for item in items:
        try:
            lo, hi = (int(x) for x in item.split(":"))
        except ValueError:
            raise UsageError(f"window {item!r} must look like LO:HI") from None
        out.append((lo, hi))
    return out


# --- subcommands ---------------------------------------------------------------


def cmd_render(args) -> int:
    if args.height < 1 or args.width != 2 * args.height:
        raise UsageError(f"ERP dimensions must satisfy width == 2*height, got {args.width}x{args.height}")
    scene = _load_scene(args)
    path = read_manifest(args.manifest)
    out = _out_dir(args)

    def one(k):
        frame = _render_cached(scene, path.positions[k], args.width, args.height, args.supersample)
        name = f"frame_{path.frame_offset + k:05d}"
        if args.format == "erpf":
            write_erpf(out / f"{name}.erpf", frame)
        else:
            write_png(out / f"{name}.png", to_uint8(frame))

    _map(one, range(len(path)), args.threads)
    _write_run(out, args, {"frames": len(path)})
    return 0


def cmd_traj(args) -> int:
    out = _out_dir(args)
    extra = {}
    if args.action == "make":
        path = standard_trajectory(args.kind, args.frames, args.step)
        write_manifest(out / "trajectory.jsonl", path)
    elif args.action == "decompose":
        fs = decompose(read_manifest(args.manifest), args.reference_step, args.tol)
        write_flowscale(out / "flowscale.json", fs)
        extra["scale"] = fs.scale
    elif args.action == "recompose":
        path = recompose(read_flowscale(args.flowscale), args.origin)
        write_manifest(out / "trajectory.jsonl", path)
    elif args.action == "validate":
        report = validate_uniform(read_manifest(args.manifest), args.tol)
        write_json_report(out / "uniformity.json", report.to_dict())
        _write_run(out, args, report.to_dict())
        if not report.passed:
            raise ValidationError(f"max step deviation {report.max_deviation:.4g} exceeds tolerance {args.tol}")
        return 0
    elif args.action == "synth":
        cells = read_grid_cells(args.grid)
        grid = OccupancyGrid(cells, args.resolution, tuple(args.origin))
        start = tuple(args.start) if args.start is not None else None
        plan = plan_waypoints(grid, args.coverage, args.radius, args.seed, start)
        path = route_and_resample(grid, plan, args.step)
        write_manifest(out / "trajectory.jsonl", path)
        report = plan.to_dict()
        report["frames"] = len(path)
        report["uniformity"] = validate_uniform(path, args.tol).to_dict()
        write_json_report(out / "coverage.json", report)
        extra["covered_fraction"] = plan.covered_fraction
    _write_run(out, args, extra)
    return 0


def cmd_schedule(args) -> int:
    out = _out_dir(args)
    plan = plan_segments(args.s, args.s_prime, args.f, args.overlap)
    data = plan.to_dict(args.tc)
    write_json_report(out / "plan.json", data)
    _write_run(out, args, {"n": plan.n, "w": plan.w, "total_length": plan.total_length})
    print(json.dumps({"n": plan.n, "w": plan.w, "total_length": plan.total_length}))
    return 0


def cmd_eval(args) -> int:
    out = _out_dir(args)
    tolerances = {}
    if args.kind == "loop":
        rows, report = [], {}
        for source in args.inputs:
            scores = loop_consistency(_features(source, args.provider), args.p, args.eps)
            report[source] = scores.to_dict()
            rows.append([source, scores.s1, scores.s2, scores.c_loop, scores.degenerate])
        write_json_report(out / "loop.json", report)
        write_csv_report(out / "loop.csv", ["input", "s1", "s2", "c_loop", "degenerate"], rows)
        tolerances = {"p": args.p, "eps": args.eps}
    elif args.kind in ("psnr", "ssim"):
        gen, ref = _read_sequence(args.gen), _read_sequence(args.ref)
        if len(gen) != len(ref):
            raise ValidationError(f"sequence lengths differ: {len(gen)} vs {len(ref)}")
        if args.kind == "psnr":
            windows = _parse_windows(args.window)
            values = psnr_windows(gen, ref, windows, cap=PSNR_CAP)
            rows = [[lo, hi, v] for (lo, hi), v in zip(windows, values)]
            write_json_report(out / "psnr.json", {"windows": [list(w) for w in windows], "psnr": values})
            write_csv_report(out / "psnr.csv", ["lo", "hi", "psnr_db"], rows)
            tolerances = {"cap_db": PSNR_CAP}
        else:
            values = _map(lambda k: ssim(gen[k], ref[k]), range(len(gen)), args.threads)
            write_json_report(out / "ssim.json", {"mean": float(np.mean(values)), "per_frame": values})
            write_csv_report(out / "ssim.csv", ["frame", "ssim"], list(enumerate(values)))
    elif args.kind == "frechet":
        a = _feature_matrix(args.a, args.provider)
        if args.b is None:
            half = len(a) // 2
            a, b = a[:half], a[half:]
        else:
            b = _feature_matrix(args.b, args.provider)
        value = frechet_distance(a, b, args.shrinkage)
        write_json_report(out / "frechet.json", {"frechet": value, "n_a": len(a), "n_b": len(b)})
        write_csv_report(out / "frechet.csv", ["frechet", "n_a", "n_b"], [[value, len(a), len(b)]])
        tolerances = {"shrinkage": args.shrinkage}
    elif args.kind == "curve":
        curves = {source: similarity_curve(_features(source, args.provider)) for source in args.inputs}
        names = {source: Path(source).name or source for source in curves}
        length = max(len(c) for c in curves.values())
        rows = []
        for k in range(length):
            rows.append([k] + [float(c[k]) if k < len(c) else "" for c in curves.values()])
        write_csv_report(out / "curve.csv", ["frame"] + [names[s] for s in curves], rows)
        write_json_report(out / "curve.json", {names[s]: c.tolist() for s, c in curves.items()})
        write_curve_svg(out / "curve.svg", {names[s]: c for s, c in curves.items()})
    _write_run(out, args, {"tolerances": tolerances})
    return 0


def _feature_matrix(source: str, provider: str) -> np.ndarray:
    if Path(source).suffix == ".fseq":
        return read_feature_matrix(source)
    return _features(source, provider).vectors


def cmd_crop(args) -> int:
    frames = list_frames(args.frames)
    indices = sample_indices(len(frames), args.samples)
    out = _out_dir(args)

    def one(idx):
        pixels = read_frame(frames[idx])
        crops = five_crop_set(ErpFrame(pixels), args.size, args.fov)
        folder = out / f"frame_{idx:05d}"
        folder.mkdir(exist_ok=True)
        for v, crop in enumerate(crops):
            write_png(folder / f"view_{v}.png", crop)

    _map(one, indices, args.threads)
    _write_run(out, args, {"indices": indices, "crops": len(indices) * CROP_COUNT})
    return 0


def cmd_curate(args) -> int:
    out = _out_dir(args)
    sources = {Path(p).stem: read_poses(p) for p in args.poses}
    up_hint = tuple(args.up_hint) if args.up_hint is not None else None
    result = curate(
        sources,
        f=args.frames,
        policy=args.policy,
        seed=args.seed,
        stride=args.stride,
        uniform_tol=args.tol,
        band=tuple(args.band),
        reference_step=args.reference_step,
        up_hint=up_hint,
    )
    emit_manifest(result.manifests, out / "manifest.jsonl")
    write_rejections(out / "rejections.csv", result.rejections)
    _write_run(out, args, {"clips": len(result.manifests), "rejected": len(result.rejections), "reference_step": result.reference_step})
    return 0


def _map(fn, items, threads: int):
    items = list(items)
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# --- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="RNG seed (default 0)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads (default 1)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default ./out)")

    parser = argparse.ArgumentParser(prog="panoloom", description="Panoramic trajectory and evaluation toolkit.")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--out", default="out")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", parents=[common], help="render oracle panoramas along a trajectory")
    scene = p.add_mutually_exclusive_group()
    scene.add_argument("--scene", help="scene JSON file")
    scene.add_argument("--scene-seed", type=int, help="use a seeded random scene")
    p.add_argument("--manifest", required=True, help="trajectory JSONL")
    p.add_argument("--width", type=int, default=480)
    p.add_argument("--height", type=int, default=240)
    p.add_argument("--supersample", type=int, default=1)
    p.add_argument("--format", choices=("png", "erpf"), default="png")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("traj", parents=[common], help="trajectory utilities")
    actions = p.add_subparsers(dest="action", required=True)
    a = actions.add_parser("make", parents=[common])
    a.add_argument("--kind", choices=TRAJECTORY_KINDS, required=True)
    a.add_argument("--frames", type=int, default=81)
    a.add_argument("--step", type=float, default=0.05)
    a = actions.add_parser("decompose", parents=[common])
    a.add_argument("--manifest", required=True)
    a.add_argument("--reference-step", type=float, default=1.0)
    a.add_argument("--tol", type=float, default=DEFAULT_UNIFORM_TOL)
    a = actions.add_parser("recompose", parents=[common])
    a.add_argument("--flowscale", required=True)
    a.add_argument("--origin", type=float, nargs=3, default=[0.0, 0.0, 0.0])
    a = actions.add_parser("validate", parents=[common])
    a.add_argument("--manifest", required=True)
    a.add_argument("--tol", type=float, default=DEFAULT_UNIFORM_TOL)
    a = actions.add_parser("synth", parents=[common])
    a.add_argument("--grid", required=True, help="occupancy grid (.pgm or .erpf)")
    a.add_argument("--resolution", type=float, default=DEFAULT_RESOLUTION)
    a.add_argument("--origin", type=float, nargs=3, default=[0.0, 0.0, 0.0])
    a.add_argument("--coverage", type=float, default=DEFAULT_COVERAGE)
    a.add_argument("--radius", type=float, default=DEFAULT_COVERAGE_RADIUS)
    a.add_argument("--step", type=float, default=0.05)
    a.add_argument("--start", type=int, nargs=2, metavar=("ROW", "COL"))
    a.add_argument("--tol", type=float, default=DEFAULT_UNIFORM_TOL)
    p.set_defaults(func=cmd_traj)

    p = sub.add_parser("schedule", parents=[common], help="segment plan and visibility masks")
    p.add_argument("--s", type=float, required=True, help="preview scale")
    p.add_argument("--s-prime", type=float, required=True, help="target scale")
    p.add_argument("--f", type=int, default=81, help="frames per clip")
    p.add_argument("--overlap", type=int, default=1)
    p.add_argument("--tc", type=int, default=DEFAULT_TEMPORAL_COMPRESSION, help="temporal compression")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("eval", parents=[common], help="evaluation metrics")
    kinds = p.add_subparsers(dest="kind", required=True)
    for name in ("loop", "curve"):
        a = kinds.add_parser(name, parents=[common])
        a.add_argument("inputs", nargs="+", help="frame directories or .fseq files")
        a.add_argument("--provider", choices=PROVIDERS, default="raw_pixel")
        if name == "loop":
            a.add_argument("--p", type=int, default=LOOP_BUFFER)
            a.add_argument("--eps", type=float, default=LOOP_EPS)
    for name in ("psnr", "ssim"):
        a = kinds.add_parser(name, parents=[common])
        a.add_argument("--gen", required=True)
        a.add_argument("--ref", required=True)
        if name == "psnr":
            a.add_argument("--window", action="append", help="inclusive frame window LO:HI (repeatable)")
    a = kinds.add_parser("frechet", parents=[common])
    a.add_argument("--a", required=True, help="features (.fseq) or frame directory")
    a.add_argument("--b", help="second set; omitted means split --a into halves")
    a.add_argument("--provider", choices=PROVIDERS, default="raw_pixel")
    a.add_argument("--shrinkage", type=float, default=0.0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("crop", parents=[common], help="five perspective crops per sampled frame")
    p.add_argument("--frames", required=True, help="directory of ERP frames")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--size", type=int, default=CROP_SIZE)
    p.add_argument("--fov", type=float, default=CROP_FOV_DEG)
    p.set_defaults(func=cmd_crop)

    p = sub.add_parser("curate", parents=[common], help="build a clip manifest from pose files")
    p.add_argument("poses", nargs="+", help="pose files, one clip each")
    p.add_argument("--frames", type=int, default=81)
    p.add_argument("--policy", choices=("uniform", "random"), default="uniform")
    p.add_argument("--stride", type=int)
    p.add_argument("--tol", type=float, default=DEFAULT_UNIFORM_TOL)
    p.add_argument("--band", type=float, nargs=2, default=list(SCALE_BAND))
    p.add_argument("--reference-step", type=float)
    p.add_argument("--up-hint", type=float, nargs=3)
    p.set_defaults(func=cmd_curate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except PanoloomError as exc:
        print(f"panoloom: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"panoloom: error: {exc}", file=sys.stderr)
        return UsageError.exit_code


if __name__ == "__main__":
    sys.exit(main())
