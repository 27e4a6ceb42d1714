"""Command-line interface.

Subcommands: bdd, density, synth, mc, densify, traj, bench, make-scene,
import-speedplus. Global flags: --seed, --threads, --output-dir,
--log-level; environment fallbacks VISYREVE_SEED and VISYREVE_OUTPUT_DIR
(precedence: flags > environment > defaults).

Exit codes: 0 success, 2 usage, 3 data/schema, 4 numerical/degenerate,
5 I/O. Every run writes a reproducibility header (version, seed, config
hash) into its outputs; no timestamps, so fixed seeds give byte-identical
files across runs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, campaign, density, nnindex
from .dataset import (Dataset, PoseSamplerConfig, import_speedplus,
                      load_manifest, make_synthetic_scene, save_image)
from .errors import (DegenerateVariance, MissingMesh, SchemaError, UsageError,
                     VisyReveError)
from .geometry import Intrinsics, Pose, Quaternion
from .meshrender import load_obj, save_mask
from .posemetrics import (BDD, bdd, cl2, rotation_magnitude, spec_combined)
from .synthesis import homography_transform, save_valid_map, transform_3d

log = logging.getLogger("visyreve")

_CONFIDENCE_NAMES = {"2sigma": campaign.TWO_SIGMA, "3sigma": campaign.THREE_SIGMA}


def _config_hash(args: argparse.Namespace) -> str:
    # hash the semantic configuration only, not where results are written
    skip = {"func", "output_dir", "log_level"}
    payload = {k: str(v) for k, v in sorted(vars(args).items()) if k not in skip}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:12]


def _header(args) -> str:
    return f"visyreve {__version__} seed={args.seed} config={_config_hash(args)}"


def _out_dir(args) -> Path:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_run_manifest(args, out: Path, extra: dict | None = None):
    data = {"version": __version__, "seed": args.seed,
            "config": _config_hash(args), "command": args.command}
    if extra:
        data.update(extra)
    (out / "run.json").write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def _load_pose_file(path) -> Pose:
    p = Path(path)
    try:
        data = json.loads(p.read_text())
        return Pose(Quaternion.from_array(data["q_wxyz"]),
                    np.array(data["t_xyz"], dtype=float))
    except FileNotFoundError:
        raise SchemaError(f"pose file not found: {p}")
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"{p}: bad pose file ({e})")


def _load_dataset(path) -> Dataset:
    manifest_path = Path(path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    return Dataset(load_manifest(manifest_path), manifest_path.parent)


def cmd_bdd(args) -> int:
    if not args.spec_weight > 0:
        raise UsageError("--spec-weight must be > 0")
    if args.dataset:
        if not args.ids or len(args.ids) != 2:
            raise SchemaError("--dataset needs exactly two --ids")
        ds = _load_dataset(args.dataset)
        a = ds.manifest.record(args.ids[0]).pose
        b = ds.manifest.record(args.ids[1]).pose
    else:
        if not (args.pose_a and args.pose_b):
            raise SchemaError("give --pose-a/--pose-b or --dataset with --ids")
        a = _load_pose_file(args.pose_a)
        b = _load_pose_file(args.pose_b)
    values = {
        "bdd": bdd(a, b).value,
        "cl2": cl2(a, b),
        "rotation_magnitude": rotation_magnitude(a, b),
        "spec_combined": spec_combined(a, b, args.spec_weight),
    }
    if args.json:
        print(json.dumps(values, sort_keys=True))
    else:
        for k in ("bdd", "cl2", "rotation_magnitude", "spec_combined"):
            print(f"{k} = {values[k]!r}")
    return 0


def cmd_density(args) -> int:
    ds = _load_dataset(args.dataset)
    baseline = density.sample_baseline(args.baseline_size, args.candidates,
                                       seed=args.seed)
    report = density.lb_bdd([p for _, p in ds.poses()], baseline,
                            threads=args.threads)
    out = _out_dir(args)
    header = _header(args)
    (out / "density.json").write_text(
        json.dumps({"header": header, **report.to_json_dict()},
                   sort_keys=True, indent=1) + "\n")
    (out / "density.csv").write_text(campaign.density_csv(report, header))
    _write_run_manifest(args, out)
    print(f"lb_bdd = {report.lb_bdd!r}")
    print(f"rho = {report.rho!r}")
    return 0


def cmd_synth(args) -> int:
    ds = _load_dataset(args.dataset)
    target = _load_pose_file(args.target_pose)
    mesh = load_obj(args.mesh) if args.mesh else ds.mesh()
    index = nnindex.build(ds.poses(), BDD)
    from .synthesis import select_source
    source_id = select_source(index, target)
    src = ds.view(source_id)
    if args.method == "3dt":
        if mesh is None:
            raise MissingMesh("3dt needs --mesh or a dataset mesh")
        result = transform_3d(src, target, mesh, interpolate=args.interpolate)
    else:
        result = homography_transform(src, target)
    out = _out_dir(args)
    save_image(result.image, out / "synth.png")
    save_mask(result.transformed_mask, out / "mask.png")
    if args.debug:
        save_valid_map(result.valid_map, out / "valid_map.png")
    _write_run_manifest(args, out, {"source_id": source_id,
                                    "timing_total_s": result.timing.total})
    print(f"source = {source_id}")
    print(f"total_s = {result.timing.total:.4f}")
    return 0


def _mc_config(args) -> campaign.McConfig:
    conf = args.confidence
    conf_value = _CONFIDENCE_NAMES.get(conf) or float(conf)
    return campaign.McConfig(
        n_pairs=args.n_pairs, method=args.method, bdd_cap=args.bdd_cap,
        seed=args.seed, confidence=conf_value, spec_weight=args.spec_weight,
        thresholds=campaign.MetricThresholds(
            kps_vbn_req=args.kps_vbn_req, iou_req=args.iou_req,
            ssim_req=args.ssim_req))


def cmd_mc(args) -> int:
    ds = _load_dataset(args.dataset)
    config = _mc_config(args)
    model = campaign.run_mc(ds, config, threads=args.threads)
    out = _out_dir(args)
    header = _header(args)
    (out / "mc.csv").write_text(campaign.mc_rows_csv(model.samples, header))
    (out / "thresholds.csv").write_text(campaign.thresholds_csv(model, header))
    try:
        table = campaign.correlations(model.reports())
        (out / "correlations.csv").write_text(
            campaign.correlations_csv(table, header))
    except (DegenerateVariance, VisyReveError) as e:
        log.warning("correlation table skipped: %s", e)
    if args.timings:
        (out / "timings.csv").write_text(
            campaign.timings_csv(model.samples, header))
    _write_run_manifest(args, out)
    for name in sorted(model.max_bdd):
        print(f"max_bdd[{name}] = {model.max_bdd[name]!r}")
    return 0


def cmd_densify(args) -> int:
    ds = _load_dataset(args.dataset)
    baseline = density.sample_baseline(args.baseline_size, args.candidates,
                                       seed=args.seed)
    before = density.lb_bdd([p for _, p in ds.poses()], baseline)
    manifest = campaign.densify(ds, args.target_lb_bdd, args.method, baseline,
                                synthesis_cap=args.bdd_cap,
                                max_iterations=args.max_iterations)
    after = density.lb_bdd([v.pose for v in manifest.views], baseline)
    print(f"lb_bdd: {before.lb_bdd!r} -> {after.lb_bdd!r}")
    print(f"rho: {before.rho!r} -> {after.rho!r}")
    print(f"views: {len(manifest.views)}")
    return 0


def cmd_traj(args) -> int:
    ds = _load_dataset(args.dataset)
    if args.waypoints:
        try:
            data = json.loads(Path(args.waypoints).read_text())
            wps = [(float(w["t"]),
                    Pose(Quaternion.from_array(w["q_wxyz"]),
                         np.array(w["t_xyz"], dtype=float))) for w in data]
        except FileNotFoundError:
            raise SchemaError(f"waypoint file not found: {args.waypoints}")
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"{args.waypoints}: bad waypoints ({e})")
    else:
        rng = np.random.default_rng(args.seed)
        ranges = [float(np.linalg.norm(p.translation)) for _, p in ds.poses()]
        wps = campaign.random_trajectory(rng, min(ranges), max(ranges)).waypoints
    frames = campaign.synthesize_trajectory(ds, wps, args.n_samples,
                                            args.method)
    out = _out_dir(args)
    lines = ["time_s,source_id,source_bdd,total_s"]
    for i, f in enumerate(frames):
        save_image(f.result.image, out / f"frame-{i:05d}.png")
        lines.append(f"{f.time!r},{f.source_id},{f.source_bdd!r},"
                     f"{f.result.timing.total!r}")
    (out / "frames.csv").write_text("\n".join(lines) + "\n")
    _write_run_manifest(args, out)
    totals = [f.result.timing.total for f in frames]
    print(f"frames = {len(frames)}")
    print(f"mean_s = {float(np.mean(totals)):.4f}")
    return 0


def cmd_bench(args) -> int:
    ds = _load_dataset(args.dataset)
    stats = campaign.bench(ds, args.method, args.n_samples,
                           mask_input=args.mask_input,
                           interpolate=args.interpolate, seed=args.seed)
    out = _out_dir(args)
    (out / "bench.json").write_text(
        json.dumps({"header": _header(args), **stats.to_json_dict()},
                   sort_keys=True, indent=1) + "\n")
    _write_run_manifest(args, out)
    print(f"mean_s = {stats.mean_s!r}")
    print(f"p95_s = {stats.p95_s!r}")
    return 0


def cmd_make_scene(args) -> int:
    gap_center = None
    if args.gap_center:
        gap_center = Quaternion.from_array(
            [float(c) for c in args.gap_center.split(",")])
    sampler = PoseSamplerConfig(seed=args.seed, range_lo=args.range_lo,
                                range_hi=args.range_hi,
                                gap_center=gap_center,
                                gap_radius=args.gap_radius)
    intrinsics = None
    if args.width or args.height or args.focal:
        width = args.width or 256
        height = args.height or 256
        focal = args.focal or 300.0
        intrinsics = Intrinsics(fx=focal, fy=focal, px=(width - 1) / 2.0,
                                py=(height - 1) / 2.0, width=width,
                                height=height)
    ds, _ = make_synthetic_scene(args.kind, args.texture_seed, args.n_views,
                                 sampler, args.out, intrinsics=intrinsics)
    print(f"views = {len(ds)}")
    print(f"manifest = {ds.manifest_path()}")
    return 0


def cmd_import_speedplus(args) -> int:
    manifest = import_speedplus(args.labels, args.camera, args.images,
                                args.out)
    print(f"views = {len(manifest.views)}")
    print(f"manifest = {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="visyreve",
        description="Novel view synthesis and pose-coverage analysis for "
                    "pose-labeled image datasets.")
    parser.add_argument("--version", action="version",
                        version=f"visyreve {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int,
                        default=int(os.environ.get("VISYREVE_SEED", "0")),
                        help="RNG seed (env VISYREVE_SEED)")
    common.add_argument("--threads", type=int, default=1,
                        help="worker parallelism for mc/density (default 1)")
    common.add_argument("--output-dir",
                        default=os.environ.get("VISYREVE_OUTPUT_DIR", "."),
                        help="output directory (env VISYREVE_OUTPUT_DIR)")
    common.add_argument("--log-level", default="warning",
                        choices=["debug", "info", "warning", "error"])

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bdd", parents=[common],
                       help="pairwise pose distances")
    p.add_argument("--pose-a")
    p.add_argument("--pose-b")
    p.add_argument("--dataset")
    p.add_argument("--ids", nargs=2, metavar=("ID_A", "ID_B"))
    p.add_argument("--spec-weight", type=float, required=True,
                   help="position weight (1/m) for the combined metric; "
                        "no default is applied")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_bdd)

    p = sub.add_parser("density", parents=[common],
                       help="LB-BDD / density analysis of a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--baseline-size", type=int,
                   default=density.DEFAULT_BASELINE_SIZE)
    p.add_argument("--candidates", type=int, default=density.DEFAULT_CANDIDATES)
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("synth", parents=[common],
                       help="synthesize a novel view")
    p.add_argument("--dataset", required=True)
    p.add_argument("--target-pose", required=True,
                   help="JSON file with q_wxyz and t_xyz")
    p.add_argument("--method", choices=campaign.METHODS, default="3dt")
    p.add_argument("--mesh", help="OBJ path (default: dataset mesh)")
    p.add_argument("--no-interpolate", dest="interpolate", action="store_false")
    p.add_argument("--debug", action="store_true",
                   help="also write the valid-map PNG")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("mc", parents=[common],
                       help="Monte-Carlo sample replacement")
    p.add_argument("--dataset", required=True)
    p.add_argument("--n-pairs", type=int, required=True)
    p.add_argument("--method", choices=campaign.METHODS, default="3dt")
    p.add_argument("--bdd-cap", type=float, default=0.5)
    p.add_argument("--confidence", default="3sigma",
                   help="2sigma, 3sigma or a fraction in (0,1)")
    p.add_argument("--kps-vbn-req", type=float, default=0.01)
    p.add_argument("--iou-req", type=float, default=0.9)
    p.add_argument("--ssim-req", type=float, default=0.9)
    p.add_argument("--spec-weight", type=float, default=1.0,
                   help="position weight (1/m) for the combined-metric column")
    p.add_argument("--timings", action="store_true",
                   help="also write wall-clock timings (not reproducible "
                        "byte-for-byte)")
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("densify", parents=[common],
                       help="append synthesized views until a target LB-BDD")
    p.add_argument("--dataset", required=True)
    p.add_argument("--target-lb-bdd", type=float, required=True)
    p.add_argument("--method", choices=campaign.METHODS, default="3dt")
    p.add_argument("--baseline-size", type=int,
                   default=density.DEFAULT_BASELINE_SIZE)
    p.add_argument("--candidates", type=int, default=density.DEFAULT_CANDIDATES)
    p.add_argument("--bdd-cap", type=float, default=0.5)
    p.add_argument("--max-iterations", type=int, default=100)
    p.set_defaults(func=cmd_densify)

    p = sub.add_parser("traj", parents=[common],
                       help="synthesize a trajectory")
    p.add_argument("--dataset", required=True)
    p.add_argument("--n-samples", type=int, required=True)
    p.add_argument("--method", choices=campaign.METHODS, default="3dt")
    p.add_argument("--waypoints", help="JSON waypoint file (default: random "
                                       "spline from --seed)")
    p.set_defaults(func=cmd_traj)

    p = sub.add_parser("bench", parents=[common],
                       help="wall-clock synthesis benchmark")
    p.add_argument("--dataset", required=True)
    p.add_argument("--method", choices=campaign.METHODS, required=True)
    p.add_argument("--n-samples", type=int, default=500)
    p.add_argument("--mask-input", action=argparse.BooleanOptionalAction,
                   default=True)
    p.add_argument("--interpolate", action=argparse.BooleanOptionalAction,
                   default=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("make-scene", parents=[common],
                       help="generate a synthetic dataset")
    p.add_argument("--kind", choices=["cube", "plane", "two-boxes"],
                   required=True)
    p.add_argument("--n-views", type=int, required=True)
    p.add_argument("--texture-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--range-lo", type=float, default=4.0)
    p.add_argument("--range-hi", type=float, default=7.0)
    p.add_argument("--gap-center", help="w,x,y,z attitude to keep empty")
    p.add_argument("--gap-radius", type=float, default=0.0)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--focal", type=float)
    p.set_defaults(func=cmd_make_scene)

    p = sub.add_parser("import-speedplus", parents=[common],
                       help="convert SPEED+-style labels to a manifest")
    p.add_argument("--labels", required=True)
    p.add_argument("--camera", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_import_speedplus)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper()))
    try:
        return args.func(args)
    except VisyReveError as e:
        log.error("%s: %s", type(e).__name__, e)
        return e.exit_code
    except ValueError as e:
        log.error("degenerate value: %s", e)
        return 4
    except OSError as e:
        log.error("I/O error: %s", e)
        return 5


if __name__ == "__main__":
    sys.exit(main())
