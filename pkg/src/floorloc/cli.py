"""``floorloc`` command line.

Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags, missing
files, invalid config).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bench import bundled_config, bundled_configs, dumps_report, get_dotted, render_table, run_benchmark, set_dotted
from .errors import ConfigError, FloorlocError
from .filter import DEFAULT_SIGMA, MotionInput, iter_sequence
from .floorplan import DEFAULT_MAX_RANGE, Pose2, RangeTable, floorplan_depth, load_grid, resample_grid, save_grid
from .gravity import CameraModel, alignment_homography, mask_pixels
from .observation import equiangular_rays, read_observations, write_observations
from .pgm import heatmap_pixels, write_pgm
from .synth import NoiseModel, Trajectory, gen_floorplan, gen_trajectory, observe_trajectory

log = logging.getLogger("floorloc")


class UsageError(Exception):
    pass


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"no such file: {path}")
    return p


def _camera(args) -> CameraModel:
    if args.fx is not None:
        fy = args.fy if args.fy is not None else args.fx
        cx = args.cx if args.cx is not None else args.width / 2.0
        cy = args.cy if args.cy is not None else args.height / 2.0
        return CameraModel(args.fx, fy, cx, cy, args.width, args.height)
    return CameraModel.from_fov(math.radians(args.fov), args.width, args.height)


def _add_camera(p):
    g = p.add_argument_group("camera")
    g.add_argument("--fov", type=float, default=80.0, help="horizontal field of view, degrees (default 80)")
    g.add_argument("--width", type=int, default=160)
    g.add_argument("--height", type=int, default=120)
    g.add_argument("--fx", type=float, help="focal length in pixels; overrides --fov")
    g.add_argument("--fy", type=float)
    g.add_argument("--cx", type=float)
    g.add_argument("--cy", type=float)


def _add_map(p, required=True):
    p.add_argument("--map", required=required, help="grid file (.json json-grid or .pgm with a .json sidecar)")
    p.add_argument("--map-format", choices=["json-grid", "pgm-ascii"])


def _load_map(args):
    return load_grid(_existing(args.map), args.map_format)


def _noise_from_args(args, seed: int) -> NoiseModel:
    if args.observer == "gt":
        return NoiseModel.ground_truth(args.gt_scale)
    return NoiseModel(
        base_scale=args.base_scale,
        corrupt_prob=args.corrupt_prob,
        corrupt_scale=args.corrupt_scale,
        calibration=args.calibration,
        calibration_value=args.calibration_value,
        corruption=args.corruption,
        rng_seed=seed,
    )


def _add_noise(p):
    g = p.add_argument_group("observer")
    g.add_argument("--observer", choices=["gt", "noisy"], default="gt")
    g.add_argument("--gt-scale", type=float, default=0.5, help="scale reported by the gt observer, meters")
    g.add_argument("--base-scale", type=float, default=0.1)
    g.add_argument("--corrupt-prob", type=float, default=0.0)
    g.add_argument("--corrupt-scale", type=float, default=2.0)
    g.add_argument("--calibration", choices=["oracle", "fixed", "miscalibrated"], default="oracle")
    g.add_argument("--calibration-value", type=float, default=1.0)
    g.add_argument("--corruption", choices=["iid", "sector"], default="sector")
    g.add_argument("--noise-seed", type=int, default=0)


# -------------------------------------------------------------- commands


def cmd_raycast(args) -> int:
    grid = _load_map(args)
    pose = Pose2(*args.pose)
    if args.angles is not None:
        angles = np.array(args.angles, dtype=float)
        if np.any(np.abs(angles) >= math.pi / 2):
            raise UsageError("--angles must lie in (-pi/2, pi/2) radians")
    else:
        angles = equiangular_rays(_camera(args).hfov, args.n_rays)
    depths = floorplan_depth(grid, pose, angles, args.max_range)
    print(json.dumps([float(d) if np.isfinite(d) else None for d in depths]))
    return 0


def cmd_gen_map(args) -> int:
    grid = gen_floorplan(args.seed, args.extent, args.style, args.resolution)
    save_grid(grid, args.out)
    print(json.dumps({"path": str(args.out), "width": grid.width_cells, "height": grid.height_cells,
                      "free_fraction": float((~grid.occupied).mean())}))
    return 0


def cmd_gen_traj(args) -> int:
    grid = _load_map(args)
    traj = gen_trajectory(grid, args.seed, args.length, args.step_mean, tuple(args.motion_noise))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    traj.save(out / "trajectory.json")
    if args.n_rays > 0:
        noise = _noise_from_args(args, args.noise_seed)
        obs = observe_trajectory(grid, traj, _camera(args), args.n_rays, noise, args.max_range)
        write_observations(out / "observations.jsonl", obs)
    print(json.dumps({"trajectory": str(out / "trajectory.json"), "frames": len(traj)}))
    return 0


LOCALIZE_KEYS = {
    "map": None,
    "trajectory": None,
    "observations": None,
    "observer": "gt",
    "gt_scale": 0.5,
    "base_scale": 0.1,
    "corrupt_prob": 0.0,
    "corrupt_scale": 2.0,
    "calibration": "oracle",
    "calibration_value": 1.0,
    "corruption": "sector",
    "noise_seed": 0,
    "fov": 80.0,
    "width": 160,
    "height": 120,
    "n_rays": 40,
    "n_theta": 36,
    "grid_res": None,
    "sigma": None,
    "obs_interval": 1,
    "uncertainty": "per-ray",
    "fixed_scale": None,
    "prune_below": 300.0,
    "max_range": DEFAULT_MAX_RANGE,
    "out": None,
    "heatmap_dir": None,
}


def _localize_settings(args) -> dict:
    """Config file values overridden by any flag the user actually passed."""
    settings = dict(LOCALIZE_KEYS)
    if args.config:
        try:
            doc = json.loads(_existing(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"not valid JSON: {exc}") from exc
        for k, v in doc.items():
            if k not in LOCALIZE_KEYS:
                raise ConfigError(k, "unknown key")
            settings[k] = v
    for k in LOCALIZE_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            settings[k] = v
    for k in ("map", "trajectory"):
        if settings[k] is None:
            raise UsageError(f"--{k} is required (flag or config key)")
        _existing(settings[k])
    if settings["observations"] is not None:
        _existing(settings["observations"])
    if settings["n_theta"] < 4:
        raise ConfigError("n_theta", "must be >= 4")
    if settings["grid_res"] is not None and not settings["grid_res"] > 0:
        raise ConfigError("grid_res", "must be > 0")
    return settings


def cmd_localize(args) -> int:
    s = _localize_settings(args)
    true_grid = load_grid(s["map"])
    grid = true_grid if s["grid_res"] is None else resample_grid(true_grid, s["grid_res"])
    traj = Trajectory.load(s["trajectory"])
    n = len(traj)
    if s["observations"] is not None:
        obs = read_observations(s["observations"], n)
    else:
        noise = NoiseModel.ground_truth(s["gt_scale"]) if s["observer"] == "gt" else NoiseModel(
            s["base_scale"], s["corrupt_prob"], s["corrupt_scale"], s["calibration"], s["calibration_value"],
            s["corruption"], s["noise_seed"],
        )
        camera = CameraModel.from_fov(math.radians(s["fov"]), s["width"], s["height"])
        obs = observe_trajectory(true_grid, traj, camera, s["n_rays"], noise, s["max_range"])
    sigma = None if s["sigma"] is None else tuple(s["sigma"])
    motions = [None] + [m if sigma is None else MotionInput(m.t, sigma) for m in traj.motions]
    table = RangeTable(grid, s["max_range"])
    out = open(s["out"], "w") if s["out"] else sys.stdout
    heat = Path(s["heatmap_dir"]) if s["heatmap_dir"] else None
    if heat:
        heat.mkdir(parents=True, exist_ok=True)
    try:
        for belief, summ in iter_sequence(
            grid, obs, motions, s["n_theta"], s["obs_interval"], max_range=s["max_range"],
            uncertainty=s["uncertainty"], fixed_scale=s["fixed_scale"], prune_below=s["prune_below"], table=table,
        ):
            p = summ.map_pose
            gt = traj.poses[summ.frame]
            rec = {
                "frame": summ.frame,
                "map_pose": [p.x, p.y, p.phi],
                "map_prob": summ.map_prob,
                "entropy": summ.entropy,
                "observed": summ.observed,
                "pos_error": math.hypot(p.x - gt.x, p.y - gt.y),
            }
            out.write(json.dumps(rec) + "\n")
            if heat:
                write_pgm(heat / f"frame_{summ.frame:05d}.pgm", heatmap_pixels(belief.xy_max_marginal()))
                (heat / f"frame_{summ.frame:05d}.json").write_text(json.dumps(
                    {k: rec[k] for k in ("frame", "map_pose", "map_prob", "entropy")}))
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


# flag -> config key for bench overrides
BENCH_FLAGS = {
    "seed": "seed",
    "name": "name",
    "n_theta": "n_theta",
    "prune_below": "prune_below",
    "trajectories_per_map": "trajectories_per_map",
}


def cmd_bench(args) -> int:
    config = {}
    if args.config and not Path(args.config).exists() and args.config in bundled_configs():
        config = bundled_config(args.config)
    elif args.config:
        try:
            config = json.loads(_existing(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"not valid JSON: {exc}") from exc
    overrides = []

    def override(key, value):
        nonlocal config
        overrides.append({"key": key, "config_value": get_dotted(config, key), "flag_value": value})
        config = set_dotted(config, key, value)

    for flag, key in BENCH_FLAGS.items():
        v = getattr(args, flag)
        if v is not None:
            override(key, v)
    if args.map_seeds is not None:
        override("maps.seeds", args.map_seeds)
    if args.grid_res is not None or args.obs_interval is not None:
        variants = config.get("variants") or [{"name": "gt"}]
        new = []
        for v in variants:
            v = dict(v)
            if args.grid_res is not None:
                v["resolution"] = args.grid_res
            if args.obs_interval is not None:
                v["obs_interval"] = args.obs_interval
            new.append(v)
        if args.grid_res is not None:
            overrides.append({"key": "variants[*].resolution", "config_value": [x.get("resolution") for x in variants],
                              "flag_value": args.grid_res})
        if args.obs_interval is not None:
            overrides.append({"key": "variants[*].obs_interval",
                              "config_value": [x.get("obs_interval") for x in variants], "flag_value": args.obs_interval})
        config = dict(config, variants=new)
    report = run_benchmark(config, args.out, overrides=overrides)
    if args.out is None:
        sys.stdout.write(dumps_report(report))
    else:
        print(render_table(report))
    return 0


def cmd_gravity_mask(args) -> int:
    camera = _camera(args)
    ga = alignment_homography(camera, args.roll, args.pitch)
    if args.out:
        write_pgm(args.out, mask_pixels(ga.mask))
    print(json.dumps({"H": ga.H.tolist(), "H_inv": ga.H_inv.tolist(), "valid_fraction": float(ga.mask.mean())}))
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="floorloc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--threads", type=int, help="worker threads (default: $FLOORLOC_THREADS or all cores)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("raycast", help="print floorplan depths seen from a pose")
    _add_map(p)
    p.add_argument("--pose", type=float, nargs=3, required=True, metavar=("X", "Y", "PHI"))
    p.add_argument("--angles", type=float, nargs="+", help="ray angles relative to heading, radians")
    p.add_argument("--n-rays", type=int, default=40)
    p.add_argument("--max-range", type=float, default=DEFAULT_MAX_RANGE)
    _add_camera(p)
    p.set_defaults(func=cmd_raycast)

    p = sub.add_parser("gen-map", help="generate a procedural floorplan")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--extent", type=float, default=30.0, help="side length, meters")
    p.add_argument("--style", choices=["rooms", "maze", "corridor"], default="rooms")
    p.add_argument("--resolution", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_map)

    p = sub.add_parser("gen-traj", help="generate a trajectory (and observations) on a map")
    _add_map(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--length", type=int, default=100)
    p.add_argument("--step-mean", type=float, default=0.5)
    p.add_argument("--motion-noise", type=float, nargs=3, default=list(DEFAULT_SIGMA))
    p.add_argument("--n-rays", type=int, default=40, help="0 skips observations")
    p.add_argument("--max-range", type=float, default=DEFAULT_MAX_RANGE)
    p.add_argument("--out-dir", required=True)
    _add_camera(p)
    _add_noise(p)
    p.set_defaults(func=cmd_gen_traj)

    p = sub.add_parser("localize", help="run the filter over one sequence")
    p.add_argument("--config", help="JSON file with any of the flag names (underscored) as keys")
    p.add_argument("--map")
    p.add_argument("--trajectory")
    p.add_argument("--observations", help="observation JSONL; otherwise observations are synthesized")
    p.add_argument("--observer", choices=["gt", "noisy"])
    for flag, typ in (("gt-scale", float), ("base-scale", float), ("corrupt-prob", float), ("corrupt-scale", float),
                      ("calibration-value", float), ("noise-seed", int), ("fov", float), ("width", int),
                      ("height", int), ("n-rays", int), ("n-theta", int), ("grid-res", float),
                      ("obs-interval", int), ("fixed-scale", float), ("prune-below", float), ("max-range", float)):
        p.add_argument(f"--{flag}", type=typ)
    p.add_argument("--calibration", choices=["oracle", "fixed", "miscalibrated"])
    p.add_argument("--corruption", choices=["iid", "sector"])
    p.add_argument("--uncertainty", choices=["per-ray", "fixed"])
    p.add_argument("--sigma", type=float, nargs=3)
    p.add_argument("--out", help="per-frame JSONL (default: stdout)")
    p.add_argument("--heatmap-dir")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("bench", help="run a benchmark config and write report.json")
    p.add_argument("--config", help="JSON config file, or the name of a bundled config (acceptance, ...)")
    p.add_argument("--out", help="output directory (default: print report JSON)")
    p.add_argument("--seed", type=int)
    p.add_argument("--name")
    p.add_argument("--n-theta", type=int)
    p.add_argument("--prune-below", type=float)
    p.add_argument("--trajectories-per-map", type=int)
    p.add_argument("--map-seeds", type=int, nargs="+")
    p.add_argument("--grid-res", type=float, help="filter grid resolution for every variant")
    p.add_argument("--obs-interval", type=int, help="observation interval for every variant")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gravity-mask", help="print the alignment homography and write its validity mask")
    p.add_argument("--roll", type=float, default=0.0, help="radians")
    p.add_argument("--pitch", type=float, default=0.0, help="radians")
    p.add_argument("--out", help="mask as pgm-ascii")
    _add_camera(p)
    p.set_defaults(func=cmd_gravity_mask)
    return parser


def _set_threads(n: int | None) -> None:
    if n is None:
        env = os.environ.get("FLOORLOC_THREADS")
        if not env:
            return
        try:
            n = int(env)
        except ValueError:
            raise UsageError(f"FLOORLOC_THREADS must be an integer, got {env!r}") from None
    import numba

    if n < 1:
        raise UsageError("thread count must be >= 1")
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        _set_threads(args.threads)
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"floorloc {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except FloorlocError as exc:
        print(f"floorloc {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
