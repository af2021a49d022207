"""Seeded benchmark harness: generate sequences, run filter variants, report.

Config schema (JSON, version 1). Every key is optional; defaults below.

``maps``
    ``style``, ``extent_m``, ``resolution`` and ``seeds`` for procedural maps,
    or ``files`` (list of grid files, used instead of ``seeds`` when given).
``trajectories_per_map``, ``trajectory``
    Walks per map and their ``step_mean``, ``turn_std``, ``clearance_m``,
    ``motion_noise``. Each walk has ``max(sequence_lengths)`` frames.
``sequence_lengths``
    Success is scored on each prefix of this length (the filter is causal,
    so a prefix run equals a run of that length).
``camera`` (``hfov_deg``, ``width``, ``height``), ``n_rays``, ``n_theta``,
``max_range``, ``prune_below``, ``range_cache``, ``thresholds_m``,
``window``, ``recall_thresholds``
    Shared filter and scoring settings. ``range_cache: false`` casts rays
    afresh for every likelihood instead of caching them per map.
``variants``
    List of runs over the same sequences. Each has ``name``, ``observer``
    (``{"kind": "gt", "scale": s}``, ``{"kind": "noisy", ...NoiseModel
    fields}`` or ``{"kind": "file", "path": "dir/{id}.jsonl"}``),
    ``uncertainty`` (``per-ray``/``fixed``), ``fixed_scale`` (meters or
    ``"pooled"``: mean reported scale over the suite), ``obs_interval``,
    ``resolution`` (filter grid override, meters or null) and ``sigma``
    (filter motion noise, defaults to the trajectory motion noise).

The report holds everything under deterministic keys except ``timing``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError
from .eval import DEFAULT_RECALL_THRESHOLDS, SequenceResult, single_frame_recall, success_summary, threshold_label
from .filter import MotionInput, iter_sequence
from .floorplan import OccupancyGrid, RangeTable, load_grid, resample_grid, save_grid
from .gravity import CameraModel
from .observation import DepthObservation, read_observations, write_observations
from .pgm import heatmap_pixels, write_pgm
from .synth import NoiseModel, Trajectory, gen_floorplan, gen_trajectory, observe

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1

DEFAULT_CONFIG = {
    "name": "bench",
    "seed": 0,
    "maps": {"style": "rooms", "extent_m": 30.0, "resolution": 0.1, "seeds": [0], "files": []},
    "trajectories_per_map": 1,
    "trajectory": {"step_mean": 0.5, "turn_std": 0.3, "clearance_m": 0.4, "motion_noise": [0.1, 0.1, 0.05]},
    "sequence_lengths": [100, 50, 35, 20, 15],
    "camera": {"hfov_deg": 80.0, "width": 160, "height": 120},
    "n_rays": 40,
    "n_theta": 36,
    "max_range": 50.0,
    "prune_below": 300.0,
    "range_cache": True,
    "thresholds_m": [1.0],
    "window": 10,
    "recall_thresholds": [list(t) for t in DEFAULT_RECALL_THRESHOLDS],
    "variants": [{"name": "gt"}],
    "write_runs": True,
    "heatmaps": False,
}

VARIANT_DEFAULTS = {
    "name": None,
    "observer": {"kind": "gt", "scale": 0.5},
    "uncertainty": "per-ray",
    "fixed_scale": "pooled",
    "obs_interval": 1,
    "resolution": None,
    "sigma": None,
}

_NOISY_KEYS = {"base_scale", "corrupt_prob", "corrupt_scale", "calibration", "calibration_value", "corruption"}


# ----------------------------------------------------------------- config


def _merge(defaults: dict, given: dict, path: str) -> dict:
    if not isinstance(given, dict):
        raise ConfigError(path or "<root>", "expected an object")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(where, "unknown key")
        if isinstance(defaults[key], dict) and key != "observer":
            out[key] = _merge(defaults[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _number(cfg: dict, key: str, path: str, lo=None, integer=False, allow_none=False):
    v = cfg[key]
    where = f"{path}.{key}" if path else key
    if v is None and allow_none:
        return
    ok = isinstance(v, int) if integer else isinstance(v, (int, float))
    if isinstance(v, bool) or not ok or (lo is not None and not v >= lo):
        kind = "an integer" if integer else "a number"
        raise ConfigError(where, f"must be {kind}" + (f" >= {lo}" if lo is not None else "") + f", got {v!r}")


def _triple(v, where):
    if not (isinstance(v, (list, tuple)) and len(v) == 3 and all(isinstance(x, (int, float)) and x >= 0 for x in v)):
        raise ConfigError(where, f"must be three numbers >= 0, got {v!r}")


def _check_observer(obs, where):
    if not isinstance(obs, dict) or "kind" not in obs:
        raise ConfigError(where, "observer needs a 'kind'")
    kind = obs["kind"]
    if kind == "gt":
        extra = set(obs) - {"kind", "scale"}
        if extra:
            raise ConfigError(f"{where}.{sorted(extra)[0]}", "unknown key")
        if not isinstance(obs.get("scale", 0.5), (int, float)) or not obs.get("scale", 0.5) > 0:
            raise ConfigError(f"{where}.scale", "must be > 0")
    elif kind == "noisy":
        extra = set(obs) - _NOISY_KEYS - {"kind"}
        if extra:
            raise ConfigError(f"{where}.{sorted(extra)[0]}", "unknown key")
        try:
            NoiseModel(**{k: v for k, v in obs.items() if k != "kind"})
        except (TypeError, ValueError) as exc:
            raise ConfigError(where, str(exc)) from exc
    elif kind == "file":
        if not isinstance(obs.get("path"), str):
            raise ConfigError(f"{where}.path", "file observer needs a path template")
    else:
        raise ConfigError(f"{where}.kind", f"unknown observer kind {kind!r}")


def normalize_config(config: dict | None) -> dict:
    """Fill defaults and validate; raises ConfigError naming the bad key."""
    cfg = _merge(DEFAULT_CONFIG, config or {}, "")
    _number(cfg, "seed", "", 0, integer=True)
    _number(cfg, "trajectories_per_map", "", 0, integer=True)
    _number(cfg, "n_rays", "", 1, integer=True)
    _number(cfg, "n_theta", "", 4, integer=True)
    _number(cfg, "max_range", "", 1e-9)
    _number(cfg, "prune_below", "", 0, allow_none=True)
    _number(cfg, "window", "", 1, integer=True)
    if not isinstance(cfg["range_cache"], bool):
        raise ConfigError("range_cache", f"must be true or false, got {cfg['range_cache']!r}")
    m = cfg["maps"]
    if m["style"] not in ("rooms", "maze", "corridor"):
        raise ConfigError("maps.style", f"unknown style {m['style']!r}")
    _number(m, "extent_m", "maps", 2.0)
    _number(m, "resolution", "maps", 1e-9)
    for key in ("seeds", "files"):
        if not isinstance(m[key], list):
            raise ConfigError(f"maps.{key}", "must be a list")
    for n, f in enumerate(m["files"]):
        if not Path(f).exists():
            raise ConfigError(f"maps.files[{n}]", f"no such file: {f}")
    t = cfg["trajectory"]
    _number(t, "step_mean", "trajectory", 1e-9)
    _number(t, "turn_std", "trajectory", 0)
    _number(t, "clearance_m", "trajectory", 0)
    _triple(t["motion_noise"], "trajectory.motion_noise")
    c = cfg["camera"]
    _number(c, "hfov_deg", "camera", 1e-9)
    if not c["hfov_deg"] < 180:
        raise ConfigError("camera.hfov_deg", "must be < 180")
    _number(c, "width", "camera", 1, integer=True)
    _number(c, "height", "camera", 1, integer=True)
    lengths = cfg["sequence_lengths"]
    if not (isinstance(lengths, list) and lengths and all(isinstance(x, int) and x >= cfg["window"] for x in lengths)):
        raise ConfigError("sequence_lengths", f"must be a non-empty list of integers >= window ({cfg['window']})")
    if not (isinstance(cfg["thresholds_m"], list) and cfg["thresholds_m"]):
        raise ConfigError("thresholds_m", "must be a non-empty list")
    if not isinstance(cfg["variants"], list) or not cfg["variants"]:
        raise ConfigError("variants", "must be a non-empty list")
    variants, names = [], set()
    for n, v in enumerate(cfg["variants"]):
        where = f"variants[{n}]"
        v = _merge(VARIANT_DEFAULTS, v, where)
        if v["name"] is None:
            v["name"] = f"variant{n}"
        if v["name"] in names:
            raise ConfigError(f"{where}.name", f"duplicate variant name {v['name']!r}")
        names.add(v["name"])
        _check_observer(v["observer"], f"{where}.observer")
        if v["uncertainty"] not in ("per-ray", "fixed"):
            raise ConfigError(f"{where}.uncertainty", f"unknown mode {v['uncertainty']!r}")
        if v["fixed_scale"] != "pooled":
            _number(v, "fixed_scale", where, 1e-9)
        _number(v, "obs_interval", where, 1, integer=True)
        _number(v, "resolution", where, 1e-9, allow_none=True)
        if v["sigma"] is not None:
            _triple(v["sigma"], f"{where}.sigma")
        variants.append(v)
    cfg["variants"] = variants
    return cfg


def bundled_configs() -> list[str]:
    """Names of the configs shipped with the package."""
    files = resources.files("floorloc").joinpath("configs").iterdir()
    return sorted(f.name[:-5] for f in files if f.name.endswith(".json"))


def bundled_config(name: str) -> dict:
    if name not in bundled_configs():
        raise ConfigError("config", f"no bundled config {name!r}; have {', '.join(bundled_configs())}")
    return json.loads(resources.files("floorloc").joinpath("configs", f"{name}.json").read_text())


def set_dotted(config: dict, dotted: str, value) -> dict:
    """Return a copy of ``config`` with ``a.b.c`` set to ``value``."""
    out = copy.deepcopy(config)
    node = out
    keys = dotted.split(".")
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value
    return out


def get_dotted(config: dict, dotted: str, default=None):
    node = config
    for k in dotted.split("."):
        if not isinstance(node, dict) or k not in node:
            return default
        node = node[k]
    return node


# ------------------------------------------------------------- sequences


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary printable parts."""
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def camera_from_config(cam: dict) -> CameraModel:
    return CameraModel.from_fov(math.radians(cam["hfov_deg"]), int(cam["width"]), int(cam["height"]))


def _load_maps(cfg):
    m = cfg["maps"]
    if m["files"]:
        return [(Path(f).stem, load_grid(f)) for f in m["files"]]
    return [(f"m{s}", gen_floorplan(int(s), m["extent_m"], m["style"], m["resolution"])) for s in m["seeds"]]


def _observer_key(obs: dict) -> str:
    return json.dumps(obs, sort_keys=True)


def _make_observations(grid, traj, seq_id, obs_spec, cfg, camera, clock):
    kind = obs_spec["kind"]
    n_frames = len(traj)
    if kind == "file":
        path = obs_spec["path"].format(id=seq_id)
        return read_observations(path, n_frames), None
    if kind == "gt":
        noise = NoiseModel.ground_truth(obs_spec.get("scale", 0.5))
    else:
        params = {k: v for k, v in obs_spec.items() if k != "kind"}
        noise = NoiseModel(**params, rng_seed=derive_seed(cfg["seed"], "noise", seq_id))
    out = []
    t0 = clock()
    for f, pose in enumerate(traj.poses):
        out.append(observe(grid, pose, camera, cfg["n_rays"], noise, f, cfg["max_range"]))
    return out, (clock() - t0) / max(n_frames, 1)


def _pooled_scale(all_obs) -> float:
    scales = [o.scales[o.valid] for seq in all_obs for o in seq if o is not None]
    scales = np.concatenate(scales) if scales else np.array([])
    if scales.size == 0:
        raise ConfigError("fixed_scale", "no valid rays to pool a scale from")
    return float(np.mean(scales))


def _frame_record(summary, gt_pose) -> dict:
    p = summary.map_pose
    rec = {
        "frame": summary.frame,
        "map_pose": [p.x, p.y, p.phi],
        "map_prob": summary.map_prob,
        "entropy": summary.entropy,
        "support": summary.support,
        "observed": summary.observed,
    }
    if gt_pose is not None:
        rec["pos_error"] = math.hypot(p.x - gt_pose.x, p.y - gt_pose.y)
    return rec


def _clean(x):
    """Replace non-finite floats by None so the JSON stays strict."""
    if isinstance(x, float):
        return x if math.isfinite(x) else None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


# ------------------------------------------------------------------- main


def run_benchmark(config: dict | None, output_dir: str | Path | None = None, *, overrides=None, clock=None) -> dict:
    """Run every variant over the configured sequences and build the report.

    ``overrides`` (list of ``{"key", "config_value", "flag_value"}``) is
    recorded in the report metadata; apply it to ``config`` beforehand.
    """
    cfg = normalize_config(config)
    clock = clock or time.perf_counter
    t_start = clock()
    camera = camera_from_config(cfg["camera"])
    n_frames = max(cfg["sequence_lengths"])
    motion_noise = tuple(cfg["trajectory"]["motion_noise"])
    out_dir = Path(output_dir) if output_dir is not None else None

    # generate maps, walks and observations for the whole suite first, so
    # pooled scales are known before any filter runs
    maps = _load_maps(cfg) if cfg["trajectories_per_map"] > 0 else []
    sequences = []
    observations: dict[str, list] = {}
    extraction: dict[str, list] = {}
    for map_id, grid in maps:
        for k in range(cfg["trajectories_per_map"]):
            seq_id = f"{map_id}-t{k}"
            traj_seed = derive_seed(cfg["seed"], "trajectory", seq_id)
            t = cfg["trajectory"]
            traj = gen_trajectory(
                grid,
                traj_seed,
                n_frames,
                t["step_mean"],
                motion_noise,
                turn_std=t["turn_std"],
                clearance_m=t["clearance_m"],
            )
            sequences.append({"id": seq_id, "map": map_id, "grid": grid, "traj": traj})
    for v in cfg["variants"]:
        key = _observer_key(v["observer"])
        if key in observations:
            continue
        observations[key], extraction[key] = [], []
        for seq in sequences:
            obs, per_frame = _make_observations(seq["grid"], seq["traj"], seq["id"], v["observer"], cfg, camera, clock)
            observations[key].append(obs)
            if per_frame is not None:
                extraction[key].append(per_frame)

    variant_reports, timing = [], {}
    stage_sums = {v["name"]: {"transition": 0.0, "matching": 0.0, "update": 0.0, "frames": 0, "observed": 0}
                  for v in cfg["variants"]}
    table_time = {v["name"]: 0.0 for v in cfg["variants"]}
    results = {v["name"]: [] for v in cfg["variants"]}
    frame0 = {v["name"]: [] for v in cfg["variants"]}
    n_updates = {v["name"]: 0 for v in cfg["variants"]}
    fixed_used = {}
    for v in cfg["variants"]:
        if v["uncertainty"] == "fixed":
            fs = v["fixed_scale"]
            fixed_used[v["name"]] = _pooled_scale(observations[_observer_key(v["observer"])]) if fs == "pooled" else float(fs)

    # one map at a time so range tables can be dropped afterwards
    by_map: dict[str, list[int]] = {}
    for n, seq in enumerate(sequences):
        by_map.setdefault(seq["map"], []).append(n)
    for map_id, idxs in by_map.items():
        base = sequences[idxs[0]]["grid"]
        tables: dict[float, tuple[OccupancyGrid, RangeTable | None, float]] = {}
        for v in cfg["variants"]:
            res = v["resolution"] or base.resolution
            if res not in tables:
                t0 = clock()
                grid = base if res == base.resolution else resample_grid(base, res)
                table = RangeTable(grid, cfg["max_range"]) if cfg["range_cache"] else None
                tables[res] = (grid, table, clock() - t0)
            grid, table, built = tables[res]
            sigma = tuple(v["sigma"]) if v["sigma"] is not None else motion_noise
            okey = _observer_key(v["observer"])
            for n in idxs:
                seq = sequences[n]
                traj = seq["traj"]
                obs = observations[okey][n]
                motions = [None] + [MotionInput(m.t, sigma) for m in traj.motions]
                summaries = []
                sums = stage_sums[v["name"]]
                belief = None
                for belief, s in iter_sequence(
                    grid,
                    obs,
                    motions,
                    cfg["n_theta"],
                    v["obs_interval"],
                    max_range=cfg["max_range"],
                    uncertainty=v["uncertainty"],
                    fixed_scale=fixed_used.get(v["name"]),
                    prune_below=cfg["prune_below"],
                    table=table,
                    range_cache=False,
                    clock=clock,
                ):
                    summaries.append(s)
                    sums["frames"] += 1
                    sums["transition"] += s.timings.get("transition", 0.0)
                    if s.observed:
                        sums["observed"] += 1
                        sums["matching"] += s.timings["matching"]
                        sums["update"] += s.timings["update"]
                n_updates[v["name"]] += sum(s.observed for s in summaries)
                est = [s.map_pose for s in summaries]
                results[v["name"]].append(SequenceResult(est, traj.poses, window=cfg["window"]))
                frame0[v["name"]].append((est[0], traj.poses[0]))
                if out_dir is not None and cfg["write_runs"]:
                    _write_run(out_dir, seq, v, obs, summaries, belief, cfg["heatmaps"])
            table_time[v["name"]] += built
            # table build time is charged once per (map, resolution)
            tables[res] = (grid, table, 0.0)

    for v in cfg["variants"]:
        name = v["name"]
        rs = results[name]
        by_length = {}
        for length in sorted(cfg["sequence_lengths"], reverse=True):
            pre = [r.prefix(length) for r in rs]
            row = {}
            for th in cfg["thresholds_m"]:
                row[threshold_label(th)] = success_summary(
                    [SequenceResult(p.est_poses, p.gt_poses, th, cfg["window"]) for p in pre]
                )
            by_length[str(length)] = row
        recall = single_frame_recall(frame0[name], [tuple(t) for t in cfg["recall_thresholds"]]) if rs else {}
        variant_reports.append(
            {
                "name": name,
                "observer": v["observer"],
                "uncertainty": v["uncertainty"],
                "fixed_scale": fixed_used.get(name),
                "obs_interval": v["obs_interval"],
                "resolution": v["resolution"] or cfg["maps"]["resolution"],
                "observation_updates": n_updates[name],
                "success": by_length,
                "single_frame_recall": recall,
                "sequences": [
                    {
                        "id": seq["id"],
                        "final_error": float(r.per_frame_error[-1]),
                        "success": {str(L): r.prefix(L).success for L in sorted(cfg["sequence_lengths"], reverse=True)},
                    }
                    for seq, r in zip(sequences, rs)
                ],
            }
        )
        sums = stage_sums[name]
        okey = _observer_key(v["observer"])
        ex = extraction.get(okey) or []
        timing[name] = {
            "extraction_ms_per_frame": 1e3 * float(np.mean(ex)) if ex else None,
            "matching_ms_per_frame": 1e3 * sums["matching"] / sums["observed"] if sums["observed"] else None,
            "update_ms_per_frame": 1e3 * sums["update"] / sums["observed"] if sums["observed"] else None,
            "transition_ms_per_frame": 1e3 * sums["transition"] / sums["frames"] if sums["frames"] else None,
            "table_build_s": table_time[name],
        }

    report = _clean(
        {
            "schema_version": REPORT_SCHEMA_VERSION,
            "name": cfg["name"],
            "metadata": {"package_version": __version__, "overrides": list(overrides or [])},
            "config": cfg,
            "sequences": [{"id": s["id"], "map": s["map"], "frames": len(s["traj"])} for s in sequences],
            "variants": variant_reports,
            "timing": {"variants": timing, "total_s": clock() - t_start},
        }
    )
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(dumps_report(report))
        (out_dir / "report.txt").write_text(render_table(report))
    return report


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def strip_timing(report: dict) -> dict:
    """Copy of ``report`` without the (non-deterministic) ``timing`` section."""
    return {k: v for k, v in report.items() if k != "timing"}


def _write_run(out_dir, seq, v, obs, summaries, belief, heatmaps):
    d = out_dir / "runs" / seq["id"]
    d.mkdir(parents=True, exist_ok=True)
    traj_path = d / "trajectory.json"
    if not traj_path.exists():
        seq["traj"].save(traj_path)
        save_grid(seq["grid"], d / "map.json")
    vd = d / v["name"]
    vd.mkdir(exist_ok=True)
    write_observations(vd / "observations.jsonl", obs)
    with open(vd / "frames.jsonl", "w") as fh:
        for s, gt in zip(summaries, seq["traj"].poses):
            fh.write(json.dumps(_clean(_frame_record(s, gt))) + "\n")
    if heatmaps and belief is not None:
        write_pgm(vd / "final_belief.pgm", heatmap_pixels(belief.xy_max_marginal()))


def _fmt(x, pct=False):
    if x is None:
        return "-"
    return f"{100 * x:.1f}" if pct else f"{x:.3f}"


def render_table(report: dict) -> str:
    """Plain-text summary: SR / RMSE(succ) / RMSE(all) per variant and length."""
    lines = [f"benchmark {report['name']}: {len(report['sequences'])} sequences", ""]
    for v in report["variants"]:
        lines.append(
            f"[{v['name']}] uncertainty={v['uncertainty']} obs_interval={v['obs_interval']} "
            f"resolution={v['resolution']} updates={v['observation_updates']}"
        )
        lines.append(f"{'T':>5} {'thresh':>7} {'SR%':>6} {'RMSE succ':>10} {'RMSE all':>9}")
        for length, row in v["success"].items():
            for th, s in row.items():
                lines.append(
                    f"{length:>5} {th:>7} {_fmt(s['success_rate'], True):>6} {_fmt(s['rmse_succ']):>10} "
                    f"{_fmt(s['rmse_all']):>9}"
                )
        if v["single_frame_recall"]:
            lines.append("single-frame recall %: " + "  ".join(f"{k} {_fmt(x, True)}" for k, x in v["single_frame_recall"].items()))
        t = report.get("timing", {}).get("variants", {}).get(v["name"])
        if t:
            lines.append(
                "ms/frame: extraction {} matching {} update {} transition {}".format(
                    *(_fmt(t[k]) for k in ("extraction_ms_per_frame", "matching_ms_per_frame", "update_ms_per_frame", "transition_ms_per_frame"))
                )
            )
        lines.append("")
    return "\n".join(lines)
