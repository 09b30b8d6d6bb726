"""Command-line front end: ``signpos {triangulate,evaluate,simulate,sweep,turns}``.

Every subcommand reads an optional YAML/JSON config file (``--config``);
command-line flags override its values. Relative paths in a config file are
resolved against the file's directory.

Exit codes: 0 success, 2 invalid input, 3 nothing to output (no turns, no
matches, or every sign failed).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import io
from .align import FramePose, Trajectory, turn_ranges
from .errors import InvalidCalibration, NoMatches, NoTurns, SignPosError, ValidationError
from .geo import MercatorRef, latlon_to_xy
from .metrics import SignGroundTruth, ate_5, ate_full, error_report, sign_errors
from .synth import ScenarioSpec, SweepSpec, generate_journey, run_sweep, sweep_rows
from .triangulate import Mode, TriangulatedSign, TriangulationConfig, tracks_from_observations, triangulate_journey

log = logging.getLogger("signpos")

EXIT_OK, EXIT_INVALID, EXIT_EMPTY = 0, 2, 3
PATH_KEYS = ("poses", "gps", "detections", "calibration", "gt_signs", "gt_poses", "out")


@dataclass
class PipelineConfig:
    mode: str = "short"
    rdp_epsilon: float = 2.0
    turn_window: int = 25
    align_dims: str = "3d"
    ba_max_iter: int = 100
    ba_grad_tol: float = 1e-10
    lat0: float | None = None
    poses: str | None = None
    gps: str | None = None
    detections: str | None = None
    calibration: str | None = None
    gt_signs: str | None = None
    gt_poses: str | None = None
    maps: list[str] = field(default_factory=list)
    out: str | None = None
    scenario: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    workers: int = 1

    def validate(self, required: tuple[str, ...] = ()) -> None:
        if self.mode not in ("full", "short"):
            raise ValidationError(f"mode must be 'full' or 'short', got {self.mode!r}")
        if self.align_dims not in ("2d", "3d"):
            raise ValidationError(f"align_dims must be '2d' or '3d', got {self.align_dims!r}")
        if not (self.rdp_epsilon > 0 and self.turn_window > 0 and self.ba_max_iter > 0 and self.ba_grad_tol > 0):
            raise ValidationError("rdp_epsilon, turn_window and BA tolerances must be positive")
        missing = [k for k in required if not getattr(self, k)]
        if missing:
            raise ValidationError(f"missing required setting(s): {', '.join(missing)}")

    def triangulation(self, ref: MercatorRef | None) -> TriangulationConfig:
        return TriangulationConfig(window=self.turn_window, dims=2 if self.align_dims == "2d" else 3, ref=ref,
                                   ba_max_iter=self.ba_max_iter, ba_grad_tol=self.ba_grad_tol)


def load_config(path: str | None, overrides: dict) -> PipelineConfig:
    data: dict = {}
    if path:
        p = Path(path)
        try:
            data = yaml.safe_load(p.read_text()) or {}
        except OSError as exc:
            raise ValidationError(f"{p}: cannot open ({exc.strerror})") from exc
        except yaml.YAMLError as exc:
            raise ValidationError(f"{p}: invalid config ({exc})") from None
        if not isinstance(data, dict):
            raise ValidationError(f"{p}: config must be a mapping")
        base = p.resolve().parent
        for key in PATH_KEYS:
            if data.get(key):
                data[key] = str(base / data[key])
        if data.get("maps"):
            data["maps"] = [str(base / m) for m in data["maps"]]
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValidationError(f"unknown config keys: {', '.join(sorted(unknown))}")
    data.update({k: v for k, v in overrides.items() if v is not None and k in known})
    return PipelineConfig(**data)


def _ref(lat0: float) -> MercatorRef:
    try:
        return MercatorRef(float(lat0))
    except ValueError as exc:
        raise ValidationError(f"lat0: {exc}") from None


def _load_trajectory(cfg: PipelineConfig) -> tuple[Trajectory, MercatorRef]:
    poses = io.read_poses(cfg.poses)
    gps_ids, fixes = io.read_gps(cfg.gps)
    pose_ids = [p.frame_id for p in poses]
    if pose_ids != gps_ids:
        only_p = sorted(set(pose_ids) - set(gps_ids))
        only_g = sorted(set(gps_ids) - set(pose_ids))
        raise ValidationError(
            f"frame ids differ between {cfg.poses} and {cfg.gps}: "
            f"{len(only_p)} only in poses (first {only_p[:5]}), {len(only_g)} only in GPS (first {only_g[:5]})"
        )
    if not fixes:
        raise ValidationError(f"{cfg.gps}: no GPS fixes")
    ref = _ref(cfg.lat0 if cfg.lat0 is not None else fixes[0].lat)
    xy = latlon_to_xy([g.lat for g in fixes], [g.lon for g in fixes], ref)
    gps = np.column_stack([xy, [g.alt for g in fixes]])
    return Trajectory(tuple(poses), gps), ref


def cmd_triangulate(cfg: PipelineConfig) -> int:
    cfg.validate(("poses", "gps", "detections", "calibration", "out"))
    calib = io.read_calibration(cfg.calibration)
    traj, ref = _load_trajectory(cfg)
    observations = io.read_detections(cfg.detections, calib)
    missing = sorted({o.frame_id for o in observations if not traj.has_frame(o.frame_id)})
    if missing:
        raise ValidationError(f"{cfg.detections}: detections reference frame(s) without a pose: {missing[:10]}")
    tracks = tracks_from_observations(observations)
    results = triangulate_journey(tracks, traj, calib, cfg.mode, cfg.triangulation(ref))
    io.write_map(cfg.out, results)
    ok = sum(isinstance(r, TriangulatedSign) for r in results)
    log.info("triangulated %d of %d signs (%s mode) -> %s", ok, len(results), cfg.mode, cfg.out)
    for r in results:
        if not isinstance(r, TriangulatedSign):
            log.info("sign %d failed: %s %s", r.sign_id, r.reason.value, r.message)
    return EXIT_OK if ok else EXIT_EMPTY


def gt_with_relative(gt: list[SignGroundTruth], gt_poses: list[FramePose]) -> list[SignGroundTruth]:
    """Attach each sign's camera-frame position in every ground-truth frame."""
    R = np.array([p.rotation for p in gt_poses])
    C = np.array([p.position for p in gt_poses])
    ids = [p.frame_id for p in gt_poses]
    out = []
    for s in gt:
        q = np.einsum("nji,nj->ni", R, s.abs_position - C)
        out.append(SignGroundTruth(s.sign_id, s.abs_position, s.class_label, dict(zip(ids, q))))
    return out


def _mode_report(results: list, gt: list[SignGroundTruth]) -> dict:
    rep = sign_errors(results, gt)
    return {
        "m": rep.m,
        "failed": sum(not isinstance(r, TriangulatedSign) for r in results),
        "rel_mean": rep.rel_mean,
        "abs_mean": rep.abs_mean,
        "rel_per_m": rep.rel_per_m,
        "signs": [dataclasses.asdict(m) for m in rep.matches],
    }


def evaluate(maps: list[list], gt: list[SignGroundTruth], est_poses=None, gt_poses=None) -> dict:
    """Metrics report for one or two (full/short) maps, plus ATE when poses are given."""
    if gt_poses is not None:
        gt = gt_with_relative(gt, gt_poses)
    by_mode: dict[str, list] = {}
    for results in maps:
        modes = {Mode(r.mode).value for r in results}
        if len(modes) != 1:
            raise ValidationError("each map must hold records of exactly one mode")
        mode = modes.pop()
        if mode in by_mode:
            raise ValidationError(f"two maps for mode {mode!r}")
        by_mode[mode] = results
    report: dict = {"modes": {m: _mode_report(r, gt) for m, r in sorted(by_mode.items())}}
    if {"full", "short"} <= set(by_mode):
        er = error_report(by_mode["full"], by_mode["short"], gt)
        report["table"] = {"e_f": er.e_f, "e_s": er.e_s, "m": er.m, "e_f_per_m": er.e_f_per_m,
                           "e_s_per_m": er.e_s_per_m, "abs_mean": er.abs_mean}
    if est_poses is not None and gt_poses is not None:
        w = ate_5(est_poses, gt_poses)
        report["ate"] = {"full": ate_full(est_poses, gt_poses), "ate5_mean": w.mean, "ate5_std": w.std,
                         "ate5_windows": w.windows, "ate5_skipped": w.skipped}
    return report


def cmd_evaluate(cfg: PipelineConfig) -> int:
    cfg.validate(("maps", "gt_signs", "out"))
    gt = io.read_gt_signs(cfg.gt_signs)
    gt_poses = io.read_poses(cfg.gt_poses) if cfg.gt_poses else None
    est_poses = io.read_poses(cfg.poses) if cfg.poses else None
    report = evaluate([io.read_map(m) for m in cfg.maps], gt, est_poses, gt_poses)
    io.write_json(cfg.out, report)
    log.info("wrote report %s", cfg.out)
    return EXIT_OK


def _scenario(cfg: PipelineConfig, args) -> ScenarioSpec:
    data = dict(cfg.scenario)
    for key in ("seed", "n_signs", "pixel_noise_sigma", "gps_noise_sigma"):
        if getattr(args, key, None) is not None:
            data[key] = getattr(args, key)
    try:
        spec = ScenarioSpec.from_dict(data)
    except (TypeError, ValueError, InvalidCalibration) as exc:
        raise ValidationError(f"invalid scenario: {exc}") from None
    return spec.noiseless() if getattr(args, "noiseless", False) else spec


def cmd_simulate(cfg: PipelineConfig, args) -> int:
    cfg.validate(("out",))
    spec = _scenario(cfg, args)
    j = generate_journey(spec)
    out = Path(cfg.out)
    ids = [p.frame_id for p in j.trajectory.poses]
    io.write_poses(out / "poses.csv", j.trajectory.poses)
    io.write_gps(out / "gps.csv", ids, j.gps)
    io.write_detections(out / "detections.csv", j.observations)
    io.write_calibration(out / "calibration.json", j.calibration)
    io.write_gt_signs(out / "gt_signs.csv", j.signs)
    io.write_poses(out / "gt_poses.csv", j.gt_trajectory.poses)
    io.write_json(out / "scenario.json", spec.to_dict())
    pipeline = {
        "mode": cfg.mode, "align_dims": cfg.align_dims, "turn_window": cfg.turn_window, "lat0": j.ref.lat0,
        "poses": "poses.csv", "gps": "gps.csv", "detections": "detections.csv",
        "calibration": "calibration.json", "gt_signs": "gt_signs.csv", "gt_poses": "gt_poses.csv",
    }
    io.atomic_write_text(out / "pipeline.yaml", yaml.safe_dump(pipeline, sort_keys=True))
    log.info("wrote %d frames, %d detections of %d signs to %s", len(ids), len(j.observations), spec.n_signs, out)
    return EXIT_OK


def cmd_sweep(cfg: PipelineConfig, args) -> int:
    cfg.validate(("out",))
    spec = _scenario(cfg, args)
    data = dict(cfg.sweep)
    for key in ("repeats",):
        if getattr(args, key, None) is not None:
            data[key] = getattr(args, key)
    if getattr(args, "sweep_mode", None):
        data["mode"] = args.sweep_mode
    try:
        sweep = SweepSpec.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"invalid sweep: {exc}") from None
    result = run_sweep(spec, sweep, workers=cfg.workers)
    out = Path(cfg.out)
    files = {}
    for grid in sweep.grids():
        name = "sweep_" + "_".join(g.replace("+", "-") for g in grid) + ".csv"
        io.write_sweep_csv(out / name, sweep_rows(result, grid))
        files[name] = list(grid)
    manifest = {
        "scenario": spec.to_dict(),
        "sweep": sweep.to_dict(),
        "grids": files,
        "failed_cells": [[list(c.groups), list(c.pcts)] for c in result.cells if c.failed],
        "annotations": result.annotations(),
    }
    io.write_json(out / "manifest.json", manifest)
    log.info("wrote %d cells to %s", len(result.cells), out)
    return EXIT_OK


def cmd_turns(cfg: PipelineConfig) -> int:
    cfg.validate(("gps",))
    ids, fixes = io.read_gps(cfg.gps)
    if len(fixes) < 2:
        raise ValidationError(f"{cfg.gps}: need at least two GPS fixes")
    ref = _ref(cfg.lat0 if cfg.lat0 is not None else fixes[0].lat)
    xy = latlon_to_xy([g.lat for g in fixes], [g.lon for g in fixes], ref)
    ranges = turn_ranges(ids, xy, cfg.rdp_epsilon, cfg.turn_window)
    payload = {"epsilon": cfg.rdp_epsilon, "window": cfg.turn_window, "ranges": [list(r) for r in ranges]}
    if cfg.out:
        io.write_json(cfg.out, payload)
    else:
        sys.stdout.write(io.dumps_json(payload))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="signpos", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML or JSON config file")
        p.add_argument("--out", help="output file or directory")
        return p

    p = common(sub.add_parser("triangulate", help="triangulate signs from poses, GPS and detections"))
    p.add_argument("--poses")
    p.add_argument("--gps")
    p.add_argument("--detections")
    p.add_argument("--calibration")
    p.add_argument("--mode", choices=["full", "short"])
    p.add_argument("--align-dims", dest="align_dims", choices=["2d", "3d"])
    p.add_argument("--window", dest="turn_window", type=int, help="short-mode half-window in frames")
    p.add_argument("--lat0", type=float, help="Mercator reference latitude (default: first GPS fix)")

    p = common(sub.add_parser("evaluate", help="score maps against ground-truth signs"))
    p.add_argument("--map", dest="maps", nargs="+")
    p.add_argument("--gt-signs", dest="gt_signs")
    p.add_argument("--gt-poses", dest="gt_poses", help="ground-truth poses (enables relative errors and ATE)")
    p.add_argument("--poses", help="estimated poses for ATE")

    for name, hlp in (("simulate", "write a synthetic journey bundle"), ("sweep", "run a calibration-error sweep")):
        p = common(sub.add_parser(name, help=hlp))
        p.add_argument("--seed", type=int)
        p.add_argument("--n-signs", dest="n_signs", type=int)
        p.add_argument("--pixel-noise", dest="pixel_noise_sigma", type=float)
        p.add_argument("--gps-noise", dest="gps_noise_sigma", type=float)
        p.add_argument("--noiseless", action="store_true", help="disable pixel/GPS noise and pose drift")
        if name == "sweep":
            p.add_argument("--sweep-mode", dest="sweep_mode", choices=["oat", "tat", "fpp-vs-distortion"])
            p.add_argument("--repeats", type=int)
            p.add_argument("--workers", type=int)

    p = common(sub.add_parser("turns", help="frame ranges around turns, for external self-calibration"))
    p.add_argument("--gps")
    p.add_argument("--epsilon", dest="rdp_epsilon", type=float)
    p.add_argument("--window", dest="turn_window", type=int)
    p.add_argument("--lat0", type=float)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = load_config(args.config, vars(args))
        if args.command == "triangulate":
            return cmd_triangulate(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, args)
        if args.command == "sweep":
            return cmd_sweep(cfg, args)
        return cmd_turns(cfg)
    except (NoTurns, NoMatches) as exc:
        print(f"signpos: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (ValidationError, InvalidCalibration, SignPosError) as exc:
        print(f"signpos: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
