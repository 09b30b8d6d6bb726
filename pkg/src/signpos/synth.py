"""Synthetic journeys with known ground truth, and camera-parameter sensitivity sweeps.

A journey is a vehicle driving a smoothed polyline at constant speed with a
forward-looking camera. Signs stand beside the road; their observations are
ground-truth projections, distorted with the true coefficients and perturbed
by pixel noise. The "estimated" poses imitate monocular SLAM output: the
true trajectory with slowly accumulating yaw and scale drift, expressed in an
arbitrary similarity frame.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.spatial.transform import Rotation

from .align import FramePose, Trajectory
from .camera import KITTI_04_10, Calibration, distort, perturb_calibration
from .errors import EmptyScene, InvalidPerturbation, NoMatches
from .geo import GeoPoint, MercatorRef, latlon_to_xy, xy_to_latlon
from .metrics import SignGroundTruth, normalized_error, sign_errors
from .triangulate import (Mode, SignObservation, TriangulatedSign, TriangulationConfig,
                          tracks_from_observations, triangulate_journey)

# urban block route, ~1.3 km with ten turns
DEFAULT_PATH = (
    (0.0, 0.0), (120.0, 0.0), (120.0, 110.0), (250.0, 110.0), (250.0, 230.0), (380.0, 230.0),
    (380.0, 100.0), (500.0, 100.0), (500.0, -30.0), (640.0, -30.0), (640.0, 90.0), (780.0, 90.0),
)
GROUPS = ("focal", "principal", "distortion")
SIGN_CLASSES = ("speed_limit", "yield", "stop", "no_entry", "priority_road", "pedestrian_crossing")


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int = 0
    path: tuple[tuple[float, float], ...] = DEFAULT_PATH
    frame_rate: float = 10.0
    speed: float = 10.0
    turn_smoothing: float = 12.0
    n_signs: int = 10
    lateral_range: tuple[float, float] = (3.0, 8.0)
    height_range: tuple[float, float] = (1.5, 3.5)
    camera_height: float = 1.65
    terrain_amplitude: float = 1.0
    terrain_wavelength: float = 400.0
    min_depth: float = 2.0
    max_depth: float = 50.0
    pixel_noise_sigma: float = 1.0
    gps_noise_sigma: float = 0.5
    scale_drift: float = 0.1
    """Fractional change of the estimated scale per kilometre travelled."""
    yaw_drift: float = 2.0
    """Estimated heading drift in degrees per kilometre travelled."""
    origin: tuple[float, float] = (49.0, 8.43)
    calibration: Calibration = KITTI_04_10

    def __post_init__(self):
        if self.pixel_noise_sigma < 0 or self.gps_noise_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")
        if self.n_signs < 0:
            raise ValueError("n_signs must be non-negative")
        if self.frame_rate <= 0 or self.speed <= 0:
            raise ValueError("frame_rate and speed must be positive")
        if len(self.path) < 2:
            raise ValueError("path needs at least two waypoints")

    def noiseless(self) -> "ScenarioSpec":
        """Same layout with pixel, GPS and pose-drift noise switched off."""
        return replace(self, pixel_noise_sigma=0.0, gps_noise_sigma=0.0, scale_drift=0.0, yaw_drift=0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["path"] = [list(p) for p in self.path]
        d["calibration"] = self.calibration.to_dict()
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioSpec":
        data = dict(data)
        if "calibration" in data and isinstance(data["calibration"], dict):
            data["calibration"] = Calibration.from_dict(data["calibration"])
        for key in ("path",):
            if key in data:
                data[key] = tuple(tuple(float(v) for v in p) for p in data[key])
        for key in ("lateral_range", "height_range", "origin"):
            if key in data:
                data[key] = tuple(float(v) for v in data[key])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown scenario keys {sorted(unknown)}")
        return cls(**data)


@dataclass(eq=False)
class Journey:
    """Everything :func:`generate_journey` produces for one scenario."""

    spec: ScenarioSpec
    ref: MercatorRef
    gt_trajectory: Trajectory
    """True poses with noiseless GPS (= true camera centres)."""
    trajectory: Trajectory
    """Drifting estimated poses with noisy metric GPS; the pipeline input."""
    gps: list[GeoPoint]
    signs: list[SignGroundTruth]
    observations: list[SignObservation]

    @property
    def calibration(self) -> Calibration:
        return self.spec.calibration

    @property
    def tracks(self):
        return tracks_from_observations(self.observations)


def _rz(theta: np.ndarray) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    R = np.zeros(theta.shape + (3, 3))
    R[..., 0, 0], R[..., 0, 1] = c, -s
    R[..., 1, 0], R[..., 1, 1] = s, c
    R[..., 2, 2] = 1.0
    return R


def _road(spec: ScenarioSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Arc-length samples of the smoothed path: xy (n, 2), heading (n,), arclength (n,)."""
    wp = np.asarray(spec.path, dtype=float)
    dense = []
    for a, b in zip(wp[:-1], wp[1:]):
        n = max(2, int(np.ceil(np.linalg.norm(b - a) / 0.1)))
        dense.append(a + np.linspace(0.0, 1.0, n, endpoint=False)[:, None] * (b - a))
    dense.append(wp[-1:])
    dense = np.vstack(dense)
    if spec.turn_smoothing > 0:
        dense = gaussian_filter1d(dense, sigma=spec.turn_smoothing / 0.1, axis=0, mode="nearest")
    seg = np.linalg.norm(np.diff(dense, axis=0), axis=1)
    s_dense = np.concatenate([[0.0], np.cumsum(seg)])
    step = spec.speed / spec.frame_rate
    s = np.arange(0.0, s_dense[-1], step)
    xy = np.column_stack([np.interp(s, s_dense, dense[:, 0]), np.interp(s, s_dense, dense[:, 1])])
    d = np.gradient(xy, axis=0)
    heading = np.unwrap(np.arctan2(d[:, 1], d[:, 0]))
    return xy, heading, s


def _ground(spec: ScenarioSpec, s) -> np.ndarray:
    return spec.terrain_amplitude * np.sin(2.0 * np.pi * np.asarray(s) / spec.terrain_wavelength)


def _camera_rotation(heading: np.ndarray) -> np.ndarray:
    """World-from-camera rotations for a level camera looking along ``heading`` (x right, y down, z forward)."""
    c, s = np.cos(heading), np.sin(heading)
    R = np.zeros(heading.shape + (3, 3))
    R[..., :, 0] = np.stack([s, -c, np.zeros_like(c)], axis=-1)
    R[..., :, 1] = np.array([0.0, 0.0, -1.0])
    R[..., :, 2] = np.stack([c, s, np.zeros_like(c)], axis=-1)
    return R


def _poses(frame_ids, R, C) -> tuple[FramePose, ...]:
    return tuple(FramePose(int(f), r, c) for f, r, c in zip(frame_ids, R, C))


def generate_journey(spec: ScenarioSpec, noise_seed: int | None = None) -> Journey:
    """Build a deterministic synthetic journey.

    The layout (road, signs, classes, monocular frame) comes from
    ``spec.seed``; pixel and GPS noise come from ``(spec.seed, noise_seed)``
    so sweeps can redraw noise over a fixed scene.

    Raises:
        EmptyScene: if no sign is visible in any frame.
    """
    layout_rng = np.random.default_rng([spec.seed, 0])
    noise_rng = np.random.default_rng([spec.seed, 1] if noise_seed is None else [spec.seed, 2, noise_seed])
    calib = spec.calibration
    k = calib.intrinsics

    ref = MercatorRef(spec.origin[0])
    origin_xy = latlon_to_xy(spec.origin[0], spec.origin[1], ref)

    xy, heading, s = _road(spec)
    n = len(s)
    ground = _ground(spec, s)
    C_gt = np.column_stack([xy + origin_xy, ground + spec.camera_height])
    R_gt = _camera_rotation(heading)
    frame_ids = np.arange(n)

    # signs on the right-hand side of the road
    margin = spec.max_depth * 0.6
    sign_s = np.sort(layout_rng.uniform(margin, s[-1] - 5.0, spec.n_signs)) if spec.n_signs else np.zeros(0)
    lateral = layout_rng.uniform(*spec.lateral_range, spec.n_signs)
    height = layout_rng.uniform(*spec.height_range, spec.n_signs)
    classes = layout_rng.choice(len(SIGN_CLASSES), spec.n_signs)
    sx = np.interp(sign_s, s, xy[:, 0])
    sy = np.interp(sign_s, s, xy[:, 1])
    sh = np.interp(sign_s, s, heading)
    right = np.column_stack([np.sin(sh), -np.cos(sh)])
    sign_xy = np.column_stack([sx, sy]) + lateral[:, None] * right + origin_xy
    sign_pos = np.column_stack([sign_xy, _ground(spec, sign_s) + height])

    observations: list[SignObservation] = []
    rel_gt: list[dict[int, np.ndarray]] = [dict() for _ in range(spec.n_signs)]
    r_max = k.working_radius / 1.05
    for i, p in enumerate(sign_pos):
        q = np.einsum("nji,nj->ni", R_gt, p - C_gt)
        vis = np.flatnonzero((q[:, 2] > spec.min_depth) & (q[:, 2] < spec.max_depth))
        if vis.size == 0:
            continue
        xy_n = q[vis, :2] / q[vis, 2:3]
        inside = np.linalg.norm(xy_n, axis=1) <= r_max
        vis, xy_n = vis[inside], xy_n[inside]
        uv = k.to_pixel(distort(xy_n, calib.distortion))
        if spec.pixel_noise_sigma > 0:
            uv = uv + noise_rng.normal(0.0, spec.pixel_noise_sigma, uv.shape)
        ok = k.contains(uv)
        for j, pix in zip(vis[ok], uv[ok]):
            observations.append(SignObservation(i, int(frame_ids[j]), (float(pix[0]), float(pix[1])),
                                                SIGN_CLASSES[classes[i]]))
            rel_gt[i][int(frame_ids[j])] = q[j]
    if not observations:
        raise EmptyScene("no sign is visible from any frame")

    signs = [SignGroundTruth(i, sign_pos[i], SIGN_CLASSES[classes[i]], rel_gt[i]) for i in range(spec.n_signs)]

    # drifting monocular estimate in an arbitrary similarity frame
    theta = math.radians(spec.yaw_drift) * s / 1000.0
    sigma = 1.0 + spec.scale_drift * s / 1000.0
    Dz = _rz(theta)
    steps = np.diff(C_gt, axis=0)
    est_steps = sigma[1:, None] * np.einsum("nij,nj->ni", Dz[1:], steps)
    C_est = np.vstack([C_gt[:1], C_gt[:1] + np.cumsum(est_steps, axis=0)])
    R_est = np.einsum("nij,njk->nik", Dz, R_gt)
    s0 = float(layout_rng.uniform(0.2, 5.0))
    R0 = Rotation.random(random_state=layout_rng.integers(2**31)).as_matrix()
    t0 = layout_rng.normal(0.0, 100.0, 3)
    C_est = s0 * (C_est - C_gt[0]) @ R0.T + t0
    R_est = np.einsum("ij,njk->nik", R0, R_est)

    gps_xyz = C_gt + (noise_rng.normal(0.0, spec.gps_noise_sigma, C_gt.shape) if spec.gps_noise_sigma > 0 else 0.0)
    lat, lon = xy_to_latlon(gps_xyz[:, :2], ref)
    gps = [GeoPoint(float(a), float(b), float(z)) for a, b, z in zip(lat, lon, gps_xyz[:, 2])]

    gt_traj = Trajectory(_poses(frame_ids, R_gt, C_gt), C_gt)
    est_traj = Trajectory(_poses(frame_ids, R_est, C_est), gps_xyz)
    return Journey(spec, ref, gt_traj, est_traj, gps, signs, observations)


def run_pipeline(journey: Journey, calib: Calibration | None = None, mode: Mode | str = Mode.FULL,
                 config: TriangulationConfig | None = None) -> list:
    """Triangulate every track of ``journey`` with ``calib`` (ground truth by default)."""
    config = config or TriangulationConfig(ref=journey.ref)
    return triangulate_journey(journey.tracks, journey.trajectory, calib or journey.calibration, mode, config)


@dataclass(frozen=True)
class SweepSpec:
    """Grid of calibration errors to evaluate.

    ``mode`` is ``"oat"`` (one group at a time, others at ground truth),
    ``"tat"`` (every pair of ``groups``) or ``"fpp-vs-distortion"`` (focal
    and principal point scaled together against the distortion group).
    """

    mode: str = "oat"
    groups: tuple[str, ...] = GROUPS
    range: tuple[float, ...] = tuple(float(v) for v in range(-15, 16, 3))
    repeats: int = 10
    aggregate: str = "min"
    pipeline_mode: str = "full"
    independent_distortion: bool = False
    window: int = 25
    dims: int = 3

    def __post_init__(self):
        if self.mode not in ("oat", "tat", "fpp-vs-distortion"):
            raise ValueError(f"unknown sweep mode {self.mode!r}")
        if any(g not in GROUPS for g in self.groups):
            raise ValueError(f"groups must be drawn from {GROUPS}")
        if self.mode == "tat" and len(self.groups) < 2:
            raise ValueError("two-at-a-time needs at least two groups")
        if self.repeats < 1:
            raise ValueError("repeats must be positive")
        if self.aggregate not in ("min", "mean", "median"):
            raise ValueError(f"unknown aggregate {self.aggregate!r}")
        Mode(self.pipeline_mode)

    def grids(self) -> list[tuple[str, ...]]:
        if self.mode == "oat":
            return [(g,) for g in self.groups]
        if self.mode == "tat":
            return list(itertools.combinations(self.groups, 2))
        return [("focal+principal", "distortion")]

    def cells(self) -> list[tuple[tuple[str, ...], tuple[float, ...]]]:
        out = []
        for grid in self.grids():
            for pcts in itertools.product(self.range, repeat=len(grid)):
                out.append((grid, tuple(float(p) for p in pcts)))
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["groups"] = list(self.groups)
        d["range"] = list(self.range)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SweepSpec":
        data = dict(data)
        if "groups" in data:
            data["groups"] = tuple(data["groups"])
        if "range" in data:
            data["range"] = tuple(float(v) for v in data["range"])
        return cls(**data)


@dataclass
class SweepCell:
    groups: tuple[str, ...]
    pcts: tuple[float, ...]
    score: float
    failed_signs: int
    repeats: int
    scores: list[float] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return math.isnan(self.score)


@dataclass
class SweepResult:
    scenario: ScenarioSpec
    sweep: SweepSpec
    cells: list[SweepCell]

    def grid(self, groups: tuple[str, ...]) -> list[SweepCell]:
        return [c for c in self.cells if c.groups == tuple(groups)]

    def cell(self, groups: tuple[str, ...], pcts: tuple[float, ...]) -> SweepCell:
        for c in self.cells:
            if c.groups == tuple(groups) and c.pcts == tuple(float(p) for p in pcts):
                return c
        raise KeyError((groups, pcts))

    def annotations(self) -> list[str]:
        """Plain-language observations about each one-at-a-time curve."""
        notes = []
        for grid in self.sweep.grids():
            if len(grid) != 1:
                continue
            cells = sorted(self.grid(grid), key=lambda c: c.pcts)
            lo, hi = cells[0], cells[-1]
            if lo.failed or hi.failed:
                continue
            worse = "under" if lo.score > hi.score else "over"
            notes.append(f"{grid[0]}: {worse}estimating by {abs(lo.pcts[0]):g}% hurts more "
                         f"(score {lo.score:.4g} at {lo.pcts[0]:+g}% vs {hi.score:.4g} at {hi.pcts[0]:+g}%)")
        return notes


def _perturbation(groups: tuple[str, ...], pcts: tuple[float, ...], independent: bool) -> dict:
    kw = {"focal": 0.0, "principal": 0.0, "distortion": 0.0}
    for g, p in zip(groups, pcts):
        if g == "focal+principal":
            kw["focal"] = kw["principal"] = p
        else:
            kw[g] = p
    if independent:
        kw["distortion"] = (kw["distortion"], kw["distortion"])
    return kw


@lru_cache(maxsize=64)
def _journey(spec: ScenarioSpec, repeat: int) -> Journey:
    return generate_journey(spec, noise_seed=repeat)


def journey_score(journey: Journey, calib: Calibration, sweep: SweepSpec) -> tuple[float, int]:
    """Mean relative error over ``m`` divided by ``m``, and the number of failed signs."""
    config = TriangulationConfig(window=sweep.window, dims=sweep.dims, ref=journey.ref)
    results = run_pipeline(journey, calib, sweep.pipeline_mode, config)
    failed = sum(not isinstance(r, TriangulatedSign) for r in results)
    try:
        rep = sign_errors(results, journey.signs)
    except NoMatches:
        return math.nan, failed
    return normalized_error(rep.rel_mean, rep.m), failed


def score_cell(scenario: ScenarioSpec, sweep: SweepSpec, groups: tuple[str, ...],
               pcts: tuple[float, ...]) -> SweepCell:
    """Evaluate one grid cell over ``sweep.repeats`` noise draws of the scenario."""
    groups, pcts = tuple(groups), tuple(float(p) for p in pcts)
    try:
        calib = perturb_calibration(scenario.calibration,
                                    **_perturbation(groups, pcts, sweep.independent_distortion))
    except InvalidPerturbation:
        return SweepCell(groups, pcts, math.nan, scenario.n_signs * sweep.repeats, sweep.repeats)
    scores, failed = [], 0
    for r in range(sweep.repeats):
        sc, f = journey_score(_journey(scenario, r), calib, sweep)
        scores.append(sc)
        failed += f
    finite = [v for v in scores if not math.isnan(v)]
    if not finite:
        agg = math.nan
    elif sweep.aggregate == "min":
        agg = float(min(finite))
    elif sweep.aggregate == "mean":
        agg = float(np.mean(finite))
    else:
        agg = float(np.median(finite))
    return SweepCell(groups, pcts, agg, failed, sweep.repeats, scores)


def _score_job(args):
    return score_cell(*args)


def run_sweep(scenario: ScenarioSpec, sweep: SweepSpec, workers: int | None = None) -> SweepResult:
    """Score every cell of the sweep grid.

    Every cell sees the same ``sweep.repeats`` noise draws, so a cell's value
    depends only on its own perturbation. Cells run in parallel when
    ``workers > 1``; results are kept in grid order either way.
    """
    jobs = [(scenario, sweep, g, p) for g, p in sweep.cells()]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_score_job, jobs))
    else:
        cells = [_score_job(j) for j in jobs]
    return SweepResult(scenario, sweep, cells)


def sweep_rows(result: SweepResult, groups: tuple[str, ...]) -> list[dict]:
    """CSV rows ``group1_pct, group2_pct, score, failed_signs, repeats`` for one grid."""
    rows = []
    for c in result.grid(groups):
        rows.append({
            "group1_pct": c.pcts[0],
            "group2_pct": c.pcts[1] if len(c.pcts) > 1 else "",
            "score": "" if c.failed else c.score,
            "failed_signs": c.failed_signs,
            "repeats": c.repeats,
        })
    return rows
