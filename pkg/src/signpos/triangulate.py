"""Sign triangulation: midpoint initialisation, single-point bundle adjustment,
relative positions and the negative-depth discard rule."""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .align import SimilarityTransform, Trajectory, fit_to_gps
from .camera import CameraIntrinsics, Calibration, RadialDistortion, undistort
from .errors import BehindCamera, DegenerateGeometry, DegenerateRays, NonConvergence
from .geo import GeoPoint, MercatorRef, from_mercator

BA_MAX_ITER = 100
BA_GRAD_TOL = 1e-10
BA_INITIAL_DAMPING = 1e-3
RAY_COND_TOL = 1e-12


class Mode(str, enum.Enum):
    FULL = "full"
    SHORT = "short"


class FailureReason(str, enum.Enum):
    NEGATIVE_DEPTH = "NegativeDepth"
    DEGENERATE_RAYS = "DegenerateRays"
    NON_CONVERGENCE = "NonConvergence"
    INSUFFICIENT_OBSERVATIONS = "InsufficientObservations"
    DEGENERATE_ALIGNMENT = "DegenerateGeometry"


@dataclass(frozen=True)
class SignObservation:
    sign_id: int
    frame_id: int
    pixel: tuple[float, float]
    class_label: str = ""


@dataclass(frozen=True)
class SignTrack:
    """All observations of one physical sign, kept sorted by frame id."""

    sign_id: int
    observations: tuple[SignObservation, ...]

    def __post_init__(self):
        obs = tuple(sorted(self.observations, key=lambda o: o.frame_id))
        ids = [o.frame_id for o in obs]
        if len(set(ids)) != len(ids):
            raise ValueError(f"sign {self.sign_id}: duplicate observation frames")
        if any(o.sign_id != self.sign_id for o in obs):
            raise ValueError(f"sign {self.sign_id}: observation belongs to another sign")
        object.__setattr__(self, "observations", obs)

    def __len__(self):
        return len(self.observations)

    @property
    def frame_ids(self) -> list[int]:
        return [o.frame_id for o in self.observations]

    @property
    def pixels(self) -> np.ndarray:
        return np.array([o.pixel for o in self.observations], dtype=float).reshape(-1, 2)

    @property
    def class_label(self) -> str:
        counts = Counter(o.class_label for o in self.observations)
        best = max(counts.values(), default=0)
        return min((c for c, n in counts.items() if n == best), default="")


def tracks_from_observations(observations: Iterable[SignObservation]) -> list[SignTrack]:
    groups: dict[int, list[SignObservation]] = {}
    for obs in observations:
        groups.setdefault(obs.sign_id, []).append(obs)
    return [SignTrack(sid, tuple(groups[sid])) for sid in sorted(groups)]


@dataclass(frozen=True, eq=False)
class TriangulatedSign:
    sign_id: int
    class_label: str
    abs_position: np.ndarray
    rel_positions: Mapping[int, np.ndarray]
    geo: GeoPoint | None
    mode: Mode
    residual: float
    frames: tuple[int, ...] = ()


@dataclass(frozen=True)
class TriangulationFailure:
    sign_id: int
    class_label: str
    reason: FailureReason
    mode: Mode
    frames: tuple[int, ...] = ()
    message: str = ""


@dataclass
class BAResult:
    point: np.ndarray
    residual: float
    """Mean reprojection error in pixels at the returned point."""
    cost: float
    initial_cost: float
    iterations: int
    cost_history: list[float] = field(default_factory=list)
    """Cost after the start and after every accepted step."""


@dataclass(frozen=True)
class TriangulationConfig:
    window: int = 25
    dims: int = 3
    ref: MercatorRef | None = None
    ba_max_iter: int = BA_MAX_ITER
    ba_grad_tol: float = BA_GRAD_TOL

    def __post_init__(self):
        if self.window < 0:
            raise ValueError("window must be non-negative")
        if self.dims not in (2, 3):
            raise ValueError("dims must be 2 or 3")
        if not (self.ba_max_iter > 0 and self.ba_grad_tol > 0):
            raise ValueError("BA tolerances must be positive")


def _pose_arrays(poses, frame_ids: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Rotations ``(m, 3, 3)`` and centres ``(m, 3)`` for ``frame_ids``.

    ``poses`` is a :class:`Trajectory`, a mapping frame_id -> FramePose, or a
    sequence of FramePose.
    """
    if isinstance(poses, Trajectory):
        idx = [poses.index_of(f) for f in frame_ids]
        return poses.rotations[idx], poses.positions[idx]
    if not isinstance(poses, Mapping):
        poses = {p.frame_id: p for p in poses}
    sel = [poses[f] for f in frame_ids]
    return np.array([p.rotation for p in sel]), np.array([p.position for p in sel])


def _undistort_pixels(uv: np.ndarray, k: CameraIntrinsics, d: RadialDistortion) -> np.ndarray:
    return k.to_pixel(undistort(k.to_normalized(uv), d))


def ray_directions(pixels: np.ndarray, k: CameraIntrinsics, rotations: np.ndarray) -> np.ndarray:
    """Unit world-frame directions of back-projected (undistorted) pixels."""
    xy = k.to_normalized(pixels)
    d_cam = np.column_stack([xy, np.ones(len(xy))])
    d_cam /= np.linalg.norm(d_cam, axis=1, keepdims=True)
    return np.einsum("nij,nj->ni", rotations, d_cam)


def midpoint_from_rays(centers: np.ndarray, directions: np.ndarray) -> np.ndarray:
    """Point minimising the summed squared perpendicular distance to all rays.

    Raises:
        DegenerateRays: if the normal matrix is singular (parallel rays).
    """
    centers = np.asarray(centers, dtype=float)
    d = np.asarray(directions, dtype=float)
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    origin = centers.mean(axis=0)
    c = centers - origin
    proj = np.eye(3)[None] - d[:, :, None] * d[:, None, :]
    A = proj.sum(axis=0)
    b = np.einsum("nij,nj->i", proj, c)
    eig = np.linalg.eigvalsh(A)
    if eig[0] <= RAY_COND_TOL * eig[-1]:
        raise DegenerateRays("rays are parallel or share a single viewpoint")
    return np.linalg.solve(A, b) + origin


def midpoint_triangulate(track: SignTrack, poses, k: CameraIntrinsics, d: RadialDistortion) -> np.ndarray:
    """Linear midpoint estimate of a sign from its undistorted observations."""
    if len(track) < 2:
        raise DegenerateRays("need at least two observations")
    R, C = _pose_arrays(poses, track.frame_ids)
    uv = _undistort_pixels(track.pixels, k, d)
    return midpoint_from_rays(C, ray_directions(uv, k, R))


def _residuals(p, uv, k: CameraIntrinsics, R, C, jac: bool = False):
    q = np.einsum("nji,nj->ni", R, p - C)
    x, y, z = q[:, 0], q[:, 1], q[:, 2]
    r = np.column_stack([k.fx * x / z + k.cx - uv[:, 0], k.fy * y / z + k.cy - uv[:, 1]]).ravel()
    if not jac:
        return r
    dq = np.zeros((len(q), 2, 3))
    dq[:, 0, 0] = k.fx / z
    dq[:, 0, 2] = -k.fx * x / (z * z)
    dq[:, 1, 1] = k.fy / z
    dq[:, 1, 2] = -k.fy * y / (z * z)
    # dq/dp = R^T
    J = np.einsum("nak,njk->naj", dq, R).reshape(-1, 3)
    return r, J


def reprojection_cost(point, uv, k: CameraIntrinsics, rotations, centers) -> float:
    """Sum of squared reprojection errors (px^2) of a world point against undistorted pixels."""
    r = _residuals(np.asarray(point, float), np.asarray(uv, float), k, rotations, centers)
    return float(r @ r)


def reprojection_gradient(point, uv, k: CameraIntrinsics, rotations, centers) -> np.ndarray:
    r, J = _residuals(np.asarray(point, float), np.asarray(uv, float), k, rotations, centers, jac=True)
    return 2.0 * J.T @ r


def refine_points(initial, uv, k: CameraIntrinsics, rotations, centers,
                  max_iter: int = BA_MAX_ITER, grad_tol: float = BA_GRAD_TOL) -> BAResult:
    """Levenberg-Marquardt refinement of one 3D point with poses and intrinsics fixed.

    Damping starts at 1e-3 and is multiplied by 10 on a rejected step and
    divided by 10 on an accepted one, so the cost never increases.

    Raises:
        BehindCamera: if ``initial`` is not in front of any camera.
        NonConvergence: if ``max_iter`` trial steps pass without the gradient
            infinity-norm dropping to ``grad_tol``.
    """
    uv = np.asarray(uv, dtype=float)
    R = np.asarray(rotations, dtype=float)
    origin = np.asarray(centers, dtype=float).mean(axis=0)
    C = np.asarray(centers, dtype=float) - origin
    p = np.asarray(initial, dtype=float) - origin
    depths = np.einsum("nj,nj->n", R[:, :, 2], p - C)
    if not np.any(depths > 0):
        raise BehindCamera("initial point is behind every camera")

    r, J = _residuals(p, uv, k, R, C, jac=True)
    cost = float(r @ r)
    initial_cost = cost
    history = [cost]
    lam = BA_INITIAL_DAMPING
    converged = False
    it = 0
    while it < max_iter:
        g = J.T @ r
        if np.max(np.abs(2.0 * g)) <= grad_tol:
            converged = True
            break
        it += 1
        H = J.T @ J
        Hd = H + lam * np.diag(np.diag(H))
        try:
            step = -np.linalg.solve(Hd, g)
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        p_new = p + step
        with np.errstate(divide="ignore", invalid="ignore"):
            r_new = _residuals(p_new, uv, k, R, C)
        cost_new = float(r_new @ r_new)
        if np.isfinite(cost_new) and cost_new <= cost:
            small_step = np.linalg.norm(step) <= 1e-15 * (np.linalg.norm(p) + 1e-15)
            p, cost = p_new, cost_new
            r, J = _residuals(p, uv, k, R, C, jac=True)
            history.append(cost)
            lam = max(lam / 10.0, 1e-15)
            if small_step:
                converged = True
                break
        else:
            lam *= 10.0
            if lam > 1e16:
                # no descent possible at machine precision
                converged = bool(np.max(np.abs(2.0 * g)) <= max(grad_tol, 1e-8 * (1.0 + cost)))
                break
    if not converged and np.max(np.abs(2.0 * (J.T @ r))) <= grad_tol:
        converged = True
    if not converged:
        raise NonConvergence(f"bundle adjustment did not converge in {max_iter} iterations")
    res_px = float(np.mean(np.linalg.norm(r.reshape(-1, 2), axis=1)))
    return BAResult(p + origin, res_px, cost, initial_cost, it, history)


def refine_ba(initial, track: SignTrack, poses, k: CameraIntrinsics, d: RadialDistortion,
              max_iter: int = BA_MAX_ITER, grad_tol: float = BA_GRAD_TOL) -> BAResult:
    R, C = _pose_arrays(poses, track.frame_ids)
    uv = _undistort_pixels(track.pixels, k, d)
    return refine_points(initial, uv, k, R, C, max_iter=max_iter, grad_tol=grad_tol)


def relative_positions(p_abs, track: SignTrack, poses) -> dict[int, np.ndarray]:
    """Camera-frame coordinates of ``p_abs`` in every frame that observed the sign."""
    R, C = _pose_arrays(poses, track.frame_ids)
    q = np.einsum("nji,nj->ni", R, np.asarray(p_abs, dtype=float) - C)
    return {f: q[i] for i, f in enumerate(track.frame_ids)}


def short_frames(track: SignTrack, traj: Trajectory, window: int) -> list[int]:
    """Trajectory frames within ``window`` frames of any observation of ``track``."""
    idx = np.array([traj.index_of(f) for f in track.frame_ids])
    all_idx = np.arange(len(traj))
    lo = np.searchsorted(idx, all_idx - window, side="left")
    near = (lo < len(idx)) & (idx[np.minimum(lo, len(idx) - 1)] <= all_idx + window)
    return [int(f) for f in traj.frame_ids[near]]


def triangulate_track(track: SignTrack, traj: Trajectory, calib: Calibration,
                      mode: Mode | str = Mode.FULL, config: TriangulationConfig | None = None,
                      full_alignment: SimilarityTransform | None = None):
    """Triangulate one sign from unaligned poses and GPS.

    Full mode aligns the whole trajectory to GPS; short mode re-fits the
    alignment on the frames within ``config.window`` of the sign's
    observations. The aligned poses feed the midpoint estimate, which bundle
    adjustment refines. Any non-positive relative depth discards the sign.

    Returns a :class:`TriangulatedSign` or a :class:`TriangulationFailure`.
    """
    config = config or TriangulationConfig()
    mode = Mode(mode)
    frames = tuple(track.frame_ids)

    def fail(reason: FailureReason, msg: str = "") -> TriangulationFailure:
        return TriangulationFailure(track.sign_id, track.class_label, reason, mode, frames, msg)

    missing = [f for f in frames if not traj.has_frame(f)]
    if missing:
        raise KeyError(f"sign {track.sign_id}: no pose for frames {missing}")
    if len(track) < 2:
        return fail(FailureReason.INSUFFICIENT_OBSERVATIONS, "a single observation cannot be triangulated")

    try:
        if mode is Mode.FULL and full_alignment is not None:
            tf = full_alignment
        else:
            fit_frames = None if mode is Mode.FULL else short_frames(track, traj, config.window)
            tf = fit_to_gps(traj, fit_frames, config.dims)
    except DegenerateGeometry as exc:
        return fail(FailureReason.DEGENERATE_ALIGNMENT, str(exc))

    idx = [traj.index_of(f) for f in frames]
    R = np.einsum("ij,njk->nik", tf.R, traj.rotations[idx])
    C = tf.apply(traj.positions[idx])
    k = calib.intrinsics
    uv = _undistort_pixels(track.pixels, k, calib.distortion)

    try:
        p0 = midpoint_from_rays(C, ray_directions(uv, k, R))
    except DegenerateRays as exc:
        return fail(FailureReason.DEGENERATE_RAYS, str(exc))
    if not np.any(np.einsum("nj,nj->n", R[:, :, 2], p0 - C) > 0):
        return fail(FailureReason.NEGATIVE_DEPTH, "midpoint estimate lies behind every camera")
    try:
        ba = refine_points(p0, uv, k, R, C, max_iter=config.ba_max_iter, grad_tol=config.ba_grad_tol)
    except NonConvergence as exc:
        return fail(FailureReason.NON_CONVERGENCE, str(exc))

    q = np.einsum("nji,nj->ni", R, ba.point - C)
    if np.any(~(q[:, 2] > 0)):
        bad = [frames[i] for i in np.flatnonzero(~(q[:, 2] > 0))]
        return fail(FailureReason.NEGATIVE_DEPTH, f"non-positive relative depth in frames {bad}")
    rel = {f: q[i] for i, f in enumerate(frames)}
    geo = from_mercator(ba.point, config.ref) if config.ref is not None else None
    return TriangulatedSign(track.sign_id, track.class_label, ba.point, rel, geo, mode, ba.residual, frames)


def triangulate_journey(tracks: Iterable[SignTrack], traj: Trajectory, calib: Calibration,
                        mode: Mode | str = Mode.FULL, config: TriangulationConfig | None = None) -> list:
    """Triangulate every track; results (successes and failures) are ordered by sign id."""
    config = config or TriangulationConfig()
    mode = Mode(mode)
    full_tf = None
    if mode is Mode.FULL:
        try:
            full_tf = fit_to_gps(traj, None, config.dims)
        except DegenerateGeometry:
            full_tf = None
    out = [triangulate_track(t, traj, calib, mode, config, full_tf) for t in tracks]
    return sorted(out, key=lambda r: r.sign_id)
