"""Trajectory utilities: poses, RDP turn extraction and similarity alignment to GPS."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateGeometry, NoTurns

ORTHO_TOL = 1e-9
COLLINEAR_TOL = 1e-8


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FramePose:
    """Camera pose of one frame, stored world-from-camera.

    ``rotation`` maps camera-frame vectors into the world frame and
    ``position`` is the camera centre in world coordinates.
    """

    frame_id: int
    rotation: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        R = _frozen(self.rotation)
        c = _frozen(self.position)
        if R.shape != (3, 3) or c.shape != (3,):
            raise ValueError("rotation must be 3x3 and position a 3-vector")
        if not np.allclose(R.T @ R, np.eye(3), atol=ORTHO_TOL, rtol=0) or np.linalg.det(R) <= 0:
            raise ValueError(f"frame {self.frame_id}: rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "position", c)
        object.__setattr__(self, "frame_id", int(self.frame_id))

    def world_to_camera(self, p) -> np.ndarray:
        """Camera-frame coordinates ``R_cw p + t_cw`` of world point(s) ``p``."""
        return (np.asarray(p, dtype=float) - self.position) @ self.rotation

    def camera_to_world(self, q) -> np.ndarray:
        return np.asarray(q, dtype=float) @ self.rotation.T + self.position


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Co-indexed camera poses and metric GPS positions of one journey."""

    poses: tuple[FramePose, ...]
    gps: np.ndarray
    _index: dict = field(init=False, repr=False)
    _rotations: np.ndarray = field(init=False, repr=False)
    _positions: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        poses = tuple(self.poses)
        gps = _frozen(self.gps)
        if gps.ndim != 2 or gps.shape[1] not in (2, 3):
            raise ValueError("gps must be an (n, 2) or (n, 3) array")
        if gps.shape[1] == 2:
            gps = _frozen(np.column_stack([gps, np.zeros(len(gps))]))
        if len(poses) != len(gps):
            raise ValueError(f"{len(poses)} poses but {len(gps)} GPS positions")
        ids = [p.frame_id for p in poses]
        if any(b <= a for a, b in zip(ids, ids[1:])):
            raise ValueError("frame ids must be strictly increasing")
        object.__setattr__(self, "poses", poses)
        object.__setattr__(self, "gps", gps)
        object.__setattr__(self, "_index", {fid: i for i, fid in enumerate(ids)})
        object.__setattr__(self, "_rotations", _frozen([p.rotation for p in poses]).reshape(-1, 3, 3))
        object.__setattr__(self, "_positions", _frozen([p.position for p in poses]).reshape(-1, 3))

    def __len__(self):
        return len(self.poses)

    @property
    def frame_ids(self) -> np.ndarray:
        return np.array([p.frame_id for p in self.poses], dtype=int)

    @property
    def positions(self) -> np.ndarray:
        """Camera centres, shape ``(n, 3)``."""
        return self._positions

    @property
    def rotations(self) -> np.ndarray:
        """World-from-camera rotations, shape ``(n, 3, 3)``."""
        return self._rotations

    def index_of(self, frame_id: int) -> int:
        return self._index[frame_id]

    def has_frame(self, frame_id: int) -> bool:
        return frame_id in self._index

    def pose(self, frame_id: int) -> FramePose:
        return self.poses[self._index[frame_id]]

    def select(self, frame_ids: Iterable[int]) -> "Trajectory":
        idx = sorted(self._index[f] for f in frame_ids)
        return Trajectory(tuple(self.poses[i] for i in idx), self.gps[idx])


@dataclass(frozen=True, eq=False)
class SimilarityTransform:
    """``x -> s R x + t``; ``residual`` is the mean squared fit error when produced by a fit."""

    s: float
    R: np.ndarray
    t: np.ndarray
    residual: float = 0.0

    def __post_init__(self):
        R = _frozen(self.R)
        if not self.s > 0:
            raise ValueError("scale must be positive")
        if not np.allclose(R.T @ R, np.eye(3), atol=ORTHO_TOL, rtol=0) or np.linalg.det(R) <= 0:
            raise ValueError("R must be a proper rotation")
        object.__setattr__(self, "s", float(self.s))
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", _frozen(self.t))

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        return self.s * np.asarray(points, dtype=float) @ self.R.T + self.t

    def inverse(self) -> "SimilarityTransform":
        return SimilarityTransform(1.0 / self.s, self.R.T, -(self.R.T @ self.t) / self.s)

    def compose(self, other: "SimilarityTransform") -> "SimilarityTransform":
        """Transform equal to applying ``other`` first, then ``self``."""
        return SimilarityTransform(self.s * other.s, self.R @ other.R, self.s * self.R @ other.t + self.t)


def _segment_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    return np.linalg.norm(points - (a + t[:, None] * ab), axis=1)


def rdp_simplify(points, epsilon: float) -> list[int]:
    """Ramer-Douglas-Peucker simplification of an ordered polyline.

    Distances are measured to the chord segment, so every discarded point is
    within ``epsilon`` of the simplified polyline. Returns sorted indices of
    the retained points; the first and last are always kept.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or len(pts) < 2:
        raise ValueError("need at least two points")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    keep = {0, len(pts) - 1}
    stack = [(0, len(pts) - 1)]
    while stack:
        first, last = stack.pop()
        if last - first < 2:
            continue
        d = _segment_distances(pts[first + 1:last], pts[first], pts[last])
        k = int(np.argmax(d))
        if d[k] > epsilon:
            split = first + 1 + k
            keep.add(split)
            stack.append((first, split))
            stack.append((split, last))
    return sorted(keep)


def extract_turn_segments(traj: Trajectory, epsilon: float = 2.0, window: int = 25) -> list[tuple[int, int]]:
    """Frame-id ranges around each turn of the GPS track, for external self-calibration.

    Each interior RDP vertex of the planar GPS track yields the inclusive
    range of ``window`` frames either side of it (clamped to the trajectory);
    overlapping ranges are merged.

    Raises:
        NoTurns: when the simplified track is a single straight segment.
    """
    return turn_ranges(traj.frame_ids, traj.gps[:, :2], epsilon, window)


def turn_ranges(frame_ids, xy, epsilon: float = 2.0, window: int = 25) -> list[tuple[int, int]]:
    """:func:`extract_turn_segments` on bare frame ids and planar GPS positions."""
    if window < 2:
        raise ValueError("window must be at least 2 frames")
    ids = np.asarray(frame_ids, dtype=int)
    keep = rdp_simplify(np.asarray(xy, dtype=float)[:, :2], epsilon)
    apices = keep[1:-1]
    if not apices:
        raise NoTurns(f"no turns found at epsilon={epsilon} m")
    n = len(ids)
    merged: list[list[int]] = []
    for i in apices:
        lo, hi = max(0, i - window), min(n - 1, i + window)
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return [(int(ids[lo]), int(ids[hi])) for lo, hi in merged]


def umeyama_fit(source, target) -> SimilarityTransform:
    """Least-squares similarity mapping ``source`` onto ``target`` (Umeyama's closed form).

    Minimises ``mean ||target_j - (s R source_j + t)||^2``; the achieved value
    is returned as ``residual``. The SVD is sign-corrected so ``R`` is never a
    reflection.

    Raises:
        DegenerateGeometry: if either point set is coincident or the source is
            collinear (rotation about the line would be undetermined).
    """
    src = np.asarray(source, dtype=float)
    dst = np.asarray(target, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError(f"expected matching (n, 3) arrays, got {src.shape} and {dst.shape}")
    n = len(src)
    if n < 3:
        raise DegenerateGeometry("need at least three correspondences")

    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    sv = np.linalg.svd(xs, compute_uv=False)
    scale_ref = max(1.0, float(np.abs(src).max()))
    if sv[0] <= 1e-12 * scale_ref:
        raise DegenerateGeometry("source points are coincident")
    if sv[1] <= COLLINEAR_TOL * sv[0]:
        raise DegenerateGeometry("source points are collinear")
    var_s = float(np.sum(xs * xs)) / n

    cov = xd.T @ xs / n
    U, D, Vt = np.linalg.svd(cov)
    S = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2] = -1.0
    R = (U * S) @ Vt
    s = float(D @ S) / var_s
    if not s > 1e-12:
        raise DegenerateGeometry("target points are coincident")
    t = mu_d - s * R @ mu_s
    resid = dst - (s * src @ R.T + t)
    return SimilarityTransform(s, R, t, float(np.mean(np.sum(resid * resid, axis=1))))


def apply_similarity(tf: SimilarityTransform, poses: Sequence[FramePose]) -> list[FramePose]:
    """Map camera centres by ``s R c + t`` and rotate orientations into the new world frame."""
    return [FramePose(p.frame_id, tf.R @ p.rotation, tf.apply(p.position)) for p in poses]


def fit_to_gps(traj: Trajectory, frame_ids: Iterable[int] | None = None, dims: int = 3) -> SimilarityTransform:
    """Similarity taking the estimated camera centres onto GPS.

    ``frame_ids`` restricts the fit to a subset of frames (short mode). With
    ``dims=2`` the GPS altitude is replaced by zero before fitting.
    """
    if dims not in (2, 3):
        raise ValueError("dims must be 2 or 3")
    idx = np.arange(len(traj)) if frame_ids is None else np.array(
        sorted(traj.index_of(f) for f in frame_ids), dtype=int)
    target = traj.gps[idx].copy()
    if dims == 2:
        target[:, 2] = 0.0
    return umeyama_fit(traj.positions[idx], target)


def align_trajectory(traj: Trajectory, frame_ids: Iterable[int] | None = None,
                     dims: int = 3) -> tuple[SimilarityTransform, Trajectory]:
    """Fit with :func:`fit_to_gps` and apply the transform to every pose."""
    tf = fit_to_gps(traj, frame_ids, dims)
    return tf, Trajectory(tuple(apply_similarity(tf, traj.poses)), traj.gps)
