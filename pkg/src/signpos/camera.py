"""Pinhole intrinsics, two-coefficient radial distortion and parameter perturbation.

Points are plain numpy arrays: a single point has shape ``(2,)`` (or ``(3,)``
for camera-frame points) and batches have shape ``(N, 2)`` / ``(N, 3)``.
Normalized coordinates are pixel coordinates mapped through ``K^-1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BehindCamera, InvalidCalibration, InvalidPerturbation, NonConvergence

UNDISTORT_TOL = 1e-10
UNDISTORT_MAX_ITER = 50
WORKING_RADIUS_MARGIN = 1.05
MONOTONE_SAMPLES = 64


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy, self.width, self.height)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidCalibration(f"non-finite intrinsics: {vals}")
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidCalibration(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise InvalidCalibration(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_normalized(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        return np.stack([(uv[..., 0] - self.cx) / self.fx, (uv[..., 1] - self.cy) / self.fy], axis=-1)

    def to_pixel(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return np.stack([self.fx * xy[..., 0] + self.cx, self.fy * xy[..., 1] + self.cy], axis=-1)

    def contains(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        return (uv[..., 0] >= 0) & (uv[..., 0] <= self.width) & (uv[..., 1] >= 0) & (uv[..., 1] <= self.height)

    @property
    def corner_radius(self) -> float:
        """Largest normalized radius over the four image corners."""
        corners = np.array([[0, 0], [self.width, 0], [0, self.height], [self.width, self.height]], float)
        return float(np.max(np.linalg.norm(self.to_normalized(corners), axis=1)))

    @property
    def working_radius(self) -> float:
        return self.corner_radius * WORKING_RADIUS_MARGIN


@dataclass(frozen=True)
class RadialDistortion:
    lambda1: float = 0.0
    lambda2: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.lambda1) and math.isfinite(self.lambda2)):
            raise InvalidCalibration(f"non-finite distortion ({self.lambda1}, {self.lambda2})")

    def factor(self, r2):
        """Radial scale ``1 + l1 r^2 + l2 r^4`` evaluated at squared radius ``r2``."""
        return 1.0 + self.lambda1 * r2 + self.lambda2 * r2 * r2

    def is_monotone(self, radius: float, samples: int = MONOTONE_SAMPLES) -> bool:
        """True if the factor is positive and ``r * factor(r)`` strictly increases on [0, radius]."""
        r = np.linspace(0.0, radius, samples)
        r2 = r * r
        deriv = 1.0 + 3.0 * self.lambda1 * r2 + 5.0 * self.lambda2 * r2 * r2
        return bool(np.all(self.factor(r2) > 0) and np.all(deriv > 0))


@dataclass(frozen=True)
class Calibration:
    """Intrinsics plus distortion, validated so the distortion is invertible over the image."""

    intrinsics: CameraIntrinsics
    distortion: RadialDistortion = field(default_factory=RadialDistortion)

    def __post_init__(self):
        if not self.distortion.is_monotone(self.intrinsics.working_radius):
            raise InvalidCalibration(
                f"distortion ({self.distortion.lambda1}, {self.distortion.lambda2}) is not monotone "
                f"up to normalized radius {self.intrinsics.working_radius:.4f}"
            )

    def undistort_pixels(self, uv) -> np.ndarray:
        """Map distorted pixel observations to undistorted pixels under the same ``K``."""
        k = self.intrinsics
        return k.to_pixel(undistort(k.to_normalized(uv), self.distortion))

    def distort_pixels(self, uv) -> np.ndarray:
        k = self.intrinsics
        return k.to_pixel(distort(k.to_normalized(uv), self.distortion))

    def to_dict(self) -> dict:
        k, d = self.intrinsics, self.distortion
        return {
            "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
            "width": k.width, "height": k.height,
            "lambda1": d.lambda1, "lambda2": d.lambda2,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Calibration":
        keys = ("fx", "fy", "cx", "cy", "width", "height", "lambda1", "lambda2")
        missing = [key for key in keys if key not in data]
        if missing:
            raise InvalidCalibration(f"calibration is missing keys {missing}")
        for key in keys:
            if isinstance(data[key], bool) or not isinstance(data[key], (int, float)):
                raise InvalidCalibration(f"calibration key {key!r} must be a number")
        k = CameraIntrinsics(
            float(data["fx"]), float(data["fy"]), float(data["cx"]), float(data["cy"]),
            int(data["width"]), int(data["height"]),
        )
        return cls(k, RadialDistortion(float(data["lambda1"]), float(data["lambda2"])))


def distort(p_u, d: RadialDistortion) -> np.ndarray:
    p_u = np.asarray(p_u, dtype=float)
    r2 = np.sum(p_u * p_u, axis=-1, keepdims=True)
    return d.factor(r2) * p_u


def undistort(p_d, d: RadialDistortion, tol: float = UNDISTORT_TOL,
              max_iter: int = UNDISTORT_MAX_ITER) -> np.ndarray:
    """Invert :func:`distort` by fixed-point iteration.

    Points still above ``tol`` after ``max_iter`` sweeps (coefficients close to
    the non-monotone boundary contract slowly) get a few safeguarded Newton
    steps on the radial equation ``r * factor(r) = r_d``.

    Raises:
        NonConvergence: if some point cannot be inverted to ``tol``.
    """
    p_d = np.asarray(p_d, dtype=float)
    flat = p_d.reshape(-1, 2)
    p_u = flat.copy()
    active = np.ones(len(flat), dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        cur = p_u[idx]
        f = d.factor(np.sum(cur * cur, axis=1))
        if np.any(f <= 0):
            raise NonConvergence("distortion factor became non-positive; coefficients outside monotone regime")
        p_u[idx] = flat[idx] / f[:, None]
        err = np.max(np.abs(distort(p_u[idx], d) - flat[idx]), axis=1)
        active[idx[err <= tol]] = False

    idx = np.flatnonzero(active)
    if idx.size:
        p_u[idx] = _newton_radial(flat[idx], p_u[idx], d, tol)
        err = np.max(np.abs(distort(p_u[idx], d) - flat[idx]), axis=1)
        if np.any(~(err <= tol)):
            raise NonConvergence(
                f"undistortion did not reach {tol:g} for {int(np.sum(~(err <= tol)))} point(s); "
                "coefficients may be outside the monotone regime"
            )
    return p_u.reshape(p_d.shape)


def _newton_radial(p_d, p_u, d: RadialDistortion, tol: float, max_iter: int = 20) -> np.ndarray:
    r_d = np.linalg.norm(p_d, axis=1)
    r = np.linalg.norm(p_u, axis=1)
    for _ in range(max_iter):
        r2 = r * r
        g = r * d.factor(r2) - r_d
        dg = 1.0 + 3.0 * d.lambda1 * r2 + 5.0 * d.lambda2 * r2 * r2
        if np.any(dg <= 0):
            raise NonConvergence("radial distortion is not monotone at the requested radius")
        r = r - g / dg
        if np.all(np.abs(g) <= 0.1 * tol):
            break
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(r_d > 0, r / r_d, 1.0)
    return p_d * scale[:, None]


def project(p_cam, k: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection (with perspective division) of camera-frame points to pixels."""
    p_cam = np.asarray(p_cam, dtype=float)
    z = p_cam[..., 2]
    if np.any(~(z > 0)):
        raise BehindCamera("point has non-positive depth")
    return np.stack([k.fx * p_cam[..., 0] / z + k.cx, k.fy * p_cam[..., 1] / z + k.cy], axis=-1)


def perturb(k: CameraIntrinsics, d: RadialDistortion, focal: float = 0.0, principal: float = 0.0,
            distortion: float | tuple[float, float] = 0.0) -> tuple[CameraIntrinsics, RadialDistortion]:
    """Scale each parameter group by ``1 + pct / 100``.

    ``focal`` scales (fx, fy) jointly, ``principal`` scales (cx, cy) jointly.
    ``distortion`` scales (lambda1, lambda2) jointly, or independently when a
    pair of percentages is given.

    Raises:
        InvalidPerturbation: for percentages outside [-100, 100] or results
            that violate the intrinsics/distortion invariants.
    """
    d_pcts = tuple(distortion) if isinstance(distortion, (tuple, list)) else (distortion, distortion)
    for pct in (focal, principal, *d_pcts):
        if not -100.0 <= pct <= 100.0:
            raise InvalidPerturbation(f"percentage {pct} outside [-100, 100]")
    gf = 1.0 + focal / 100.0
    gp = 1.0 + principal / 100.0
    try:
        k2 = replace(k, fx=k.fx * gf, fy=k.fy * gf, cx=k.cx * gp, cy=k.cy * gp)
        d2 = RadialDistortion(d.lambda1 * (1.0 + d_pcts[0] / 100.0), d.lambda2 * (1.0 + d_pcts[1] / 100.0))
        Calibration(k2, d2)
    except InvalidCalibration as exc:
        raise InvalidPerturbation(str(exc)) from exc
    return k2, d2


def perturb_calibration(calib: Calibration, focal: float = 0.0, principal: float = 0.0,
                        distortion: float | tuple[float, float] = 0.0) -> Calibration:
    k, d = perturb(calib.intrinsics, calib.distortion, focal, principal, distortion)
    return Calibration(k, d)


# KITTI raw (unrectified) ground-truth calibrations, sequences 00-02 and 04-10; 1392x512 images.
KITTI_00_02 = Calibration(
    CameraIntrinsics(960.115, 954.891, 694.792, 240.355, 1392, 512), RadialDistortion(-0.363, 0.151)
)
KITTI_04_10 = Calibration(
    CameraIntrinsics(959.198, 952.932, 694.438, 241.679, 1392, 512), RadialDistortion(-0.369, 0.158)
)
