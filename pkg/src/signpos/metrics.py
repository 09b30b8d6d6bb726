"""Trajectory and sign-positioning error metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .align import FramePose, umeyama_fit
from .errors import DegenerateGeometry, NoMatches
from .triangulate import TriangulatedSign

MATCH_GATE = 5.0


@dataclass(frozen=True, eq=False)
class SignGroundTruth:
    sign_id: int
    abs_position: np.ndarray
    class_label: str = ""
    rel_positions: Mapping[int, np.ndarray] | None = None

    def __post_init__(self):
        p = np.asarray(self.abs_position, dtype=float)
        if p.shape != (3,) or not np.all(np.isfinite(p)):
            raise ValueError(f"sign {self.sign_id}: abs_position must be a finite 3-vector")
        object.__setattr__(self, "abs_position", p)


def _positions(traj) -> tuple[np.ndarray, list | None]:
    if len(traj) and isinstance(traj[0], FramePose):
        return np.array([p.position for p in traj]), [p.frame_id for p in traj]
    return np.asarray(traj, dtype=float).reshape(-1, 3), None


def _co_indexed(estimated, reference) -> tuple[np.ndarray, np.ndarray]:
    est, est_ids = _positions(estimated)
    ref, ref_ids = _positions(reference)
    if est.shape != ref.shape:
        raise ValueError(f"trajectories differ in length: {len(est)} vs {len(ref)}")
    if est_ids is not None and ref_ids is not None and est_ids != ref_ids:
        raise ValueError("trajectories are not co-indexed by frame id")
    return est, ref


def aligned_rmse(est: np.ndarray, ref: np.ndarray) -> float:
    tf = umeyama_fit(est, ref)
    return math.sqrt(tf.residual)


def ate_full(estimated, reference) -> float:
    """RMSE of camera centres after one similarity alignment of the whole trajectory.

    Accepts lists of :class:`FramePose` (matched by frame id) or ``(n, 3)`` arrays.
    """
    est, ref = _co_indexed(estimated, reference)
    if len(est) < 3:
        raise ValueError("ATE needs at least three frames")
    return aligned_rmse(est, ref)


class WindowedATE(NamedTuple):
    mean: float
    std: float
    windows: int
    skipped: int


def ate_5(estimated, reference, window: int = 5) -> WindowedATE:
    """ATE over every run of ``window`` consecutive frames, each aligned on its own.

    Degenerate (collinear or static) windows are skipped and counted.
    """
    est, ref = _co_indexed(estimated, reference)
    if len(est) < window:
        raise ValueError(f"need at least {window} frames")
    errs = []
    skipped = 0
    for i in range(len(est) - window + 1):
        try:
            errs.append(aligned_rmse(est[i:i + window], ref[i:i + window]))
        except DegenerateGeometry:
            skipped += 1
    if not errs:
        raise DegenerateGeometry("every window was degenerate")
    errs = np.array(errs)
    return WindowedATE(float(errs.mean()), float(errs.std()), len(errs), skipped)


@dataclass
class SignMatch:
    sign_id: int
    gt_id: int
    abs_error: float
    rel_error: float


@dataclass
class SignErrorReport:
    m: int
    rel_mean: float
    abs_mean: float
    matches: list[SignMatch] = field(default_factory=list)

    @property
    def rel_per_m(self) -> float:
        return normalized_error(self.rel_mean, self.m)


@dataclass
class ErrorReport:
    """Full-vs-short comparison over signs triangulated in both modes."""

    e_f: float
    e_s: float
    m: int
    abs_mean: float

    @property
    def e_f_per_m(self) -> float:
        return normalized_error(self.e_f, self.m)

    @property
    def e_s_per_m(self) -> float:
        return normalized_error(self.e_s, self.m)


def normalized_error(mean_error: float, m: int) -> float:
    """Mean error divided by the number of triangulated signs (``e / m``)."""
    return mean_error / m if m > 0 else math.nan


def match_signs(results: Sequence[TriangulatedSign], gt: Sequence[SignGroundTruth],
                gate: float = MATCH_GATE) -> list[tuple[TriangulatedSign, SignGroundTruth]]:
    """Pair results with ground truth: same id first, then greedy nearest within ``gate`` metres."""
    res = sorted(results, key=lambda r: r.sign_id)
    gts = sorted(gt, key=lambda g: g.sign_id)
    by_id = {g.sign_id: g for g in gts}
    pairs = []
    used: set[int] = set()
    rest = []
    for r in res:
        g = by_id.get(r.sign_id)
        if g is not None:
            pairs.append((r, g))
            used.add(g.sign_id)
        else:
            rest.append(r)
    free = [g for g in gts if g.sign_id not in used]
    cand = []
    for r in rest:
        for g in free:
            d = float(np.linalg.norm(r.abs_position - g.abs_position))
            if d <= gate:
                cand.append((d, r.sign_id, g.sign_id, r, g))
    cand.sort(key=lambda c: c[:3])
    taken_r: set[int] = set()
    for _, rid, gid, r, g in cand:
        if rid in taken_r or gid in used:
            continue
        pairs.append((r, g))
        taken_r.add(rid)
        used.add(gid)
    return sorted(pairs, key=lambda p: p[0].sign_id)


def _rel_error(r: TriangulatedSign, g: SignGroundTruth) -> float:
    if not g.rel_positions:
        return math.nan
    errs = [np.linalg.norm(np.asarray(r.rel_positions[f]) - np.asarray(g.rel_positions[f]))
            for f in sorted(r.rel_positions) if f in g.rel_positions]
    return float(np.mean(errs)) if errs else math.nan


def sign_errors(results: Sequence, gt: Sequence[SignGroundTruth], gate: float = MATCH_GATE) -> SignErrorReport:
    """Relative and absolute positioning errors of triangulated signs.

    ``results`` may contain failure records; only :class:`TriangulatedSign`
    entries count. The relative error of a sign is the mean over its
    observation frames of the camera-frame position error; signs without
    ground-truth relative positions contribute only to the absolute error.

    Raises:
        NoMatches: if no result matches any ground-truth sign.
    """
    ok = [r for r in results if isinstance(r, TriangulatedSign)]
    pairs = match_signs(ok, gt, gate)
    if not pairs:
        raise NoMatches("no triangulated sign matches the ground truth")
    matches = [SignMatch(r.sign_id, g.sign_id, float(np.linalg.norm(r.abs_position - g.abs_position)),
                         _rel_error(r, g)) for r, g in pairs]
    rel = [m.rel_error for m in matches if not math.isnan(m.rel_error)]
    return SignErrorReport(
        m=len(matches),
        rel_mean=float(np.mean(rel)) if rel else math.nan,
        abs_mean=float(np.mean([m.abs_error for m in matches])),
        matches=matches,
    )


def error_report(full_results: Sequence, short_results: Sequence, gt: Sequence[SignGroundTruth],
                 gate: float = MATCH_GATE) -> ErrorReport:
    """Mean relative errors in full (``e_f``) and short (``e_s``) mode.

    Both means run over the signs triangulated in both modes, so ``m`` is
    shared; ``abs_mean`` is taken from short mode.
    """
    full_ok = {r.sign_id: r for r in full_results if isinstance(r, TriangulatedSign)}
    short_ok = {r.sign_id: r for r in short_results if isinstance(r, TriangulatedSign)}
    common = sorted(set(full_ok) & set(short_ok))
    if not common:
        raise NoMatches("no sign was triangulated in both modes")
    rep_f = sign_errors([full_ok[i] for i in common], gt, gate)
    rep_s = sign_errors([short_ok[i] for i in common], gt, gate)
    return ErrorReport(rep_f.rel_mean, rep_s.rel_mean, rep_s.m, rep_s.abs_mean)
