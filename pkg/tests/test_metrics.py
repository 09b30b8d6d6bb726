import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from signpos.align import FramePose, umeyama_fit
from signpos.errors import DegenerateGeometry, NoMatches
from signpos.metrics import (
    SignGroundTruth,
    ate_5,
    ate_full,
    error_report,
    match_signs,
    normalized_error,
    sign_errors,
)
from signpos.triangulate import Mode, TriangulatedSign, TriangulationFailure, FailureReason


def curve(n=100, seed=0):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 6, n)
    return np.column_stack([30 * np.cos(t), 20 * np.sin(t), t + rng.normal(0, 0.01, n)])


def test_ate_identity_and_offset():
    x = curve()
    assert ate_full(x, x) == pytest.approx(0, abs=1e-9)
    assert ate_full(x + [5, -3, 2], x) == pytest.approx(0, abs=1e-9)
    assert tuple(ate_5(x, x))[:2] == pytest.approx((0.0, 0.0), abs=1e-9)


def test_ate_accepts_poses_and_checks_ids():
    x = curve(10)
    a = [FramePose(i, np.eye(3), p) for i, p in enumerate(x)]
    b = [FramePose(i + 1, np.eye(3), p) for i, p in enumerate(x)]
    assert ate_full(a, a) == pytest.approx(0, abs=1e-9)
    with pytest.raises(ValueError):
        ate_full(a, b)
    with pytest.raises(ValueError):
        ate_full(x[:5], x)


def test_ate_invariant_to_similarity():
    rng = np.random.default_rng(1)
    ref = curve()
    est = ref + rng.normal(0, 0.3, ref.shape)
    R = Rotation.random(random_state=3).as_matrix()
    moved = 4.0 * est @ R.T + [100, 200, 300]
    # alignment absorbs the similarity up to the fit's conditioning
    assert ate_full(moved, ref) == pytest.approx(ate_full(est, ref), abs=1e-9)


def test_ate_noise_band_and_direct_formula():
    ref = curve(200)
    for seed in range(20):
        # sigma = 0.1 m is the RMS of the per-frame 3D displacement
        est = ref + np.random.default_rng(seed).normal(0, 0.1 / math.sqrt(3), ref.shape)
        val = ate_full(est, ref)
        tf = umeyama_fit(est, ref)
        direct = math.sqrt(np.mean(np.sum((tf.apply(est) - ref) ** 2, axis=1)))
        assert val == pytest.approx(direct, rel=1e-9)
        assert 0.05 <= val <= 0.15


def test_ate_5_matches_brute_force_windows():
    rng = np.random.default_rng(2)
    ref = curve(60)
    est = ref + rng.normal(0, 0.05, ref.shape)
    vals = []
    for i in range(len(ref) - 4):
        tf = umeyama_fit(est[i:i + 5], ref[i:i + 5])
        vals.append(math.sqrt(np.mean(np.sum((tf.apply(est[i:i + 5]) - ref[i:i + 5]) ** 2, axis=1))))
    w = ate_5(est, ref)
    assert w.mean == pytest.approx(np.mean(vals), rel=1e-12)
    assert w.std == pytest.approx(np.std(vals), rel=1e-12)
    assert w.windows == len(vals) and w.skipped == 0


def test_ate_5_locality():
    # locally rigid but globally bent: a straight-ish ref against a slowly curving estimate
    ref = curve(200)
    t = np.linspace(0, 1, 200)[:, None]
    est = ref * (1 + 0.5 * t) + np.column_stack([np.zeros(200), np.zeros(200), 20 * t[:, 0] ** 2])
    assert ate_5(est, ref).mean < 0.1 * ate_full(est, ref)


def test_ate_5_skips_degenerate_windows():
    line = np.column_stack([np.arange(20.0), np.zeros(20), np.zeros(20)])
    with pytest.raises(DegenerateGeometry):
        ate_5(line, line)
    mixed = np.vstack([line[:8], curve(12) + [8, 0, 0]])
    w = ate_5(mixed, mixed)
    assert w.skipped > 0 and w.windows > 0


def test_normalisation_literal():
    assert normalized_error(0.994, 12) == pytest.approx(0.0828, abs=5e-5)
    assert round(normalized_error(0.994, 12), 3) == 0.083
    assert math.isnan(normalized_error(1.0, 0))


def ok(sid, p, rel=None, mode=Mode.SHORT):
    return TriangulatedSign(sid, "", np.asarray(p, float), rel or {}, None, mode, 0.0, tuple(rel or ()))


def gt_set():
    return [
        SignGroundTruth(1, [0, 0, 0], rel_positions={10: np.array([0, 0, 5.0]), 11: np.array([0, 0, 4.0])}),
        SignGroundTruth(2, [10, 0, 0], rel_positions={10: np.array([1, 0, 9.0])}),
        SignGroundTruth(3, [20, 0, 0]),
    ]


def test_sign_errors_identity():
    gt = gt_set()
    res = [ok(g.sign_id, g.abs_position, dict(g.rel_positions or {})) for g in gt]
    rep = sign_errors(res, gt)
    assert rep.m == 3 and rep.abs_mean == 0 and rep.rel_mean == 0


def test_sign_errors_offset_and_relative_mean():
    gt = gt_set()
    res = [ok(1, [1, 0, 0], {10: np.array([0, 0, 6.0]), 11: np.array([0, 0, 4.0])}),
           TriangulationFailure(2, "", FailureReason.NEGATIVE_DEPTH, Mode.SHORT)]
    rep = sign_errors(res, gt)
    assert rep.m == 1
    assert rep.abs_mean == pytest.approx(1.0)
    assert rep.rel_mean == pytest.approx(0.5)
    assert rep.rel_per_m == pytest.approx(0.5)


def test_sign_errors_permutation_invariant():
    gt = gt_set()
    res = [ok(1, [0.3, 0, 0], {10: np.array([0, 0.2, 5.0])}), ok(2, [10, 0.5, 0], {10: np.array([1, 0, 8.0])}),
           ok(3, [20, 0, 0.1])]
    a = sign_errors(res, gt)
    b = sign_errors(res[::-1], gt[::-1])
    assert (a.m, a.rel_mean, a.abs_mean) == (b.m, b.rel_mean, b.abs_mean)


def test_matching_gate_and_greedy():
    gt = gt_set()
    # unknown ids fall back to nearest-neighbour inside the 5 m gate
    res = [ok(101, [0.5, 0, 0]), ok(102, [0.2, 0, 0]), ok(103, [14, 0, 0])]
    pairs = match_signs(res, gt)
    assert [(r.sign_id, g.sign_id) for r, g in pairs] == [(102, 1), (103, 2)]
    with pytest.raises(NoMatches):
        sign_errors([ok(50, [100, 0, 0])], gt)


def test_error_report_uses_signs_common_to_both_modes():
    gt = gt_set()
    full = [ok(1, [2, 0, 0], {10: np.array([0, 0, 7.0])}, Mode.FULL),
            ok(2, [10, 0, 0], {10: np.array([1, 0, 10.0])}, Mode.FULL)]
    short = [ok(1, [1, 0, 0], {10: np.array([0, 0, 6.0])}),
             TriangulationFailure(2, "", FailureReason.NON_CONVERGENCE, Mode.SHORT)]
    rep = error_report(full, short, gt)
    assert rep.m == 1 and rep.e_f == pytest.approx(2.0) and rep.e_s == pytest.approx(1.0)
    assert rep.abs_mean == pytest.approx(1.0) and rep.e_s_per_m == pytest.approx(1.0)
    with pytest.raises(NoMatches):
        error_report(full, [], gt)
