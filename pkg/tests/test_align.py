import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.transform import Rotation

from signpos.align import (
    FramePose,
    SimilarityTransform,
    Trajectory,
    align_trajectory,
    apply_similarity,
    extract_turn_segments,
    fit_to_gps,
    rdp_simplify,
    turn_ranges,
    umeyama_fit,
)
from signpos.errors import DegenerateGeometry, NoTurns


def brute_rdp(pts, eps, first, last):
    """Textbook recursive RDP using point-to-segment distance."""
    if last - first < 2:
        return [first, last]
    a, b = pts[first], pts[last]
    best, idx = -1.0, None
    for i in range(first + 1, last):
        ab = b - a
        t = 0.0 if not ab @ ab > 0 else min(1.0, max(0.0, float((pts[i] - a) @ ab / (ab @ ab))))
        d = float(np.linalg.norm(pts[i] - (a + t * ab)))
        if d > best:
            best, idx = d, i
    if best <= eps:
        return [first, last]
    return brute_rdp(pts, eps, first, idx)[:-1] + brute_rdp(pts, eps, idx, last)


def polyline(corners, step=1.0):
    """Densely sampled polyline through ``corners`` and the indices of the corners."""
    pts, idx = [np.asarray(corners[0], float)], [0]
    for a, b in zip(corners[:-1], corners[1:]):
        a, b = np.asarray(a, float), np.asarray(b, float)
        n = int(round(np.linalg.norm(b - a) / step))
        for i in range(1, n + 1):
            pts.append(a + (b - a) * i / n)
        idx.append(len(pts) - 1)
    return np.array(pts), idx


def segment_distance(p, a, b):
    ab = b - a
    t = np.clip((p - a) @ ab / max(ab @ ab, 1e-300), 0, 1)
    return np.linalg.norm(p - (a + t * ab))


def test_rdp_collinear():
    pts = np.column_stack([np.arange(10.0), 2 * np.arange(10.0)])
    assert rdp_simplify(pts, 0.01) == [0, 9]


def test_rdp_l_shape():
    pts, idx = polyline([(0, 0), (20, 0), (20, 15)])
    assert rdp_simplify(pts, 1.0) == idx


def test_rdp_three_planted_turns_matches_brute_force():
    rng = np.random.default_rng(0)
    pts, idx = polyline([(0, 0), (100, 0), (100, 80), (30, 80), (30, 150)])
    pts = pts + rng.normal(0, 0.2, pts.shape)
    keep = rdp_simplify(pts, 2.0)
    assert keep == brute_rdp(pts, 2.0, 0, len(pts) - 1)
    assert keep[1:-1] == idx[1:-1]


@settings(max_examples=60, deadline=None)
@given(pts=arrays(np.float64, st.tuples(st.integers(2, 40), st.just(2)), elements=st.floats(-100, 100)),
       eps=st.floats(0.01, 20))
def test_rdp_deviation_bound(pts, eps):
    keep = rdp_simplify(pts, eps)
    assert keep[0] == 0 and keep[-1] == len(pts) - 1
    assert keep == brute_rdp(pts, eps, 0, len(pts) - 1)
    for a, b in zip(keep[:-1], keep[1:]):
        for i in range(a + 1, b):
            assert segment_distance(pts[i], pts[a], pts[b]) <= eps + 1e-9


def test_rdp_invalid():
    with pytest.raises(ValueError):
        rdp_simplify([[0, 0]], 1.0)
    with pytest.raises(ValueError):
        rdp_simplify([[0, 0], [1, 1]], 0.0)


def test_turns_straight_track():
    xy = np.column_stack([np.arange(100.0), np.zeros(100)])
    with pytest.raises(NoTurns):
        turn_ranges(np.arange(100), xy)


def test_single_turn_range():
    pts, idx = polyline([(0, 0), (60, 0), (60, 60)])
    ids = np.arange(len(pts)) + 1000
    (lo, hi), = turn_ranges(ids, pts, epsilon=2.0, window=25)
    assert hi - lo + 1 <= 51
    assert (lo + hi) // 2 == ids[idx[1]]


def test_close_turns_merge():
    pts, idx = polyline([(0, 0), (60, 0), (60, 10), (120, 10)])
    assert idx[2] - idx[1] == 10
    ranges = turn_ranges(np.arange(len(pts)), pts, epsilon=2.0, window=25)
    assert ranges == [(idx[1] - 25, idx[2] + 25)]


def test_turn_window_clamped_and_validated():
    pts, _ = polyline([(0, 0), (5, 0), (5, 60)])
    assert turn_ranges(np.arange(len(pts)), pts, window=25)[0][0] == 0
    with pytest.raises(ValueError):
        turn_ranges(np.arange(len(pts)), pts, window=1)


def test_extract_turn_segments_uses_planar_gps():
    pts, idx = polyline([(0, 0), (60, 0), (60, 60)])
    n = len(pts)
    poses = [FramePose(i, np.eye(3), [0, 0, 0]) for i in range(n)]
    gps = np.column_stack([pts, np.linspace(0, 50, n)])
    traj = Trajectory(tuple(poses), gps)
    assert extract_turn_segments(traj) == turn_ranges(np.arange(n), pts)


def random_similarity(rng, reflect_source=False):
    s = float(np.exp(rng.uniform(-2, 2)))
    R = Rotation.random(random_state=rng.integers(2**31)).as_matrix()
    t = rng.uniform(-100, 100, 3)
    return s, R, t


def test_umeyama_identity_and_exact():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(20, 3))
    tf = umeyama_fit(x, x)
    assert tf.s == pytest.approx(1) and np.allclose(tf.R, np.eye(3)) and np.allclose(tf.t, 0, atol=1e-12)
    assert tf.residual < 1e-20
    tf = umeyama_fit(x, 2 * x + [1, 2, 3])
    assert tf.s == pytest.approx(2, abs=1e-10) and np.allclose(tf.R, np.eye(3), atol=1e-10)
    assert np.allclose(tf.t, [1, 2, 3], atol=1e-10) and tf.residual < 1e-10


def test_umeyama_never_returns_reflection():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(30, 3))
    mirrored = x * [1, 1, -1]
    tf = umeyama_fit(x, mirrored)
    assert np.linalg.det(tf.R) == pytest.approx(1.0)


def test_umeyama_noisy_is_local_optimum():
    rng = np.random.default_rng(4)
    s, R, t = random_similarity(rng)
    x = rng.uniform(-10, 10, (50, 3))
    y = s * x @ R.T + t + rng.normal(0, 0.01, (50, 3))
    tf = umeyama_fit(x, y)
    assert abs(tf.s - s) < 1e-2 and np.max(np.abs(tf.R - R)) < 1e-2 and np.max(np.abs(tf.t - t)) < 1e-2 * max(1, s)

    def eps(s_, R_, t_):
        r = y - (s_ * x @ R_.T + t_)
        return np.mean(np.sum(r * r, axis=1))

    assert eps(tf.s, tf.R, tf.t) == pytest.approx(tf.residual, rel=1e-9)
    for _ in range(200):
        dR = Rotation.from_rotvec(rng.normal(0, 0.01, 3)).as_matrix()
        s2 = tf.s * (1 + rng.normal(0, 0.01))
        t2 = tf.t + rng.normal(0, 0.01, 3) * np.linalg.norm(tf.t)
        assert eps(s2, dR @ tf.R, t2) >= tf.residual


def test_umeyama_equivariance():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(25, 3))
    s, R, t = random_similarity(rng)
    y = s * x @ R.T + t + rng.normal(0, 0.05, x.shape)
    Q = Rotation.random(random_state=6).as_matrix()
    a = umeyama_fit(x, y)
    b = umeyama_fit(x @ Q.T, y)
    assert np.allclose(b.R, a.R @ Q.T, atol=1e-9)
    assert np.allclose(b.apply(x @ Q.T), a.apply(x), atol=1e-9)


@pytest.mark.parametrize("src", [
    np.zeros((5, 3)),
    np.column_stack([np.arange(5.0), 2 * np.arange(5.0), np.zeros(5)]),
    np.eye(3)[:2],
])
def test_umeyama_degenerate(src):
    with pytest.raises(DegenerateGeometry):
        umeyama_fit(src, src + 1)


def test_umeyama_degenerate_target():
    x = np.random.default_rng(0).normal(size=(6, 3))
    with pytest.raises(DegenerateGeometry):
        umeyama_fit(x, np.ones((6, 3)))


def _poses(rng, n=6):
    return [FramePose(i, Rotation.random(random_state=rng.integers(2**31)).as_matrix(), rng.normal(size=3) * 10)
            for i in range(n)]


def test_apply_similarity_simple_cases():
    rng = np.random.default_rng(7)
    poses = _poses(rng)
    same = apply_similarity(SimilarityTransform.identity(), poses)
    for a, b in zip(poses, same):
        assert a.frame_id == b.frame_id and np.array_equal(a.rotation, b.rotation)
        assert np.array_equal(a.position, b.position)
    doubled = apply_similarity(SimilarityTransform(2.0, np.eye(3), np.zeros(3)), poses)
    for a, b in zip(poses, doubled):
        assert np.allclose(b.position, 2 * a.position) and np.allclose(b.rotation, a.rotation)


def test_apply_similarity_inverse_recovered():
    rng = np.random.default_rng(8)
    poses = _poses(rng, 10)
    s, R, t = random_similarity(rng)
    tf = SimilarityTransform(s, R, t)
    moved = apply_similarity(tf, poses)
    back = umeyama_fit(np.array([p.position for p in moved]), np.array([p.position for p in poses]))
    inv = tf.inverse()
    assert back.s == pytest.approx(inv.s, rel=1e-8)
    assert np.allclose(back.R, inv.R, atol=1e-8) and np.allclose(back.t, inv.t, atol=1e-8 * max(1, np.abs(inv.t).max()))
    assert np.allclose(tf.compose(inv).apply(np.ones(3)), np.ones(3))


def test_apply_similarity_preserves_distance_ratios():
    rng = np.random.default_rng(9)
    poses = _poses(rng, 8)
    s, R, t = random_similarity(rng)
    moved = apply_similarity(SimilarityTransform(s, R, t), poses)
    a = np.array([p.position for p in poses])
    b = np.array([p.position for p in moved])
    da = np.linalg.norm(a[1:] - a[0], axis=1)
    db = np.linalg.norm(b[1:] - b[0], axis=1)
    assert np.allclose(db / db[0], da / da[0], rtol=1e-9)


def test_framepose_validation():
    with pytest.raises(ValueError):
        FramePose(0, np.diag([1, 1, -1.0]), np.zeros(3))
    with pytest.raises(ValueError):
        FramePose(0, np.eye(3) * 1.01, np.zeros(3))
    p = FramePose(0, np.eye(3), [1, 2, 3])
    with pytest.raises(ValueError):
        p.position[0] = 5


def test_trajectory_validation():
    poses = (FramePose(1, np.eye(3), np.zeros(3)), FramePose(1, np.eye(3), np.ones(3)))
    with pytest.raises(ValueError):
        Trajectory(poses, np.zeros((2, 3)))
    with pytest.raises(ValueError):
        Trajectory(poses[:1], np.zeros((2, 3)))
    t = Trajectory(poses[:1], np.zeros((1, 2)))
    assert t.gps.shape == (1, 3)


def test_fit_to_gps_and_2d_mode():
    rng = np.random.default_rng(10)
    n = 40
    C = np.column_stack([np.linspace(0, 50, n), 10 * np.sin(np.linspace(0, 3, n)), rng.normal(0, 1, n)])
    poses = tuple(FramePose(i, np.eye(3), c) for i, c in enumerate(C))
    s, R, t = random_similarity(rng)
    gps = s * C @ R.T + t
    traj = Trajectory(poses, gps)
    tf, aligned = align_trajectory(traj)
    assert np.allclose(aligned.positions, gps, atol=1e-7 * max(1, s))
    tf2 = fit_to_gps(traj, dims=2)
    assert np.isfinite(tf2.residual)
    sub = fit_to_gps(traj, frame_ids=range(5, 20))
    assert sub.s == pytest.approx(s, rel=1e-8)
