"""Readers and writers for the on-disk formats (CSV inputs, JSON calibration, maps and reports)."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .align import FramePose
from .camera import Calibration
from .errors import InvalidCalibration, ValidationError
from .geo import GeoPoint
from .metrics import SignGroundTruth
from .triangulate import FailureReason, Mode, SignObservation, TriangulatedSign, TriangulationFailure

POSE_HEADER = ["frame_id", "tx", "ty", "tz", "qx", "qy", "qz", "qw"]
GPS_HEADER = ["frame_id", "lat", "lon", "alt"]
DETECTION_HEADER = ["frame_id", "sign_id", "class", "u", "v"]
GT_SIGN_HEADER = ["sign_id", "class", "x", "y", "z"]
SWEEP_HEADER = ["group1_pct", "group2_pct", "score", "failed_signs", "repeats"]


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to a temporary file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _clean(obj):
    """Replace NaN/inf with None and numpy scalars/arrays with plain Python values."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj) -> None:
    atomic_write_text(path, dumps_json(obj))


def _csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _read_rows(path, header: Sequence[str]):
    """Yield ``(line_number, row_dict)``; the header must match exactly."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ValidationError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}:1: empty file, expected header {','.join(header)}") from None
        if [h.strip() for h in got] != list(header):
            raise ValidationError(f"{path}:1: header {','.join(got)!r} != expected {','.join(header)!r}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(row)}")
            yield reader.line_num, dict(zip(header, (c.strip() for c in row)))


def _num(path, line, row, key, kind=float):
    try:
        v = kind(row[key])
    except ValueError:
        raise ValidationError(f"{path}:{line}: {key}={row[key]!r} is not a valid {kind.__name__}") from None
    if kind is float and not math.isfinite(v):
        raise ValidationError(f"{path}:{line}: {key} must be finite")
    return v


def _check_increasing(path, ids_lines):
    for (a, _), (b, line) in zip(ids_lines, ids_lines[1:]):
        if b <= a:
            raise ValidationError(f"{path}:{line}: frame_id {b} does not increase (previous {a})")


def read_poses(path) -> list[FramePose]:
    """Read ``frame_id,tx,ty,tz,qx,qy,qz,qw`` world-from-camera poses."""
    poses, ids = [], []
    for line, row in _read_rows(path, POSE_HEADER):
        fid = _num(path, line, row, "frame_id", int)
        t = [_num(path, line, row, k) for k in ("tx", "ty", "tz")]
        q = np.array([_num(path, line, row, k) for k in ("qx", "qy", "qz", "qw")])
        norm = np.linalg.norm(q)
        if abs(norm - 1.0) > 1e-6:
            raise ValidationError(f"{path}:{line}: quaternion norm {norm:.9f} is not 1")
        poses.append(FramePose(fid, Rotation.from_quat(q / norm).as_matrix(), t))
        ids.append((fid, line))
    _check_increasing(path, ids)
    return poses


def write_poses(path, poses: Sequence[FramePose]) -> None:
    rows = []
    for p in poses:
        q = Rotation.from_matrix(p.rotation).as_quat()
        rows.append([p.frame_id, *map(float, p.position), *map(float, q)])
    atomic_write_text(path, _csv_text(POSE_HEADER, rows))


def read_gps(path) -> tuple[list[int], list[GeoPoint]]:
    ids, fixes, lines = [], [], []
    for line, row in _read_rows(path, GPS_HEADER):
        fid = _num(path, line, row, "frame_id", int)
        try:
            g = GeoPoint(_num(path, line, row, "lat"), _num(path, line, row, "lon"), _num(path, line, row, "alt"))
        except ValueError as exc:
            raise ValidationError(f"{path}:{line}: {exc}") from None
        ids.append(fid)
        fixes.append(g)
        lines.append((fid, line))
    _check_increasing(path, lines)
    return ids, fixes


def write_gps(path, frame_ids: Sequence[int], fixes: Sequence[GeoPoint]) -> None:
    rows = [[int(f), float(g.lat), float(g.lon), float(g.alt)] for f, g in zip(frame_ids, fixes)]
    atomic_write_text(path, _csv_text(GPS_HEADER, rows))


def read_detections(path, calib: Calibration | None = None) -> list[SignObservation]:
    """Read ``frame_id,sign_id,class,u,v``; with ``calib`` pixels are bounds-checked."""
    out, seen = [], set()
    for line, row in _read_rows(path, DETECTION_HEADER):
        fid = _num(path, line, row, "frame_id", int)
        sid = _num(path, line, row, "sign_id", int)
        u, v = _num(path, line, row, "u"), _num(path, line, row, "v")
        if (sid, fid) in seen:
            raise ValidationError(f"{path}:{line}: sign {sid} observed twice in frame {fid}")
        seen.add((sid, fid))
        if calib is not None and not calib.intrinsics.contains((u, v)):
            k = calib.intrinsics
            raise ValidationError(f"{path}:{line}: pixel ({u}, {v}) outside the {k.width}x{k.height} image")
        out.append(SignObservation(sid, fid, (u, v), row["class"]))
    return out


def write_detections(path, observations: Sequence[SignObservation]) -> None:
    obs = sorted(observations, key=lambda o: (o.frame_id, o.sign_id))
    rows = [[o.frame_id, o.sign_id, o.class_label, float(o.pixel[0]), float(o.pixel[1])] for o in obs]
    atomic_write_text(path, _csv_text(DETECTION_HEADER, rows))


def read_calibration(path) -> Calibration:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"{path}: cannot open ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: calibration must be a JSON object")
    try:
        return Calibration.from_dict(data)
    except InvalidCalibration as exc:
        raise ValidationError(f"{path}: {exc}") from None


def write_calibration(path, calib: Calibration) -> None:
    write_json(path, calib.to_dict())


def read_gt_signs(path) -> list[SignGroundTruth]:
    out = []
    for line, row in _read_rows(path, GT_SIGN_HEADER):
        sid = _num(path, line, row, "sign_id", int)
        p = [_num(path, line, row, k) for k in ("x", "y", "z")]
        out.append(SignGroundTruth(sid, np.array(p), row["class"]))
    return out


def write_gt_signs(path, signs: Sequence[SignGroundTruth]) -> None:
    rows = [[s.sign_id, s.class_label, *map(float, s.abs_position)] for s in sorted(signs, key=lambda s: s.sign_id)]
    atomic_write_text(path, _csv_text(GT_SIGN_HEADER, rows))


def sign_record(r) -> dict:
    """One output-map record; failures keep their reason and null positions."""
    base = {"sign_id": r.sign_id, "class": r.class_label, "mode": Mode(r.mode).value, "frames": list(r.frames)}
    if isinstance(r, TriangulatedSign):
        base.update({
            "status": "ok",
            "reason": None,
            "lat": r.geo.lat if r.geo is not None else None,
            "lon": r.geo.lon if r.geo is not None else None,
            "xyz": [float(v) for v in r.abs_position],
            "residual_px": float(r.residual),
            "rel_positions": {str(f): [float(v) for v in q] for f, q in sorted(r.rel_positions.items())},
        })
    else:
        base.update({
            "status": "failed",
            "reason": FailureReason(r.reason).value,
            "message": r.message,
            "lat": None, "lon": None, "xyz": None, "residual_px": None, "rel_positions": None,
        })
    return base


def write_map(path, results: Sequence) -> None:
    write_json(path, [sign_record(r) for r in sorted(results, key=lambda r: r.sign_id)])


def read_map(path) -> list:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ValidationError(f"{path}: cannot open ({exc.strerror})") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, list):
        raise ValidationError(f"{path}: map must be a JSON array")
    out = []
    for i, rec in enumerate(data):
        try:
            mode = Mode(rec["mode"])
            frames = tuple(int(f) for f in rec.get("frames", ()))
            if rec.get("xyz") is None:
                out.append(TriangulationFailure(int(rec["sign_id"]), rec.get("class", ""),
                                                FailureReason(rec.get("reason") or "NegativeDepth"), mode,
                                                frames, rec.get("message", "")))
                continue
            rel = {int(f): np.array(q, dtype=float) for f, q in (rec.get("rel_positions") or {}).items()}
            geo = GeoPoint(rec["lat"], rec["lon"], float(rec["xyz"][2])) if rec.get("lat") is not None else None
            out.append(TriangulatedSign(int(rec["sign_id"]), rec.get("class", ""), np.array(rec["xyz"], dtype=float),
                                        rel, geo, mode, float(rec.get("residual_px") or 0.0), frames))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}: record {i}: {exc!r}") from None
    return out


def write_sweep_csv(path, rows: Sequence[dict]) -> None:
    atomic_write_text(path, _csv_text(SWEEP_HEADER, [[r[k] for k in SWEEP_HEADER] for r in rows]))
