"""JSON-lines logs, scenario files and metric reports.

Log formats (one JSON object per line, timestamps in seconds):

* detections: ``{"sensor": str, "t": T, "t_recv": float|null, "frame_seq": int,
  "objects": [{"x": .., "y": .., "yaw": ..?, "v": ..?}]}`` in the ego frame
* ego: ``{"t", "x", "y", "yaw", "v", "yaw_rate"}``
* tracks: ``{"t_out": float, "tracks": [{"uid", "state": [...], "cov_diag": [...]}]}``
* residuals: see :meth:`ResidualRecord.to_json`
* truth: ``{"t": float, "ego_id": int, "agents": [{"id", "x", "y", "yaw", "v", "yaw_rate"}]}``

Output logs are written with floats rounded to a fixed number of decimals
and compact separators so that identical runs give identical bytes.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .evaluation import GroundTruth, ResidualRecord
from .geometry import Detection, EgoState
from .pipeline import DetectionFrame, TrackedObject, TrackedObjectList

OUTPUT_DECIMALS = 9


class DataError(ValueError):
    """Malformed or inconsistent log content."""


def _round(v, ndigits):
    if ndigits is None:
        return v
    if isinstance(v, float):
        r = round(v, ndigits)
        return 0.0 if r == 0 else r  # no "-0.0"
    if isinstance(v, (list, tuple)):
        return [_round(x, ndigits) for x in v]
    if isinstance(v, dict):
        return {k: _round(x, ndigits) for k, x in v.items()}
    return v


def dumps_line(obj, ndigits: int | None = None) -> str:
    return json.dumps(_round(obj, ndigits), separators=(",", ":"), allow_nan=False)


def write_jsonl(path, rows, ndigits: int | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(dumps_line(row, ndigits) + "\n")


def read_jsonl(path):
    """Yield ``(line_number, object)`` for every non-blank line."""
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield n, json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{n}: invalid JSON ({exc.msg})") from None


def _num(d, key, where, optional=False):
    if key not in d or d[key] is None:
        if optional:
            return None
        raise DataError(f"{where}: missing field {key!r}")
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise DataError(f"{where}: field {key!r} must be a number")
    return float(v)


# -- detections ------------------------------------------------------------
def frame_to_json(f: DetectionFrame) -> dict:
    objs = []
    for d in f.objects:
        o = {"x": d.x, "y": d.y}
        if d.yaw is not None:
            o["yaw"] = d.yaw
        if d.v is not None:
            o["v"] = d.v
        objs.append(o)
    return {"sensor": f.sensor_id, "t": f.t, "t_recv": f.t_recv, "frame_seq": f.frame_seq, "objects": objs}


def frame_from_json(d: dict, where: str = "frame") -> DetectionFrame:
    if not isinstance(d, dict):
        raise DataError(f"{where}: expected an object")
    sensor = d.get("sensor")
    if not isinstance(sensor, str):
        raise DataError(f"{where}: missing or non-string 'sensor'")
    objs = d.get("objects", [])
    if not isinstance(objs, list):
        raise DataError(f"{where}: 'objects' must be a list")
    dets = []
    for k, o in enumerate(objs):
        w = f"{where} object {k}"
        if not isinstance(o, dict):
            raise DataError(f"{w}: expected an object")
        dets.append(Detection(_num(o, "x", w), _num(o, "y", w), _num(o, "yaw", w, True), _num(o, "v", w, True)))
    seq = d.get("frame_seq", 0)
    if isinstance(seq, bool) or not isinstance(seq, int):
        raise DataError(f"{where}: 'frame_seq' must be an integer")
    return DetectionFrame(sensor, _num(d, "t", where), dets, seq, _num(d, "t_recv", where, True))


def write_frames(path, frames) -> None:
    write_jsonl(path, (frame_to_json(f) for f in frames))


def read_frames(path) -> list[DetectionFrame]:
    return [frame_from_json(d, f"{path}:{n}") for n, d in read_jsonl(path)]


# -- ego -------------------------------------------------------------------
EGO_FIELDS = ("t", "x", "y", "yaw", "v", "yaw_rate")


def write_ego(path, ego_log) -> None:
    write_jsonl(path, ({k: getattr(e, k) for k in EGO_FIELDS} for e in ego_log))


def read_ego(path) -> list[EgoState]:
    out = []
    for n, d in read_jsonl(path):
        where = f"{path}:{n}"
        if not isinstance(d, dict):
            raise DataError(f"{where}: expected an object")
        e = EgoState(*(_num(d, k, where) for k in EGO_FIELDS))
        if out and e.t < out[-1].t:
            raise DataError(f"{where}: ego timestamps must be non-decreasing")
        if not e.is_finite():
            raise DataError(f"{where}: non-finite ego state")
        out.append(e)
    if not out:
        raise DataError(f"{path}: empty ego log")
    return out


# -- tracks ----------------------------------------------------------------
def tracks_to_json(out: TrackedObjectList) -> dict:
    return {
        "t_out": out.t_out,
        "tracks": [{"uid": o.uid, "state": list(o.state), "cov_diag": list(o.cov_diag)} for o in out.tracks],
    }


def write_tracks(path, outputs) -> None:
    write_jsonl(path, (tracks_to_json(o) for o in outputs), OUTPUT_DECIMALS)


def read_tracks(path) -> list[TrackedObjectList]:
    out = []
    for n, d in read_jsonl(path):
        where = f"{path}:{n}"
        try:
            tracks = tuple(
                TrackedObject(int(o["uid"]), tuple(map(float, o["state"])), tuple(map(float, o["cov_diag"])))
                for o in d["tracks"]
            )
            out.append(TrackedObjectList(float(d["t_out"]), tracks))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{where}: malformed track list ({exc})") from None
    return out


# -- residuals -------------------------------------------------------------
def write_residuals(path, records) -> None:
    write_jsonl(path, (r.to_json() for r in records), OUTPUT_DECIMALS)


def read_residuals(path) -> list[ResidualRecord]:
    try:
        return [ResidualRecord.from_json(d) for _, d in read_jsonl(path)]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"{path}: malformed residual record ({exc})") from None


# -- truth -----------------------------------------------------------------
def write_truth(path, truth: GroundTruth) -> None:
    names = ("x", "y", "yaw", "v", "yaw_rate")

    def rows():
        for i, t in enumerate(truth.times):
            agents = [
                {"id": aid, **dict(zip(names, map(float, truth.states[i, k])))}
                for k, aid in enumerate(truth.agent_ids)
            ]
            yield {"t": float(t), "ego_id": truth.ego_id, "agents": agents}

    write_jsonl(path, rows())


def read_truth(path) -> GroundTruth:
    times, states, ids, ego_id = [], [], None, 0
    for n, d in read_jsonl(path):
        where = f"{path}:{n}"
        try:
            agents = d["agents"]
            row_ids = [a["id"] for a in agents]
            if ids is None:
                ids, ego_id = row_ids, d.get("ego_id", 0)
            elif row_ids != ids:
                raise DataError(f"{where}: agent set changes between rows")
            states.append([[float(a[k]) for k in ("x", "y", "yaw", "v", "yaw_rate")] for a in agents])
            times.append(float(d["t"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"{where}: malformed truth row ({exc})") from None
    if not times:
        raise DataError(f"{path}: empty truth log")
    if np.any(np.diff(times) <= 0):
        raise DataError(f"{path}: truth timestamps must be strictly increasing")
    return GroundTruth(times, ids, np.array(states), ego_id=ego_id)


# -- reports ---------------------------------------------------------------
def _clean_json(v):
    # NaN is not valid JSON; report it as null
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _clean_json(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean_json(x) for x in v]
    return v


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_clean_json(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_transient_csv(path, profile) -> None:
    """Flat CSV of binned residual statistics: one row per (bin, feature)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["age_lo_s", "age_hi_s", "feature", "mean", "std", "count"])
        for lo, hi, stats in profile:
            for feat, st in stats.items():
                w.writerow([f"{lo:g}", f"{hi:g}", feat, f"{st.mean:.6g}", f"{st.std:.6g}", st.count])
