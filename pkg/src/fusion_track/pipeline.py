"""The tracking cycle: ingestion, object storage and backward-forward integration.

Every track keeps an equidistant history of Gaussians on a global filter
grid (slot ``k`` sits at ``k / f_ekf`` seconds).  A detection frame stamped
``T`` is matched against, and updates, the history slot closest to ``T``;
all newer slots of an updated track are then recomputed by re-running the
prediction step.  Re-integration is lazy: slots are only recomputed when a
later frame (or the end of the cycle) needs them, which is equivalent to
integrating "up to the next detection input" and avoids repeated work when
several frames arrive in one cycle.

Each track also remembers the measurements fused at every stored slot.
When an older frame arrives after a newer one was already fused, the
re-integration passes through the newer slot and applies its measurements
again, so the result does not depend on arrival order.
"""
from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .association import (
    LifecycleAction,
    TrackStatus,
    apply_match_outcome,
    cost_matrix,
    merge_overlaps,
    new_track_status,
    solve_assignment,
)
from .config import RunConfig
from .estimation import (
    Gaussian,
    SensorConfig,
    batch_transition,
    init_track_state,
    measurement_vector,
    predict,
    predict_batch_step,
    process_noise,
    update,
)
from .evaluation import ResidualRecord
from .geometry import Detection, EgoState, TrackMap, centerline_headings_at, local_to_global, lowpass_ego
from .motion import ModelKind, propagate

log = logging.getLogger(__name__)

TIME_EPS = 1e-9


@dataclass
class DetectionFrame:
    """One sensor's object list in the ego vehicle frame, stamped with sensor time ``t``.

    ``t_recv`` is the time the frame becomes available to the tracker; it
    defaults to ``t`` (no perception delay).
    """

    sensor_id: str
    t: float
    objects: list[Detection] = field(default_factory=list)
    frame_seq: int = 0
    t_recv: float | None = None

    @property
    def delivery_time(self) -> float:
        return self.t if self.t_recv is None else self.t_recv


class ObjectStorage:
    """Fixed-capacity double-ended queue of Gaussians indexed by grid slot.

    Appending beyond capacity drops the oldest entry.  Slots are contiguous
    integers, so timestamps are equidistant by construction.
    """

    def __init__(self, capacity: int, first_slot: int, g: Gaussian):
        dim = len(g.mean)
        self.capacity = capacity
        self._means = np.empty((capacity, dim))
        self._covs = np.empty((capacity, dim, dim))
        self._head = 0
        self.first = first_slot
        self.count = 1
        self._means[0] = g.mean
        self._covs[0] = g.cov

    def __len__(self) -> int:
        return self.count

    @property
    def newest(self) -> int:
        return self.first + self.count - 1

    def _pos(self, slot: int) -> int:
        if not self.first <= slot <= self.newest:
            raise IndexError(f"slot {slot} outside stored range [{self.first}, {self.newest}]")
        return (self._head + slot - self.first) % self.capacity

    def get(self, slot: int) -> Gaussian:
        p = self._pos(slot)
        return Gaussian(self._means[p].copy(), self._covs[p].copy())

    def set(self, slot: int, g: Gaussian) -> None:
        p = self._pos(slot)
        self._means[p] = g.mean
        self._covs[p] = g.cov

    def append(self, g: Gaussian) -> None:
        if self.count == self.capacity:
            self._head = (self._head + 1) % self.capacity
            self.first += 1
        else:
            self.count += 1
        p = (self._head + self.count - 1) % self.capacity
        self._means[p] = g.mean
        self._covs[p] = g.cov

    def write(self, start: int, means: np.ndarray, covs: np.ndarray) -> None:
        """Store consecutive states from slot ``start`` on, appending past the newest."""
        for k in range(len(means)):
            slot = start + k
            if slot <= self.newest:
                p = self._pos(slot)
                self._means[p] = means[k]
                self._covs[p] = covs[k]
            else:
                self.append(Gaussian(means[k], covs[k]))

    def slots(self) -> range:
        return range(self.first, self.newest + 1)


@dataclass
class Track:
    uid: int
    status: TrackStatus
    storage: ObjectStorage
    clean: int  # newest slot whose stored state is up to date
    born: int = 0
    init: Gaussian | None = None  # state at `born` before any update
    # slot -> [(order key, z, features, R)] in canonical (T, sensor, seq) order
    measurements: dict = field(default_factory=dict)

    def prune(self) -> None:
        first = self.storage.first
        for k in [k for k in self.measurements if k < first]:
            del self.measurements[k]

    @property
    def gaussian(self) -> Gaussian:
        return self.storage.get(self.storage.newest)


@dataclass(frozen=True)
class TrackedObject:
    uid: int
    state: tuple[float, ...]
    cov_diag: tuple[float, ...]


@dataclass(frozen=True)
class TrackedObjectList:
    t_out: float
    tracks: tuple[TrackedObject, ...]


@dataclass
class CycleStats:
    frames_processed: int = 0
    frames_dropped_old: int = 0
    frames_rejected_skew: int = 0
    frames_rejected_nonfinite: int = 0
    frames_rejected_features: int = 0
    frames_unknown_sensor: int = 0
    updates: int = 0
    updates_skipped: int = 0
    tracks_created: int = 0
    tracks_removed: int = 0


class Tracker:
    """Multi-sensor late-fusion tracker.

    Parameters
    ----------
    cfg : RunConfig
        Full parameter set.
    track_map : TrackMap
        Drivable area and centerline.
    residual_sink : callable, optional
        Called with a :class:`ResidualRecord` for every measurement update.
    backward_step : bool
        Match and update at the stored state closest to the sensor timestamp.
        When False every frame is fused into the newest state, which is the
        uncompensated baseline (the frame is still placed in the global frame
        with the ego pose at its sensor timestamp).
    """

    def __init__(self, cfg: RunConfig, track_map: TrackMap, residual_sink=None, backward_step: bool = True):
        self.cfg = cfg
        self.backward_step = backward_step
        self.map = track_map
        self.model = cfg.model_kind
        self.dt = 1.0 / cfg.f_ekf
        self.capacity = max(1, int(round(cfg.f_ekf * cfg.history_seconds)))
        self.sensors: dict[str, SensorConfig] = cfg.sensor_configs()
        self._R = {name: s.R for name, s in self.sensors.items()}
        self.policy = cfg.init_policy
        self.Q = process_noise(cfg.process_stds, self.dt, self.model, cfg.process_std["a"])
        self.tracks: list[Track] = []
        self.residual_sink = residual_sink
        self.stats = CycleStats()
        self._next_uid = 0
        self._ego_t: list[float] = []
        self._ego: list[EgoState] = []
        self._k_now: int | None = None

    # -- time grid -------------------------------------------------------
    def slot_floor(self, t: float) -> int:
        return math.floor(t / self.dt + 1e-6)

    def slot_nearest(self, t: float) -> int:
        return math.floor(t / self.dt + 0.5)

    def slot_time(self, k: int) -> float:
        return k * self.dt

    # -- ego handling ----------------------------------------------------
    @property
    def ego(self) -> EgoState | None:
        return self._ego[-1] if self._ego else None

    def add_ego(self, raw: EgoState) -> EgoState:
        """Low-pass filter and store one raw ego sample.

        The previous filtered state is first propagated to the new sample's
        time so that smoothing removes noise without adding lag at speed.
        """
        if not raw.is_finite():
            raise ValueError(f"non-finite ego state {raw}")
        prev = self.ego
        if prev is None:
            filt = raw
        else:
            if raw.t < prev.t:
                raise ValueError(f"ego timestamps must be non-decreasing ({raw.t} < {prev.t})")
            filt = lowpass_ego(_propagate_ego(prev, raw.t), raw, self.cfg.ego_alpha)
        self._ego_t.append(filt.t)
        self._ego.append(filt)
        horizon = filt.t - self.cfg.history_seconds - 1.0
        if len(self._ego_t) > 4 * self.capacity and self._ego_t[0] < horizon:
            cut = bisect.bisect_left(self._ego_t, horizon)
            del self._ego_t[:cut]
            del self._ego[:cut]
        return filt

    def ego_at(self, t: float) -> EgoState:
        """Ego state at ``t``: nearest stored sample, propagated by the small remainder."""
        i = bisect.bisect_left(self._ego_t, t)
        if i == len(self._ego_t) or (i > 0 and t - self._ego_t[i - 1] <= self._ego_t[i] - t):
            i -= 1
        return _propagate_ego(self._ego[i], t)

    # -- cycle -----------------------------------------------------------
    def run_cycle(self, frames, ego_now: EgoState | None = None) -> TrackedObjectList:
        """Process all frames received since the last cycle and publish confirmed tracks.

        Frames are handled oldest sensor timestamp first.  Tracks are first
        brought forward to the current grid slot so that every frame's
        timestamp falls inside the stored history.
        """
        if ego_now is not None and (self.ego is None or ego_now.t > self.ego.t):
            self.add_ego(ego_now)
        if self.ego is None:
            raise ValueError("no ego state available")
        t_now = self.ego.t
        k_now = self.slot_floor(t_now)
        self._k_now = k_now
        self._integrate(self.tracks, k_now)

        for frame in sorted(frames, key=lambda f: (f.t, f.sensor_id, f.frame_seq)):
            if frame.t > t_now + TIME_EPS:
                self.stats.frames_rejected_skew += 1
                log.warning("frame %s@%.6f is newer than ego time %.6f; rejected", frame.sensor_id, frame.t, t_now)
                continue
            if t_now - frame.t > self.cfg.history_seconds:
                self.stats.frames_dropped_old += 1
                log.warning("frame %s@%.6f older than the storage horizon; dropped", frame.sensor_id, frame.t)
                continue
            self.process_frame(frame)

        self._integrate(self.tracks, k_now)
        return self._publish(t_now, k_now)

    def process_frame(self, frame: DetectionFrame) -> None:
        """Backward search, match, update and lifecycle handling for one frame."""
        sensor = self.sensors.get(frame.sensor_id)
        if sensor is None:
            self.stats.frames_unknown_sensor += 1
            return
        ego_t = self.ego_at(frame.t)
        if not ego_t.is_finite() or not all(d.is_finite() for d in frame.objects):
            self.stats.frames_rejected_nonfinite += 1
            log.warning("frame %s@%.6f has non-finite values; rejected", frame.sensor_id, frame.t)
            return
        if "v" in sensor.features and any(d.v is None for d in frame.objects):
            self.stats.frames_rejected_features += 1
            log.warning("frame %s@%.6f has detections without speed; rejected", frame.sensor_id, frame.t)
            return
        self.stats.frames_processed += 1

        dets = [local_to_global(d, ego_t) for d in frame.objects]
        if dets:
            inside = self.map.contains([(d.x, d.y) for d in dets], self.cfg.d_obf_out, self.cfg.d_obf_in)
            dets = [d for d, ok in zip(dets, inside) if ok]
        dets = merge_overlaps(dets, self.cfg.d_mrg)

        if self.backward_step:
            k_det = min(self.slot_nearest(frame.t), self._k_now)
            k_det = max(k_det, self._k_now - self.capacity + 1)
        else:
            k_det = self._k_now
        slots = [min(max(k_det, trk.storage.first), self._k_now) for trk in self.tracks]
        for s in sorted(set(slots)):
            self._integrate([t for t, ts in zip(self.tracks, slots) if ts == s], s)
        priors = [trk.storage.get(s) for trk, s in zip(self.tracks, slots)]

        if self.tracks and dets:
            C = cost_matrix([g.mean[:2] for g in priors], [(d.x, d.y) for d in dets])
            result = solve_assignment(C, self.cfg.d_mtc)
            pairs, lost, new = result.pairs, result.unmatched_tracks, result.unmatched_detections
        else:
            # no detections left means no assignment round, so no track misses
            pairs, lost, new = [], (list(range(len(self.tracks))) if dets else []), list(range(len(dets)))

        if pairs and "yaw" in sensor.features:
            # one batched lookup; a measured yaw is only used without the centerline flag
            yaws = centerline_headings_at([(dets[di].x, dets[di].y) for _, di in pairs], self.map)
        else:
            yaws = [None] * len(pairs)
        for (ti, di), yaw in zip(pairs, yaws):
            trk, s, prior = self.tracks[ti], slots[ti], priors[ti]
            z = measurement_vector(dets[di], sensor, self.map, yaw)
            R = self._R[sensor.name]
            post, residual = update(prior, z, sensor.features, R)
            if post is prior:
                self.stats.updates_skipped += 1
            else:
                self.stats.updates += 1
                key = (frame.t, frame.sensor_id, frame.frame_seq)
                others = trk.measurements.setdefault(s, [])
                bisect.insort(others, (key, z, sensor.features, R), key=lambda m: m[0])
                if len(others) > 1:
                    base = self._predicted_at(trk, s)
                    if base is not None:
                        post = _apply(base, others)
                trk.storage.set(s, post)
                trk.clean = s
            if self.residual_sink is not None:
                t_s = self.slot_time(s)
                self.residual_sink(
                    ResidualRecord(
                        uid=trk.uid,
                        sensor=sensor.name,
                        t=t_s,
                        age=t_s - trk.status.created_at,
                        features=sensor.features,
                        residual=tuple(float(r) for r in residual),
                        yaw_est=float(prior.mean[2]),
                    )
                )
            apply_match_outcome(trk.status, True, sensor.match_weight, self.cfg.t_mtc)

        removed = set()
        for ti in lost:
            action = apply_match_outcome(self.tracks[ti].status, False, sensor.match_weight, self.cfg.t_mtc)
            if action is LifecycleAction.REMOVE:
                removed.add(ti)
        if removed:
            self.stats.tracks_removed += len(removed)
            self.tracks = [t for i, t in enumerate(self.tracks) if i not in removed]

        for di in new:
            self.spawn_track(dets[di], ego_t, sensor, k_det)

    def spawn_track(self, det: Detection, ego: EgoState, sensor: SensorConfig, slot: int) -> Track:
        """Create a track with a fresh uid; its history starts at ``slot``."""
        g = init_track_state(det, ego, self.map, self.policy, sensor, self.model)
        status = new_track_status(sensor.match_weight, self.cfg.t_mtc, self.slot_time(slot))
        trk = Track(
            uid=self._next_uid,
            status=status,
            storage=ObjectStorage(self.capacity, slot, g),
            clean=slot,
            born=slot,
            init=g.copy(),
        )
        self._next_uid += 1
        self.tracks.append(trk)
        self.stats.tracks_created += 1
        return trk

    def _predicted_at(self, trk: Track, slot: int) -> Gaussian | None:
        # state at `slot` before the measurements fused there, if it can be rebuilt
        storage = trk.storage
        if slot > storage.first:
            return predict(storage.get(slot - 1), self.dt, self.model, self.Q)
        if slot == trk.born:
            return trk.init.copy()
        return None

    def _integrate(self, tracks, upto: int) -> None:
        # recompute stale slots after each track's last update and extend the
        # histories to `upto`, re-applying measurements already fused at the
        # recomputed slots.  All tracks are stepped together as one stack;
        # a track joins the stack at the first slot it needs.
        todo = sorted((t for t in tracks if t.clean < upto), key=lambda t: t.clean)
        if not todo:
            return
        rows, blocks = [], []
        P = F = None
        nxt = 0
        for j in range(todo[0].clean + 1, upto + 1):
            if nxt < len(todo) and todo[nxt].clean == j - 1:
                joining = []
                while nxt < len(todo) and todo[nxt].clean == j - 1:
                    g = todo[nxt].storage.get(j - 1)
                    rows.append(g.mean.tolist())
                    joining.append(g.cov)
                    nxt += 1
                new_P = np.stack(joining)
                new_F = batch_transition(len(joining), self.dt, self.model)
                P = new_P if P is None else np.concatenate([P, new_P])
                F = new_F if F is None else np.concatenate([F, new_F])
            P = predict_batch_step(rows, P, F, self.dt, self.model, self.Q)
            for i, trk in enumerate(todo[: len(rows)]):
                ms = trk.measurements.get(j)
                if ms:
                    g = _apply(Gaussian(np.array(rows[i]), P[i].copy()), ms)
                    rows[i] = g.mean.tolist()
                    P[i] = g.cov
            blocks.append((np.array(rows), P))
        first = todo[0].clean + 1
        for i, trk in enumerate(todo):
            steps = blocks[trk.clean + 1 - first :]
            trk.storage.write(trk.clean + 1, np.stack([m[i] for m, _ in steps]), np.stack([c[i] for _, c in steps]))
            trk.clean = upto
            trk.prune()

    def _publish(self, t_now: float, k_now: int) -> TrackedObjectList:
        out = []
        rem = t_now - self.slot_time(k_now)
        for trk in self.tracks:
            if not trk.status.confirmed:
                continue
            g = trk.gaussian
            if rem > TIME_EPS:
                g = predict(g, rem, self.model, self.Q * (rem / self.dt))
            out.append(
                TrackedObject(
                    uid=trk.uid,
                    state=tuple(float(v) for v in g.mean),
                    cov_diag=tuple(float(v) for v in np.diag(g.cov)),
                )
            )
        return TrackedObjectList(t_out=t_now, tracks=tuple(out))


def _apply(g: Gaussian, measurements) -> Gaussian:
    for _, z, features, R in measurements:
        g, _ = update(g, z, features, R)
    return g


def _propagate_ego(ego: EgoState, t: float) -> EgoState:
    dt = t - ego.t
    if dt == 0.0:
        return ego
    if dt < 0.0:
        # short backward extrapolation: reverse the motion
        s = propagate([ego.x, ego.y, ego.yaw, -ego.v, -ego.yaw_rate], -dt, ModelKind.CTRV)
        return EgoState(t, float(s[0]), float(s[1]), float(s[2]), ego.v, ego.yaw_rate)
    s = propagate([ego.x, ego.y, ego.yaw, ego.v, ego.yaw_rate], dt, ModelKind.CTRV)
    return EgoState(t, float(s[0]), float(s[1]), float(s[2]), ego.v, ego.yaw_rate)


def replay(
    cfg: RunConfig,
    track_map: TrackMap,
    ego_log,
    frames,
    compensate_delay: bool = True,
    residual_sink=None,
    cycle_hook=None,
):
    """Run the tracker over recorded logs at the node frequency ``cfg.f_node``.

    Each cycle consumes the ego samples and the frames delivered since the
    previous cycle.  With ``compensate_delay=False`` the backward step is
    disabled and each frame updates the newest stored state.

    Returns the list of published :class:`TrackedObjectList` and the tracker.
    ``cycle_hook(tracker, frames)`` may wrap each cycle (used for timing).
    """
    ego_log = sorted(ego_log, key=lambda e: e.t)
    tracker = Tracker(cfg, track_map, residual_sink, backward_step=compensate_delay)
    if not ego_log:
        return [], tracker
    frames = sorted(frames, key=lambda f: (f.delivery_time, f.t, f.sensor_id, f.frame_seq))
    period = 1.0 / cfg.f_node
    t0 = ego_log[0].t
    t_end = ego_log[-1].t
    outputs = []
    ei = fi = 0
    n = 0
    while True:
        t_cycle = t0 + n * period
        if t_cycle > t_end + TIME_EPS:
            break
        n += 1
        while ei < len(ego_log) and ego_log[ei].t <= t_cycle + TIME_EPS:
            tracker.add_ego(ego_log[ei])
            ei += 1
        pending = []
        while fi < len(frames) and frames[fi].delivery_time <= t_cycle + TIME_EPS:
            pending.append(frames[fi])
            fi += 1
        if cycle_hook is None:
            outputs.append(tracker.run_cycle(pending))
        else:
            outputs.append(cycle_hook(tracker, pending))
    return outputs, tracker
