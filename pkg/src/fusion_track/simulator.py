"""Deterministic synthetic race scenarios with ground truth and sensor logs.

Agents drive along a stadium-shaped oval.  Each agent is described by its
progress along the centerline (``s0`` plus a piecewise-linear progress-speed
profile) and a piecewise-linear lateral offset from the centerline (positive
to the left of the driving direction).  Ground-truth position, heading, speed
and yaw rate follow analytically from these, so truth is exact.

Sensors observe the non-ego agents in the ego frame with Gaussian noise,
per-object dropouts and Poisson ghost detections near the walls.  Each frame
is stamped with its true capture time and delivered after a lognormal delay
fitted to a given mean and 90 % quantile.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .evaluation import GroundTruth
from .geometry import Detection, EgoState, TrackMap, wrap_angle
from .pipeline import DetectionFrame

Z90 = 1.2815515655446004  # standard normal 90 % quantile
CAR_LENGTH = 4.9
CAR_WIDTH = 1.9
MAX_SPEED = 80.0


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class OvalTrack:
    """Stadium oval: two straights joined by semicircles, driven counterclockwise."""

    straight: float = 500.0
    radius: float = 250.0
    width: float = 15.0

    def __post_init__(self):
        if self.straight <= 0 or self.radius <= 0 or not 0 < self.width < 2 * self.radius:
            raise ScenarioError(f"invalid oval dimensions {self}")

    @property
    def length(self) -> float:
        return 2.0 * self.straight + 2.0 * math.pi * self.radius

    def center(self, s):
        """Centerline point, heading and curvature at arc length ``s`` (arrays allowed)."""
        s = np.mod(np.asarray(s, dtype=float), self.length)
        L, R = self.straight, self.radius
        arc = math.pi * R
        x = np.empty_like(s)
        y = np.empty_like(s)
        yaw = np.empty_like(s)
        kappa = np.zeros_like(s)

        m = s < L  # right straight, heading +y
        x[m], y[m], yaw[m] = R, -L / 2 + s[m], 0.0
        m = (s >= L) & (s < L + arc)  # top turn
        th = (s[m] - L) / R
        x[m], y[m], yaw[m], kappa[m] = R * np.cos(th), L / 2 + R * np.sin(th), th, 1.0 / R
        m = (s >= L + arc) & (s < 2 * L + arc)  # left straight, heading -y
        x[m], y[m], yaw[m] = -R, L / 2 - (s[m] - L - arc), math.pi
        m = s >= 2 * L + arc  # bottom turn
        th = math.pi + (s[m] - 2 * L - arc) / R
        x[m], y[m], yaw[m], kappa[m] = R * np.cos(th), -L / 2 + R * np.sin(th), th, 1.0 / R
        return x, y, wrap_angle(yaw), kappa

    def offset_point(self, s, offset):
        x, y, yaw, _ = self.center(s)
        return x - offset * np.cos(yaw), y - offset * np.sin(yaw)

    def polyline(self, offset: float, spacing: float) -> np.ndarray:
        n = max(8, int(math.ceil(self.length / spacing)))
        s = np.arange(n) * (self.length / n)
        x, y = self.offset_point(s, offset)
        pts = np.column_stack([x, y])
        return np.vstack([pts, pts[:1]])

    def to_map(self, center_spacing: float = 2.0, wall_spacing: float = 5.0) -> TrackMap:
        half = self.width / 2.0
        return TrackMap(
            inner=self.polyline(half, wall_spacing),
            outer=self.polyline(-half, wall_spacing),
            centerline=self.polyline(0.0, center_spacing),
        )


class Profile:
    """Piecewise-linear function of time from ``(t, value)`` knots, held constant outside."""

    def __init__(self, knots):
        knots = sorted((float(t), float(v)) for t, v in knots) if np.ndim(knots) else [(0.0, float(knots))]
        if not knots:
            raise ScenarioError("empty profile")
        self.t = np.array([k[0] for k in knots])
        self.v = np.array([k[1] for k in knots])
        if np.any(np.diff(self.t) <= 0):
            raise ScenarioError("profile knot times must be strictly increasing")

    def __call__(self, t):
        return np.interp(t, self.t, self.v)

    def rate(self, t):
        t = np.asarray(t, dtype=float)
        if len(self.t) < 2:
            return np.zeros_like(t)
        slopes = np.diff(self.v) / np.diff(self.t)
        i = np.searchsorted(self.t, t, side="right") - 1
        inside = (i >= 0) & (i < len(slopes))
        return np.where(inside, slopes[np.clip(i, 0, len(slopes) - 1)], 0.0)

    def integral(self, t):
        """Exact integral of the profile from 0 to ``t``."""
        t = np.asarray(t, dtype=float)
        grid = np.concatenate([[0.0], self.t[(self.t > 0)]])
        vals = self(grid)
        cum = np.concatenate([[0.0], np.cumsum(np.diff(grid) * (vals[1:] + vals[:-1]) / 2.0)])
        i = np.clip(np.searchsorted(grid, t, side="right") - 1, 0, len(grid) - 1)
        t0 = grid[i]
        return cum[i] + (t - t0) * (self(t0) + self(t)) / 2.0

    def to_json(self):
        return [[float(a), float(b)] for a, b in zip(self.t, self.v)]


@dataclass
class AgentSpec:
    s0: float
    speed: list = field(default_factory=lambda: [[0.0, 60.0]])
    offset: list = field(default_factory=lambda: [[0.0, 0.0]])


@dataclass
class SensorModelConfig:
    """Synthetic detection pipeline.

    Noise is applied in the ego frame: ``lon`` along the ego heading,
    ``lat`` across it.  ``fov_deg`` is the full opening angle of the forward
    field of view; objects behind the ego are seen up to ``range_rear``.

    Ghosts are born at ``ghost_rate`` per second within ``ghost_band`` of a
    wall (a ``ghost_offtrack_fraction`` share just beyond it) and persist
    for an exponentially distributed time with mean ``ghost_lifetime``,
    keeping their position relative to the ego like a wall reflection.
    """

    sensor_id: str
    features: tuple = ("x", "y", "yaw")
    noise: dict = field(default_factory=lambda: {"lon": 0.2, "lat": 0.2, "yaw_deg": 2.0, "v": 0.5})
    range_front: float = 98.0
    range_rear: float = 57.0
    fov_deg: float = 360.0
    delay_mean_ms: float = 151.0
    delay_p90_ms: float = 191.0
    dropout: float = 0.05
    ghost_rate: float = 0.05
    ghost_band: float = 1.0
    ghost_offtrack_fraction: float = 0.5
    ghost_lifetime: float = 0.3
    rate_hz: float = 20.0
    phase: float = 0.0

    def __post_init__(self):
        self.features = tuple(self.features)
        if self.rate_hz <= 0 or self.dropout < 0 or self.dropout > 1 or self.ghost_rate < 0:
            raise ScenarioError(f"sensor {self.sensor_id}: invalid rate, dropout or ghost rate")
        if self.delay_mean_ms < 0 or self.delay_p90_ms < 0:
            raise ScenarioError(f"sensor {self.sensor_id}: delays must be non-negative")
        if self.delay_mean_ms > 0 and self.delay_p90_ms <= self.delay_mean_ms:
            raise ScenarioError(f"sensor {self.sensor_id}: delay p90 must exceed the mean")
        if self.ghost_lifetime < 0 or self.ghost_band < 0:
            raise ScenarioError(f"sensor {self.sensor_id}: ghost lifetime and band must be non-negative")
        if not 0 <= self.ghost_offtrack_fraction <= 1:
            raise ScenarioError(f"sensor {self.sensor_id}: ghost_offtrack_fraction must be in [0, 1]")

    def lognormal_params(self) -> tuple[float, float]:
        """(mu, sigma) of the log-delay in seconds matching the mean and p90."""
        return lognormal_from_mean_p90(self.delay_mean_ms / 1e3, self.delay_p90_ms / 1e3)


def lognormal_from_mean_p90(mean: float, p90: float) -> tuple[float, float]:
    """Lognormal parameters with the given mean and 90 % quantile.

    Solves ``log(p90) - log(mean) = z*sigma - sigma**2/2`` for the smaller root.
    """
    d = math.log(p90) - math.log(mean)
    disc = Z90 * Z90 - 2.0 * d
    if disc < 0:
        raise ScenarioError(f"no lognormal has mean {mean} and p90 {p90}")
    sigma = Z90 - math.sqrt(disc)
    return math.log(mean) - sigma * sigma / 2.0, sigma


def default_lidar(**kw) -> SensorModelConfig:
    base = dict(sensor_id="lidar_cluster", features=("x", "y", "yaw"))
    base.update(kw)
    return SensorModelConfig(**base)


def default_radar(**kw) -> SensorModelConfig:
    base = dict(
        sensor_id="radar",
        features=("x", "y", "yaw", "v"),
        noise={"lon": 0.5, "lat": 0.5, "yaw_deg": 5.0, "v": 1.0},
        range_front=105.0,
        range_rear=0.0,
        fov_deg=60.0,
        delay_mean_ms=62.0,
        delay_p90_ms=89.0,
        dropout=0.1,
        ghost_rate=0.1,
        rate_hz=20.0,
        phase=0.013,
    )
    base.update(kw)
    return SensorModelConfig(**base)


@dataclass
class ScenarioSpec:
    seed: int = 0
    duration: float = 60.0
    track: OvalTrack = field(default_factory=OvalTrack)
    agents: list = field(default_factory=list)
    sensors: list = field(default_factory=lambda: [default_lidar(), default_radar()])
    truth_rate: float = 100.0
    ego_noise: dict = field(default_factory=lambda: {"x": 0.0, "y": 0.0, "yaw_deg": 0.0, "v": 0.0})

    def validate(self) -> None:
        if not self.duration > 0:
            raise ScenarioError("duration must be positive")
        if len(self.agents) < 1:
            raise ScenarioError("a scenario needs at least the ego agent")
        ids = [s.sensor_id for s in self.sensors]
        if len(set(ids)) != len(ids):
            raise ScenarioError("sensor ids must be unique")
        for k, a in enumerate(self.agents):
            v = np.asarray([p[1] for p in a.speed])
            if np.any(v < 0) or np.any(v > MAX_SPEED):
                raise ScenarioError(f"agent {k}: speeds must lie in [0, {MAX_SPEED}] m/s")
        pos = np.array([self._agent_xy(a, 0.0) for a in self.agents])
        for i in range(len(pos)):
            for j in range(i + 1, len(pos)):
                if math.hypot(*(pos[i] - pos[j])) < CAR_LENGTH:
                    raise ScenarioError(f"agents {i} and {j} overlap at t=0")

    def _agent_xy(self, a: AgentSpec, t: float):
        x, y = self.track.offset_point(a.s0 + Profile(a.speed).integral(t), Profile(a.offset)(t))
        return float(x), float(y)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "duration": self.duration,
            "track": {"straight": self.track.straight, "radius": self.track.radius, "width": self.track.width},
            "agents": [{"s0": a.s0, "speed": a.speed, "offset": a.offset} for a in self.agents],
            "sensors": [
                {**s.__dict__, "features": list(s.features), "noise": dict(s.noise)} for s in self.sensors
            ],
            "truth_rate": self.truth_rate,
            "ego_noise": dict(self.ego_noise),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        track = OvalTrack(**d.pop("track", {}))
        agents = [AgentSpec(**a) for a in d.pop("agents", [])]
        sensors = [SensorModelConfig(**s) for s in d.pop("sensors")] if "sensors" in d else None
        spec = cls(track=track, agents=agents, **d)
        if sensors is not None:
            spec.sensors = sensors
        return spec


def agent_states(track: OvalTrack, agent: AgentSpec, t) -> np.ndarray:
    """True (n, 5) states ``x, y, yaw, v, yaw_rate`` of one agent at times ``t``."""
    t = np.asarray(t, dtype=float)
    speed, offset = Profile(agent.speed), Profile(agent.offset)
    s = agent.s0 + speed.integral(t)
    o = offset(t)
    sdot, sddot = speed(t), speed.rate(t)
    odot = offset.rate(t)
    cx, cy, cyaw, kappa = track.center(s)
    x, y = cx - o * np.cos(cyaw), cy - o * np.sin(cyaw)
    u = sdot * (1.0 - o * kappa)  # speed along the local tangent
    v = np.hypot(u, odot)
    yaw = wrap_angle(cyaw + np.arctan2(odot, u))
    udot = sddot * (1.0 - o * kappa) - sdot * odot * kappa
    with np.errstate(invalid="ignore", divide="ignore"):
        slip_rate = np.where(v > 0, -odot * udot / (v * v), 0.0)
    yaw_rate = sdot * kappa + slip_rate
    return np.column_stack([x, y, yaw, v, yaw_rate])


@dataclass
class SimulationResult:
    spec: ScenarioSpec
    truth: GroundTruth
    ego_log: list
    frames: dict
    track_map: TrackMap

    def all_frames(self) -> list:
        return [f for fs in self.frames.values() for f in fs]


def _time_grid(rate: float, duration: float, phase: float = 0.0) -> np.ndarray:
    n = int(math.floor((duration - phase) * rate + 1e-9)) + 1
    return np.round(phase + np.arange(n) / rate, 9)


def generate(spec: ScenarioSpec) -> SimulationResult:
    """Generate ground truth, the ego log and per-sensor detection frames."""
    spec.validate()
    track = spec.track
    t_truth = _time_grid(spec.truth_rate, spec.duration)
    states = np.stack([agent_states(track, a, t_truth) for a in spec.agents], axis=1)
    truth = GroundTruth(t_truth, list(range(len(spec.agents))), states, ego_id=0)

    seeds = np.random.SeedSequence(spec.seed).spawn(len(spec.sensors) + 1)
    ego_rng = np.random.default_rng(seeds[0])
    en = spec.ego_noise
    ego_noise = np.column_stack(
        [
            ego_rng.normal(0.0, en.get("x", 0.0), len(t_truth)),
            ego_rng.normal(0.0, en.get("y", 0.0), len(t_truth)),
            ego_rng.normal(0.0, math.radians(en.get("yaw_deg", 0.0)), len(t_truth)),
            ego_rng.normal(0.0, en.get("v", 0.0), len(t_truth)),
        ]
    )
    ego_log = [
        EgoState(
            t=float(t),
            x=float(st[0] + nz[0]),
            y=float(st[1] + nz[1]),
            yaw=float(wrap_angle(st[2] + nz[2])),
            v=float(max(st[3] + nz[3], 0.0)),
            yaw_rate=float(st[4]),
        )
        for t, st, nz in zip(t_truth, states[:, 0, :], ego_noise)
    ]

    frames = {}
    for sensor, seq in zip(spec.sensors, seeds[1:]):
        frames[sensor.sensor_id] = _sensor_frames(spec, sensor, np.random.default_rng(seq))
    return SimulationResult(spec, truth, ego_log, frames, track.to_map())


def _sensor_frames(spec: ScenarioSpec, sensor: SensorModelConfig, rng) -> list:
    track = spec.track
    times = _time_grid(sensor.rate_hz, spec.duration, sensor.phase)
    per_agent = [agent_states(track, a, times) for a in spec.agents]
    ego = per_agent[0]
    noise = sensor.noise
    lam = sensor.ghost_rate / sensor.rate_hz
    if sensor.delay_mean_ms > 0:
        mu, sigma = sensor.lognormal_params()
    frames = []
    ghosts = []  # (arc offset from the ego, lateral offset, end time)
    for k, t in enumerate(times):
        ex, ey, eyaw, ev, _ = ego[k]
        c, s = math.cos(eyaw), math.sin(eyaw)
        objects = []
        for a in range(1, len(spec.agents)):
            ox, oy, oyaw, ov, _ = per_agent[a][k]
            dx, dy = ox - ex, oy - ey
            lx, ly = c * dx + s * dy, -s * dx + c * dy  # ego frame: x right, y forward
            if not _visible(sensor, lx, ly) or rng.random() < sensor.dropout:
                continue
            lat_n = rng.normal(0.0, noise.get("lat", 0.0))
            lon_n = rng.normal(0.0, noise.get("lon", 0.0))
            yaw_n = rng.normal(0.0, math.radians(noise.get("yaw_deg", 0.0)))
            v_n = rng.normal(0.0, noise.get("v", 0.0))
            objects.append(
                Detection(
                    x=lx + lat_n,
                    y=ly + lon_n,
                    yaw=float(wrap_angle(oyaw - eyaw + yaw_n)) if "yaw" in sensor.features else None,
                    v=float(ov + v_n) if "v" in sensor.features else None,
                )
            )
        for _ in range(rng.poisson(lam) if lam > 0 else 0):
            ghosts.append(_spawn_ghost(spec, sensor, rng, t))
        ghosts = [g for g in ghosts if g[2] >= t]
        if ghosts:
            s_ego = _nearest_arc(track, ex, ey)
        for ds, off, _ in ghosts:
            if rng.random() < sensor.dropout:
                continue
            gx, gy, gyaw, _ = track.center(s_ego + ds)
            gx, gy = float(gx[()] - off * math.cos(gyaw)), float(gy[()] - off * math.sin(gyaw))
            dx, dy = gx - ex, gy - ey
            lx, ly = c * dx + s * dy, -s * dx + c * dy
            if not _visible(sensor, lx, ly):
                continue
            objects.append(
                Detection(
                    x=lx + rng.normal(0.0, noise.get("lat", 0.0)),
                    y=ly + rng.normal(0.0, noise.get("lon", 0.0)),
                    yaw=float(wrap_angle(float(gyaw) - eyaw)) if "yaw" in sensor.features else None,
                    v=float(ev + rng.normal(0.0, noise.get("v", 0.0))) if "v" in sensor.features else None,
                )
            )
        delay = float(rng.lognormal(mu, sigma)) if sensor.delay_mean_ms > 0 else 0.0
        frames.append(
            DetectionFrame(sensor.sensor_id, float(t), objects, frame_seq=k, t_recv=float(np.round(t + delay, 9)))
        )
    return frames


def _visible(sensor: SensorModelConfig, lx: float, ly: float) -> bool:
    d = math.hypot(lx, ly)
    if ly >= 0:
        return d <= sensor.range_front and abs(math.degrees(math.atan2(lx, ly))) <= sensor.fov_deg / 2.0
    return d <= sensor.range_rear


def _spawn_ghost(spec: ScenarioSpec, sensor: SensorModelConfig, rng, t: float):
    # a false detection near one wall, placed relative to the ego along the track
    half = spec.track.width / 2.0
    ds = rng.uniform(-sensor.range_rear, sensor.range_front)
    depth = rng.uniform(0.0, sensor.ghost_band)
    outside = rng.random() < sensor.ghost_offtrack_fraction
    wall_side = 1.0 if rng.random() < 0.5 else -1.0  # +1 inner wall, -1 outer wall
    off = wall_side * (half + depth if outside else half - depth)
    life = rng.exponential(sensor.ghost_lifetime) if sensor.ghost_lifetime > 0 else 0.0
    return ds, off, t + life


def _nearest_arc(track: OvalTrack, x: float, y: float) -> float:
    L, R = track.straight, track.radius
    if -L / 2 <= y <= L / 2:
        return y + L / 2 if x >= 0 else L + math.pi * R + (L / 2 - y)
    if y > L / 2:
        th = math.atan2(y - L / 2, x) % (2 * math.pi)
        return L + R * min(th, math.pi)
    th = math.atan2(y + L / 2, x) % (2 * math.pi)
    return 2 * L + math.pi * R + R * (max(th, math.pi) - math.pi)


def overtake_scenario(
    leader_speed: float = 55.0,
    trailer_speed: float = 65.0,
    duration: float = 160.0,
    seed: int = 0,
    start_gap: float = 50.0,
    settle_gap: float = 40.0,
    lane_offset: float = 2.5,
    sensors=None,
) -> ScenarioSpec:
    """Two-car overtake: the ego leads, the opponent closes from behind, passes
    on the inside lane, settles ``settle_gap`` metres ahead and merges into
    the ego's lane.  The opponent's speed ramps slightly below the ego's after
    the pass, so the relative speed crosses zero before both hold equal speed.
    """
    if trailer_speed <= leader_speed:
        raise ScenarioError("trailer speed must exceed leader speed for an overtake")
    dv = trailer_speed - leader_speed
    t_pass = (start_gap + settle_gap) / dv
    ramp = 3.0
    # average speed over each ramp is the midpoint, so the gap grows by dv*ramp/2 then shrinks by 0.5*ramp/2
    speed = [
        [0.0, trailer_speed],
        [t_pass, trailer_speed],
        [t_pass + ramp, leader_speed - 1.0],
        [t_pass + 2 * ramp, leader_speed],
    ]
    t_merge = t_pass + 2 * ramp + 1.0
    offset = [[0.0, lane_offset], [t_merge, lane_offset], [t_merge + 4.0, -lane_offset]]
    agents = [
        AgentSpec(s0=0.0, speed=[[0.0, leader_speed]], offset=[[0.0, -lane_offset]]),
        AgentSpec(s0=-start_gap, speed=speed, offset=offset),
    ]
    spec = ScenarioSpec(seed=seed, duration=duration, agents=agents)
    if sensors is not None:
        spec.sensors = list(sensors)
    return spec


def pack_scenario(n_opponents: int = 10, speed: float = 60.0, duration: float = 60.0, seed: int = 0, sensors=None):
    """Ego surrounded by ``n_opponents`` cars at matched speed, all within sensor range."""
    lanes = (-4.5, 0.0, 4.5)
    agents = [AgentSpec(s0=0.0, speed=[[0.0, speed]], offset=[[0.0, 0.0]])]
    k = 0
    s = -40.0
    while len(agents) < n_opponents + 1:
        s += 9.0
        if abs(s) < 8.0:
            continue
        agents.append(AgentSpec(s0=s, speed=[[0.0, speed]], offset=[[0.0, lanes[k % 3]]]))
        k += 1
    spec = ScenarioSpec(seed=seed, duration=duration, agents=agents)
    if sensors is not None:
        spec.sensors = list(sensors)
    return spec


def ghost_heavy_scenario(
    ghost_rate: float = 2.0, ghost_band: float = 0.5, duration: float = 60.0, seed: int = 0, **overtake_kw
) -> ScenarioSpec:
    """The overtake manoeuvre with both sensors reporting frequent ghosts hugging the walls."""
    sensors = [
        default_lidar(ghost_rate=ghost_rate, ghost_band=ghost_band),
        default_radar(ghost_rate=ghost_rate, ghost_band=ghost_band),
    ]
    return overtake_scenario(duration=duration, seed=seed, sensors=sensors, **overtake_kw)


PRESETS = {
    "overtake": overtake_scenario,
    "pack": pack_scenario,
    "ghost_heavy": ghost_heavy_scenario,
}


def preset_scenario(name: str, **kw) -> ScenarioSpec:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ScenarioError(f"unknown scenario preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(**kw)
