"""Toy longitudinal driving world, a linear policy, and performance logs.

The ego vehicle drives along a straight route of ``length_m`` metres and
meets scripted hazards (traffic lights, a stopped lead vehicle, crossing
pedestrians, reduced-speed zones).  Integration is explicit Euler at
``DT`` seconds: position advances with the current speed, then speed with
the chosen acceleration.

All rollouts go through :func:`simulate`, which steps a batch of
(theta, route) episodes in lock-step with numpy.  :func:`run_route` is the
single-episode, trajectory-recording view of the same code.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import EmptyRouteSet, ValidationError
from .scenario import ScenarioAttributes

DT = 0.1
V_MAX = 15.0
A_MIN, A_MAX = -4.0, 2.0
SENSING_RANGE = 60.0
FOG_SENSING_RANGE = 30.0
SPEED_TOLERANCE = 0.5
DEFAULT_LENGTH = 150.0
DEFAULT_TIME_LIMIT = 400

HAZARD_KINDS = ("traffic_light", "stopped_lead_vehicle", "crossing_pedestrian", "speed_zone")
EVENT_KINDS = ("collision", "red_light", "route_deviation", "speeding")
TERMINAL_REASONS = ("goal", "collision", "timeout")
N_FEATURES = 8
FEATURE_NAMES = (
    "bias", "speed", "dist_to_hazard", "red_light_proximity",
    "lead_vehicle_proximity", "pedestrian_proximity", "speed_zone_proximity", "speed_excess",
)

PENALTY = {"collision": 0.5, "red_light": 0.7, "speeding": 0.9, "route_deviation": 0.7}
JERK_REF = 2.0

_MESSAGES = {
    "red_light": "Agent ran a red light at (x={x:.3f}, y={y:.3f}, z={z:.3f})",
    "route_deviation": "Agent deviated from the route at (x={x:.3f}, y={y:.3f}, z={z:.3f})",
    "collision": "Agent collided with an obstacle at (x={x:.3f}, y={y:.3f}, z={z:.3f})",
    "speeding": "Agent exceeded the speed limit at (x={x:.3f}, y={y:.3f}, z={z:.3f})",
}

_DEFAULT_PARAMS = {
    "traffic_light": {"period_s": 12.0, "red_s": 5.0, "offset_s": 0.0, "warn_s": 3.0},
    "stopped_lead_vehicle": {"stop_s": 5.0},
    "crossing_pedestrian": {"trigger_m": 28.0, "cross_s": 4.0},
    "speed_zone": {"limit_mps": 9.0, "zone_length_m": 40.0},
}


# --------------------------------------------------------------------------- types


@dataclass(frozen=True)
class Hazard:
    kind: str
    position_m: float
    params: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in HAZARD_KINDS:
            raise ValidationError(f"unknown hazard kind {self.kind!r}")
        merged = dict(_DEFAULT_PARAMS[self.kind])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ValidationError(f"unknown {self.kind} params {sorted(unknown)}")
        merged.update({k: float(v) for k, v in self.params.items()})
        object.__setattr__(self, "params", merged)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "position_m": self.position_m, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Hazard:
        return cls(data["kind"], float(data["position_m"]), dict(data.get("params", {})))


@dataclass(frozen=True)
class Route:
    route_id: str
    conditions: ScenarioAttributes
    hazards: tuple[Hazard, ...] = ()
    length_m: float = DEFAULT_LENGTH
    time_limit_steps: int = DEFAULT_TIME_LIMIT
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "hazards", tuple(self.hazards))
        if self.length_m <= 0 or self.time_limit_steps < 1:
            raise ValidationError("route length and time limit must be positive")
        last = 0.0
        for hz in self.hazards:
            if not (last < hz.position_m < self.length_m):
                raise ValidationError(
                    f"{self.route_id}: hazard positions must increase strictly inside (0, {self.length_m})"
                )
            last = hz.position_m

    @property
    def sensing_range_m(self) -> float:
        return FOG_SENSING_RANGE if self.conditions.weather == "fog" else SENSING_RANGE

    def to_dict(self) -> dict[str, Any]:
        return {
            "route_id": self.route_id,
            "length_m": self.length_m,
            "conditions": self.conditions.to_dict(),
            "hazards": [h.to_dict() for h in self.hazards],
            "time_limit_steps": self.time_limit_steps,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Route:
        return cls(
            route_id=data["route_id"],
            conditions=ScenarioAttributes.from_dict(data["conditions"]),
            hazards=tuple(Hazard.from_dict(h) for h in data.get("hazards", [])),
            length_m=float(data.get("length_m", DEFAULT_LENGTH)),
            time_limit_steps=int(data.get("time_limit_steps", DEFAULT_TIME_LIMIT)),
            seed=int(data.get("seed", 0)),
        )


@dataclass(frozen=True)
class Observation:
    position_m: float
    speed_mps: float
    dist_to_next_hazard_m: float
    hazard_kind_onehot: tuple[float, float, float, float]
    light_is_red: float
    speed_limit_mps: float


@dataclass(frozen=True)
class Action:
    accel_mps2: float


@dataclass(frozen=True)
class RawEvent:
    """An infraction detected during the rollout (before formatting)."""

    kind: str
    step: int
    x: float


@dataclass(frozen=True)
class Trajectory:
    route_id: str
    steps: tuple[tuple[Observation, Action], ...]
    terminal_reason: str
    final_position_m: float
    events: tuple[RawEvent, ...] = ()

    @property
    def accelerations(self) -> np.ndarray:
        return np.array([a.accel_mps2 for _, a in self.steps])


@dataclass(frozen=True)
class InfractionEvent:
    kind: str
    step: int
    position: tuple[float, float, float]
    message: str

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "step": self.step, "position": list(self.position), "message": self.message}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> InfractionEvent:
        return cls(data["kind"], int(data["step"]), tuple(data["position"]), data["message"])


@dataclass(frozen=True)
class Metrics:
    driving_score: float
    success: bool
    efficiency: float
    comfortness: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "driving_score": self.driving_score,
            "success": self.success,
            "efficiency": self.efficiency,
            "comfortness": self.comfortness,
        }


@dataclass(frozen=True)
class PerformanceLog:
    route_id: str
    conditions: ScenarioAttributes
    events: tuple[InfractionEvent, ...]
    route_completion_fraction: float
    metrics: Metrics

    @property
    def success(self) -> bool:
        return self.metrics.success

    def to_dict(self) -> dict[str, Any]:
        return {
            "route_id": self.route_id,
            "conditions": self.conditions.to_dict(),
            "events": [e.to_dict() for e in self.events],
            "route_completion_fraction": self.route_completion_fraction,
            "metrics": self.metrics.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> PerformanceLog:
        m = data["metrics"]
        return cls(
            route_id=data["route_id"],
            conditions=ScenarioAttributes.from_dict(data["conditions"]),
            events=tuple(InfractionEvent.from_dict(e) for e in data["events"]),
            route_completion_fraction=float(data["route_completion_fraction"]),
            metrics=Metrics(float(m["driving_score"]), bool(m["success"]),
                            float(m["efficiency"]), float(m["comfortness"])),
        )


class PreEvaluation(list):
    """Performance logs in route order, with an aggregate summary."""

    @property
    def summary(self) -> dict[str, float]:
        return aggregate(self)


# --------------------------------------------------------------------------- policy


def features(obs: Observation) -> np.ndarray:
    visible = any(obs.hazard_kind_onehot)
    prox = 1.0 - obs.dist_to_next_hazard_m / SENSING_RANGE if visible else 0.0
    light, lead, ped, zone = obs.hazard_kind_onehot
    return np.array([
        1.0,
        obs.speed_mps / V_MAX,
        obs.dist_to_next_hazard_m / SENSING_RANGE,
        obs.light_is_red * prox,
        lead * prox,
        ped * prox,
        zone * prox,
        max(0.0, obs.speed_mps - obs.speed_limit_mps) / V_MAX,
    ])


def policy_act(theta: Sequence[float], obs: Observation) -> Action:
    """Linear policy over :func:`features`, clamped to the actuator range."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (N_FEATURES,) or not np.all(np.isfinite(theta)):
        raise ValidationError(f"theta must be {N_FEATURES} finite numbers")
    return Action(float(np.clip(theta @ features(obs), A_MIN, A_MAX)))


# --------------------------------------------------------------------------- simulation


@dataclass
class BatchResult:
    """Per-episode outcome of :func:`simulate` (arrays indexed by episode)."""

    terminal: np.ndarray          # index into TERMINAL_REASONS
    final_x: np.ndarray
    n_steps: np.ndarray
    counts: np.ndarray            # (N, 4) in EVENT_KINDS order
    abs_jerk_sum: np.ndarray
    events: list[list[RawEvent]]
    obs: np.ndarray | None = None       # (N, T, 9) when recorded
    actions: np.ndarray | None = None   # (N, T)

    def completion(self, lengths: np.ndarray) -> np.ndarray:
        return np.clip(self.final_x, 0.0, lengths) / lengths

    def mean_abs_jerk(self) -> np.ndarray:
        pairs = np.maximum(self.n_steps - 1, 1)
        return np.where(self.n_steps > 1, self.abs_jerk_sum / pairs, 0.0)


def _pack(routes: Sequence[Route]):
    n = len(routes)
    h = max([len(r.hazards) for r in routes] + [1])
    kind = np.full((n, h), -1)
    pos = np.full((n, h), np.inf)
    p = np.zeros((4, n, h))
    for i, r in enumerate(routes):
        for j, hz in enumerate(r.hazards):
            kind[i, j] = HAZARD_KINDS.index(hz.kind)
            pos[i, j] = hz.position_m
            vals = list(hz.params.values())
            p[: len(vals), i, j] = vals
    return kind, pos, p


def simulate(thetas: np.ndarray, routes: Sequence[Route], record: bool = False) -> BatchResult:
    """Roll out episode ``i`` as policy ``thetas[i]`` on ``routes[i]``.

    Episodes advance together; finished ones are frozen.  With ``record``
    the observation vectors and actions of every step are kept.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    n = len(routes)
    if thetas.shape != (n, N_FEATURES):
        raise ValidationError(f"need one theta of length {N_FEATURES} per route, got {thetas.shape}")
    if not np.all(np.isfinite(thetas)):
        raise ValidationError("theta entries must be finite")

    kind, pos, par = _pack(routes)
    is_light, is_lead, is_ped, is_zone = (kind == k for k in range(4))
    # parameter slots follow the insertion order of _DEFAULT_PARAMS
    period, red_s, offset, warn_s = par
    stop_s = par[0]
    trigger_m, cross_s = par[0], par[1]
    limit, zone_len = par[0], par[1]

    length = np.array([r.length_m for r in routes])
    t_limit = np.array([r.time_limit_steps for r in routes])
    sense = np.array([r.sensing_range_m for r in routes])
    max_steps = int(t_limit.max())

    x = np.zeros(n)
    v = np.zeros(n)
    prev_a = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    terminal = np.full(n, -1)
    n_steps = np.zeros(n, dtype=int)
    counts = np.zeros((n, 4), dtype=int)
    jerk_sum = np.zeros(n)
    trig_t = np.full(pos.shape, np.inf)
    speeding = np.zeros(pos.shape, dtype=bool)
    events: list[list[RawEvent]] = [[] for _ in range(n)]
    rows = np.arange(n)
    if record:
        rec_obs = np.full((n, max_steps, 9), np.nan)
        rec_act = np.full((n, max_steps), np.nan)

    def light_phase(t):
        return np.mod(t + offset, np.where(is_light, period, 1.0))

    def blocking(t):
        lead_on = is_lead & (t < stop_s)
        ped_on = is_ped & (trig_t <= t) & (t < trig_t + cross_s)
        return lead_on | ped_on

    for step in range(max_steps):
        t = step * DT
        # --- observe
        cleared = (is_lead & (t >= stop_s)) | (is_ped & (trig_t + cross_s <= t))
        ahead = (pos > x[:, None]) & ~cleared & (kind >= 0)
        has_next = ahead.any(axis=1)
        nxt = np.argmax(ahead, axis=1)
        d_raw = np.where(has_next, pos[rows, nxt] - x, np.inf)
        visible = d_raw <= sense
        d = np.where(visible, d_raw, sense)
        nkind = np.where(visible, kind[rows, nxt], -1)
        onehot = (nkind[:, None] == np.arange(4)).astype(float)
        phase = light_phase(t)[rows, nxt]
        pr = period[rows, nxt]
        red_soon = (phase < red_s[rows, nxt]) | (phase >= pr - warn_s[rows, nxt])
        light_red = ((nkind == 0) & red_soon).astype(float)
        in_zone = is_zone & (pos <= x[:, None]) & (x[:, None] < pos + zone_len)
        v_limit = np.where(in_zone.any(axis=1), np.where(in_zone, limit, np.inf).min(axis=1), V_MAX)

        prox = np.where(visible, 1.0 - d / SENSING_RANGE, 0.0)
        feats = np.stack([
            np.ones(n), v / V_MAX, d / SENSING_RANGE, light_red * prox,
            onehot[:, 1] * prox, onehot[:, 2] * prox, onehot[:, 3] * prox,
            np.maximum(0.0, v - v_limit) / V_MAX,
        ], axis=1)
        a = np.clip(np.einsum("ij,ij->i", thetas, feats), A_MIN, A_MAX)

        if record:
            rec_obs[alive, step] = np.column_stack([x, v, d, onehot, light_red, v_limit])[alive]
            rec_act[alive, step] = a[alive]
        if step > 0:
            jerk_sum += np.where(alive, np.abs(a - prev_a) / DT, 0.0)
        prev_a = a

        # --- integrate
        x1 = x + v * DT
        v1 = np.clip(v + a * DT, 0.0, V_MAX)
        t1 = t + DT
        n_steps += alive

        newly = is_ped & np.isinf(trig_t) & (pos > x1[:, None]) & (pos - x1[:, None] <= trigger_m)
        trig_t = np.where(newly & alive[:, None], t1, trig_t)

        crossed = (x[:, None] < pos) & (pos <= x1[:, None]) & alive[:, None]
        ph1 = light_phase(t1)
        ran_red = crossed & is_light & (ph1 < red_s)
        hit = crossed & blocking(t1)

        zone_now = is_zone & (pos <= x1[:, None]) & (x1[:, None] < pos + zone_len)
        over = zone_now & (v1[:, None] > limit + SPEED_TOLERANCE) & alive[:, None]
        new_speeding = over & ~speeding
        speeding = over | (speeding & ~alive[:, None])

        collided = hit.any(axis=1)
        first_hit = np.argmax(hit, axis=1)
        x1 = np.where(collided, pos[rows, first_hit], x1)
        reached = alive & ~collided & (x1 >= length)
        timed_out = alive & ~collided & ~reached & (n_steps >= t_limit)

        for i in np.flatnonzero(ran_red.any(axis=1)):
            for j in np.flatnonzero(ran_red[i]):
                events[i].append(RawEvent("red_light", step, float(pos[i, j])))
                counts[i, 1] += 1
        for i in np.flatnonzero(new_speeding.any(axis=1)):
            events[i].append(RawEvent("speeding", step, float(x1[i])))
            counts[i, 3] += 1
        for i in np.flatnonzero(collided & alive):
            events[i].append(RawEvent("collision", step, float(x1[i])))
            counts[i, 0] += 1
        for i in np.flatnonzero(timed_out):
            events[i].append(RawEvent("route_deviation", step, float(x1[i])))
            counts[i, 2] += 1

        terminal = np.where(alive & collided, 1, terminal)
        terminal = np.where(reached, 0, terminal)
        terminal = np.where(timed_out, 2, terminal)
        x = np.where(alive, x1, x)
        v = np.where(alive, v1, v)
        alive = alive & (terminal < 0)
        if not alive.any():
            break

    return BatchResult(
        terminal=terminal, final_x=x, n_steps=n_steps, counts=counts,
        abs_jerk_sum=jerk_sum, events=events,
        obs=rec_obs if record else None, actions=rec_act if record else None,
    )


def run_route(theta: Sequence[float], route: Route) -> Trajectory:
    """Roll out the policy on one route and record every (observation, action)."""
    res = simulate(np.asarray(theta, dtype=float)[None, :], [route], record=True)
    steps = []
    for k in range(int(res.n_steps[0])):
        o = res.obs[0, k]
        obs = Observation(
            position_m=float(o[0]), speed_mps=float(o[1]), dist_to_next_hazard_m=float(o[2]),
            hazard_kind_onehot=tuple(float(z) for z in o[3:7]),
            light_is_red=float(o[7]), speed_limit_mps=float(o[8]),
        )
        steps.append((obs, Action(float(res.actions[0, k]))))
    return Trajectory(
        route_id=route.route_id,
        steps=tuple(steps),
        terminal_reason=TERMINAL_REASONS[int(res.terminal[0])],
        final_position_m=float(res.final_x[0]),
        events=tuple(res.events[0]),
    )


# --------------------------------------------------------------------------- evaluation


def driving_score(completion: float, event_kinds: Sequence[str]) -> float:
    score = 100.0 * completion
    for k in event_kinds:
        score *= PENALTY[k]
    return score


def comfortness(mean_abs_jerk: float) -> float:
    return 100.0 * max(0.0, 1.0 - mean_abs_jerk / JERK_REF)


def efficiency(covered_m: float, n_steps: int) -> float:
    """Ideal max-speed traversal time of the covered distance over the actual time."""
    if n_steps == 0:
        return 0.0
    return 100.0 * (covered_m / V_MAX) / (n_steps * DT)


def format_message(kind: str, x: float, y: float = 0.0, z: float = 0.0) -> str:
    return _MESSAGES[kind].format(x=x, y=y, z=z)


def evaluate(trajectory: Trajectory, route: Route) -> PerformanceLog:
    """Map a trajectory to its performance log and metrics."""
    events = tuple(
        InfractionEvent(e.kind, e.step, (e.x, 0.0, 0.0), format_message(e.kind, e.x))
        for e in trajectory.events
    )
    covered = min(max(trajectory.final_position_m, 0.0), route.length_m)
    completion = covered / route.length_m
    kinds = [e.kind for e in events]
    acc = trajectory.accelerations
    mean_jerk = float(np.mean(np.abs(np.diff(acc)) / DT)) if len(acc) > 1 else 0.0
    success = "collision" not in kinds and "red_light" not in kinds and completion == 1.0
    metrics = Metrics(
        driving_score=driving_score(completion, kinds),
        success=success,
        efficiency=efficiency(covered, len(trajectory.steps)),
        comfortness=comfortness(mean_jerk),
    )
    return PerformanceLog(route.route_id, route.conditions, events, completion, metrics)


def aggregate(logs: Sequence[PerformanceLog]) -> dict[str, float]:
    if not logs:
        return {"routes": 0}
    return {
        "routes": len(logs),
        "driving_score": float(np.mean([lg.metrics.driving_score for lg in logs])),
        "success_rate": 100.0 * float(np.mean([lg.metrics.success for lg in logs])),
        "efficiency": float(np.mean([lg.metrics.efficiency for lg in logs])),
        "comfortness": float(np.mean([lg.metrics.comfortness for lg in logs])),
        "infractions": int(sum(len(lg.events) for lg in logs)),
    }


def pre_evaluate(theta: Sequence[float], routes: Sequence[Route]) -> PreEvaluation:
    """Evaluate the policy on every route; logs come back in route order."""
    if not routes:
        raise EmptyRouteSet("pre-evaluation needs at least one route")
    return PreEvaluation(evaluate(run_route(theta, r), r) for r in routes)


# --------------------------------------------------------------------------- scenarios -> routes

_TAG_HAZARDS = {
    "red_light": "traffic_light",
    "traffic_light": "traffic_light",
    "stopped_lead_vehicle": "stopped_lead_vehicle",
    "aggressive_cut_in": "stopped_lead_vehicle",
    "occluded_pedestrian": "crossing_pedestrian",
    "crossing_pedestrian": "crossing_pedestrian",
    "jaywalking_pedestrian": "crossing_pedestrian",
    "school_zone": "speed_zone",
    "construction_zone": "speed_zone",
    "speed_zone": "speed_zone",
}

# location -> (first hazard position, spacing, built-in speed zone limit or None)
_LAYOUTS = {
    "urban_intersection": (55.0, 35.0, None),
    "highway": (70.0, 30.0, None),
    "roundabout": (50.0, 35.0, 8.0),
    "merge_ramp": (45.0, 35.0, None),
    "residential": (40.0, 30.0, 9.0),
}
_NIGHT_TRIGGER_FACTOR = 0.6
_OCCLUDED_TRIGGER_FACTOR = 0.7


def _layout_seed(attrs: ScenarioAttributes, seed: int) -> np.random.Generator:
    # weather/time do not enter the seed: they change perception, not geometry
    key = f"{attrs.location}|{','.join(attrs.scene_tags)}".encode("utf-8")
    salt = int.from_bytes(hashlib.blake2b(key, digest_size=4).digest(), "little")
    return np.random.default_rng([seed & 0xFFFF_FFFF, salt])


def scenario_to_route(record: Any, seed: int, route_id: str | None = None,
                      length_m: float = DEFAULT_LENGTH,
                      time_limit_steps: int = DEFAULT_TIME_LIMIT) -> Route:
    """Build an executable route from a bank record (or bare attributes)."""
    attrs: ScenarioAttributes = getattr(record, "attributes", record)
    sid = getattr(record, "scenario_id", "scenario")
    rng = _layout_seed(attrs, seed)
    start, spacing, zone_limit = _LAYOUTS[attrs.location]

    specs: list[tuple[str, dict[str, float]]] = []
    if zone_limit is not None:
        specs.append(("speed_zone", {"limit_mps": zone_limit}))
    for tag in attrs.scene_tags:
        kind = _TAG_HAZARDS.get(tag)
        if kind is None:
            continue
        params: dict[str, float] = {}
        if kind == "crossing_pedestrian" and tag == "occluded_pedestrian":
            params["trigger_m"] = _DEFAULT_PARAMS[kind]["trigger_m"] * _OCCLUDED_TRIGGER_FACTOR
        if kind == "speed_zone":
            if any(k == "speed_zone" for k, _ in specs):
                continue
            params["limit_mps"] = 10.0
        if kind == "stopped_lead_vehicle" and tag == "aggressive_cut_in":
            params["stop_s"] = 6.0
        specs.append((kind, params))

    n = len(specs)
    if n > 1:
        spacing = min(spacing, (length_m - 20.0 - start) / (n - 1))
    hazards = []
    for i, (kind, params) in enumerate(specs):
        jitter = float(rng.uniform(-4.0, 4.0))
        p = dict(params)
        if kind == "traffic_light":
            p["offset_s"] = float(rng.uniform(0.0, _DEFAULT_PARAMS[kind]["period_s"]))
        elif kind == "stopped_lead_vehicle":
            p["stop_s"] = p.get("stop_s", float(rng.uniform(8.0, 14.0)))
        elif kind == "crossing_pedestrian":
            trig = p.get("trigger_m", _DEFAULT_PARAMS[kind]["trigger_m"])
            if attrs.time == "night":
                trig *= _NIGHT_TRIGGER_FACTOR
            p["trigger_m"] = trig
            p["cross_s"] = float(rng.uniform(3.0, 5.0))
        hazards.append(Hazard(kind, round(start + i * spacing + jitter, 3), p))
    return Route(
        route_id=route_id or f"{sid}#{seed}",
        conditions=attrs,
        hazards=tuple(hazards),
        length_m=length_m,
        time_limit_steps=time_limit_steps,
        seed=seed,
    )


def constant_accel_theta(accel: float) -> np.ndarray:
    """Policy that always requests ``accel`` (before clamping)."""
    theta = np.zeros(N_FEATURES)
    theta[0] = accel
    return theta
