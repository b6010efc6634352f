"""Constraint-based safety controller.

Converts a waypoint plan plus a perception frame into actuation: swept
corridor occupancy with constant-velocity position prediction, IDM
longitudinal speed, look-ahead preview steering with PID, and a
confidence-gated traffic-rule emergency brake.

Two profiles: FAST keeps every redundancy; DEGRADED drops the traffic gate,
the protective stop and the footprint margin but retains a hard
time-to-collision gate and a speed cap, granting low-speed maneuvers room
to execute.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

from .geometry import Vec2, rect_corners, wrap_angle
from .perception import PerceptionFrame, SignalDetection, TrackedObject
from .planner import WaypointPlan
from .world import MAX_STEER, ControlCommand

FAST = "FAST"
DEGRADED = "DEGRADED"

_COARSE_STEP = 0.5     # m, corridor march resolution before bisection
_BISECT_ITERS = 40
_STATIONARY_EPS = 0.5  # m/s


@dataclass(frozen=True)
class IdmParams:
    v0: float = 8.0          # desired speed, m/s
    T: float = 1.5           # time headway, s
    a_max: float = 1.5       # max acceleration, m/s^2
    b_comf: float = 2.0      # comfortable deceleration, m/s^2
    s0: float = 2.0          # jam distance, m
    delta: float = 4.0       # acceleration exponent
    b_emergency: float = 6.0  # clamp floor, m/s^2


@dataclass(frozen=True)
class PidGains:
    kp: float = 0.8
    ki: float = 0.0
    kd: float = 0.1
    integral_limit: float = 1.0


@dataclass(frozen=True)
class PidState:
    integral: float = 0.0
    prev_error: float = 0.0
    primed: bool = False


@dataclass(frozen=True)
class StopLatchState:
    """Full-stop bookkeeping for stop signs: satisfied after the ego holds
    v < 0.1 m/s for 0.5 s within 5 m of the sign; reset when the sign
    leaves the detection set."""
    satisfied: bool = False
    stopped_ticks: int = 0


@dataclass(frozen=True)
class SafetyConfig:
    profile: str = FAST
    idm: IdmParams = field(default_factory=IdmParams)
    gains: PidGains = field(default_factory=PidGains)
    dt: float = 0.05
    ego_bbox: tuple[float, float] = (4.0, 2.0)
    accel_limit: float = 3.0        # vehicle accel realized at longitudinal=+1
    brake_limit: float = 8.0        # vehicle decel realized at longitudinal=-1
    lookahead_min: float = 4.0      # preview distance floor, m
    lookahead_speed_gain: float = 0.5
    signal_confidence_threshold: float = 0.6
    stop_margin: float = 3.0        # added to the braking envelope, m
    stop_latch_radius: float = 5.0
    stop_latch_hold_s: float = 0.5
    prediction_horizon: float = 2.0  # s, constant-velocity object propagation
    footprint_margin: float = 0.3    # lateral corridor inflation (FAST only)
    protective_clearance: float = 6.0  # stationary blocker distance forcing a stop
    ttc_brake: float = 1.5           # FAST hard gate, s
    ttc_hard: float = 1.0            # DEGRADED hard gate, s
    degraded_speed_cap: float = 3.0  # m/s

    def degraded(self) -> "SafetyConfig":
        return replace(self, profile=DEGRADED, footprint_margin=0.0)

    @classmethod
    def from_dict(cls, raw: dict, v0: Optional[float] = None, dt: float = 0.05) -> "SafetyConfig":
        idm_raw = dict(raw.get("idm", {}) or {})
        if v0 is not None and "v0" not in idm_raw:
            idm_raw["v0"] = v0
        idm = IdmParams(**{k: float(v) for k, v in idm_raw.items()})
        gains = PidGains(**{k: float(v) for k, v in (raw.get("pid", {}) or {}).items()})
        keep = {
            k: raw[k] for k in raw
            if k in cls.__dataclass_fields__ and k not in ("idm", "gains", "profile")
        }
        return cls(idm=idm, gains=gains, dt=dt, **keep)


@dataclass(frozen=True)
class Leader:
    object_id: str
    gap: float      # bumper gap along the corridor, m
    speed: float    # velocity component along the corridor, m/s


@dataclass(frozen=True)
class OccupancyAssessment:
    min_clear_distance: float
    blocking_object: Optional[str] = None
    blocking_speed: float = 0.0
    leader: Optional[Leader] = None


@dataclass(frozen=True)
class ControlOutput:
    command: ControlCommand
    pid: PidState
    latch: StopLatchState
    occupancy: OccupancyAssessment
    short_plan: bool = False
    gate_fired: bool = False


def idm_accel(gap: float, v: float, leader_v: float, p: IdmParams) -> float:
    """Intelligent-driver-model acceleration.

    a = a_max * (1 - (v/v0)^delta - (s*/gap)^2) with
    s* = s0 + v*T + v*(v - leader_v) / (2*sqrt(a_max*b_comf)); the result is
    clamped to [-b_emergency, a_max].  Non-positive gaps brake fully; the
    free-road case is gap = +inf.
    """
    if gap <= 0.0:
        return -p.b_emergency
    if p.v0 <= 0.0:
        free = -p.b_comf if v > 0.0 else 0.0
    else:
        free = p.a_max * (1.0 - (v / p.v0) ** p.delta)
    s_star = p.s0 + v * p.T + v * (v - leader_v) / (2.0 * math.sqrt(p.a_max * p.b_comf))
    interaction = 0.0 if math.isinf(gap) else p.a_max * (s_star / gap) ** 2
    a = free - interaction
    return min(max(a, -p.b_emergency), p.a_max)


def _corridor_pose(plan: WaypointPlan, s: float) -> tuple[Vec2, float]:
    return plan.path.point_at(s), plan.path.tangent_at(s)


def _object_polygon(obj: TrackedObject, horizon: float) -> tuple[Vec2, ...]:
    """Convex occupancy of an object over [0, horizon] at constant velocity.

    The swept region of a translating rectangle is exactly the convex hull
    of its start and end corners.
    """
    start = rect_corners(obj.rel_position, obj.rel_heading, obj.bbox[0], obj.bbox[1])
    if obj.speed <= 1e-9 or horizon <= 0.0:
        return start
    dx = obj.speed * horizon * math.cos(obj.rel_heading)
    dy = obj.speed * horizon * math.sin(obj.rel_heading)
    moved = tuple((c[0] + dx, c[1] + dy) for c in start)
    return _convex_hull(start + moved)


def _convex_hull(points: tuple[Vec2, ...]) -> tuple[Vec2, ...]:
    pts = sorted(set(points))
    if len(pts) <= 2:
        return tuple(pts)

    def half(seq):
        hull: list[Vec2] = []
        for p in seq:
            while len(hull) >= 2:
                ox, oy = hull[-2]
                ax, ay = hull[-1]
                if (ax - ox) * (p[1] - oy) - (ay - oy) * (p[0] - ox) <= 0:
                    hull.pop()
                else:
                    break
            hull.append(p)
        return hull

    lower = half(pts)
    upper = half(reversed(pts))
    return tuple(lower[:-1] + upper[:-1])


def _polys_overlap(a: tuple[Vec2, ...], b: tuple[Vec2, ...]) -> bool:
    """Separating-axis test for convex polygons; touching counts as overlap."""
    for poly in (a, b):
        n = len(poly)
        for i in range(n):
            px, py = poly[i]
            qx, qy = poly[(i + 1) % n]
            axis = (-(qy - py), qx - px)
            amin = min(c[0] * axis[0] + c[1] * axis[1] for c in a)
            amax = max(c[0] * axis[0] + c[1] * axis[1] for c in a)
            bmin = min(c[0] * axis[0] + c[1] * axis[1] for c in b)
            bmax = max(c[0] * axis[0] + c[1] * axis[1] for c in b)
            if amax < bmin or bmax < amin:
                return False
    return True


def _first_overlap_arc(plan: WaypointPlan, poly: tuple[Vec2, ...],
                       ego_dims: tuple[float, float]) -> Optional[float]:
    """Smallest corridor arc distance at which the swept ego footprint
    touches ``poly``; None if clear over the whole plan."""
    length, width = ego_dims

    def hits(s: float) -> bool:
        center, heading = _corridor_pose(plan, s)
        return _polys_overlap(rect_corners(center, heading, length, width), poly)

    horizon = min(plan.path.length, plan.horizon)
    prev = 0.0
    if hits(0.0):
        return 0.0
    s = _COARSE_STEP
    while s <= horizon + 1e-9:
        if hits(s):
            lo, hi = prev, s
            for _ in range(_BISECT_ITERS):
                mid = 0.5 * (lo + hi)
                if hits(mid):
                    hi = mid
                else:
                    lo = mid
            return hi
        prev = s
        s += _COARSE_STEP
    return None


def assess_occupancy(plan: WaypointPlan, frame: PerceptionFrame,
                     cfg: SafetyConfig) -> OccupancyAssessment:
    """Sweep the ego footprint along the plan corridor against every object's
    constant-velocity occupancy over the prediction horizon."""
    horizon = min(plan.path.length, plan.horizon)
    ego_dims = (cfg.ego_bbox[0], cfg.ego_bbox[1] + 2.0 * cfg.footprint_margin)
    min_clear = horizon
    blocker: Optional[str] = None
    blocker_speed = 0.0
    leader: Optional[Leader] = None
    for obj in frame.objects:
        reach = obj.range_m - obj.speed * cfg.prediction_horizon - 0.5 * math.hypot(*obj.bbox)
        if reach > horizon + 0.5 * ego_dims[0] + cfg.footprint_margin + 1.0:
            continue
        predicted = _object_polygon(obj, cfg.prediction_horizon)
        arc = _first_overlap_arc(plan, predicted, ego_dims)
        if arc is not None and arc < min_clear:
            min_clear = arc
            blocker = obj.id
            blocker_speed = obj.speed
        # Leader uses the current (unpropagated) footprint.
        if obj.speed <= 1e-9:
            current_arc = arc
        else:
            current = rect_corners(obj.rel_position, obj.rel_heading,
                                   obj.bbox[0], obj.bbox[1])
            current_arc = _first_overlap_arc(plan, current, ego_dims)
        if current_arc is not None and (leader is None or current_arc < leader.gap):
            tangent = plan.path.tangent_at(min(current_arc, plan.path.length))
            along = obj.speed * math.cos(obj.rel_heading - tangent)
            leader = Leader(object_id=obj.id, gap=current_arc, speed=along)
    return OccupancyAssessment(min_clear_distance=min_clear,
                               blocking_object=blocker,
                               blocking_speed=blocker_speed,
                               leader=leader)


def preview_steering(plan: WaypointPlan, ego_speed: float, cfg: SafetyConfig,
                     pid: PidState) -> tuple[float, PidState, bool]:
    """Steer toward the first waypoint at the look-ahead arc distance.

    Heading error is atan2(y, x) of that waypoint in the ego frame; the PID
    output is clamped to the physical steering limit.  Returns
    (steering, new pid state, short-plan flag).
    """
    lookahead = max(cfg.lookahead_min, cfg.lookahead_speed_gain * ego_speed)
    target: Vec2 = plan.waypoints[-1]
    short = True
    for wp, arc in zip(plan.waypoints, plan.arcs):
        if arc >= lookahead:
            target = wp
            short = False
            break
    error = math.atan2(target[1], target[0])
    integral = pid.integral + error * cfg.dt
    integral = min(max(integral, -cfg.gains.integral_limit), cfg.gains.integral_limit)
    derivative = (error - pid.prev_error) / cfg.dt if pid.primed else 0.0
    out = cfg.gains.kp * error + cfg.gains.ki * integral + cfg.gains.kd * derivative
    steering = min(max(out, -MAX_STEER), MAX_STEER)
    return steering, PidState(integral=integral, prev_error=error, primed=True), short


def traffic_rule_gate(signals: tuple[SignalDetection, ...], ego_speed: float,
                      cfg: SafetyConfig, latch: StopLatchState
                      ) -> tuple[bool, StopLatchState]:
    """Emergency brake on governing red lights / un-latched stop signs whose
    confidence exceeds the threshold inside the braking envelope."""
    envelope = ego_speed * ego_speed / (2.0 * cfg.idm.b_comf) + cfg.stop_margin

    stop_signs = [
        d for d in signals
        if d.kind == "stop_sign" and d.governs_ego_lane
        and d.confidence > cfg.signal_confidence_threshold
    ]
    if not stop_signs:
        latch = StopLatchState()
    else:
        nearest = min(d.distance_m for d in stop_signs)
        if not latch.satisfied:
            if nearest <= cfg.stop_latch_radius and ego_speed < 0.1:
                ticks = latch.stopped_ticks + 1
                done = ticks * cfg.dt >= cfg.stop_latch_hold_s
                latch = StopLatchState(satisfied=done, stopped_ticks=ticks)
            else:
                latch = StopLatchState(satisfied=False, stopped_ticks=0)

    brake = False
    for det in signals:
        if not det.governs_ego_lane:
            continue
        if det.confidence <= cfg.signal_confidence_threshold:
            continue
        if det.distance_m >= envelope:
            continue
        if det.kind == "red_light":
            brake = True
        elif det.kind == "stop_sign" and not latch.satisfied:
            brake = True
    return brake, latch


def control(plan: WaypointPlan, frame: PerceptionFrame, cfg: SafetyConfig,
            pid: PidState, latch: StopLatchState) -> ControlOutput:
    """One control tick.  FAST composes IDM + preview + traffic gate +
    protective stop; DEGRADED keeps only the hard TTC collision gate and a
    speed cap over the override plan."""
    v = frame.ego_speed
    occ = assess_occupancy(plan, frame, cfg)
    steering, pid2, short = preview_steering(plan, v, cfg, pid)

    if cfg.profile == DEGRADED:
        cap = cfg.degraded_speed_cap
        target = cap
        hint = plan.speed_hint
        if hint is not None:
            target = min(hint, cap)
        a = idm_accel(math.inf, v, 0.0, replace(cfg.idm, v0=target))
        emergency = (occ.blocking_object is not None
                     and occ.min_clear_distance / max(v, 0.1) < cfg.ttc_hard)
        longitudinal = _normalize(a, cfg)
        if emergency:
            longitudinal = -1.0
        return ControlOutput(
            command=ControlCommand(longitudinal=longitudinal, steering=steering,
                                   emergency_brake=emergency),
            pid=pid2, latch=latch, occupancy=occ, short_plan=short)

    if occ.leader is not None:
        a = idm_accel(occ.leader.gap, v, occ.leader.speed, cfg.idm)
    else:
        a = idm_accel(math.inf, v, 0.0, cfg.idm)
    gate, latch2 = traffic_rule_gate(frame.signals, v, cfg, latch)
    protective = (
        occ.blocking_object is not None
        and occ.blocking_speed < _STATIONARY_EPS
        and occ.min_clear_distance < cfg.protective_clearance
    )
    ttc_fired = (occ.blocking_object is not None
                 and occ.min_clear_distance / max(v, 0.1) < cfg.ttc_brake)
    emergency = gate or protective or ttc_fired
    longitudinal = -1.0 if emergency else _normalize(a, cfg)
    return ControlOutput(
        command=ControlCommand(longitudinal=longitudinal, steering=steering,
                               emergency_brake=emergency),
        pid=pid2, latch=latch2, occupancy=occ, short_plan=short,
        gate_fired=gate)


def _normalize(accel: float, cfg: SafetyConfig) -> float:
    if accel >= 0.0:
        return min(accel / cfg.accel_limit, 1.0)
    return max(accel / cfg.brake_limit, -1.0)
