"""Deterministic 2D road-world: lanes, junctions, signals, participants,
kinematic stepping and geofenced scenario triggers.

World state is an immutable snapshot; :meth:`World.step` produces a new one.
Identical (scenario, control sequence, dt) inputs yield bit-identical state
sequences.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

from .geometry import (
    Polyline,
    Vec2,
    dist,
    point_in_convex_polygon,
    wrap_angle,
)

log = logging.getLogger(__name__)

PARTICIPANT_CLASSES = ("car", "truck", "bicycle", "pedestrian", "static_obstacle")
BEHAVIORS = ("scripted-trajectory", "lane-follow-IDM", "stationary")

# Physical profiles per participant class: wheelbase, accel / brake limits,
# default bbox (length, width).  Desk-scale values, not vehicle dynamics.
CLASS_PROFILES: dict[str, dict[str, float | tuple[float, float]]] = {
    "car": {"wheelbase": 2.5, "accel": 3.0, "brake": 8.0, "bbox": (4.0, 2.0)},
    "truck": {"wheelbase": 4.0, "accel": 2.0, "brake": 6.0, "bbox": (8.0, 2.5)},
    "bicycle": {"wheelbase": 1.2, "accel": 1.5, "brake": 4.0, "bbox": (1.8, 0.6)},
    "pedestrian": {"wheelbase": 0.5, "accel": 1.0, "brake": 2.0, "bbox": (0.6, 0.6)},
    "static_obstacle": {"wheelbase": 1.0, "accel": 0.0, "brake": 0.0, "bbox": (2.0, 2.0)},
}

MAX_STEER = 0.6  # rad, physical steering limit
MAX_SPEED = 25.0  # m/s, saturating dynamics


@dataclass(frozen=True)
class Lane:
    id: str
    centerline: Polyline
    width: float
    successors: tuple[str, ...] = ()
    # neighbor: (lane id, same-direction flag)
    left_neighbor: Optional[tuple[str, bool]] = None
    right_neighbor: Optional[tuple[str, bool]] = None


@dataclass(frozen=True)
class Signal:
    id: str
    position: Vec2
    controls: tuple[str, ...]
    green_s: float
    yellow_s: float
    red_s: float
    offset_s: float = 0.0

    def phase_at(self, t: float) -> str:
        cycle = self.green_s + self.yellow_s + self.red_s
        u = math.fmod(t + self.offset_s, cycle)
        if u < 0.0:
            u += cycle
        if u < self.green_s:
            return "green"
        if u < self.green_s + self.yellow_s:
            return "yellow"
        return "red"


@dataclass(frozen=True)
class StopSign:
    id: str
    position: Vec2
    lane: str


@dataclass(frozen=True)
class Junction:
    id: str
    polygon: tuple[Vec2, ...]


@dataclass(frozen=True)
class RoadNetwork:
    lanes: tuple[Lane, ...]
    junctions: tuple[Junction, ...] = ()
    signals: tuple[Signal, ...] = ()
    stop_signs: tuple[StopSign, ...] = ()

    def lane(self, lane_id: str) -> Lane:
        for lane in self.lanes:
            if lane.id == lane_id:
                return lane
        raise KeyError(lane_id)

    def has_lane(self, lane_id: str) -> bool:
        return any(lane.id == lane_id for lane in self.lanes)


@dataclass(frozen=True)
class Route:
    lane_ids: tuple[str, ...]
    waypoints: tuple[Vec2, ...]
    total_length: float
    centerline: Polyline


@dataclass(frozen=True)
class ParticipantState:
    id: str
    cls: str
    pose: tuple[float, float, float]  # x, y, heading
    speed: float
    bbox: tuple[float, float]  # length, width
    behavior: str
    # behavior payloads
    path: Optional[Polyline] = None          # lane-follow path (world frame)
    path_s: float = 0.0                      # arc progress along path
    desired_speed: float = 0.0               # lane-follow target speed
    keyframes: tuple[tuple[float, float, float, float], ...] = ()  # (t, x, y, heading)
    active: bool = True                      # inactive until an activate trigger fires

    @property
    def position(self) -> Vec2:
        return (self.pose[0], self.pose[1])

    @property
    def heading(self) -> float:
        return self.pose[2]


@dataclass(frozen=True)
class GeofenceTrigger:
    id: str
    region: tuple[Vec2, ...]
    one_shot: bool = True
    spawn_templates: tuple[str, ...] = ()
    activate_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class WorldState:
    tick: int
    sim_time: float
    ego: ParticipantState
    ego_route_s: float
    participants: tuple[ParticipantState, ...]
    signal_phases: tuple[tuple[str, str], ...]
    fired_triggers: frozenset[str] = frozenset()
    triggers_inside: frozenset[str] = frozenset()  # rearm bookkeeping for non-one-shot


@dataclass(frozen=True)
class ControlCommand:
    """Actuation for one tick: longitudinal in [-1, 1] (negative brakes),
    steering angle in rad (clamped to the physical limit), emergency flag."""
    longitudinal: float
    steering: float
    emergency_brake: bool = False


@dataclass(frozen=True)
class LaneLocation:
    lane_id: str
    s: float
    lateral: float          # signed, left positive
    in_junction: bool
    off_road: bool = False
    pose: tuple[float, float, float] = (0.0, 0.0, 0.0)  # the located pose, for downstream encoders


def locate(pose: tuple[float, float, float], network: RoadNetwork,
           off_road_radius: float = 2.0) -> LaneLocation:
    """Locate a pose on the network: nearest lane by lateral distance.

    Off-road when the pose is farther than ``off_road_radius`` beyond the
    edge of every lane; that is a distinct result, never an abort.  Ties on
    distance resolve to the lowest lane id.
    """
    point = (pose[0], pose[1])
    best: Optional[tuple[float, str, float, float]] = None
    for lane in network.lanes:
        s, lat, d = lane.centerline.project(point)
        key = (d, lane.id)
        if best is None or key < (best[0], best[1]):
            best = (d, lane.id, s, lat)
    in_junction = any(
        point_in_convex_polygon(point, j.polygon) for j in network.junctions
    )
    assert best is not None  # network invariant: at least one lane
    d, lane_id, s, lat = best
    lane = network.lane(lane_id)
    off = d > lane.width * 0.5 + off_road_radius
    return LaneLocation(lane_id=lane_id, s=s, lateral=lat,
                        in_junction=in_junction, off_road=off, pose=pose)


def _clamped(value: float, lo: float, hi: float, name: str) -> float:
    if value < lo or value > hi:
        log.debug("control %s=%.3f clamped to [%.3f, %.3f]", name, value, lo, hi)
        return min(max(value, lo), hi)
    return value


class World:
    """Static scenario (network, route, triggers, templates) plus stepping."""

    def __init__(self, network: RoadNetwork, route: Route,
                 triggers: tuple[GeofenceTrigger, ...] = (),
                 templates: Optional[dict[str, ParticipantState]] = None,
                 dt: float = 0.05):
        self.network = network
        self.route = route
        self.triggers = triggers
        self.templates = templates or {}
        self.dt = dt

    def signal_phases_at(self, t: float) -> tuple[tuple[str, str], ...]:
        return tuple((sig.id, sig.phase_at(t)) for sig in self.network.signals)

    def step(self, state: WorldState, ego_control: ControlCommand, dt: float) -> WorldState:
        """Advance one fixed tick; saturating dynamics, no failure modes."""
        if not math.isclose(dt, self.dt, rel_tol=0.0, abs_tol=1e-12):
            raise ValueError(f"dt {dt} differs from configured tick {self.dt}")
        new_ego = self._step_ego(state.ego, ego_control, dt)
        others = tuple(
            self._step_participant(p, state, dt) for p in state.participants
        )
        tick = state.tick + 1
        sim_time = tick * self.dt
        fired = set(state.fired_triggers)
        inside_prev = state.triggers_inside
        inside_now = set()
        spawned: list[ParticipantState] = []
        activate: set[str] = set()
        for trig in self.triggers:
            if point_in_convex_polygon(new_ego.position, trig.region):
                inside_now.add(trig.id)
                already = trig.id in fired
                if trig.one_shot and already:
                    continue
                if not trig.one_shot and trig.id in inside_prev:
                    continue  # edge-triggered: must leave the region to rearm
                fired.add(trig.id)
                for name in trig.spawn_templates:
                    template = self.templates[name]
                    spawned.append(replace(template, id=f"{name}@{tick}"))
                activate.update(trig.activate_ids)
        if activate:
            others = tuple(
                replace(p, active=True) if p.id in activate else p for p in others
            )
        if spawned:
            others = others + tuple(spawned)
        return WorldState(
            tick=tick,
            sim_time=sim_time,
            ego=new_ego,
            ego_route_s=state.ego_route_s,
            participants=others,
            signal_phases=self.signal_phases_at(sim_time),
            fired_triggers=frozenset(fired),
            triggers_inside=frozenset(inside_now),
        )

    def _step_ego(self, ego: ParticipantState, control: ControlCommand, dt: float) -> ParticipantState:
        profile = CLASS_PROFILES[ego.cls]
        longitudinal = _clamped(control.longitudinal, -1.0, 1.0, "longitudinal")
        steering = _clamped(control.steering, -MAX_STEER, MAX_STEER, "steering")
        if control.emergency_brake:
            longitudinal = -1.0
        accel_limit = float(profile["accel"])
        brake_limit = float(profile["brake"])
        accel = longitudinal * (accel_limit if longitudinal >= 0.0 else brake_limit)
        x, y, heading = ego.pose
        v = ego.speed
        x += v * math.cos(heading) * dt
        y += v * math.sin(heading) * dt
        heading = wrap_angle(heading + v * math.tan(steering) / float(profile["wheelbase"]) * dt)
        v = min(max(v + accel * dt, 0.0), MAX_SPEED)
        return replace(ego, pose=(x, y, heading), speed=v)

    def _step_participant(self, p: ParticipantState, state: WorldState, dt: float) -> ParticipantState:
        if not p.active or p.behavior == "stationary":
            return p
        if p.behavior == "scripted-trajectory":
            return self._step_scripted(p, state.sim_time + dt)
        if p.behavior == "lane-follow-IDM":
            return self._step_lane_follow(p, state, dt)
        return p

    @staticmethod
    def _step_scripted(p: ParticipantState, t: float) -> ParticipantState:
        frames = p.keyframes
        if not frames:
            return p
        if t <= frames[0][0]:
            kf = frames[0]
            return replace(p, pose=(kf[1], kf[2], kf[3]), speed=0.0)
        if t >= frames[-1][0]:
            kf = frames[-1]
            return replace(p, pose=(kf[1], kf[2], kf[3]), speed=0.0)
        for (t0, x0, y0, h0), (t1, x1, y1, h1) in zip(frames, frames[1:]):
            if t0 <= t <= t1:
                u = (t - t0) / (t1 - t0)
                x = x0 + u * (x1 - x0)
                y = y0 + u * (y1 - y0)
                heading = h0 + u * (wrap_angle(h1 - h0))
                speed = dist((x0, y0), (x1, y1)) / (t1 - t0)
                return replace(p, pose=(x, y, wrap_angle(heading)), speed=speed)
        return p

    def _step_lane_follow(self, p: ParticipantState, state: WorldState, dt: float) -> ParticipantState:
        # Leader = nearest actor ahead on this participant's path corridor.
        # Deferred import: safety depends on world types for ControlCommand users.
        from .safety import IdmParams, idm_accel

        assert p.path is not None
        gap = math.inf
        leader_v = 0.0
        half_len = 0.5 * p.bbox[0]
        for other in (state.ego,) + state.participants:
            if other.id == p.id or not other.active:
                continue
            s_o, lat_o, d_o = p.path.project(other.position)
            if abs(lat_o) > 0.5 * (p.bbox[1] + other.bbox[1]) + 0.2:
                continue
            ahead = s_o - p.path_s
            if ahead <= 0.0:
                continue
            bumper_gap = ahead - half_len - 0.5 * other.bbox[0]
            if bumper_gap < gap:
                gap = bumper_gap
                # leader speed along this path's direction
                tangent = p.path.tangent_at(s_o)
                leader_v = max(0.0, other.speed * math.cos(other.heading - tangent))
        accel = idm_accel(gap, p.speed, leader_v, IdmParams(v0=p.desired_speed))
        v = max(0.0, p.speed + accel * dt)
        s = min(p.path_s + v * dt, p.path.length)
        pos = p.path.point_at(s)
        heading = p.path.tangent_at(s)
        if s >= p.path.length:
            v = 0.0
        return replace(p, pose=(pos[0], pos[1], heading), speed=v, path_s=s)
