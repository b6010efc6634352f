"""Rule-based fast planner behind a replaceable interface.

Emits fixed-spacing trajectory waypoints along the route from the current
lane location; a learned model can be substituted behind the same
(LaneLocation, Route, PerceptionFrame) -> WaypointPlan contract.

Maneuver overrides (advisor decisions) are activated once into a
world-frame path; per-tick planning then trims the already-traversed part
so the maneuver makes progress instead of re-anchoring every tick.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .codec import ManeuverCommand, ManeuverPrimitive, command_to_primitive
from .geometry import Polyline, Vec2, to_frame
from .world import LaneLocation, RoadNetwork, Route


class PlanUnavailable(RuntimeError):
    """No drivable plan; the arbiter treats this as a blocked fast stream."""


@dataclass(frozen=True)
class PlannerConfig:
    spacing: float = 1.0          # waypoint spacing, m
    horizon: float = 30.0         # plan length, m
    rejoin_distance: float = 15.0  # lateral offset decays to zero over this arc
    recover_radius: float = 7.0   # beyond this route distance there is no plan


@dataclass(frozen=True)
class WaypointPlan:
    waypoints: tuple[Vec2, ...]   # ego frame, x forward / y left
    arcs: tuple[float, ...]       # cumulative arc distance per waypoint
    spacing: float
    horizon: float
    path: Polyline                # same points, arc-length parameterized
    speeds: Optional[tuple[float, ...]] = None  # per-waypoint suggestion

    @property
    def speed_hint(self) -> Optional[float]:
        return self.speeds[0] if self.speeds else None


@dataclass(frozen=True)
class ActiveManeuver:
    """A primitive activated at a world pose; consumed by plan() overrides."""
    kind: str
    primitive: ManeuverPrimitive
    target_speed: float
    duration: float               # s, may be inf
    path: Optional[Polyline] = None  # world frame; None = follow the route


def _extended_point(line: Polyline, s: float, lateral: float) -> Vec2:
    """offset_point with linear extrapolation beyond both ends."""
    if 0.0 <= s <= line.length:
        return line.offset_point(s, lateral)
    if s < 0.0:
        anchor, overshoot = 0.0, s
    else:
        anchor, overshoot = line.length, s - line.length
    heading = line.tangent_at(anchor)
    base = line.point_at(anchor)
    x = base[0] + overshoot * math.cos(heading)
    y = base[1] + overshoot * math.sin(heading)
    return (x - math.sin(heading) * lateral, y + math.cos(heading) * lateral)


def _build_plan(points_world: list[Vec2], ego_pose: tuple[float, float, float],
                cfg: PlannerConfig, speed: Optional[float]) -> WaypointPlan:
    origin = (ego_pose[0], ego_pose[1])
    pts = tuple(to_frame(p, origin, ego_pose[2]) for p in points_world)
    arcs = [0.0]
    for a, b in zip(pts, pts[1:]):
        arcs.append(arcs[-1] + math.hypot(b[0] - a[0], b[1] - a[1]))
    speeds = None if speed is None else tuple(speed for _ in pts)
    return WaypointPlan(waypoints=pts, arcs=tuple(arcs), spacing=cfg.spacing,
                        horizon=arcs[-1], path=Polyline(pts), speeds=speeds)


def plan(location: LaneLocation, route: Route, frame=None,
         override: Optional[ActiveManeuver] = None,
         cfg: PlannerConfig = PlannerConfig()) -> WaypointPlan:
    """Produce the waypoint plan for one tick.

    Without an override the route centerline is sampled ahead of the ego's
    projected arc coordinate, with any lateral offset decaying to zero over
    ``cfg.rejoin_distance``.  With an override the maneuver's world path is
    trimmed at the ego's nearest point and followed instead.
    """
    ego_pose = location.pose
    if override is not None and override.path is not None:
        s0, _, d_path = override.path.project((ego_pose[0], ego_pose[1]))
        if d_path > cfg.recover_radius:
            raise PlanUnavailable(f"{d_path:.1f} m off the maneuver path")
        n = int(round(cfg.horizon / cfg.spacing))
        points = [_extended_point(override.path, s0 + k * cfg.spacing, 0.0)
                  for k in range(n + 1)]
        return _build_plan(points, ego_pose, cfg, override.target_speed)

    s0, d0, d_route = route.centerline.project((ego_pose[0], ego_pose[1]))
    if d_route > cfg.recover_radius:
        raise PlanUnavailable(f"{d_route:.1f} m off the route")
    n = int(round(cfg.horizon / cfg.spacing))
    points = []
    for k in range(n + 1):
        u = k * cfg.spacing
        decay = max(0.0, 1.0 - u / cfg.rejoin_distance)
        points.append(_extended_point(route.centerline, s0 + u, d0 * decay))
    speed = override.target_speed if override is not None else None
    return _build_plan(points, ego_pose, cfg, speed)


_LATERAL_KINDS = ("LANE_CHANGE_LEFT", "LANE_CHANGE_RIGHT", "OVERTAKE_VIA_ONCOMING")


def activate_primitive(command: ManeuverCommand, ego_speed: float,
                       location: LaneLocation, route: Route,
                       network: RoadNetwork,
                       cfg: PlannerConfig = PlannerConfig()) -> ActiveManeuver:
    """Bind a parsed command to a concrete maneuver at the current pose.

    Lane changes build a world-frame path: a constant-magnitude-curvature
    lateral blend over the first half of the commanded path length, then the
    target lane centerline.  An opposite-direction target lane is rejected
    unless the primitive explicitly allows it.
    """
    primitive = command_to_primitive(command, ego_speed)
    if command.kind not in _LATERAL_KINDS:
        return ActiveManeuver(kind=command.kind, primitive=primitive,
                              target_speed=float(primitive.target_speed or 0.0),
                              duration=primitive.duration, path=None)

    if location.off_road:
        raise PlanUnavailable("cannot start a lane change while off-road")
    lane = network.lane(location.lane_id)
    if command.kind == "LANE_CHANGE_LEFT":
        ref = lane.left_neighbor
    elif command.kind == "LANE_CHANGE_RIGHT":
        ref = lane.right_neighbor
    else:  # OVERTAKE_VIA_ONCOMING: whichever adjacent lane is opposite-direction
        ref = None
        for candidate in (lane.right_neighbor, lane.left_neighbor):
            if candidate is not None and not candidate[1]:
                ref = candidate
                break
    if ref is None:
        raise PlanUnavailable(f"no adjacent lane for {command.kind}")
    target_id, same_dir = ref
    if not same_dir and not primitive.allow_oncoming:
        raise PlanUnavailable(
            f"{command.kind} targets opposite-direction lane '{target_id}' "
            "and the primitive does not allow oncoming use")
    target = network.lane(target_id)

    ego_pose = location.pose
    s_t, d_t, _ = target.centerline.project((ego_pose[0], ego_pose[1]))
    tangent = target.centerline.tangent_at(s_t)
    direction = 1.0 if math.cos(tangent - ego_pose[2]) >= 0.0 else -1.0

    speed = float(primitive.target_speed or 0.0)
    total = max(speed * primitive.duration, 4.0 * cfg.spacing)
    blend = 0.5 * total
    kappa = 4.0 * abs(d_t) / (blend * blend) if blend > 0.0 else 0.0
    sign = 1.0 if d_t >= 0.0 else -1.0

    def lateral_at(u: float) -> float:
        if u >= blend or kappa == 0.0:
            return 0.0
        if u <= 0.5 * blend:
            return d_t - sign * 0.5 * kappa * u * u
        rem = blend - u
        return sign * 0.5 * kappa * rem * rem

    step = 0.5
    reach = total + cfg.horizon + cfg.spacing
    points: list[Vec2] = []
    u = 0.0
    while u <= reach + 1e-9:
        pt = _extended_point(target.centerline, s_t + direction * u, lateral_at(u))
        if not points or pt != points[-1]:
            points.append(pt)
        u += step
    return ActiveManeuver(kind=command.kind, primitive=primitive,
                          target_speed=speed, duration=primitive.duration,
                          path=Polyline(points))
