"""Scenario documents: a versioned, human-readable YAML schema describing a
road network, a route, participants, geofence triggers and stack config.

Loading validates every structural invariant up front and reports the
offending field path in the error message.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .geometry import Polyline, Vec2, is_convex_polygon, polyline_length
from .world import (
    BEHAVIORS,
    CLASS_PROFILES,
    PARTICIPANT_CLASSES,
    GeofenceTrigger,
    Junction,
    Lane,
    ParticipantState,
    RoadNetwork,
    Route,
    Signal,
    StopSign,
    World,
    WorldState,
    locate,
)

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """Raised for schema violations; message names the offending field."""

    def __init__(self, fieldpath: str, message: str):
        self.fieldpath = fieldpath
        super().__init__(f"{fieldpath}: {message}")


@dataclass
class ScenarioConfig:
    """Per-scenario knobs consumed by the stack; everything has a default."""

    name: str = "unnamed"
    description: str = ""
    dt: float = 0.05
    speed_limit: float = 8.0
    timeout_s: float = 120.0
    immobilization_s: float = 90.0
    end_margin_m: float = 2.0
    sense: dict[str, Any] = field(default_factory=dict)
    safety: dict[str, Any] = field(default_factory=dict)
    arbiter: dict[str, Any] = field(default_factory=dict)
    advisor: dict[str, Any] = field(default_factory=dict)
    bench: dict[str, Any] = field(default_factory=dict)


@dataclass
class Scenario:
    config: ScenarioConfig
    network: RoadNetwork
    route: Route
    initial_state: WorldState
    triggers: tuple[GeofenceTrigger, ...]
    templates: dict[str, ParticipantState]
    source_path: Optional[Path] = None

    def make_world(self) -> World:
        return World(self.network, self.route, self.triggers, self.templates,
                     dt=self.config.dt)


def _require(doc: dict, key: str, path: str) -> Any:
    if key not in doc:
        raise ScenarioError(f"{path}.{key}" if path else key, "missing required field")
    return doc[key]


def _points(raw: Any, path: str) -> tuple[Vec2, ...]:
    try:
        pts = tuple((float(p[0]), float(p[1])) for p in raw)
    except (TypeError, ValueError, IndexError) as exc:
        raise ScenarioError(path, f"not a list of [x, y] pairs ({exc})") from exc
    return pts

def _neighbor(raw: Any, path: str) -> Optional[tuple[str, bool]]:
    if raw is None:
        return None
    if not isinstance(raw, dict) or "id" not in raw:
        raise ScenarioError(path, "expected {id, same_direction}")
    return (str(raw["id"]), bool(raw.get("same_direction", True)))


def _parse_lane(raw: dict, path: str) -> Lane:
    lane_id = str(_require(raw, "id", path))
    width = float(_require(raw, "width", path))
    if width <= 0.0:
        raise ScenarioError(f"{path}.width", "lane width must be positive")
    pts = _points(_require(raw, "centerline", path), f"{path}.centerline")
    if len(pts) < 2:
        raise ScenarioError(f"{path}.centerline", "needs at least 2 points")
    try:
        centerline = Polyline(pts)
    except ValueError as exc:
        raise ScenarioError(f"{path}.centerline", str(exc)) from exc
    return Lane(
        id=lane_id,
        centerline=centerline,
        width=width,
        successors=tuple(str(s) for s in raw.get("successors", []) or []),
        left_neighbor=_neighbor(raw.get("left_neighbor"), f"{path}.left_neighbor"),
        right_neighbor=_neighbor(raw.get("right_neighbor"), f"{path}.right_neighbor"),
    )


def _validate_network(network: RoadNetwork) -> None:
    ids = [lane.id for lane in network.lanes]
    if len(set(ids)) != len(ids):
        raise ScenarioError("road.lanes", "duplicate lane ids")
    known = set(ids)
    for i, lane in enumerate(network.lanes):
        for j, succ in enumerate(lane.successors):
            if succ not in known:
                raise ScenarioError(f"road.lanes[{i}].successors[{j}]",
                                    f"unresolved lane id '{succ}'")
        for side in ("left_neighbor", "right_neighbor"):
            ref = getattr(lane, side)
            if ref is None:
                continue
            other_id, same_dir = ref
            if other_id not in known:
                raise ScenarioError(f"road.lanes[{i}].{side}",
                                    f"unresolved lane id '{other_id}'")
            # Geometric symmetry: same-direction neighbors mirror sides,
            # opposite-direction neighbors see each other on the same side.
            other = network.lane(other_id)
            if same_dir:
                back_side = "right_neighbor" if side == "left_neighbor" else "left_neighbor"
            else:
                back_side = side
            back = getattr(other, back_side)
            if back is None or back[0] != lane.id or back[1] != same_dir:
                raise ScenarioError(f"road.lanes[{i}].{side}",
                                    f"neighbor relation with '{other_id}' is not symmetric")
    for k, junction in enumerate(network.junctions):
        if not is_convex_polygon(junction.polygon):
            raise ScenarioError(f"road.junctions[{k}].polygon",
                                "junction polygon must be convex (and simple)")
    for k, sig in enumerate(network.signals):
        for lane_id in sig.controls:
            if lane_id not in known:
                raise ScenarioError(f"road.signals[{k}].controls",
                                    f"unresolved lane id '{lane_id}'")
    for k, sign in enumerate(network.stop_signs):
        if sign.lane not in known:
            raise ScenarioError(f"road.stop_signs[{k}].lane",
                                f"unresolved lane id '{sign.lane}'")


def _lanes_connected(a: Lane, b: Lane) -> bool:
    if b.id in a.successors or a.id in b.successors:
        return True
    for ref in (a.left_neighbor, a.right_neighbor):
        if ref is not None and ref[0] == b.id:
            return True
    return False


def _build_route(raw: dict, network: RoadNetwork) -> Route:
    lane_ids = tuple(str(x) for x in _require(raw, "lanes", "route"))
    if not lane_ids:
        raise ScenarioError("route.lanes", "route needs at least one lane")
    for i, lane_id in enumerate(lane_ids):
        if not network.has_lane(lane_id):
            raise ScenarioError(f"route.lanes[{i}]", f"unresolved lane id '{lane_id}'")
    for i in range(len(lane_ids) - 1):
        a = network.lane(lane_ids[i])
        b = network.lane(lane_ids[i + 1])
        if not _lanes_connected(a, b):
            raise ScenarioError(f"route.lanes[{i + 1}]",
                                f"lane '{b.id}' is not connected to '{a.id}'")
    points: list[Vec2] = []
    for lane_id in lane_ids:
        for p in network.lane(lane_id).centerline.points:
            if points and p == points[-1]:
                continue
            points.append(p)
    centerline = Polyline(points)
    total = centerline.length
    if "total_length" in raw:
        authored = float(raw["total_length"])
        if abs(authored - total) > 1e-6 * max(1.0, total):
            raise ScenarioError("route.total_length",
                                f"authored {authored} != centerline arc length {total}")
        total = authored
    waypoints = raw.get("waypoints")
    if waypoints is None:
        wps = (centerline.points[0], centerline.points[-1])
    else:
        wps = _points(waypoints, "route.waypoints")
    return Route(lane_ids=lane_ids, waypoints=wps, total_length=total,
                 centerline=centerline)


def _resolve_pose(raw: dict, network: RoadNetwork, path: str) -> tuple[float, float, float]:
    if "x" in raw:
        return (float(raw["x"]), float(raw["y"]), float(raw.get("heading", 0.0)))
    lane_id = str(_require(raw, "lane", path))
    if not network.has_lane(lane_id):
        raise ScenarioError(f"{path}.lane", f"unresolved lane id '{lane_id}'")
    lane = network.lane(lane_id)
    s = float(raw.get("s", 0.0))
    lateral = float(raw.get("lateral", 0.0))
    pos = lane.centerline.offset_point(s, lateral)
    heading = lane.centerline.tangent_at(s)
    if "heading" in raw:
        heading = float(raw["heading"])
    return (pos[0], pos[1], heading)


def _parse_participant(raw: dict, network: RoadNetwork, path: str,
                       active: bool = True) -> ParticipantState:
    pid = str(_require(raw, "id", path))
    cls = str(_require(raw, "class", path))
    if cls not in PARTICIPANT_CLASSES:
        raise ScenarioError(f"{path}.class", f"unknown class '{cls}'")
    behavior = str(raw.get("behavior", "stationary"))
    if behavior not in BEHAVIORS:
        raise ScenarioError(f"{path}.behavior", f"unknown behavior '{behavior}'")
    bbox_raw = raw.get("bbox") or CLASS_PROFILES[cls]["bbox"]
    bbox = (float(bbox_raw[0]), float(bbox_raw[1]))
    if bbox[0] <= 0.0 or bbox[1] <= 0.0:
        raise ScenarioError(f"{path}.bbox", "bbox dimensions must be positive")
    speed = float(raw.get("speed", 0.0))
    if behavior == "lane-follow-IDM" and speed < 0.0:
        raise ScenarioError(f"{path}.speed", "lane-follow speed must be >= 0")
    keyframes: tuple[tuple[float, float, float, float], ...] = ()
    if behavior == "scripted-trajectory":
        kf_raw = _require(raw, "keyframes", path)
        keyframes = tuple(
            (float(k[0]), float(k[1]), float(k[2]), float(k[3])) for k in kf_raw
        )
        if not keyframes:
            raise ScenarioError(f"{path}.keyframes", "needs at least one keyframe")
        pose = (keyframes[0][1], keyframes[0][2], keyframes[0][3])
    else:
        pose = _resolve_pose(_require(raw, "start", path), network, f"{path}.start")
    participant_path: Optional[Polyline] = None
    path_s = 0.0
    desired = speed
    if behavior == "lane-follow-IDM":
        lane_ids = raw.get("path_lanes")
        if lane_ids is None:
            start_lane = str(raw.get("start", {}).get("lane", ""))
            if not start_lane:
                raise ScenarioError(f"{path}.path_lanes",
                                    "lane-follow participant needs path_lanes or a lane start")
            lane_ids = [start_lane]
            while network.lane(lane_ids[-1]).successors:
                nxt = network.lane(lane_ids[-1]).successors[0]
                if nxt in lane_ids:
                    break
                lane_ids.append(nxt)
        pts: list[Vec2] = []
        for i, lane_id in enumerate(lane_ids):
            if not network.has_lane(str(lane_id)):
                raise ScenarioError(f"{path}.path_lanes[{i}]",
                                    f"unresolved lane id '{lane_id}'")
            for p in network.lane(str(lane_id)).centerline.points:
                if pts and p == pts[-1]:
                    continue
                pts.append(p)
        participant_path = Polyline(pts)
        path_s, _, _ = participant_path.project((pose[0], pose[1]))
        desired = float(raw.get("desired_speed", speed if speed > 0 else 7.0))
    return ParticipantState(
        id=pid, cls=cls, pose=pose, speed=speed, bbox=bbox, behavior=behavior,
        path=participant_path, path_s=path_s, desired_speed=desired,
        keyframes=keyframes, active=active and bool(raw.get("active", True)),
    )


def parse_scenario(doc: dict, source_path: Optional[Path] = None) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("<document>", "top level must be a mapping")
    version = _require(doc, "schema_version", "")
    if version != SCHEMA_VERSION:
        raise ScenarioError("schema_version", f"unsupported version {version!r}")

    road = _require(doc, "road", "")
    lanes_raw = _require(road, "lanes", "road")
    lanes = tuple(_parse_lane(r, f"road.lanes[{i}]") for i, r in enumerate(lanes_raw))
    junctions = tuple(
        Junction(id=str(j.get("id", f"junction{i}")),
                 polygon=_points(_require(j, "polygon", f"road.junctions[{i}]"),
                                 f"road.junctions[{i}].polygon"))
        for i, j in enumerate(road.get("junctions", []) or [])
    )
    signals = []
    for i, s in enumerate(road.get("signals", []) or []):
        sched = _require(s, "schedule", f"road.signals[{i}]")
        signals.append(Signal(
            id=str(s.get("id", f"signal{i}")),
            position=tuple(float(v) for v in _require(s, "position", f"road.signals[{i}]")),
            controls=tuple(str(c) for c in _require(s, "controls", f"road.signals[{i}]")),
            green_s=float(_require(sched, "green", f"road.signals[{i}].schedule")),
            yellow_s=float(_require(sched, "yellow", f"road.signals[{i}].schedule")),
            red_s=float(_require(sched, "red", f"road.signals[{i}].schedule")),
            offset_s=float(sched.get("offset", 0.0)),
        ))
    stop_signs = tuple(
        StopSign(id=str(s.get("id", f"stop{i}")),
                 position=tuple(float(v) for v in _require(s, "position", f"road.stop_signs[{i}]")),
                 lane=str(_require(s, "lane", f"road.stop_signs[{i}]")))
        for i, s in enumerate(road.get("stop_signs", []) or [])
    )
    network = RoadNetwork(lanes=lanes, junctions=junctions,
                          signals=tuple(signals), stop_signs=stop_signs)
    _validate_network(network)

    route = _build_route(_require(doc, "route", ""), network)

    config = ScenarioConfig(
        name=str(doc.get("name", source_path.stem if source_path else "unnamed")),
        description=str(doc.get("description", "")),
        dt=float(doc.get("dt", 0.05)),
        speed_limit=float(doc.get("speed_limit", 8.0)),
        timeout_s=float(doc.get("timeout_s", 120.0)),
        immobilization_s=float(doc.get("immobilization_s", 90.0)),
        end_margin_m=float(doc.get("end_margin_m", 2.0)),
        sense=dict(doc.get("sense", {}) or {}),
        safety=dict(doc.get("safety", {}) or {}),
        arbiter=dict(doc.get("arbiter", {}) or {}),
        advisor=dict(doc.get("advisor", {}) or {}),
        bench=dict(doc.get("bench", {}) or {}),
    )
    if config.dt <= 0.0:
        raise ScenarioError("dt", "tick must be positive")

    ego_raw = dict(doc.get("ego", {}) or {})
    if "start" in ego_raw:
        ego_pose = _resolve_pose(ego_raw["start"], network, "ego.start")
    else:
        origin = route.centerline.points[0]
        ego_pose = (origin[0], origin[1], route.centerline.tangent_at(0.0))
    ego_bbox_raw = ego_raw.get("bbox") or CLASS_PROFILES["car"]["bbox"]
    ego = ParticipantState(
        id="ego", cls=str(ego_raw.get("class", "car")),
        pose=ego_pose, speed=float(ego_raw.get("speed", 0.0)),
        bbox=(float(ego_bbox_raw[0]), float(ego_bbox_raw[1])),
        behavior="scripted-trajectory",
    )

    participants = tuple(
        _parse_participant(p, network, f"participants[{i}]")
        for i, p in enumerate(doc.get("participants", []) or [])
    )
    seen = {"ego"}
    for i, p in enumerate(participants):
        if p.id in seen:
            raise ScenarioError(f"participants[{i}].id", f"duplicate id '{p.id}'")
        seen.add(p.id)

    templates: dict[str, ParticipantState] = {}
    for i, t in enumerate(doc.get("templates", []) or []):
        parsed = _parse_participant(t, network, f"templates[{i}]")
        templates[parsed.id] = parsed

    triggers = []
    participant_ids = {p.id for p in participants}
    for i, t in enumerate(doc.get("triggers", []) or []):
        region = _points(_require(t, "region", f"triggers[{i}]"), f"triggers[{i}].region")
        if not is_convex_polygon(region):
            raise ScenarioError(f"triggers[{i}].region", "region must be a convex polygon")
        event = dict(_require(t, "event", f"triggers[{i}]"))
        spawn = tuple(str(x) for x in event.get("spawn", []) or [])
        activate = tuple(str(x) for x in event.get("activate", []) or [])
        for name in spawn:
            if name not in templates:
                raise ScenarioError(f"triggers[{i}].event.spawn",
                                    f"unresolved template '{name}'")
        for pid in activate:
            if pid not in participant_ids:
                raise ScenarioError(f"triggers[{i}].event.activate",
                                    f"unresolved participant '{pid}'")
        triggers.append(GeofenceTrigger(
            id=str(t.get("id", f"trigger{i}")),
            region=region,
            one_shot=bool(t.get("one_shot", True)),
            spawn_templates=spawn,
            activate_ids=activate,
        ))

    world = World(network, route, tuple(triggers), templates, dt=config.dt)
    ego_s, _, _ = route.centerline.project(ego.position)
    initial = WorldState(
        tick=0, sim_time=0.0, ego=ego, ego_route_s=ego_s,
        participants=participants,
        signal_phases=world.signal_phases_at(0.0),
    )
    return Scenario(config=config, network=network, route=route,
                    initial_state=initial, triggers=tuple(triggers),
                    templates=templates, source_path=source_path)


def load_scenario(path: str | Path) -> Scenario:
    """Load and validate a scenario document from a YAML file."""
    p = Path(path)
    try:
        doc = yaml.safe_load(p.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ScenarioError("<document>", f"invalid YAML: {exc}") from exc
    return parse_scenario(doc, source_path=p)


def load_scenario_text(text: str) -> Scenario:
    """Parse a scenario document from a YAML string (tests, inline fixtures)."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError("<document>", f"invalid YAML: {exc}") from exc
    return parse_scenario(doc)
