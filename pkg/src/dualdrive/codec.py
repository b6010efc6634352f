"""Bidirectional scene codec.

Encoding: road topology and discretized participant attributes render into a
deterministic natural-language description.  Numerical precision is
deliberately attenuated: the rendered text carries no raw numbers, only
coarse buckets and 8-sector headings.

Decoding: the advisor's reply is scanned for a final constrained DECISION
line and bound to a preconfigured trajectory primitive.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from typing import Optional

from .geometry import from_frame, rect_corners, segment_intersects_rect, wrap_angle
from .perception import PerceptionFrame, SignalDetection, TrackedObject
from .world import LaneLocation, RoadNetwork, locate

HEADING_LABELS = ("N", "NE", "E", "SE", "S", "SW", "W", "NW")

POSITION_BUCKETS = (
    "ahead_in_lane", "ahead_left_lane", "ahead_right_lane",
    "oncoming", "behind", "crossing_left", "crossing_right",
)

MOTION_STATIONARY_MAX = 0.5  # m/s
MOTION_SLOW_MAX = 3.0        # m/s

CROSSING_WINDOW_S = 3.0      # forward extrapolation used for the crossing test
CROSSING_CORRIDOR_M = 30.0


def discretize_heading(theta: float) -> str:
    """Map an angle (rad, relative to ego travel direction) onto 8 sectors.

    Sectors are half-open with the lower boundary inclusive; N is the ego
    travel direction, so sector k = floor(((theta + pi/8) mod 2pi) / (pi/4)).
    """
    u = math.fmod(theta + math.pi / 8.0, 2.0 * math.pi)
    if u < 0.0:
        u += 2.0 * math.pi
    k = int(u / (math.pi / 4.0))
    return HEADING_LABELS[min(k, 7)]


def motion_bucket(speed: float) -> str:
    if speed < MOTION_STATIONARY_MAX:
        return "stationary"
    if speed < MOTION_SLOW_MAX:
        return "slow"
    return "moving"


@dataclass(frozen=True)
class RoadContextDesc:
    context: str = "regular_lane"        # regular_lane | intersection
    adjacent_left: str = "none"          # none | same_dir | opposite_dir
    adjacent_right: str = "none"
    signal_ahead: str = "none"           # none | red | yellow | green
    stop_sign_ahead: bool = False
    located: bool = True                 # False when the ego was off-road


@dataclass(frozen=True)
class ParticipantDesc:
    position_bucket: str
    heading_8: str
    cls: str
    motion: str


@dataclass(frozen=True)
class SceneDescription:
    road: RoadContextDesc
    participants: tuple[ParticipantDesc, ...]
    ego_motion: str
    text: str


def encode_topology(location: LaneLocation, network: RoadNetwork,
                    signals: tuple[SignalDetection, ...] = ()) -> RoadContextDesc:
    """Describe the immediate driving environment of a located ego."""
    if location.off_road:
        return RoadContextDesc(located=False)
    lane = network.lane(location.lane_id)

    def side(ref: Optional[tuple[str, bool]]) -> str:
        if ref is None:
            return "none"
        return "same_dir" if ref[1] else "opposite_dir"

    signal_ahead = "none"
    best = math.inf
    stop_sign_ahead = False
    for det in signals:
        if not det.governs_ego_lane:
            continue
        if det.kind == "stop_sign":
            stop_sign_ahead = True
        elif det.distance_m < best:
            best = det.distance_m
            signal_ahead = det.kind.split("_", 1)[0]
    return RoadContextDesc(
        context="intersection" if location.in_junction else "regular_lane",
        adjacent_left=side(lane.left_neighbor),
        adjacent_right=side(lane.right_neighbor),
        signal_ahead=signal_ahead,
        stop_sign_ahead=stop_sign_ahead,
    )


def bucket_position(obj: TrackedObject, location: LaneLocation,
                    network: RoadNetwork) -> str:
    """Bucket an object's position relative to the ego by lane membership.

    Oncoming requires an object ahead in a facing lane with a rearward
    relative heading; crossing requires a sideways heading whose constant
    velocity extrapolation enters the ego corridor.  Objects that cannot be
    located on the network fall back to pure relative geometry.
    """
    x, y = obj.rel_position
    label = discretize_heading(obj.rel_heading)
    ego_pose = location.pose
    world_xy = from_frame(obj.rel_position, (ego_pose[0], ego_pose[1]), ego_pose[2])
    obj_loc = locate((world_xy[0], world_xy[1], ego_pose[2] + obj.rel_heading), network)

    facing = False
    if not obj_loc.off_road:
        tangent = network.lane(obj_loc.lane_id).centerline.tangent_at(obj_loc.s)
        facing = math.cos(tangent - ego_pose[2]) < -0.5
    if x >= 0.0 and facing and label in ("S", "SW", "SE"):
        return "oncoming"
    if x >= 0.0 and label in ("E", "W") and obj.speed > MOTION_STATIONARY_MAX:
        reach = obj.speed * CROSSING_WINDOW_S
        end = (x + reach * math.cos(obj.rel_heading),
               y + reach * math.sin(obj.rel_heading))
        half_w = 0.5 * network.lane(location.lane_id).width if not location.off_road else 1.75
        corridor = ((0.0, -half_w), (CROSSING_CORRIDOR_M, -half_w),
                    (CROSSING_CORRIDOR_M, half_w), (0.0, half_w))
        if segment_intersects_rect((x, y), end, corridor):
            return "crossing_left" if y > 0.0 else "crossing_right"

    if not obj_loc.off_road and not location.off_road:
        ego_lane = network.lane(location.lane_id)
        if obj_loc.lane_id == location.lane_id:
            return "ahead_in_lane" if x >= 0.0 else "behind"
        if ego_lane.left_neighbor and obj_loc.lane_id == ego_lane.left_neighbor[0]:
            return "ahead_left_lane" if x >= 0.0 else "behind"
        if ego_lane.right_neighbor and obj_loc.lane_id == ego_lane.right_neighbor[0]:
            return "ahead_right_lane" if x >= 0.0 else "behind"
    # nearest-geometry fallback
    if x < 0.0:
        return "behind"
    half_w = 1.75 if location.off_road else 0.5 * network.lane(location.lane_id).width
    if y > half_w:
        return "ahead_left_lane"
    if y < -half_w:
        return "ahead_right_lane"
    return "ahead_in_lane"


_CLASS_WORDS = {
    "car": "car",
    "truck": "truck",
    "bicycle": "bicycle",
    "pedestrian": "pedestrian",
    "static_obstacle": "static obstacle",
}

_MOTION_WORDS = {"stationary": "stationary", "slow": "slow-moving", "moving": "moving"}

_BUCKET_PHRASES = {
    "ahead_in_lane": "ahead in your lane",
    "ahead_left_lane": "ahead in the left lane",
    "ahead_right_lane": "ahead in the right lane",
    "oncoming": "approaching in the oncoming lane",
    "behind": "behind you",
    "crossing_left": "crossing from your left",
    "crossing_right": "crossing from your right",
}

_SIDE_PHRASES = {
    "same_dir": "carrying traffic in your direction",
    "opposite_dir": "carrying oncoming traffic",
}


def render_scene_text(road: RoadContextDesc,
                      participants: tuple[ParticipantDesc, ...],
                      ego_motion: str) -> str:
    """Deterministic template rendering; no raw numbers ever appear."""
    where = "an intersection" if road.context == "intersection" else "a regular lane"
    if ego_motion == "stationary":
        opening = f"You are stopped in {where}."
    elif ego_motion == "slow":
        opening = f"You are driving slowly in {where}."
    else:
        opening = f"You are driving in {where}."
    sentences = [opening]

    sides = []
    if road.adjacent_left != "none":
        sides.append(f"an adjacent lane on your left {_SIDE_PHRASES[road.adjacent_left]}")
    if road.adjacent_right != "none":
        sides.append(f"an adjacent lane on your right {_SIDE_PHRASES[road.adjacent_right]}")
    if not sides:
        sentences.append("No adjacent lanes.")
    else:
        sentences.append("There is " + " and ".join(sides) + ".")

    if road.signal_ahead == "none":
        sentences.append("No traffic signal ahead.")
    else:
        sentences.append(f"There is a {road.signal_ahead} traffic light ahead.")
    if road.stop_sign_ahead:
        sentences.append("There is a stop sign ahead.")

    if not participants:
        sentences.append("No other traffic participants detected.")
    else:
        for p in participants:
            sentences.append(
                f"There is a {_MOTION_WORDS[p.motion]} {_CLASS_WORDS[p.cls]} "
                f"{_BUCKET_PHRASES[p.position_bucket]}, heading {p.heading_8}."
            )
    return " ".join(sentences)


def encode_scene(frame: PerceptionFrame, location: LaneLocation,
                 network: RoadNetwork) -> SceneDescription:
    """Encode one perception frame into its structured + text description."""
    road = encode_topology(location, network, frame.signals)
    participants = tuple(
        ParticipantDesc(
            position_bucket=bucket_position(obj, location, network),
            heading_8=discretize_heading(obj.rel_heading),
            cls=obj.cls,
            motion=motion_bucket(obj.speed),
        )
        for obj in frame.objects  # already sorted nearest-first
    )
    ego_motion = motion_bucket(frame.ego_speed)
    text = render_scene_text(road, participants, ego_motion)
    return SceneDescription(road=road, participants=participants,
                            ego_motion=ego_motion, text=text)


def scene_digest(scene: SceneDescription) -> str:
    """Digest of the structured form (not the raw text), so template edits do
    not invalidate scripted decision tables."""
    payload = {
        "road": [scene.road.context, scene.road.adjacent_left,
                 scene.road.adjacent_right, scene.road.signal_ahead,
                 scene.road.stop_sign_ahead, scene.road.located],
        "participants": [
            [p.position_bucket, p.heading_8, p.cls, p.motion]
            for p in scene.participants
        ],
        "ego": scene.ego_motion,
    }
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Decision vocabulary and parsing
# ---------------------------------------------------------------------------

SPEED_MIN = 0.0
SPEED_MAX = 15.0


class DecisionParseError(ValueError):
    """Parse failure; carries the offending text span."""

    def __init__(self, message: str, span: str = ""):
        self.span = span
        super().__init__(f"{message}" + (f" (in: {span!r})" if span else ""))


@dataclass(frozen=True)
class ManeuverPrimitive:
    """Trajectory parameters bound to a decision token."""
    curvature: float          # 1/m, signed (+ left)
    target_speed: Optional[float]  # m/s; None means relative (resolved later)
    duration: float           # s; inf = until the arbiter resets
    allow_oncoming: bool = False


@dataclass(frozen=True)
class ManeuverCommand:
    kind: str
    target_speed: Optional[float] = None   # TARGET_SPEED argument
    primitive: ManeuverPrimitive = ManeuverPrimitive(0.0, 0.0, math.inf)


@dataclass(frozen=True)
class Vocabulary:
    """Single source of truth shared by the prompt builder and the parser.

    The lane-change curvature is sized so the lateral blend, executed over
    the first half of the commanded path, displaces exactly one lane width:
    kappa = 4 * width / (L/2)^2 with L = speed * duration.
    """
    lane_width: float = 3.5
    lane_change_speed: float = 4.0
    lane_change_duration: float = 4.0
    decelerate_step: float = 3.0
    decelerate_duration: float = 3.0
    target_speed_duration: float = 6.0
    proceed_speed: float = 3.0
    proceed_duration: float = 5.0
    allow_oncoming_maneuvers: bool = False
    include_overtake: bool = False
    overtake_duration: float = 6.0

    @property
    def lane_change_curvature(self) -> float:
        blend = 0.5 * self.lane_change_speed * self.lane_change_duration
        return 4.0 * self.lane_width / (blend * blend)

    def primitives(self) -> dict[str, ManeuverPrimitive]:
        k = self.lane_change_curvature
        table = {
            "HOLD": ManeuverPrimitive(0.0, 0.0, math.inf),
            "LANE_CHANGE_LEFT": ManeuverPrimitive(
                +k, self.lane_change_speed, self.lane_change_duration,
                allow_oncoming=self.allow_oncoming_maneuvers),
            "LANE_CHANGE_RIGHT": ManeuverPrimitive(
                -k, self.lane_change_speed, self.lane_change_duration,
                allow_oncoming=self.allow_oncoming_maneuvers),
            "DECELERATE": ManeuverPrimitive(0.0, None, self.decelerate_duration),
            "TARGET_SPEED": ManeuverPrimitive(0.0, None, self.target_speed_duration),
            "PROCEED": ManeuverPrimitive(0.0, self.proceed_speed, self.proceed_duration),
        }
        if self.include_overtake:
            table["OVERTAKE_VIA_ONCOMING"] = ManeuverPrimitive(
                -k, self.lane_change_speed, self.overtake_duration,
                allow_oncoming=True)
        return table

    def tokens(self) -> tuple[str, ...]:
        return tuple(self.primitives().keys())

    def render(self, command: ManeuverCommand) -> str:
        if command.kind == "TARGET_SPEED":
            return f"TARGET_SPEED {command.target_speed:g} m/s"
        return command.kind

    def option_lines(self) -> tuple[str, ...]:
        """Human-readable option list used in the prompt."""
        lines = {
            "HOLD": "HOLD - remain stopped and wait",
            "LANE_CHANGE_LEFT": "LANE_CHANGE_LEFT - move into the left adjacent lane, then continue",
            "LANE_CHANGE_RIGHT": "LANE_CHANGE_RIGHT - move into the right adjacent lane, then continue",
            "DECELERATE": "DECELERATE - reduce speed and keep following the route",
            "TARGET_SPEED": "TARGET_SPEED <number> m/s - continue at the given speed",
            "PROCEED": "PROCEED - continue carefully along the route at low speed",
            "OVERTAKE_VIA_ONCOMING": "OVERTAKE_VIA_ONCOMING - pass using the oncoming lane, then return",
        }
        return tuple(lines[t] for t in self.tokens())

    @classmethod
    def from_dict(cls, raw: dict) -> "Vocabulary":
        keep = {f: raw[f] for f in raw if f in cls.__dataclass_fields__}
        return cls(**keep)


DEFAULT_VOCABULARY = Vocabulary()

_DECISION_LINE = re.compile(r"^[\s>*#_-]*DECISION\s*:\s*(?P<payload>.+?)[\s*_.!]*$",
                            re.IGNORECASE)
_PAYLOAD = re.compile(
    r"^(?P<token>[A-Za-z][A-Za-z _-]*?)"
    r"(?:\s+(?P<number>[-+]?\d+(?:\.\d+)?)\s*(?:m\s*/\s*s|mps)?)?$")


def parse_decision(text: str, vocabulary: Vocabulary = DEFAULT_VOCABULARY) -> ManeuverCommand:
    """Parse the final DECISION line of an advisor reply.

    Total over arbitrary input: either returns a command or raises
    :class:`DecisionParseError`; never anything else.
    """
    match = None
    for line in text.splitlines():
        m = _DECISION_LINE.match(line)
        if m is not None:
            match = m
    if match is None:
        raise DecisionParseError("no DECISION line found", span=text[-120:])
    payload = match.group("payload")
    pm = _PAYLOAD.match(payload.strip())
    if pm is None:
        raise DecisionParseError("malformed decision payload", span=payload)
    token = re.sub(r"[\s-]+", "_", pm.group("token").strip()).upper()
    primitives = vocabulary.primitives()
    if token not in primitives:
        raise DecisionParseError(f"unknown decision token '{token}'", span=payload)
    number = pm.group("number")
    if token == "TARGET_SPEED":
        if number is None:
            raise DecisionParseError("TARGET_SPEED requires a speed in m/s", span=payload)
        speed = float(number)
        if not (SPEED_MIN <= speed <= SPEED_MAX):
            raise DecisionParseError(
                f"speed {speed:g} outside [{SPEED_MIN:g}, {SPEED_MAX:g}] m/s", span=payload)
        return ManeuverCommand(kind=token, target_speed=speed,
                               primitive=primitives[token])
    if number is not None:
        raise DecisionParseError(f"unexpected argument for {token}", span=payload)
    return ManeuverCommand(kind=token, primitive=primitives[token])


def command_to_primitive(command: ManeuverCommand,
                         ego_speed: float = 0.0) -> ManeuverPrimitive:
    """Resolve a command's primitive to concrete trajectory parameters."""
    prim = command.primitive
    if command.kind == "TARGET_SPEED":
        return ManeuverPrimitive(0.0, float(command.target_speed), prim.duration,
                                 prim.allow_oncoming)
    if command.kind == "DECELERATE":
        return ManeuverPrimitive(0.0, max(0.0, ego_speed - 3.0), prim.duration,
                                 prim.allow_oncoming)
    return prim
