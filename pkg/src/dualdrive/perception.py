"""Ego-relative perception frames emulating a learned detector's outputs:
tracked objects plus sign/light detections with confidences, with optional
seeded noise that is a pure function of (seed, tick, object id, channel).
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field
from typing import Optional

from .geometry import to_frame, wrap_angle
from .world import RoadNetwork, WorldState, locate

SIGNAL_KINDS = ("red_light", "yellow_light", "green_light", "stop_sign")


@dataclass(frozen=True)
class SenseConfig:
    range_m: float = 50.0
    fov_rad: float = 2.0 * math.pi  # 360 degrees, lidar-like; camera sector via config
    seed: int = 0
    sigma_position: float = 0.0
    sigma_speed: float = 0.0
    sigma_heading: float = 0.0
    sigma_confidence: float = 0.0

    @classmethod
    def from_dict(cls, raw: dict) -> "SenseConfig":
        noise = raw.get("noise", {}) or {}
        return cls(
            range_m=float(raw.get("range", 50.0)),
            fov_rad=math.radians(float(raw.get("fov_deg", 360.0))),
            seed=int(raw.get("seed", 0)),
            sigma_position=float(noise.get("position", 0.0)),
            sigma_speed=float(noise.get("speed", 0.0)),
            sigma_heading=float(noise.get("heading", 0.0)),
            sigma_confidence=float(noise.get("confidence", 0.0)),
        )


@dataclass(frozen=True)
class TrackedObject:
    id: str
    cls: str
    rel_position: tuple[float, float]  # x forward, y left, ego frame
    speed: float
    rel_heading: float                 # relative to ego heading
    bbox: tuple[float, float]

    @property
    def range_m(self) -> float:
        return math.hypot(self.rel_position[0], self.rel_position[1])


@dataclass(frozen=True)
class SignalDetection:
    kind: str                # one of SIGNAL_KINDS
    confidence: float        # [0, 1]
    distance_m: float        # longitudinal distance ahead, >= 0
    governs_ego_lane: bool
    signal_id: str = ""


@dataclass(frozen=True)
class PerceptionFrame:
    tick: int
    ego_speed: float
    objects: tuple[TrackedObject, ...] = ()
    signals: tuple[SignalDetection, ...] = ()


def _channel_noise(seed: int, tick: int, obj_id: str, channel: str, sigma: float) -> float:
    """Gaussian sample that depends only on (seed, tick, obj, channel)."""
    if sigma == 0.0:
        return 0.0
    digest = hashlib.sha256(f"{seed}|{tick}|{obj_id}|{channel}".encode()).digest()
    rng = random.Random(int.from_bytes(digest[:8], "big"))
    return rng.gauss(0.0, sigma)


def sense(state: WorldState, network: RoadNetwork, cfg: SenseConfig) -> PerceptionFrame:
    """Build the ego-relative perception frame for one tick.

    With all sigmas at zero the output is exact ground truth; otherwise the
    perturbations are deterministic per (seed, tick, object id).
    """
    ego = state.ego
    origin = ego.position
    heading = ego.heading
    objects: list[TrackedObject] = []
    for p in state.participants:
        if not p.active:
            continue
        rel = to_frame(p.position, origin, heading)
        r = math.hypot(rel[0], rel[1])
        if r > cfg.range_m:
            continue
        if cfg.fov_rad < 2.0 * math.pi - 1e-9:
            bearing = math.atan2(rel[1], rel[0])
            if abs(bearing) > 0.5 * cfg.fov_rad:
                continue
        rel_heading = wrap_angle(p.heading - heading)
        nx = _channel_noise(cfg.seed, state.tick, p.id, "px", cfg.sigma_position)
        ny = _channel_noise(cfg.seed, state.tick, p.id, "py", cfg.sigma_position)
        nv = _channel_noise(cfg.seed, state.tick, p.id, "v", cfg.sigma_speed)
        nh = _channel_noise(cfg.seed, state.tick, p.id, "h", cfg.sigma_heading)
        objects.append(TrackedObject(
            id=p.id, cls=p.cls,
            rel_position=(rel[0] + nx, rel[1] + ny),
            speed=max(0.0, p.speed + nv),
            rel_heading=wrap_angle(rel_heading + nh),
            bbox=p.bbox,
        ))
    objects.sort(key=lambda o: (o.range_m, o.id))

    ego_loc = locate(ego.pose, network)
    phases = dict(state.signal_phases)
    detections: list[SignalDetection] = []
    for sig in network.signals:
        rel = to_frame(sig.position, origin, heading)
        if rel[0] < 0.0 or rel[0] > cfg.range_m:
            continue
        color = phases.get(sig.id, "red")
        kind = f"{color}_light"
        governs = (not ego_loc.off_road) and ego_loc.lane_id in sig.controls
        conf = _confidence(rel[0], cfg, state.tick, sig.id)
        detections.append(SignalDetection(kind=kind, confidence=conf,
                                          distance_m=rel[0],
                                          governs_ego_lane=governs,
                                          signal_id=sig.id))
    for sign in network.stop_signs:
        rel = to_frame(sign.position, origin, heading)
        if rel[0] < 0.0 or rel[0] > cfg.range_m:
            continue
        governs = (not ego_loc.off_road) and ego_loc.lane_id == sign.lane
        conf = _confidence(rel[0], cfg, state.tick, sign.id)
        detections.append(SignalDetection(kind="stop_sign", confidence=conf,
                                          distance_m=rel[0],
                                          governs_ego_lane=governs,
                                          signal_id=sign.id))
    detections.sort(key=lambda d: (d.distance_m, d.signal_id))
    return PerceptionFrame(tick=state.tick, ego_speed=ego.speed,
                           objects=tuple(objects), signals=tuple(detections))


def _confidence(distance: float, cfg: SenseConfig, tick: int, sig_id: str) -> float:
    # Monotone-in-proximity surrogate confidence, optionally perturbed.
    base = 1.0 - distance / cfg.range_m
    base += _channel_noise(cfg.seed, tick, sig_id, "conf", cfg.sigma_confidence)
    return min(max(base, 0.0), 1.0)
