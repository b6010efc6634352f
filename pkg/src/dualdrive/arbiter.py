"""Dual-rate coupling state machine.

Routes actuation between the fast reactive stream and the slow advisor
stream: the fast stream drives until it protective-stops on an unresolved
blockage; after a waiting threshold the advisor is consulted; an accepted,
digest-fresh decision executes under the degraded safety profile; control
hands back once the maneuver runs its course.  Every failure is a state or
an event, never an abort.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from .advisor import AdvisorDelivery
from .codec import ManeuverCommand
from .planner import ActiveManeuver, PlanUnavailable
from .world import ControlCommand

E2E_ACTIVE = "E2E_ACTIVE"
PROTECTIVE_STOP = "PROTECTIVE_STOP"
LLM_PENDING = "LLM_PENDING"
LLM_EXECUTING = "LLM_EXECUTING"

PHASES = (E2E_ACTIVE, PROTECTIVE_STOP, LLM_PENDING, LLM_EXECUTING)

_BRAKE = ControlCommand(longitudinal=-1.0, steering=0.0, emergency_brake=True)


@dataclass(frozen=True)
class ArbiterConfig:
    block_speed_eps: float = 0.5    # m/s; below this the ego counts as stopped
    t_wait_s: float = 4.0           # stopped duration before the advisor activates
    maneuver_timeout_s: float = 12.0
    progress_window_s: float = 2.0  # sustained-progress handback window
    request_cap: int = 2            # advisor attempts per stop episode
    dt: float = 0.05
    advisor_enabled: bool = True

    @classmethod
    def from_dict(cls, raw: dict, dt: float = 0.05) -> "ArbiterConfig":
        keep = {k: raw[k] for k in raw if k in cls.__dataclass_fields__}
        return cls(dt=dt, **keep)


@dataclass(frozen=True)
class ArbiterState:
    phase: str = E2E_ACTIVE
    stop_entered_tick: Optional[int] = None
    maneuver: Optional[ActiveManeuver] = None
    maneuver_started_tick: Optional[int] = None
    request_digest: Optional[str] = None
    requests_made: int = 0
    exhausted: bool = False
    speed_window: tuple[float, ...] = ()


@dataclass(frozen=True)
class ArbiterEvent:
    kind: str
    tick: int
    detail: str = ""


@dataclass(frozen=True)
class AdvisorRequest:
    tick: int
    digest: str


@dataclass(frozen=True)
class ArbiterOutput:
    state: ArbiterState
    command: ControlCommand
    source: str                       # "fast" | "llm"
    events: tuple[ArbiterEvent, ...] = ()
    request: Optional[AdvisorRequest] = None


Activator = Callable[[ManeuverCommand], ActiveManeuver]


def arbiter_tick(state: ArbiterState,
                 fast_cmd: ControlCommand,
                 fast_blocked: bool,
                 degraded_cmd: Optional[ControlCommand],
                 ego_speed: float,
                 scene_digest: Optional[str],
                 delivery: Optional[AdvisorDelivery],
                 tick: int,
                 cfg: ArbiterConfig,
                 activator: Optional[Activator] = None) -> ArbiterOutput:
    """Advance the coupling state machine one tick.

    Exactly one stream actuates per tick.  ``activator`` binds an accepted
    command to a maneuver; a PlanUnavailable from it counts as a failed
    advisor attempt.
    """
    events: list[ArbiterEvent] = []

    if state.phase == E2E_ACTIVE:
        if fast_blocked and ego_speed < cfg.block_speed_eps:
            events.append(ArbiterEvent("protective_stop", tick))
            new = ArbiterState(phase=PROTECTIVE_STOP, stop_entered_tick=tick)
            return ArbiterOutput(new, _BRAKE, "fast", tuple(events))
        return ArbiterOutput(state, fast_cmd, "fast")

    if state.phase == PROTECTIVE_STOP:
        if not fast_blocked:
            events.append(ArbiterEvent("handback", tick, "fast stream recovered"))
            return ArbiterOutput(ArbiterState(), fast_cmd, "fast", tuple(events))
        if ego_speed >= cfg.block_speed_eps:
            # not yet at rest; restart the stopped clock
            new = replace(state, stop_entered_tick=tick)
            return ArbiterOutput(new, _BRAKE, "fast")
        stopped_for = (tick - (state.stop_entered_tick or tick)) * cfg.dt
        can_request = (cfg.advisor_enabled and not state.exhausted
                       and scene_digest is not None)
        if stopped_for >= cfg.t_wait_s and can_request:
            events.append(ArbiterEvent("advisor_request", tick, scene_digest))
            new = replace(state, phase=LLM_PENDING, request_digest=scene_digest,
                          requests_made=state.requests_made + 1)
            return ArbiterOutput(new, _BRAKE, "fast", tuple(events),
                                 request=AdvisorRequest(tick, scene_digest))
        return ArbiterOutput(state, _BRAKE, "fast")

    if state.phase == LLM_PENDING:
        if delivery is None:
            return ArbiterOutput(state, _BRAKE, "fast")
        failure: Optional[str] = None
        if delivery.error is not None or delivery.result is None:
            failure = f"advisor unavailable: {delivery.error}"
            events.append(ArbiterEvent("advisor_failure", tick, delivery.error or ""))
        elif scene_digest is not None and delivery.request_digest != scene_digest:
            failure = "stale advisor result discarded"
            events.append(ArbiterEvent("advisor_stale_discard", tick,
                                       delivery.request_digest))
        else:
            result = delivery.result
            try:
                if activator is None:
                    raise PlanUnavailable("no activator provided")
                maneuver = activator(result.command)
                events.append(ArbiterEvent("maneuver_start", tick,
                                           result.command.kind))
                new = replace(state, phase=LLM_EXECUTING, maneuver=maneuver,
                              maneuver_started_tick=tick, request_digest=None,
                              speed_window=())
                return ArbiterOutput(new, _BRAKE, "fast", tuple(events))
            except PlanUnavailable as exc:
                failure = f"override rejected: {exc}"
                events.append(ArbiterEvent("override_rejected", tick, str(exc)))
        # failed attempt: re-request while budget remains, else give up
        assert failure is not None
        if state.requests_made < cfg.request_cap and scene_digest is not None:
            events.append(ArbiterEvent("advisor_request", tick, scene_digest))
            new = replace(state, request_digest=scene_digest,
                          requests_made=state.requests_made + 1)
            return ArbiterOutput(new, _BRAKE, "fast", tuple(events),
                                 request=AdvisorRequest(tick, scene_digest))
        events.append(ArbiterEvent("advisor_exhausted", tick, failure))
        new = replace(state, phase=PROTECTIVE_STOP, exhausted=True,
                      request_digest=None)
        return ArbiterOutput(new, _BRAKE, "fast", tuple(events))

    if state.phase == LLM_EXECUTING:
        assert state.maneuver is not None and state.maneuver_started_tick is not None
        elapsed = (tick - state.maneuver_started_tick) * cfg.dt
        duration = state.maneuver.duration
        duration_done = (not math.isinf(duration)) and elapsed >= duration
        timed_out = elapsed >= cfg.maneuver_timeout_s
        window_len = max(1, int(round(cfg.progress_window_s / cfg.dt)))
        window = (state.speed_window + (ego_speed,))[-window_len:]
        # progress handback is armed once the commanded duration has elapsed
        # (immediately for unbounded maneuvers) so lane changes are not
        # aborted mid-arc
        progress_armed = duration_done or math.isinf(duration)
        progressing = (len(window) == window_len
                       and sum(window) / window_len > 2.0 * cfg.block_speed_eps)
        if duration_done or timed_out or (progress_armed and progressing):
            reason = ("duration elapsed" if duration_done
                      else "timeout" if timed_out else "progress resumed")
            events.append(ArbiterEvent("maneuver_end", tick, reason))
            events.append(ArbiterEvent("handback", tick, reason))
            return ArbiterOutput(ArbiterState(), fast_cmd, "fast", tuple(events))
        assert degraded_cmd is not None, "LLM_EXECUTING needs a degraded command"
        if degraded_cmd.emergency_brake:
            events.append(ArbiterEvent("maneuver_veto", tick,
                                       "degraded hard gate"))
        new = replace(state, speed_window=window)
        return ArbiterOutput(new, degraded_cmd, "llm", tuple(events))

    raise AssertionError(f"unknown phase {state.phase!r}")
