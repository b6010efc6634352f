"""Advisor bridge: assemble the three-phase reasoning prompt with an
exemplar demonstration, query a chat-completion endpoint (or a deterministic
scripted/replay client), and return a parsed maneuver command with
staleness metadata.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Protocol

import yaml

from .codec import (
    DecisionParseError,
    ManeuverCommand,
    SceneDescription,
    Vocabulary,
    parse_decision,
    scene_digest,
)

PHASE_HEADINGS = (
    "Perception Target Analysis",
    "Decision Feasibility Evaluation",
    "Final Decision Synthesis",
)

FEASIBILITY_CRITERIA = (
    "a) Safety impact prediction",
    "b) Executability in physical space",
    "c) Minimum waiting time",
)

SYSTEM_PREAMBLE = (
    "You are the high-level decision module of an autonomous vehicle. "
    "The low-level controller has brought the vehicle to a protective stop "
    "because it cannot resolve the situation on its own. Your job is to pick "
    "one maneuver from a fixed option list. Safety rules: never choose a "
    "maneuver that risks a collision; obey traffic lights and stop signs; "
    "prefer the option that resumes progress soonest among the safe ones; "
    "when in doubt, HOLD."
)

DEFAULT_EXEMPLAR = """Example scene:
You are stopped in a regular lane. There is an adjacent lane on your left carrying traffic in your direction. No traffic signal ahead. There is a stationary truck ahead in your lane, heading N.

Example reasoning:
Perception Target Analysis: The truck ahead occupies my lane and is not moving, so my lane stays blocked for the foreseeable time window. The left adjacent lane carries traffic in my direction and no participant is reported in it.
Decision Feasibility Evaluation: HOLD is safe but makes no progress while the blockage persists. LANE_CHANGE_LEFT is executable because the left lane exists, runs in my direction and is clear; it avoids the truck entirely. DECELERATE and TARGET_SPEED keep me behind the blockage. PROCEED would drive toward the truck.
Final Decision Synthesis: The left lane change is safe, physically executable and resumes progress immediately.
DECISION: LANE_CHANGE_LEFT"""

FORMAT_REMINDER = (
    "Remember: the last line of your reply must be exactly "
    "'DECISION: <OPTION>' using one option from the list, nothing after it."
)


class AdvisorUnavailable(RuntimeError):
    """Transport failure, timeout after retries, empty body, or missing
    scripted entry.  The arbiter keeps the protective stop."""


@dataclass(frozen=True)
class ClientConfig:
    endpoint: str = ""
    model: str = ""
    timeout_s: float = 10.0
    max_retries: int = 2
    temperature: float = 0.0


@dataclass(frozen=True)
class PromptBundle:
    system: str
    exemplar: str
    scene: str
    instruction: str
    scene_digest: str = ""

    @property
    def text(self) -> str:
        return "\n\n".join((self.system, self.exemplar, self.scene, self.instruction))

    def to_messages(self) -> list[dict[str, str]]:
        user = "\n\n".join((self.exemplar, self.scene, self.instruction))
        return [
            {"role": "system", "content": self.system},
            {"role": "user", "content": user},
        ]


@dataclass(frozen=True)
class AdvisorResult:
    command: ManeuverCommand
    raw_text: str
    issued_tick: int
    received_tick: int
    latency_s: float
    attempts: int = 1
    failure: Optional[str] = None


def build_prompt(scene: SceneDescription, vocabulary: Vocabulary,
                 exemplar: str = DEFAULT_EXEMPLAR) -> PromptBundle:
    """Assemble the deterministic prompt bundle for one scene."""
    options = "\n".join(f"- {line}" for line in vocabulary.option_lines())
    instruction = (
        "Work through the following three phases, in order, writing a short "
        "paragraph under each heading.\n\n"
        f"{PHASE_HEADINGS[0]}: describe the driving environment, state which "
        "lane or area each detected participant occupies, and predict where "
        "each participant will be over the next few seconds from its heading "
        "and motion.\n\n"
        f"{PHASE_HEADINGS[1]}: for every option below, evaluate it against "
        "these criteria: " + "; ".join(FEASIBILITY_CRITERIA) + ".\n\n"
        f"{PHASE_HEADINGS[2]}: choose the single best option.\n\n"
        "Options:\n" + options + "\n\n"
        "Finish with one line exactly of the form:\nDECISION: <OPTION>"
    )
    return PromptBundle(
        system=SYSTEM_PREAMBLE,
        exemplar=DEFAULT_EXEMPLAR if exemplar is None else exemplar,
        scene="Current scene:\n" + scene.text,
        instruction=instruction,
        scene_digest=scene_digest(scene),
    )


class ChatClient(Protocol):
    def complete(self, bundle: PromptBundle) -> str: ...


def query(client: ChatClient, bundle: PromptBundle) -> str:
    """Single completion; empty bodies are an availability failure."""
    text = client.complete(bundle)
    if not text or not text.strip():
        raise AdvisorUnavailable("advisor returned an empty body")
    return text


def decide(scene: SceneDescription, client: ChatClient, vocabulary: Vocabulary,
           tick: int = 0, dt: float = 0.05,
           exemplar: str = DEFAULT_EXEMPLAR) -> AdvisorResult:
    """encode -> build -> query -> parse, with one reprompt on a parse error.

    After two failed parses the result falls back to HOLD with the failure
    recorded; transport failures propagate as AdvisorUnavailable.
    """
    bundle = build_prompt(scene, vocabulary, exemplar)
    raw = query(client, bundle)
    try:
        command = parse_decision(raw, vocabulary)
        return AdvisorResult(command=command, raw_text=raw, issued_tick=tick,
                             received_tick=tick, latency_s=0.0, attempts=1)
    except DecisionParseError as first_error:
        reminder = replace(bundle, instruction=bundle.instruction + "\n\n" + FORMAT_REMINDER)
        raw2 = query(client, reminder)
        try:
            command = parse_decision(raw2, vocabulary)
            return AdvisorResult(command=command, raw_text=raw2, issued_tick=tick,
                                 received_tick=tick, latency_s=0.0, attempts=2)
        except DecisionParseError as second_error:
            hold = ManeuverCommand(kind="HOLD",
                                   primitive=vocabulary.primitives()["HOLD"])
            return AdvisorResult(
                command=hold, raw_text=raw2, issued_tick=tick, received_tick=tick,
                latency_s=0.0, attempts=2,
                failure=f"parse failed twice: {first_error}; {second_error}")


# ---------------------------------------------------------------------------
# Clients
# ---------------------------------------------------------------------------


class ScriptedClient:
    """Deterministic table-lookup client.

    Rules match on the digest of the scene's structured form (primary key)
    or on substrings of the rendered scene text (for hand-authored scenario
    scripts).  A miss raises AdvisorUnavailable; there is no default reply.
    """

    def __init__(self, rules: list[dict]):
        self.rules = rules

    @classmethod
    def from_table(cls, table: dict[str, str]) -> "ScriptedClient":
        return cls([{"digest": k, "response": v} for k, v in table.items()])

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedClient":
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        return cls(list(doc.get("rules", [])))

    def complete(self, bundle: PromptBundle) -> str:
        for rule in self.rules:
            digest = rule.get("digest")
            if digest is not None and digest == bundle.scene_digest:
                return str(rule["response"])
            contains = rule.get("contains")
            if contains and all(str(sub) in bundle.scene for sub in contains):
                return str(rule["response"])
        raise AdvisorUnavailable(
            f"no scripted entry for scene digest {bundle.scene_digest[:12]}")


class HttpChatClient:
    """Standard chat-completion wire format over HTTP with retries.

    The API key comes from the environment; ``post_fn`` is injectable for
    tests and defaults to requests.post.
    """

    def __init__(self, config: ClientConfig,
                 post_fn: Optional[Callable] = None,
                 api_key: Optional[str] = None):
        if post_fn is None:
            import requests

            post_fn = requests.post
        self.config = config
        self.post_fn = post_fn
        self.api_key = api_key

    def complete(self, bundle: PromptBundle) -> str:
        body = {
            "model": self.config.model,
            "messages": bundle.to_messages(),
            "temperature": self.config.temperature,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        attempts = self.config.max_retries + 1
        last_error: Optional[Exception] = None
        for _ in range(attempts):
            try:
                response = self.post_fn(self.config.endpoint, json=body,
                                        headers=headers,
                                        timeout=self.config.timeout_s)
                payload = response.json()
                return str(payload["choices"][0]["message"]["content"])
            except Exception as exc:  # transport / schema failure -> retry
                last_error = exc
        raise AdvisorUnavailable(
            f"endpoint unreachable after {attempts} attempts: {last_error}")


class ReplayClient:
    """Replays recorded request/response fixtures keyed by scene digest."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def complete(self, bundle: PromptBundle) -> str:
        path = self.directory / f"{bundle.scene_digest}.json"
        if not path.exists():
            raise AdvisorUnavailable(f"no recorded fixture {path.name}")
        doc = json.loads(path.read_text(encoding="utf-8"))
        return str(doc["response"])


class RecordingClient:
    """Wraps a live client and persists fixtures for later replay."""

    def __init__(self, inner: ChatClient, directory: str | Path):
        self.inner = inner
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def complete(self, bundle: PromptBundle) -> str:
        response = self.inner.complete(bundle)
        path = self.directory / f"{bundle.scene_digest}.json"
        path.write_text(json.dumps({"request": bundle.text, "response": response},
                                   indent=2), encoding="utf-8")
        return response


# ---------------------------------------------------------------------------
# Workers: the arbiter polls these once per tick; the fast loop never blocks.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdvisorDelivery:
    request_digest: str
    issued_tick: int
    delivered_tick: int
    result: Optional[AdvisorResult] = None
    error: Optional[str] = None


class SyncWorker:
    """Deterministic worker: the decision is computed at submit time and
    released after a configurable number of ticks of simulated latency."""

    def __init__(self, client: ChatClient, vocabulary: Vocabulary,
                 latency_ticks: int = 0, dt: float = 0.05,
                 exemplar: str = DEFAULT_EXEMPLAR):
        self.client = client
        self.vocabulary = vocabulary
        self.latency_ticks = latency_ticks
        self.dt = dt
        self.exemplar = exemplar
        self._pending: Optional[tuple[int, AdvisorDelivery]] = None

    @property
    def busy(self) -> bool:
        return self._pending is not None

    def submit(self, tick: int, digest: str, scene: SceneDescription) -> None:
        ready = tick + self.latency_ticks
        try:
            result = decide(scene, self.client, self.vocabulary, tick=tick,
                            dt=self.dt, exemplar=self.exemplar)
            delivery = AdvisorDelivery(request_digest=digest, issued_tick=tick,
                                       delivered_tick=ready, result=result)
        except AdvisorUnavailable as exc:
            delivery = AdvisorDelivery(request_digest=digest, issued_tick=tick,
                                       delivered_tick=ready, error=str(exc))
        self._pending = (ready, delivery)

    def poll(self, tick: int) -> Optional[AdvisorDelivery]:
        if self._pending is None:
            return None
        ready, delivery = self._pending
        if tick < ready:
            return None
        self._pending = None
        result = delivery.result
        if result is not None:
            result = replace(result, received_tick=tick,
                             latency_s=(tick - result.issued_tick) * self.dt)
            delivery = replace(delivery, result=result, delivered_tick=tick)
        return delivery


class ThreadWorker:
    """Background-thread worker for live endpoints; same poll contract."""

    def __init__(self, client: ChatClient, vocabulary: Vocabulary,
                 dt: float = 0.05, exemplar: str = DEFAULT_EXEMPLAR):
        self.client = client
        self.vocabulary = vocabulary
        self.dt = dt
        self.exemplar = exemplar
        self._lock = threading.Lock()
        self._done: Optional[AdvisorDelivery] = None
        self._thread: Optional[threading.Thread] = None

    @property
    def busy(self) -> bool:
        with self._lock:
            return self._thread is not None and self._done is None

    def submit(self, tick: int, digest: str, scene: SceneDescription) -> None:
        def work() -> None:
            try:
                result = decide(scene, self.client, self.vocabulary, tick=tick,
                                dt=self.dt, exemplar=self.exemplar)
                delivery = AdvisorDelivery(request_digest=digest,
                                           issued_tick=tick, delivered_tick=tick,
                                           result=result)
            except AdvisorUnavailable as exc:
                delivery = AdvisorDelivery(request_digest=digest,
                                           issued_tick=tick, delivered_tick=tick,
                                           error=str(exc))
            with self._lock:
                self._done = delivery

        with self._lock:
            self._done = None
            self._thread = threading.Thread(target=work, daemon=True)
            self._thread.start()

    def poll(self, tick: int) -> Optional[AdvisorDelivery]:
        with self._lock:
            delivery = self._done
            if delivery is None:
                return None
            self._done = None
            self._thread = None
        result = delivery.result
        if result is not None:
            result = replace(result, received_tick=tick,
                             latency_s=(tick - result.issued_tick) * self.dt)
            delivery = replace(delivery, result=result, delivered_tick=tick)
        return delivery
