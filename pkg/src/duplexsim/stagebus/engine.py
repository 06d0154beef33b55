"""Discrete-event simulator driving a duplex session through its stages.

The virtual clock advances through user speech events, per-chunk duplex
decisions, text batch generation, speech batch generation, and first-audio
synthesis.  Every stage charge is ``round_half_up(units * per_unit_ms +
jitter)`` milliseconds, so with jitter disabled a turn's first audio packet
lands exactly ``d_pred + n_semantic*d_llm + n_speech*d_lm + n_speech*d_syn``
after the decision tick.

Stage endpoints are pluggable: the built-in mocks answer in-process from
the pinned generators; an external endpoint (child process over stdio, or
a TCP address) answers the same requests over the wire protocol.  Virtual
timestamps come from the latency model either way, so a conformant
external stage reproduces the built-in trace byte for byte.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable

from ..core import (
    ChunkGrid,
    ConfigurationError,
    DialogueTimeline,
    EventKind,
    LatencyProfile,
    ProtocolOrderError,
    RatioPolicy,
    TraceEvent,
    ValidationError,
    Channel,
    ms_from_seconds,
    require_valid_timeline,
    round_half_up,
    timeline_from_dict,
    timeline_to_dict,
)
from ..duplex import (
    ActionKind,
    DecisionKind,
    DuplexDecision,
    Mode,
    PredictorContext,
    SessionState,
    ThresholdParams,
    finish_speaking,
    is_coerced,
    scripted_predictor,
    session_tick,
    threshold_predictor,
)
from .stages import (
    DEFAULT_DEADLINE_MS,
    ProcessTransport,
    StageChannel,
    TcpTransport,
)
from .wire import (
    PROTOCOL_VERSION,
    feature_floats,
    speech_token_ids,
    stage_hash,
    text_token_ids,
)


class StageRole(str, Enum):
    VOICE_ENCODER = "voice_encoder"
    TEXT_LLM = "text_llm"
    VOICE_TOKEN_LM = "voice_token_lm"
    TOKEN2WAV = "token2wav"
    DUPLEX_PREDICTOR = "duplex_predictor"


@dataclass(frozen=True)
class Endpoint:
    """Where a stage lives: in-process, a spawned command, or a TCP peer."""

    kind: str = "builtin"  # builtin | command | tcp
    command: tuple[str, ...] = ()
    host: str = ""
    port: int = 0

    @classmethod
    def builtin(cls) -> "Endpoint":
        return cls()

    @classmethod
    def of_command(cls, argv) -> "Endpoint":
        return cls(kind="command", command=tuple(argv))

    @classmethod
    def of_tcp(cls, host: str, port: int) -> "Endpoint":
        return cls(kind="tcp", host=host, port=port)

    @property
    def is_builtin(self) -> bool:
        return self.kind == "builtin"


@dataclass(frozen=True)
class StageDescriptor:
    role: StageRole
    per_unit_latency_ms: float
    jitter_ms: float = 0.0
    endpoint: Endpoint = field(default_factory=Endpoint.builtin)

    def __post_init__(self) -> None:
        if self.jitter_ms < 0:
            raise ValidationError(f"jitter_ms must be >= 0, got {self.jitter_ms}")


def default_stages(
    profile: LatencyProfile, jitter_ms: float = 0.0, endpoint: Endpoint | None = None
) -> list[StageDescriptor]:
    """One descriptor per role, with per-unit costs taken from the profile.

    The voice encoder's cost is folded into the speech-to-text charge
    (d_llm covers encoder + projector + LLM per text token), so its own
    per-unit cost is zero.
    """
    ep = endpoint or Endpoint.builtin()
    costs = {
        StageRole.VOICE_ENCODER: 0.0,
        StageRole.TEXT_LLM: profile.d_llm,
        StageRole.VOICE_TOKEN_LM: profile.d_lm,
        StageRole.TOKEN2WAV: profile.d_syn,
        StageRole.DUPLEX_PREDICTOR: profile.d_pred,
    }
    return [
        StageDescriptor(role=r, per_unit_latency_ms=c, jitter_ms=jitter_ms, endpoint=ep)
        for r, c in costs.items()
    ]


# ---------------------------------------------------------------------------
# Scenario

@dataclass(frozen=True)
class TurnPlan:
    text_tokens: int = 10
    speech_tokens: int = 30

    def __post_init__(self) -> None:
        if self.text_tokens < 0:
            raise ValidationError(f"text_tokens must be >= 0, got {self.text_tokens}")
        if self.speech_tokens < 1:
            raise ValidationError(f"speech_tokens must be >= 1, got {self.speech_tokens}")


@dataclass(frozen=True)
class PredictorConfig:
    """Which predictor drives the session: a decision script or thresholds."""

    kind: str = "scripted"  # scripted | threshold
    script: tuple[tuple[int, DecisionKind, float], ...] = ()
    take_turn_threshold: float = 0.75
    halt_threshold: float = 0.55
    energy_index: int = 0

    def __post_init__(self) -> None:
        if self.kind not in ("scripted", "threshold"):
            raise ConfigurationError(f"unknown predictor kind {self.kind!r}")
        chunks = [c for c, _, _ in self.script]
        if len(set(chunks)) != len(chunks):
            raise ConfigurationError("predictor script has duplicate chunk indices")

    def to_dict(self) -> dict:
        if self.kind == "scripted":
            return {
                "kind": "scripted",
                "script": [[c, k.value, conf] for c, k, conf in self.script],
            }
        return {
            "kind": "threshold",
            "take_turn_threshold": self.take_turn_threshold,
            "halt_threshold": self.halt_threshold,
            "energy_index": self.energy_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PredictorConfig":
        kind = d.get("kind", "scripted")
        if kind == "scripted":
            script = tuple(
                (
                    int(e[0]),
                    DecisionKind(e[1]),
                    float(e[2]) if len(e) > 2 else 1.0,
                )
                for e in d.get("script", [])
            )
            return cls(kind="scripted", script=tuple(sorted(script)))
        return cls(
            kind="threshold",
            take_turn_threshold=float(d.get("take_turn_threshold", 0.75)),
            halt_threshold=float(d.get("halt_threshold", 0.55)),
            energy_index=int(d.get("energy_index", 0)),
        )


@dataclass(frozen=True)
class Scenario:
    timeline: DialogueTimeline
    turns: tuple[TurnPlan, ...] = ()
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    profile: LatencyProfile = field(default_factory=LatencyProfile)
    policy: RatioPolicy = field(default_factory=RatioPolicy)
    grid: ChunkGrid = field(default_factory=ChunkGrid)
    seed: int = 0
    session: str = "s0"
    codebook_size: int = 1024
    text_vocab: int = 32000
    audio_ms_per_token: int = 40
    feature_width: int = 8
    default_turn: TurnPlan = field(default_factory=TurnPlan)

    def __post_init__(self) -> None:
        require_valid_timeline(self.timeline)
        if self.codebook_size < 2:
            raise ValidationError("codebook_size must be >= 2")
        if self.text_vocab < 2:
            raise ValidationError("text_vocab must be >= 2")
        if self.audio_ms_per_token < 1:
            raise ValidationError("audio_ms_per_token must be >= 1")
        if self.feature_width < 1:
            raise ValidationError("feature_width must be >= 1")
        if self.predictor.kind == "threshold":
            if self.predictor.energy_index >= self.feature_width:
                raise ConfigurationError("energy_index out of feature range")

    def to_dict(self) -> dict:
        return {
            "session": self.session,
            "seed": self.seed,
            "grid_ms": self.grid.chunk_ms,
            "codebook_size": self.codebook_size,
            "text_vocab": self.text_vocab,
            "audio_ms_per_token": self.audio_ms_per_token,
            "feature_width": self.feature_width,
            "policy": {"n_semantic": self.policy.n_semantic, "n_speech": self.policy.n_speech},
            "profile": self.profile.to_dict(),
            "predictor": self.predictor.to_dict(),
            "turns": [
                {"text_tokens": t.text_tokens, "speech_tokens": t.speech_tokens}
                for t in self.turns
            ],
            "default_turn": {
                "text_tokens": self.default_turn.text_tokens,
                "speech_tokens": self.default_turn.speech_tokens,
            },
            "timeline": timeline_to_dict(self.timeline),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        try:
            policy_d = d.get("policy", {})
            default_turn = d.get("default_turn", {})
            return cls(
                timeline=timeline_from_dict(d["timeline"]),
                turns=tuple(
                    TurnPlan(int(t["text_tokens"]), int(t["speech_tokens"]))
                    for t in d.get("turns", [])
                ),
                predictor=PredictorConfig.from_dict(d.get("predictor", {})),
                profile=LatencyProfile.from_dict(d.get("profile", {})),
                policy=RatioPolicy(
                    n_semantic=int(policy_d.get("n_semantic", 5)),
                    n_speech=int(policy_d.get("n_speech", 15)),
                ),
                grid=ChunkGrid(chunk_ms=int(d.get("grid_ms", 100))),
                seed=int(d.get("seed", 0)),
                session=str(d.get("session", "s0")),
                codebook_size=int(d.get("codebook_size", 1024)),
                text_vocab=int(d.get("text_vocab", 32000)),
                audio_ms_per_token=int(d.get("audio_ms_per_token", 40)),
                feature_width=int(d.get("feature_width", 8)),
                default_turn=TurnPlan(
                    int(default_turn.get("text_tokens", 10)),
                    int(default_turn.get("speech_tokens", 30)),
                ),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed scenario object: {exc}") from exc


def load_scenario(path: str | Path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return Scenario.from_dict(json.load(fh))


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(scenario.to_dict(), fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Virtual clock

@dataclass
class VirtualClock:
    """Event queue ordered by (time, insertion seq); time never decreases."""

    now_ms: int = 0
    _heap: list = field(default_factory=list)
    _seq: int = 0

    def schedule(self, t_ms: int, fn: Callable[[int], None]) -> None:
        if t_ms < self.now_ms:
            raise ValidationError(f"cannot schedule at {t_ms} before now {self.now_ms}")
        heapq.heappush(self._heap, (t_ms, self._seq, fn))
        self._seq += 1

    def run(self) -> None:
        while self._heap:
            t, _, fn = heapq.heappop(self._heap)
            self.now_ms = t
            fn(t)


# ---------------------------------------------------------------------------
# Simulation

@dataclass
class _ActiveTurn:
    index: int
    cancelled: bool = False
    tokens_emitted: int = 0


class _Simulation:
    def __init__(
        self,
        scenario: Scenario,
        stages: list[StageDescriptor],
        deadline_ms: int = DEFAULT_DEADLINE_MS,
    ) -> None:
        self.sc = scenario
        self.deadline_ms = deadline_ms
        self.clock = VirtualClock()
        self.trace: list[TraceEvent] = []
        self.trace_seq = 0
        self.state = SessionState()
        self.turns_begun = 0
        self.active: _ActiveTurn | None = None
        self.aborted = False

        roles = {s.role for s in stages}
        missing = set(StageRole) - roles
        if missing:
            raise ConfigurationError(
                f"missing stage roles: {sorted(r.value for r in missing)}"
            )
        self.stage_by_role = {s.role: s for s in stages}

        self.user_segments_ms = [
            (ms_from_seconds(s.start_s), ms_from_seconds(s.end_s))
            for s in scenario.timeline.channel_segments(Channel.USER)
        ]

        self._jitter_rng = {
            role: random.Random(stage_hash("jitter", scenario.seed, scenario.session, i, 0))
            for i, role in enumerate(StageRole)
        }

        self._channels: dict[str, StageChannel] = {}
        self._role_channel: dict[StageRole, StageChannel] = {}
        self._open_external_channels()

    # -- plumbing ------------------------------------------------------------

    def _open_external_channels(self) -> None:
        for stage in self.stage_by_role.values():
            ep = stage.endpoint
            if ep.is_builtin:
                continue
            key = f"{ep.kind}:{'|'.join(ep.command)}:{ep.host}:{ep.port}"
            channel = self._channels.get(key)
            if channel is None:
                if ep.kind == "command":
                    transport = ProcessTransport(list(ep.command))
                elif ep.kind == "tcp":
                    transport = TcpTransport(ep.host, ep.port)
                else:
                    raise ConfigurationError(f"unknown endpoint kind {ep.kind!r}")
                channel = StageChannel(transport, deadline_ms=self.deadline_ms)
                reply = channel.request(
                    "hello",
                    "",
                    {
                        "protocol_version": PROTOCOL_VERSION,
                        "policy": {
                            "n_semantic": self.sc.policy.n_semantic,
                            "n_speech": self.sc.policy.n_speech,
                        },
                        "profile": self.sc.profile.to_dict(),
                    },
                )
                if reply.type != "hello":
                    raise ProtocolOrderError(f"expected hello reply, got {reply.type}")
                served = set(reply.payload.get("roles", []))
                channel_roles = {
                    s.role.value
                    for s in self.stage_by_role.values()
                    if not s.endpoint.is_builtin and s.endpoint == ep
                }
                if not channel_roles <= served:
                    raise ConfigurationError(
                        f"stage serves {sorted(served)}, need {sorted(channel_roles)}"
                    )
                channel.request(
                    "configure",
                    self.sc.session,
                    {
                        "seed": self.sc.seed,
                        "codebook_size": self.sc.codebook_size,
                        "text_vocab": self.sc.text_vocab,
                        "grid_ms": self.sc.grid.chunk_ms,
                        "feature_width": self.sc.feature_width,
                        "predictor": self.sc.predictor.to_dict(),
                    },
                )
                self._channels[key] = channel
            self._role_channel[stage.role] = channel

    def close(self) -> None:
        for channel in self._channels.values():
            channel.close()

    def _emit(self, t_ms: int, kind: EventKind, payload: dict) -> None:
        event = TraceEvent(
            t_ms=t_ms,
            seq=self.trace_seq,
            session=self.sc.session,
            kind=kind,
            payload=payload,
        )
        self.trace_seq += 1
        self.trace.append(event)

    def _abort(self, t_ms: int, reason: str) -> None:
        if self.aborted:
            return
        self.aborted = True
        self._emit(t_ms, EventKind.PROTOCOL_ERROR, {"reason": reason})

    def _charge(self, role: StageRole, units: float, extra_ms: float = 0.0) -> int:
        stage = self.stage_by_role[role]
        jitter = 0.0
        if stage.jitter_ms > 0:
            jitter = self._jitter_rng[role].uniform(0.0, stage.jitter_ms)
        return round_half_up(units * stage.per_unit_latency_ms + extra_ms + jitter)

    # -- content -------------------------------------------------------------

    def _fetch_text(self, turn: int, start: int, count: int) -> list[int]:
        channel = self._role_channel.get(StageRole.TEXT_LLM)
        if channel is None:
            return text_token_ids(
                self.sc.seed, self.sc.session, turn, start, count, self.sc.text_vocab
            )
        reply = channel.request(
            "text_batch",
            self.sc.session,
            {"turn": turn, "start": start, "count": count},
        )
        return self._check_tokens(reply.payload, "text_batch", count, self.sc.text_vocab)

    def _fetch_speech(self, turn: int, start: int, count: int) -> list[int]:
        channel = self._role_channel.get(StageRole.VOICE_TOKEN_LM)
        if channel is None:
            return speech_token_ids(
                self.sc.seed, self.sc.session, turn, start, count, self.sc.codebook_size
            )
        reply = channel.request(
            "speech_batch",
            self.sc.session,
            {"turn": turn, "start": start, "count": count},
        )
        return self._check_tokens(
            reply.payload, "speech_batch", count, self.sc.codebook_size
        )

    @staticmethod
    def _check_tokens(payload: dict, what: str, count: int, limit: int) -> list[int]:
        tokens = payload.get("tokens")
        if not isinstance(tokens, list) or len(tokens) != count:
            raise ProtocolOrderError(f"{what} reply must carry exactly {count} tokens")
        out = []
        for t in tokens:
            t = int(t)
            if t < 0 or t >= limit:
                raise ProtocolOrderError(f"{what} token {t} outside [0, {limit})")
            out.append(t)
        return out

    def _notify_speech(self, turn: int, start: int, tokens: list[int]) -> None:
        channel = self._role_channel.get(StageRole.TOKEN2WAV)
        if channel is None:
            return
        reply = channel.request(
            "speech_batch",
            self.sc.session,
            {"turn": turn, "start": start, "tokens": tokens},
        )
        if reply.type != "ack":
            raise ProtocolOrderError(f"expected ack from token2wav, got {reply.type}")

    def _notify_marker(self, turn: int, marker: str) -> None:
        channel = self._role_channel.get(StageRole.VOICE_TOKEN_LM)
        if channel is None:
            return
        reply = channel.request(
            "marker", self.sc.session, {"turn": turn, "marker": marker}
        )
        if reply.type != "ack":
            raise ProtocolOrderError(f"expected ack for marker, got {reply.type}")

    # -- predictor -----------------------------------------------------------

    def _user_speaking_at(self, t_ms: int) -> bool:
        return any(s <= t_ms < e for s, e in self.user_segments_ms)

    def _user_just_stopped(self, t_ms: int) -> bool:
        if self._user_speaking_at(t_ms):
            return False
        lo = t_ms - self.sc.grid.chunk_ms
        return any(lo < e <= t_ms for _, e in self.user_segments_ms)

    def _build_ctx(self, chunk: int, t_ms: int) -> PredictorContext:
        features = feature_floats(
            self.sc.seed, self.sc.session, chunk, self.sc.feature_width
        )
        user_speaking = self._user_speaking_at(t_ms)
        just_stopped = self._user_just_stopped(t_ms)
        idx = self.sc.predictor.energy_index if self.sc.predictor.kind == "threshold" else 0
        u = features[idx]
        if just_stopped:
            features[idx] = 0.8 + 0.2 * u
        elif user_speaking:
            features[idx] = 0.6 + 0.4 * u
        else:
            features[idx] = 0.3 * u
        return PredictorContext(
            feature_vector=tuple(features),
            user_speaking=user_speaking,
            assistant_speaking=self.state.mode is Mode.SPEAK,
            chunk_index=chunk,
            user_just_stopped=just_stopped,
        )

    def _decide(self, ctx: PredictorContext) -> DuplexDecision:
        channel = self._role_channel.get(StageRole.DUPLEX_PREDICTOR)
        if channel is None:
            if self.sc.predictor.kind == "scripted":
                script = [
                    (c, DuplexDecision(k, conf))
                    for c, k, conf in self.sc.predictor.script
                ]
                return scripted_predictor(script, ctx)
            params = ThresholdParams(
                take_turn_threshold=self.sc.predictor.take_turn_threshold,
                halt_threshold=self.sc.predictor.halt_threshold,
                energy_index=self.sc.predictor.energy_index,
            )
            return threshold_predictor(ctx, params)
        reply = channel.request(
            "predict_request",
            self.sc.session,
            {
                "chunk": ctx.chunk_index,
                "user_speaking": ctx.user_speaking,
                "user_just_stopped": ctx.user_just_stopped,
                "assistant_speaking": ctx.assistant_speaking,
                "feature": list(ctx.feature_vector),
            },
        )
        if reply.type != "predict_response":
            raise ProtocolOrderError(f"expected predict_response, got {reply.type}")
        return DuplexDecision(
            DecisionKind(reply.payload["decision"]),
            float(reply.payload.get("confidence", 0.0)),
        )

    # -- event handlers --------------------------------------------------------

    def _tick(self, chunk: int) -> None:
        def fire(t_ms: int) -> None:
            if self.aborted:
                return
            ctx = self._build_ctx(chunk, t_ms)
            if ctx.user_speaking:
                started = not self._user_speaking_at(t_ms - self.sc.grid.chunk_ms)
                count = 0 if started else self.state.chunks_since_user_onset + 1
                self.state = replace(self.state, chunks_since_user_onset=count)
            try:
                decision = self._decide(ctx)
            except ProtocolOrderError as exc:
                self._abort(t_ms, str(exc))
                return
            arrival = t_ms + self._charge(StageRole.DUPLEX_PREDICTOR, 1)
            self.clock.schedule(
                arrival, lambda at: self._apply_decision(at, chunk, ctx, decision)
            )

        self.clock.schedule(chunk * self.sc.grid.chunk_ms, fire)

    def _apply_decision(
        self, t_ms: int, chunk: int, ctx: PredictorContext, decision: DuplexDecision
    ) -> None:
        if self.aborted:
            return
        coerced = is_coerced(self.state, decision)
        actions, self.state = session_tick(self.state, ctx, decision, now_ms=t_ms)
        if decision.kind is not DecisionKind.NO_ACTION or coerced:
            turn: int | None = None
            if not coerced and decision.kind is DecisionKind.TAKE_TURN:
                turn = self.turns_begun
            elif not coerced and decision.kind is DecisionKind.HALT_AND_LISTEN:
                turn = self.active.index if self.active is not None else None
            self._emit(
                t_ms,
                EventKind.PREDICTOR_DECISION,
                {
                    "chunk": chunk,
                    "decision": decision.kind.value,
                    "confidence": decision.confidence,
                    "coerced": coerced,
                    "turn": turn,
                },
            )
        for action in actions:
            if action.kind is ActionKind.BEGIN_RESPONSE:
                self._begin_turn(t_ms)
            elif action.kind is ActionKind.HALT_SPEECH:
                self._halt_turn(t_ms)

    def _begin_turn(self, t0: int) -> None:
        k = self.turns_begun
        self.turns_begun += 1
        plan = self.sc.turns[k] if k < len(self.sc.turns) else self.sc.default_turn
        rec = _ActiveTurn(index=k)
        self.active = rec
        policy = self.sc.policy
        n_sem, n_sp = policy.n_semantic, policy.n_speech

        try:
            self._schedule_turn_pipeline(t0, k, plan, rec, n_sem, n_sp)
        except ProtocolOrderError as exc:
            self._abort(t0, str(exc))

    def _schedule_turn_pipeline(
        self, t0: int, k: int, plan: TurnPlan, rec: _ActiveTurn, n_sem: int, n_sp: int
    ) -> None:
        text_left = plan.text_tokens
        speech_left = plan.speech_tokens
        text_t = t0
        prev_speech_end = t0
        first_audio_t: int | None = None
        text_start = 0
        speech_start = 0

        def sched_text(at: int, start: int, tokens: list[int], index: int) -> None:
            def fire(t: int) -> None:
                if self.aborted or rec.cancelled:
                    return
                self._emit(
                    t,
                    EventKind.TEXT_BATCH_EMITTED,
                    {"turn": k, "index": index, "start": start, "tokens": tokens},
                )

            self.clock.schedule(at, fire)

        def sched_speech(at: int, start: int, tokens: list[int], index: int) -> None:
            def fire(t: int) -> None:
                if self.aborted or rec.cancelled:
                    return
                rec.tokens_emitted += len(tokens)
                self._emit(
                    t,
                    EventKind.SPEECH_BATCH_EMITTED,
                    {"turn": k, "index": index, "start": start, "tokens": tokens},
                )

            self.clock.schedule(at, fire)

        def sched_marker(at: int, marker: str) -> None:
            def fire(t: int) -> None:
                if self.aborted or rec.cancelled:
                    return
                self._emit(t, EventKind.MARKER_EMITTED, {"turn": k, "marker": marker})

            self.clock.schedule(at, fire)
            self._notify_marker(k, marker)

        text_batch_i = 0
        speech_batch_i = 0

        # Full groups: a text batch feeds a speech batch, text generation for
        # the next group proceeds concurrently with speech generation.
        while text_left >= n_sem and speech_left >= n_sp:
            text_t += self._charge(StageRole.TEXT_LLM, n_sem)
            tokens = self._fetch_text(k, text_start, n_sem)
            sched_text(text_t, text_start, tokens, text_batch_i)
            text_start += n_sem
            text_left -= n_sem
            text_batch_i += 1

            gen_start = max(text_t, prev_speech_end)
            sp_end = gen_start + self._charge(StageRole.VOICE_TOKEN_LM, n_sp)
            sp_tokens = self._fetch_speech(k, speech_start, n_sp)
            sched_speech(sp_end, speech_start, sp_tokens, speech_batch_i)
            self._notify_speech(k, speech_start, sp_tokens)
            speech_start += n_sp
            speech_left -= n_sp
            speech_batch_i += 1

            if first_audio_t is None:
                first_audio_t = sp_end + self._charge(StageRole.TOKEN2WAV, n_sp)

            if text_left > 0:
                sched_marker(sp_end, "ConcatNextSemantics")
            prev_speech_end = sp_end

        if text_left > 0:
            extra = self.sc.profile.prefill_ms if text_batch_i == 0 else 0.0
            text_t += self._charge(StageRole.TEXT_LLM, text_left, extra_ms=extra)
            tokens = self._fetch_text(k, text_start, text_left)
            sched_text(text_t, text_start, tokens, text_batch_i)
            text_start += text_left
            text_left = 0
            text_batch_i += 1

        tos_t = max(text_t, prev_speech_end)
        sched_marker(tos_t, "TurnOfSpeech")

        gen_prev = tos_t
        while speech_left > 0:
            b = min(n_sp, speech_left)
            gen_prev += self._charge(StageRole.VOICE_TOKEN_LM, b)
            sp_tokens = self._fetch_speech(k, speech_start, b)
            sched_speech(gen_prev, speech_start, sp_tokens, speech_batch_i)
            self._notify_speech(k, speech_start, sp_tokens)
            speech_start += b
            speech_left -= b
            speech_batch_i += 1
            if first_audio_t is None:
                # Synthesis always runs a full chunk, padded or not.
                first_audio_t = gen_prev + self._charge(StageRole.TOKEN2WAV, n_sp)

        eos_t = max(gen_prev, tos_t)
        sched_marker(eos_t, "EndOfSpeech")

        assert first_audio_t is not None

        def fire_first_audio(t: int) -> None:
            if self.aborted or rec.cancelled:
                return
            self._emit(t, EventKind.FIRST_AUDIO_PACKET, {"turn": k, "decision_t_ms": t0})

        self.clock.schedule(first_audio_t, fire_first_audio)

        playback_end = first_audio_t + plan.speech_tokens * self.sc.audio_ms_per_token

        def fire_finish(t: int) -> None:
            if self.aborted or rec.cancelled:
                return
            if self.active is rec:
                self.active = None
                self.state = finish_speaking(self.state)

        self.clock.schedule(max(playback_end, eos_t), fire_finish)

    def _halt_turn(self, t_ms: int) -> None:
        rec = self.active
        if rec is None:
            return
        rec.cancelled = True
        self.active = None
        self._emit(
            t_ms,
            EventKind.SPEECH_HALTED,
            {
                "turn": rec.index,
                "tokens_emitted": rec.tokens_emitted,
                "chunk": t_ms // self.sc.grid.chunk_ms,
            },
        )

    # -- main loop -------------------------------------------------------------

    def run(self) -> list[TraceEvent]:
        duration_ms = ms_from_seconds(self.sc.timeline.duration_s)
        last_chunk = duration_ms // self.sc.grid.chunk_ms
        if self.sc.predictor.kind == "scripted" and self.sc.predictor.script:
            last_chunk = max(last_chunk, max(c for c, _, _ in self.sc.predictor.script))

        for i, (s_ms, e_ms) in enumerate(self.user_segments_ms):
            def start_fire(t: int, i: int = i) -> None:
                if not self.aborted:
                    self._emit(t, EventKind.USER_SPEECH_START, {"segment": i})

            def end_fire(t: int, i: int = i) -> None:
                if not self.aborted:
                    self._emit(t, EventKind.USER_SPEECH_END, {"segment": i})

            self.clock.schedule(s_ms, start_fire)
            self.clock.schedule(e_ms, end_fire)

        for chunk in range(last_chunk + 1):
            self._tick(chunk)

        self.clock.run()
        return self.trace


def run_simulation(
    scenario: Scenario,
    stages: list[StageDescriptor] | None = None,
    deadline_ms: int = DEFAULT_DEADLINE_MS,
) -> list[TraceEvent]:
    """Run one scenario to completion and return its totally ordered trace."""
    stages = stages if stages is not None else default_stages(scenario.profile)
    sim = _Simulation(scenario, stages, deadline_ms=deadline_ms)
    try:
        return sim.run()
    finally:
        sim.close()
