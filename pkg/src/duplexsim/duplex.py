"""Full-duplex session control.

A session is either LISTENing or SPEAKing.  Once per chunk a predictor
looks at the current context and proposes a decision; ``session_tick``
applies it.  Taking the turn is only meaningful while listening, halting
only while speaking; mismatched decisions are coerced to no-ops (and the
caller records them) because a live predictor must never crash a session.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

from .core import ConfigurationError, ValidationError


class Mode(str, Enum):
    LISTEN = "listen"
    SPEAK = "speak"


class DecisionKind(str, Enum):
    NO_ACTION = "no_action"
    TAKE_TURN = "take_turn"
    HALT_AND_LISTEN = "halt_and_listen"


class ActionKind(str, Enum):
    BEGIN_RESPONSE = "begin_response"
    HALT_SPEECH = "halt_speech"
    EMIT_CONTINUE = "emit_continue"


@dataclass(frozen=True)
class DuplexDecision:
    kind: DecisionKind
    confidence: float = 1.0

    def __post_init__(self) -> None:
        if not (0.0 <= self.confidence <= 1.0):
            raise ValidationError(f"confidence must be in [0,1], got {self.confidence}")


NO_ACTION = DuplexDecision(DecisionKind.NO_ACTION, 0.0)


@dataclass(frozen=True)
class SessionState:
    mode: Mode = Mode.LISTEN
    speaking_since_ms: int | None = None
    chunks_since_user_onset: int = 0
    pending_halt: bool = False

    def __post_init__(self) -> None:
        if (self.speaking_since_ms is not None) != (self.mode is Mode.SPEAK):
            raise ValidationError("speaking_since_ms must be set exactly when speaking")


@dataclass(frozen=True)
class PredictorContext:
    """Per-chunk observation handed to the predictor.

    ``feature_vector`` stands in for model hidden embeddings;
    ``user_just_stopped`` is true on the first chunk after a user segment
    ended, which is the moment a turn-taking decision becomes possible.
    """

    feature_vector: tuple[float, ...]
    user_speaking: bool
    assistant_speaking: bool
    chunk_index: int
    user_just_stopped: bool = False


@dataclass(frozen=True)
class SessionAction:
    kind: ActionKind
    at_chunk: int


def session_tick(
    state: SessionState,
    ctx: PredictorContext,
    decision: DuplexDecision,
    now_ms: int = 0,
) -> tuple[list[SessionAction], SessionState]:
    """Apply one decision to the session, in the tick it arrives.

    LISTEN + take_turn begins a response immediately; SPEAK +
    halt_and_listen halts immediately.  Anything else leaves the mode
    unchanged and emits no action.  Deterministic in its inputs.
    """
    if decision.kind is DecisionKind.TAKE_TURN and state.mode is Mode.LISTEN:
        new_state = replace(
            state, mode=Mode.SPEAK, speaking_since_ms=now_ms, pending_halt=False
        )
        return [SessionAction(ActionKind.BEGIN_RESPONSE, ctx.chunk_index)], new_state

    if decision.kind is DecisionKind.HALT_AND_LISTEN and state.mode is Mode.SPEAK:
        new_state = replace(
            state, mode=Mode.LISTEN, speaking_since_ms=None, pending_halt=False
        )
        return [SessionAction(ActionKind.HALT_SPEECH, ctx.chunk_index)], new_state

    return [], state


def is_coerced(state: SessionState, decision: DuplexDecision) -> bool:
    """True when a non-trivial decision is invalid for the current mode."""
    if decision.kind is DecisionKind.TAKE_TURN:
        return state.mode is not Mode.LISTEN
    if decision.kind is DecisionKind.HALT_AND_LISTEN:
        return state.mode is not Mode.SPEAK
    return False


def finish_speaking(state: SessionState) -> SessionState:
    """Return to LISTEN when a response finishes playing out naturally."""
    if state.mode is not Mode.SPEAK:
        return state
    return replace(state, mode=Mode.LISTEN, speaking_since_ms=None, pending_halt=False)


# ---------------------------------------------------------------------------
# Predictors

def scripted_predictor(
    script: Sequence[tuple[int, DuplexDecision]], ctx: PredictorContext
) -> DuplexDecision:
    """Deterministic oracle: the scripted decision at this chunk, else no-op."""
    chunks = [c for c, _ in script]
    if len(set(chunks)) != len(chunks):
        raise ConfigurationError("predictor script has duplicate chunk indices")
    if any(b < a for a, b in zip(chunks, chunks[1:])):
        raise ConfigurationError("predictor script must be sorted by chunk index")
    for chunk, decision in script:
        if chunk == ctx.chunk_index:
            return decision
    return NO_ACTION


@dataclass(frozen=True)
class ThresholdParams:
    take_turn_threshold: float = 0.75
    halt_threshold: float = 0.55
    energy_index: int = 0


def threshold_predictor(ctx: PredictorContext, params: ThresholdParams) -> DuplexDecision:
    """Energy-threshold stand-in for a trained duplex classifier.

    While the assistant is silent, take the turn when the user has just
    stopped and the energy feature clears the take-turn threshold; while
    it is speaking, halt when the user is talking over it loudly enough.
    """
    if params.energy_index >= len(ctx.feature_vector) or params.energy_index < 0:
        raise ConfigurationError(
            f"energy_index {params.energy_index} out of range for "
            f"feature width {len(ctx.feature_vector)}"
        )
    energy = ctx.feature_vector[params.energy_index]
    confidence = min(1.0, max(0.0, energy))

    if not ctx.assistant_speaking:
        if (
            not ctx.user_speaking
            and ctx.user_just_stopped
            and energy >= params.take_turn_threshold
        ):
            return DuplexDecision(DecisionKind.TAKE_TURN, confidence)
        return NO_ACTION

    if ctx.user_speaking and energy >= params.halt_threshold:
        return DuplexDecision(DecisionKind.HALT_AND_LISTEN, confidence)
    return NO_ACTION
