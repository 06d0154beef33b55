"""Streaming decode schedule for the voice decoder.

The decoder consumes semantic vectors (text-side payloads) and speech
tokens in a fixed mixing ratio: each full group is ``n_semantic`` semantic
vectors followed by ``n_speech`` speech tokens, with a ConcatNextSemantics
marker after the group's speech whenever more semantics follow.  When the
text side is exhausted, any leftover semantics are emitted, then a single
TurnOfSpeech marker, then all remaining speech tokens, and the sequence
always terminates with EndOfSpeech.

Two equivalent constructions are provided: a batch builder that lays out a
whole turn at once, and an incremental emitter that receives semantics,
a text-complete signal, and speech tokens one piece at a time and produces
the identical element sequence.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .core import (
    ControlMarker,
    InterleavedElement,
    LatencyProfile,
    MarkerKind,
    ProtocolOrderError,
    RatioPolicy,
    SemanticVector,
    ShapeError,
    SpeechToken,
    ValidationError,
    round_half_up,
)

_CNS = ControlMarker(MarkerKind.CONCAT_NEXT_SEMANTICS)
_TOS = ControlMarker(MarkerKind.TURN_OF_SPEECH)
_EOS = ControlMarker(MarkerKind.END_OF_SPEECH)


# ---------------------------------------------------------------------------
# Batch construction

def build_interleaved_sequence(
    semantics: Sequence[SemanticVector],
    speech: Sequence[SpeechToken],
    policy: RatioPolicy,
) -> list[InterleavedElement]:
    """Lay out a whole turn's decode schedule.

    Full groups are formed while at least one full group of semantics AND
    one full group of speech remain; any leftover semantics (fewer than a
    group, or starved of speech) are emitted next, then TurnOfSpeech, then
    the remaining speech, then EndOfSpeech.  Inputs are consumed exactly.
    """
    if len(speech) == 0:
        raise ValidationError("a turn must synthesize at least one speech token")

    n_sem, n_sp = policy.n_semantic, policy.n_speech
    out: list[InterleavedElement] = []
    si = pi = 0

    while len(semantics) - si >= n_sem and len(speech) - pi >= n_sp:
        out.extend(semantics[si : si + n_sem])
        si += n_sem
        out.extend(speech[pi : pi + n_sp])
        pi += n_sp
        if si < len(semantics):
            # Signal only when further semantics actually follow.
            out.append(_CNS)

    out.extend(semantics[si:])
    out.append(_TOS)
    out.extend(speech[pi:])
    out.append(_EOS)
    return out


# ---------------------------------------------------------------------------
# Incremental emitter

class Phase(str, Enum):
    MIXING = "Mixing"
    SPEECH_ONLY = "SpeechOnly"
    DONE = "Done"


@dataclass(frozen=True)
class SemanticBatch:
    vectors: tuple[SemanticVector, ...]

    def __init__(self, vectors: Sequence[SemanticVector]) -> None:
        object.__setattr__(self, "vectors", tuple(vectors))


@dataclass(frozen=True)
class TextDone:
    pass


@dataclass(frozen=True)
class SpeechFeed:
    token: SpeechToken
    final: bool = False


EmitterInput = SemanticBatch | TextDone | SpeechFeed


@dataclass(frozen=True)
class EmitterState:
    """Value-type state of the incremental emitter.

    ``group_open`` is true while a group's semantics have been emitted and
    its speech is still being collected; ``cns_pending`` remembers that a
    full group just closed so the concat marker can be placed before the
    next semantics if any arrive.
    """

    policy: RatioPolicy
    pending_semantics: tuple[SemanticVector, ...] = ()
    text_complete: bool = False
    speech_done: bool = False
    group_open: bool = False
    cns_pending: bool = False
    speech_emitted_in_group: int = 0
    phase: Phase = Phase.MIXING


def new_emitter(policy: RatioPolicy) -> EmitterState:
    return EmitterState(policy=policy)


def emitter_next(
    state: EmitterState, item: EmitterInput
) -> tuple[list[InterleavedElement], EmitterState]:
    """Advance the emitter by one input, returning emissions and new state.

    Pure: the input state is never mutated.  Feeding the same semantics,
    text-complete signal, and speech tokens that the batch builder received
    produces, concatenated, the identical element sequence.
    """
    if state.phase is Phase.DONE:
        raise ProtocolOrderError("emitter already finished this turn")

    out: list[InterleavedElement] = []

    if isinstance(item, SemanticBatch):
        if state.phase is not Phase.MIXING or state.text_complete:
            raise ProtocolOrderError("semantics arrived after text completion")
        state = replace(
            state, pending_semantics=state.pending_semantics + item.vectors
        )
    elif isinstance(item, TextDone):
        if state.phase is not Phase.MIXING:
            raise ProtocolOrderError("text completion signalled twice")
        if state.text_complete:
            raise ProtocolOrderError("text completion signalled twice")
        state = replace(state, text_complete=True)
    elif isinstance(item, SpeechFeed):
        if state.phase is Phase.MIXING:
            if not state.group_open:
                raise ProtocolOrderError("speech token arrived with no open group")
            out.append(item.token)
            state = replace(
                state,
                speech_emitted_in_group=state.speech_emitted_in_group + 1,
                speech_done=state.speech_done or item.final,
            )
        else:  # SPEECH_ONLY
            out.append(item.token)
            if item.final:
                state = replace(state, speech_done=True)
    else:
        raise ProtocolOrderError(f"unknown emitter input {item!r}")

    drained, state = _drain(state)
    out.extend(drained)
    return out, state


def _drain(state: EmitterState) -> tuple[list[InterleavedElement], EmitterState]:
    out: list[InterleavedElement] = []
    n_sem, n_sp = state.policy.n_semantic, state.policy.n_speech

    while True:
        if state.phase is Phase.MIXING:
            if state.group_open:
                if state.speech_emitted_in_group == n_sp:
                    state = replace(
                        state,
                        group_open=False,
                        speech_emitted_in_group=0,
                        cns_pending=True,
                    )
                    continue
                if state.text_complete and state.speech_emitted_in_group == 0:
                    # Text ended before any of this group's speech arrived:
                    # its semantics (and whatever is pending) are trailing,
                    # so the turn marker comes before the remaining speech.
                    out.extend(state.pending_semantics)
                    out.append(_TOS)
                    state = replace(
                        state,
                        group_open=False,
                        pending_semantics=(),
                        phase=Phase.SPEECH_ONLY,
                        cns_pending=False,
                    )
                    continue
                if state.text_complete and state.speech_done:
                    # Speech ran out mid-group: close out the turn.
                    state = replace(state, group_open=False, speech_emitted_in_group=0)
                    out.extend(state.pending_semantics)
                    out.append(_TOS)
                    state = replace(
                        state, pending_semantics=(), phase=Phase.SPEECH_ONLY,
                        cns_pending=False,
                    )
                    continue
                break  # waiting for more speech in this group

            if len(state.pending_semantics) >= n_sem and not state.text_complete:
                if state.cns_pending:
                    out.append(_CNS)
                out.extend(state.pending_semantics[:n_sem])
                state = replace(
                    state,
                    pending_semantics=state.pending_semantics[n_sem:],
                    group_open=True,
                    cns_pending=False,
                )
                continue

            if state.text_complete:
                if state.cns_pending and state.pending_semantics:
                    out.append(_CNS)
                out.extend(state.pending_semantics)
                out.append(_TOS)
                state = replace(
                    state,
                    pending_semantics=(),
                    phase=Phase.SPEECH_ONLY,
                    cns_pending=False,
                )
                continue

            break  # waiting for more semantics or the text-complete signal

        if state.phase is Phase.SPEECH_ONLY:
            if state.speech_done:
                out.append(_EOS)
                state = replace(state, phase=Phase.DONE)
            break

        break  # DONE

    return out, state


def drive_emitter(
    semantics: Sequence[SemanticVector],
    speech: Sequence[SpeechToken],
    policy: RatioPolicy,
) -> list[InterleavedElement]:
    """Feed a whole turn through the emitter in natural streaming order.

    Semantics arrive in full groups while both sides can still fill one,
    speech tokens arrive one at a time, leftovers arrive as a final batch
    followed by the text-complete signal, and the last speech token is
    flagged final.  This is the order the pipeline produces at runtime.
    """
    if len(speech) == 0:
        raise ValidationError("a turn must synthesize at least one speech token")
    n_sem, n_sp = policy.n_semantic, policy.n_speech
    state = new_emitter(policy)
    out: list[InterleavedElement] = []
    si = pi = 0

    def feed(item: EmitterInput) -> None:
        nonlocal state
        emitted, state = emitter_next(state, item)
        out.extend(emitted)

    while len(semantics) - si >= n_sem and len(speech) - pi >= n_sp:
        feed(SemanticBatch(semantics[si : si + n_sem]))
        si += n_sem
        for _ in range(n_sp):
            feed(SpeechFeed(speech[pi], final=pi == len(speech) - 1))
            pi += 1
    if si < len(semantics):
        feed(SemanticBatch(semantics[si:]))
        si = len(semantics)
    feed(TextDone())
    while pi < len(speech):
        feed(SpeechFeed(speech[pi], final=pi == len(speech) - 1))
        pi += 1
    return out


# ---------------------------------------------------------------------------
# Projector input assembly

@dataclass(frozen=True)
class ProjectorInputShape:
    rows: int
    cols: int

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 2 or self.cols % 2 != 0:
            raise ShapeError(f"bad projector input shape {self.rows}x{self.cols}")


def assemble_projector_input(
    user_embeds: np.ndarray,
    user_hidden: np.ndarray,
    text_embeds: np.ndarray,
    text_hidden: np.ndarray,
) -> np.ndarray:
    """Assemble the projector's input block.

    The query rows are the user-side embeddings concatenated with their
    hidden states along the feature axis; the text rows are the sampled
    token embeddings concatenated with their hidden states.  Query rows
    and text rows are then stacked along the sequence axis.  Values are
    copied verbatim; no arithmetic is performed.
    """
    mats = {
        "user_embeds": np.asarray(user_embeds, dtype=float),
        "user_hidden": np.asarray(user_hidden, dtype=float),
        "text_embeds": np.asarray(text_embeds, dtype=float),
        "text_hidden": np.asarray(text_hidden, dtype=float),
    }
    for name, m in mats.items():
        if m.ndim != 2:
            raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")

    ue, uh, te, th = mats.values()
    if ue.shape != uh.shape:
        raise ShapeError(f"user pair shapes differ: {ue.shape} vs {uh.shape}")
    if te.shape != th.shape:
        raise ShapeError(f"text pair shapes differ: {te.shape} vs {th.shape}")
    d = te.shape[1]
    if ue.shape[0] > 0 and ue.shape[1] != d:
        raise ShapeError(f"feature widths differ: user {ue.shape[1]} vs text {d}")
    if te.shape[0] < 1:
        raise ShapeError("at least one text row is required")

    query = np.concatenate([ue.reshape(-1, d), uh.reshape(-1, d)], axis=1)
    text = np.concatenate([te, th], axis=1)
    return np.concatenate([query, text], axis=0)


# ---------------------------------------------------------------------------
# Latency model

def theoretical_latency(profile: LatencyProfile, policy: RatioPolicy) -> float:
    """First-audio latency of the voice decoder alone, in milliseconds:
    one full text group, one full speech group, one synthesis chunk."""
    return (
        policy.n_semantic * profile.d_llm
        + policy.n_speech * profile.d_lm
        + policy.n_speech * profile.d_syn
    )


def experiential_latency(profile: LatencyProfile, policy: RatioPolicy) -> float:
    """End-to-end first-audio latency including the duplex decision delay."""
    return profile.d_pred + theoretical_latency(profile, policy)


def stage_latencies_ms(profile: LatencyProfile, policy: RatioPolicy) -> dict[str, int]:
    """Integer per-stage charges, rounded half-up per stage.

    These are exactly the charges the simulator applies, so a jitter-free
    simulated first-audio latency equals their sum.
    """
    return {
        "duplex_predictor": round_half_up(profile.d_pred),
        "speech_to_text": round_half_up(policy.n_semantic * profile.d_llm),
        "text_to_speech_token": round_half_up(policy.n_speech * profile.d_lm),
        "token2wav": round_half_up(policy.n_speech * profile.d_syn),
    }
