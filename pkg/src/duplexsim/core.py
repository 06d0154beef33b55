"""Shared domain types, time arithmetic, and validation.

All engine-internal time is integer milliseconds of virtual time; corpus
files carry seconds as decimals.  Conversions quantize to the millisecond
with round-half-up so every downstream computation is exact integer
arithmetic.  Every type in this module is an immutable value and can be
shared freely between threads or processes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Union


# ---------------------------------------------------------------------------
# Errors

class DuplexError(Exception):
    """Base class for all engine errors."""


class ValidationError(DuplexError):
    """Input data or parameters violate a documented invariant."""


class ShapeError(ValidationError):
    """Matrix dimensions do not line up."""


class ConfigurationError(DuplexError):
    """Bad configuration: duplicate script entries, out-of-range indices."""


class EncodingError(DuplexError):
    """A wire message cannot be encoded or decoded."""


class ProtocolOrderError(DuplexError):
    """Inputs or messages arrived in an order the protocol forbids."""


class StageTimeoutError(DuplexError):
    """An external stage did not answer within its deadline."""


class UndefinedMetricError(DuplexError):
    """A metric was requested over an empty denominator."""


# ---------------------------------------------------------------------------
# Time arithmetic

def round_half_up(x: float) -> int:
    """Round to the nearest integer, ties toward +infinity."""
    return int(math.floor(x + 0.5))


def ms_from_seconds(t_s: float) -> int:
    """Quantize decimal seconds to integer virtual-time milliseconds."""
    return round_half_up(t_s * 1000.0)


@dataclass(frozen=True)
class ChunkGrid:
    """Fixed time slice at which duplex decisions are evaluated."""

    chunk_ms: int = 100

    def __post_init__(self) -> None:
        if self.chunk_ms < 1:
            raise ValidationError(f"chunk_ms must be >= 1, got {self.chunk_ms}")


def time_to_chunk(t_s: float, grid: ChunkGrid) -> int:
    """Map a time in seconds onto its chunk index.

    Times are quantized to the millisecond first, then floor-divided, so
    boundary times land deterministically regardless of float noise
    (e.g. 0.7 s on a 100 ms grid is chunk 7, never 6).
    """
    if t_s < 0:
        raise ValidationError(f"time must be >= 0, got {t_s}")
    return ms_from_seconds(t_s) // grid.chunk_ms


# ---------------------------------------------------------------------------
# Token-level types

class MarkerKind(str, Enum):
    CONCAT_NEXT_SEMANTICS = "ConcatNextSemantics"
    TURN_OF_SPEECH = "TurnOfSpeech"
    END_OF_SPEECH = "EndOfSpeech"


@dataclass(frozen=True)
class ControlMarker:
    kind: MarkerKind


@dataclass(frozen=True)
class SpeechToken:
    """Discrete acoustic codebook id."""

    id: int

    def __post_init__(self) -> None:
        if not isinstance(self.id, int) or isinstance(self.id, bool):
            raise ValidationError(f"speech token id must be an int, got {self.id!r}")
        if self.id < 0:
            raise ValidationError(f"speech token id must be >= 0, got {self.id}")


def check_token_in_codebook(token: SpeechToken, codebook_size: int) -> None:
    if codebook_size < 2:
        raise ValidationError(f"codebook size must be >= 2, got {codebook_size}")
    if token.id >= codebook_size:
        raise ValidationError(
            f"token id {token.id} outside codebook of size {codebook_size}"
        )


@dataclass(frozen=True)
class SemanticVector:
    """Fused text-and-hidden-state payload, width 2*D for hidden width D."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.values) == 0 or len(self.values) % 2 != 0:
            raise ValidationError(
                f"semantic vector width must be even and > 0, got {len(self.values)}"
            )
        for v in self.values:
            if not math.isfinite(v):
                raise ValidationError("semantic vector values must be finite")

    @property
    def width(self) -> int:
        return len(self.values)


# One slot of the decode schedule: a semantic vector, a speech token, or a
# control marker.
InterleavedElement = Union[SemanticVector, SpeechToken, ControlMarker]


@dataclass(frozen=True)
class RatioPolicy:
    """Mixing ratio of the decode schedule: semantics per group, speech per group."""

    n_semantic: int = 5
    n_speech: int = 15

    def __post_init__(self) -> None:
        if self.n_semantic < 1 or self.n_speech < 1:
            raise ValidationError(
                f"ratio counts must be >= 1, got {self.n_semantic}:{self.n_speech}"
            )


@dataclass(frozen=True)
class LatencyProfile:
    """Per-stage timing parameters, all in milliseconds.

    d_llm is per text token, d_lm per generated speech token, d_syn per
    speech token in waveform synthesis, d_pred per duplex decision.
    prefill_ms is a fixed extra charge applied only when a turn's first
    text batch is shorter than a full group.
    """

    d_llm: float = 30.0
    d_lm: float = 14.0 / 3.0
    d_syn: float = 26.0 / 3.0
    d_pred: float = 250.0
    prefill_ms: float = 65.0

    def __post_init__(self) -> None:
        for name in ("d_llm", "d_lm", "d_syn", "d_pred", "prefill_ms"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValidationError(f"{name} must be finite and >= 0, got {v}")

    def to_dict(self) -> dict:
        return {
            "d_llm": self.d_llm,
            "d_lm": self.d_lm,
            "d_syn": self.d_syn,
            "d_pred": self.d_pred,
            "prefill_ms": self.prefill_ms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LatencyProfile":
        base = cls()
        return cls(
            d_llm=float(d.get("d_llm", base.d_llm)),
            d_lm=float(d.get("d_lm", base.d_lm)),
            d_syn=float(d.get("d_syn", base.d_syn)),
            d_pred=float(d.get("d_pred", base.d_pred)),
            prefill_ms=float(d.get("prefill_ms", base.prefill_ms)),
        )


# ---------------------------------------------------------------------------
# Timelines

class Channel(str, Enum):
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class SpeechSegment:
    """One contiguous stretch of speech on one channel, in seconds.

    Invalid geometry (start >= end, negative times) is representable so
    that validate_timeline can report it instead of crashing.
    """

    channel: Channel
    start_s: float
    end_s: float


@dataclass(frozen=True)
class DialogueTimeline:
    segments: tuple[SpeechSegment, ...]
    duration_s: float

    def channel_segments(self, channel: Channel) -> list[SpeechSegment]:
        return [s for s in self.segments if s.channel == channel]


@dataclass(frozen=True)
class Violation:
    """One broken timeline invariant, naming the offending segment indices."""

    code: str
    segments: tuple[int, ...]
    detail: str


def validate_timeline(timeline: DialogueTimeline) -> list[Violation]:
    """Check every timeline invariant; an empty result means downstream
    operations (annotation, simulation) are safe to run."""
    violations: list[Violation] = []
    segs = timeline.segments

    if not math.isfinite(timeline.duration_s) or timeline.duration_s < 0:
        violations.append(Violation("bad_duration", (), f"duration_s={timeline.duration_s}"))

    for i, seg in enumerate(segs):
        if not (math.isfinite(seg.start_s) and math.isfinite(seg.end_s)):
            violations.append(Violation("nonfinite", (i,), "segment bounds must be finite"))
            continue
        if seg.start_s < 0:
            violations.append(Violation("negative_start", (i,), f"start_s={seg.start_s}"))
        if seg.start_s >= seg.end_s:
            violations.append(
                Violation("degenerate", (i,), f"start_s={seg.start_s} >= end_s={seg.end_s}")
            )
        if math.isfinite(timeline.duration_s) and seg.end_s > timeline.duration_s:
            violations.append(
                Violation("beyond_duration", (i,), f"end_s={seg.end_s} > {timeline.duration_s}")
            )

    for i in range(1, len(segs)):
        if segs[i].start_s < segs[i - 1].start_s:
            violations.append(
                Violation("unsorted", (i - 1, i), "segments must be sorted by start_s")
            )

    for channel in Channel:
        indexed = [(i, s) for i, s in enumerate(segs) if s.channel == channel]
        indexed.sort(key=lambda pair: (pair[1].start_s, pair[1].end_s))
        for (i, a), (j, b) in zip(indexed, indexed[1:]):
            if b.start_s < a.end_s:
                violations.append(
                    Violation("overlap", (i, j), f"same-channel overlap on {channel.value}")
                )

    return violations


def require_valid_timeline(timeline: DialogueTimeline) -> None:
    violations = validate_timeline(timeline)
    if violations:
        summary = "; ".join(f"{v.code}{list(v.segments)}" for v in violations)
        raise ValidationError(f"invalid timeline: {summary}")


def timeline_to_dict(timeline: DialogueTimeline) -> dict:
    return {
        "duration_s": timeline.duration_s,
        "segments": [
            {"channel": s.channel.value, "start_s": s.start_s, "end_s": s.end_s}
            for s in timeline.segments
        ],
    }


def timeline_from_dict(data: dict) -> DialogueTimeline:
    try:
        segments = tuple(
            SpeechSegment(
                channel=Channel(seg["channel"]),
                start_s=float(seg["start_s"]),
                end_s=float(seg["end_s"]),
            )
            for seg in data["segments"]
        )
        duration = float(data["duration_s"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed timeline object: {exc}") from exc
    return DialogueTimeline(segments=segments, duration_s=duration)


def load_timeline(path: str | Path) -> DialogueTimeline:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    timeline = timeline_from_dict(data)
    require_valid_timeline(timeline)
    return timeline


def save_timeline(timeline: DialogueTimeline, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(timeline_to_dict(timeline), fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Duplex labels

@dataclass(frozen=True)
class DuplexLabels:
    """Turn-taking and back-channel annotations derived from a timeline."""

    assistant_turn_onsets: tuple[float, ...]
    user_turn_onsets: tuple[float, ...]
    backchannel_intervals: tuple[tuple[float, float], ...]
    meta: dict = field(default_factory=dict, compare=False)


# ---------------------------------------------------------------------------
# Trace events

class EventKind(str, Enum):
    USER_SPEECH_START = "UserSpeechStart"
    USER_SPEECH_END = "UserSpeechEnd"
    PREDICTOR_DECISION = "PredictorDecision"
    TEXT_BATCH_EMITTED = "TextBatchEmitted"
    SPEECH_BATCH_EMITTED = "SpeechBatchEmitted"
    FIRST_AUDIO_PACKET = "FirstAudioPacket"
    SPEECH_HALTED = "SpeechHalted"
    MARKER_EMITTED = "MarkerEmitted"
    PROTOCOL_ERROR = "ProtocolError"


@dataclass(frozen=True)
class TraceEvent:
    """One timestamped simulation record; ordered by (t_ms, seq)."""

    t_ms: int
    seq: int
    session: str
    kind: EventKind
    payload: dict

    def to_line(self) -> str:
        # Canonical field order so trace files are byte-reproducible.
        obj = {
            "t_ms": self.t_ms,
            "seq": self.seq,
            "session": self.session,
            "kind": self.kind.value,
            "payload": self.payload,
        }
        return json.dumps(obj, separators=(",", ":"))


def parse_trace_line(line: str) -> TraceEvent:
    try:
        obj = json.loads(line)
        return TraceEvent(
            t_ms=int(obj["t_ms"]),
            seq=int(obj["seq"]),
            session=str(obj["session"]),
            kind=EventKind(obj["kind"]),
            payload=dict(obj["payload"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed trace line: {exc}") from exc


def write_trace(events: Iterable[TraceEvent], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ev in events:
            fh.write(ev.to_line())
            fh.write("\n")


def read_trace(path: str | Path) -> list[TraceEvent]:
    events = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                events.append(parse_trace_line(line))
    return events
