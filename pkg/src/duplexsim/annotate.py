"""Duplex label annotation for two-channel dialogue timelines.

Heuristics:
  * assistant turn onset = the endpoint of the user segment it answers;
  * user turn onset = assistant segment end + a sampled gap
    T ~ Normal(0.6 s, 0.4 s), clamped below;
  * a user segment wholly inside an assistant segment, with the assistant
    demonstrably continuing for at least ``epsilon_s`` afterwards, is a
    back-channel and never a turn onset.

Sampling is pinned for reproducibility: a Mersenne Twister uniform stream
(Python's guaranteed-stable ``random()`` sequence) fed through an explicit
Box-Muller transform, with gap values quantized to the microsecond so
label files stay byte-stable.  The generator id recorded in label metadata
is ``mt19937-boxmuller-q6``.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path

from .core import (
    Channel,
    DialogueTimeline,
    DuplexLabels,
    SpeechSegment,
    ValidationError,
    require_valid_timeline,
)

RNG_ID = "mt19937-boxmuller-q6"
DEFAULT_EPSILON_S = 0.2


@dataclass(frozen=True)
class GapDistribution:
    """Normal turn-gap model with a lower clamp (negative gaps make no sense)."""

    mean_s: float = 0.6
    std_s: float = 0.4
    clamp_min_s: float = 0.0

    def __post_init__(self) -> None:
        if self.std_s < 0:
            raise ValidationError(f"std_s must be >= 0, got {self.std_s}")
        if self.clamp_min_s < 0:
            raise ValidationError(f"clamp_min_s must be >= 0, got {self.clamp_min_s}")


class GapSampler:
    """Seeded sampler for turn gaps; one instance per annotation run."""

    def __init__(self, gaps: GapDistribution, seed: int) -> None:
        self.gaps = gaps
        self._rng = random.Random(seed)

    def raw(self) -> float:
        """One unclamped normal draw (Box-Muller, one uniform pair per draw)."""
        u1 = 1.0 - self._rng.random()  # (0, 1]; keeps log() finite
        u2 = self._rng.random()
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        return self.gaps.mean_s + self.gaps.std_s * z

    def sample(self) -> float:
        """One clamped gap, quantized to the microsecond."""
        value = max(self.gaps.clamp_min_s, self.raw())
        return round(value, 6)


def sample_turn_gap(gaps: GapDistribution, sampler: GapSampler) -> float:
    """Draw the next gap from an existing sampler stream."""
    if sampler.gaps != gaps:
        raise ValidationError("sampler was built for a different distribution")
    return sampler.sample()


# ---------------------------------------------------------------------------
# Back-channels and turn pairing

def detect_backchannels(
    timeline: DialogueTimeline, epsilon_s: float = DEFAULT_EPSILON_S
) -> list[tuple[float, float]]:
    """User segments the assistant talked straight through.

    A user segment counts when it lies fully inside an assistant segment
    and the assistant keeps speaking for at least ``epsilon_s`` beyond the
    user's end.
    """
    if epsilon_s < 0:
        raise ValidationError(f"epsilon_s must be >= 0, got {epsilon_s}")
    require_valid_timeline(timeline)

    assistant = timeline.channel_segments(Channel.ASSISTANT)
    found: list[tuple[float, float]] = []
    for seg in timeline.channel_segments(Channel.USER):
        for host in assistant:
            if (
                host.start_s <= seg.start_s
                and seg.end_s <= host.end_s
                and host.end_s >= seg.end_s + epsilon_s
            ):
                found.append((seg.start_s, seg.end_s))
                break
    found.sort()
    return found


def _is_contained(seg: SpeechSegment, hosts: list[SpeechSegment]) -> bool:
    return any(h.start_s <= seg.start_s and seg.end_s <= h.end_s for h in hosts)


def annotate_timeline(
    timeline: DialogueTimeline,
    gaps: GapDistribution | None = None,
    seed: int = 0,
    epsilon_s: float = DEFAULT_EPSILON_S,
) -> DuplexLabels:
    """Derive turn-taking and back-channel labels from a timeline.

    Turn transitions are read off the segment order: walking segments by
    start time (segments contained in an opposite-channel segment are
    treated as overlap talk, not turns), each user-to-assistant handover
    labels an assistant onset at the user's endpoint, and each
    assistant-to-user handover labels a user onset one sampled gap after
    the assistant's endpoint.  Deterministic for a given seed.
    """
    gaps = gaps or GapDistribution()
    require_valid_timeline(timeline)
    sampler = GapSampler(gaps, seed)

    user_hosts = timeline.channel_segments(Channel.ASSISTANT)
    assistant_hosts = timeline.channel_segments(Channel.USER)
    walk: list[SpeechSegment] = []
    for seg in sorted(timeline.segments, key=lambda s: (s.start_s, s.end_s)):
        hosts = user_hosts if seg.channel is Channel.USER else assistant_hosts
        if not _is_contained(seg, hosts):
            walk.append(seg)

    assistant_onsets: list[float] = []
    user_onsets: list[float] = []
    for prev, cur in zip(walk, walk[1:]):
        if prev.channel is cur.channel:
            continue
        if prev.channel is Channel.USER:
            assistant_onsets.append(prev.end_s)
        else:
            onset = round(prev.end_s + sampler.sample(), 6)
            if onset <= timeline.duration_s:
                user_onsets.append(onset)

    backchannels = detect_backchannels(timeline, epsilon_s)
    return DuplexLabels(
        assistant_turn_onsets=tuple(sorted(assistant_onsets)),
        user_turn_onsets=tuple(sorted(user_onsets)),
        backchannel_intervals=tuple(backchannels),
        meta={
            "seed": seed,
            "rng": RNG_ID,
            "epsilon_s": epsilon_s,
            "gap_mean_s": gaps.mean_s,
            "gap_std_s": gaps.std_s,
            "gap_clamp_min_s": gaps.clamp_min_s,
        },
    )


# ---------------------------------------------------------------------------
# Label file I/O

def labels_to_dict(labels: DuplexLabels) -> dict:
    return {
        "assistant_turn_onsets": list(labels.assistant_turn_onsets),
        "user_turn_onsets": list(labels.user_turn_onsets),
        "backchannel_intervals": [list(iv) for iv in labels.backchannel_intervals],
        "meta": dict(labels.meta),
    }


def labels_from_dict(data: dict) -> DuplexLabels:
    try:
        return DuplexLabels(
            assistant_turn_onsets=tuple(float(x) for x in data["assistant_turn_onsets"]),
            user_turn_onsets=tuple(float(x) for x in data["user_turn_onsets"]),
            backchannel_intervals=tuple(
                (float(a), float(b)) for a, b in data["backchannel_intervals"]
            ),
            meta=dict(data.get("meta", {})),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed labels object: {exc}") from exc


def save_labels(labels: DuplexLabels, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(labels_to_dict(labels), fh, separators=(",", ":"), sort_keys=False)
        fh.write("\n")


def load_labels(path: str | Path) -> DuplexLabels:
    with open(path, "r", encoding="utf-8") as fh:
        return labels_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# ChatML corpus format

SPEECH_OPEN = "<|startofspeech|>"
SPEECH_CLOSE = "<|endofspeech|>"
SYSTEM_PROMPT = "You are a helpful assistant."


@dataclass(frozen=True)
class ChatMlMessage:
    role: str
    content: str


@dataclass(frozen=True)
class ChatMlSample:
    messages: tuple[ChatMlMessage, ...]

    def __post_init__(self) -> None:
        if not self.messages or self.messages[0].role != "system":
            raise ValidationError("first message must have role=system")
        expected = "user"
        for msg in self.messages[1:]:
            if msg.role != expected:
                raise ValidationError(f"roles must alternate user/assistant, got {msg.role}")
            expected = "assistant" if expected == "user" else "user"


def to_chatml(task_instruction: str, wav_path: str, task_output: str) -> ChatMlSample:
    """Build a one-round speech-task sample in the chat message format."""
    if not wav_path:
        raise ValidationError("wav_path must be non-empty")
    return ChatMlSample(
        messages=(
            ChatMlMessage("system", SYSTEM_PROMPT),
            ChatMlMessage(
                "user",
                f"{task_instruction} {SPEECH_OPEN} {wav_path} {SPEECH_CLOSE}",
            ),
            ChatMlMessage("assistant", task_output),
        )
    )


def parse_chatml(sample: ChatMlSample) -> tuple[str, str, str]:
    """Invert to_chatml, recovering (task_instruction, wav_path, task_output)."""
    if len(sample.messages) != 3:
        raise ValidationError(f"expected 3 messages, got {len(sample.messages)}")
    user = sample.messages[1].content
    try:
        before, rest = user.split(f" {SPEECH_OPEN} ", 1)
        wav_path, tail = rest.split(f" {SPEECH_CLOSE}", 1)
    except ValueError as exc:
        raise ValidationError(f"user content lacks a speech span: {user!r}") from exc
    if tail:
        raise ValidationError("unexpected content after the speech span")
    return before, wav_path, sample.messages[2].content


def chatml_to_dict(sample: ChatMlSample) -> dict:
    return {"messages": [{"role": m.role, "content": m.content} for m in sample.messages]}


def chatml_from_dict(data: dict) -> ChatMlSample:
    try:
        return ChatMlSample(
            messages=tuple(
                ChatMlMessage(role=str(m["role"]), content=str(m["content"]))
                for m in data["messages"]
            )
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed chat sample: {exc}") from exc


def save_chatml(sample: ChatMlSample, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(chatml_to_dict(sample), fh, indent=4)
        fh.write("\n")


def load_chatml(path: str | Path) -> ChatMlSample:
    with open(path, "r", encoding="utf-8") as fh:
        return chatml_from_dict(json.load(fh))
