"""Shared fixtures: the closed-loop scenario used across suites.

The closed-loop builder lays out a randomized two-channel timeline on the
chunk grid, annotates it, scripts the oracle predictor from those labels
(take-turn at each assistant onset, halt at each user onset), and sizes
each response plan so the assistant is still speaking at the labeled user
onset.  Simulating and scoring such a case must give perfect F1 at every
offset and back-channel accuracy 1.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

import pytest

from duplexsim.annotate import GapDistribution, annotate_timeline
from duplexsim.core import (
    Channel,
    ChunkGrid,
    DialogueTimeline,
    DuplexLabels,
    LatencyProfile,
    RatioPolicy,
    SpeechSegment,
    time_to_chunk,
)
from duplexsim.duplex import DecisionKind
from duplexsim.stagebus.engine import PredictorConfig, Scenario, TurnPlan


@dataclass
class ClosedLoopCase:
    scenario: Scenario
    labels: DuplexLabels
    timeline: DialogueTimeline


def build_closed_loop_case(seed: int = 11, blocks: int = 3) -> ClosedLoopCase:
    grid = ChunkGrid()
    profile = LatencyProfile()
    policy = RatioPolicy()
    audio_ms = 40
    rng = random.Random(seed)

    def snap(x: float) -> float:
        return round(round(x * 10) / 10, 1)  # keep every boundary on the grid

    segments: list[SpeechSegment] = []
    base = snap(rng.uniform(0.5, 1.5))
    for i in range(blocks):
        user_len = snap(rng.uniform(0.5, 2.0))
        assistant_len = snap(rng.uniform(1.5, 3.0))
        a_start = snap(base + user_len)
        a_end = snap(a_start + assistant_len)
        segments.append(SpeechSegment(Channel.USER, base, a_start))
        segments.append(SpeechSegment(Channel.ASSISTANT, a_start, a_end))
        # one back-channel inside every response, with continued-speech margin
        bc_start = snap(a_start + 0.3)
        bc_end = snap(min(bc_start + rng.uniform(0.2, 0.5), a_end - 0.3))
        if bc_end > bc_start:
            segments.append(SpeechSegment(Channel.USER, bc_start, bc_end))
        # the sampled user-onset gap after a_end must land before the next
        # block's user segment; 4 s of clearance puts that 8 sigma out
        base = snap(a_end + 4.0)

    segments.sort(key=lambda s: (s.start_s, s.end_s))
    timeline = DialogueTimeline(segments=tuple(segments), duration_s=base + 2.0)

    labels = annotate_timeline(timeline, GapDistribution(), seed=seed)
    assert len(labels.assistant_turn_onsets) == blocks
    assert len(labels.user_turn_onsets) == blocks - 1
    assert len(labels.backchannel_intervals) == blocks
    for start, end in labels.backchannel_intervals:
        assert not any(start <= t <= end for t in labels.user_turn_onsets)

    script = [
        (time_to_chunk(t, grid), DecisionKind.TAKE_TURN, 1.0)
        for t in labels.assistant_turn_onsets
    ] + [
        (time_to_chunk(t, grid), DecisionKind.HALT_AND_LISTEN, 1.0)
        for t in labels.user_turn_onsets
    ]
    script.sort()

    plans = []
    for i, onset in enumerate(labels.assistant_turn_onsets):
        if i < len(labels.user_turn_onsets):
            # keep speaking until safely past the halt decision's arrival
            user_onset = labels.user_turn_onsets[i]
            needed = (user_onset + 0.5 - onset - 0.6) * 1000.0 / audio_ms
            tokens = max(30, math.ceil(needed) + 5)
        else:
            tokens = policy.n_speech * rng.randint(2, 5)
        plans.append(
            TurnPlan(text_tokens=policy.n_semantic * rng.randint(1, 4),
                     speech_tokens=tokens)
        )

    scenario = Scenario(
        timeline=timeline,
        turns=tuple(plans),
        predictor=PredictorConfig(kind="scripted", script=tuple(script)),
        profile=profile,
        policy=policy,
        grid=grid,
        seed=seed,
        audio_ms_per_token=audio_ms,
    )
    return ClosedLoopCase(scenario=scenario, labels=labels, timeline=timeline)


@pytest.fixture
def closed_loop_case() -> ClosedLoopCase:
    return build_closed_loop_case()
