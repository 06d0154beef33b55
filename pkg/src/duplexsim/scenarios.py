"""Seeded benchmark scenario generation.

Produces grid-aligned scenarios: each turn is a user utterance whose
endpoint triggers a scripted take-turn decision, an assistant response
plan sized at random, and (sometimes) a later scripted barge-in halt while
the response is still playing.  All segment boundaries land on the chunk
grid so latency arithmetic stays exact.
"""

from __future__ import annotations

import random

from .core import (
    Channel,
    ChunkGrid,
    DialogueTimeline,
    LatencyProfile,
    RatioPolicy,
    SpeechSegment,
    round_half_up,
)
from .duplex import DecisionKind
from .interleave import experiential_latency
from .stagebus.engine import PredictorConfig, Scenario, TurnPlan


def generate_scenario(
    seed: int,
    turns: int = 4,
    predictor: str = "scripted",
    profile: LatencyProfile | None = None,
    policy: RatioPolicy | None = None,
    grid: ChunkGrid | None = None,
    audio_ms_per_token: int = 40,
    barge_in_rate: float = 0.4,
    session: str = "s0",
) -> Scenario:
    profile = profile or LatencyProfile()
    policy = policy or RatioPolicy()
    grid = grid or ChunkGrid()
    rng = random.Random(seed)
    step = grid.chunk_ms  # all times in ms, multiples of the chunk

    latency_ms = round_half_up(experiential_latency(profile, policy))
    segments: list[SpeechSegment] = []
    plans: list[TurnPlan] = []
    script: list[tuple[int, DecisionKind, float]] = []

    base = step * rng.randint(2, 5)
    for _ in range(turns):
        user_len = step * rng.randint(5, 20)
        onset = base + user_len
        segments.append(SpeechSegment(Channel.USER, base / 1000.0, onset / 1000.0))

        plan = TurnPlan(
            text_tokens=policy.n_semantic * rng.randint(1, 5),
            speech_tokens=policy.n_speech * rng.randint(1, 5),
        )
        plans.append(plan)
        script.append((onset // step, DecisionKind.TAKE_TURN, 1.0))

        first_audio = onset + latency_ms
        playback_end = first_audio + plan.speech_tokens * audio_ms_per_token

        if rng.random() < barge_in_rate and playback_end - first_audio > 4 * step:
            # Halt somewhere strictly inside the playback window.
            halt_tick_lo = (first_audio // step) + 1
            halt_tick_hi = max(halt_tick_lo, (playback_end - 2 * step) // step)
            halt_tick = rng.randint(halt_tick_lo, halt_tick_hi)
            # The barge-in decision must still be pending when it lands.
            if halt_tick * step + round_half_up(profile.d_pred) < playback_end:
                script.append((halt_tick, DecisionKind.HALT_AND_LISTEN, 1.0))
                barge_start = halt_tick * step
                barge_end = barge_start + step * rng.randint(3, 8)
                segments.append(
                    SpeechSegment(Channel.USER, barge_start / 1000.0, barge_end / 1000.0)
                )
                playback_end = max(playback_end, barge_end)

        base = playback_end + step * rng.randint(5, 12)

    segments.sort(key=lambda s: (s.start_s, s.end_s))
    duration_s = (base + 10 * step) / 1000.0
    timeline = DialogueTimeline(segments=tuple(segments), duration_s=duration_s)

    if predictor == "scripted":
        predictor_cfg = PredictorConfig(kind="scripted", script=tuple(sorted(script)))
    else:
        predictor_cfg = PredictorConfig(kind="threshold")

    return Scenario(
        timeline=timeline,
        turns=tuple(plans),
        predictor=predictor_cfg,
        profile=profile,
        policy=policy,
        grid=grid,
        seed=seed,
        session=session,
        audio_ms_per_token=audio_ms_per_token,
    )
