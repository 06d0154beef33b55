"""Wall-clock interactive session driver.

A person injects user-speech boundaries from the terminal and watches the
engine's duplex decisions and synthesis milestones in real time.  Text
protocol on stdin, one command per line:

    start   user starts speaking
    stop    user stops speaking
    quit    leave the session

Decisions come from the threshold predictor over synthetic features, so a
"stop" after some speech triggers a response and a "start" during
playback triggers a halt, with the configured latency profile applied on
the wall clock.
"""

from __future__ import annotations

import select
import sys
import time

from .core import ChunkGrid, LatencyProfile, RatioPolicy, round_half_up
from .duplex import (
    ActionKind,
    Mode,
    PredictorContext,
    SessionState,
    ThresholdParams,
    finish_speaking,
    session_tick,
    threshold_predictor,
)
from .interleave import theoretical_latency
from .stagebus.wire import feature_floats


def _say(t0: float, text: str) -> None:
    print(f"[{time.monotonic() - t0:7.2f}s] {text}", flush=True)


def run_interactive(
    profile: LatencyProfile,
    policy: RatioPolicy,
    grid: ChunkGrid,
    audio_ms_per_token: int = 40,
    speech_tokens_per_turn: int = 45,
) -> None:
    t0 = time.monotonic()
    state = SessionState()
    params = ThresholdParams()
    user_speaking = False
    spoke_recently = False
    chunk = 0
    pending: list[tuple[float, str]] = []  # (due time, event name)

    _say(t0, "interactive session; commands: start | stop | quit")
    decision_delay = round_half_up(profile.d_pred) / 1000.0
    first_audio_delay = round_half_up(theoretical_latency(profile, policy)) / 1000.0

    while True:
        now = time.monotonic()
        due = [e for e in pending if e[0] <= now]
        pending = [e for e in pending if e[0] > now]
        for _, name in due:
            if name == "begin":
                pending.append((now + first_audio_delay, "first_audio"))
                _say(t0, f"response pipeline started (first audio in {first_audio_delay:.2f}s)")
            elif name == "first_audio" and state.mode is Mode.SPEAK:
                playback = speech_tokens_per_turn * audio_ms_per_token / 1000.0
                pending.append((now + playback, "finish"))
                _say(t0, f"first audio packet ({playback:.2f}s of audio queued)")
            elif name == "finish" and state.mode is Mode.SPEAK:
                state = finish_speaking(state)
                _say(t0, "response finished, listening")

        timeout = grid.chunk_ms / 1000.0
        ready, _, _ = select.select([sys.stdin], [], [], timeout)
        if ready:
            line = sys.stdin.readline()
            if not line:
                return
            cmd = line.strip().lower()
            if cmd == "start":
                user_speaking = True
                spoke_recently = True
                _say(t0, "user speaking")
            elif cmd == "stop":
                user_speaking = False
                _say(t0, "user stopped")
            elif cmd == "quit":
                return
            elif cmd:
                _say(t0, f"unknown command {cmd!r}")

        chunk += 1
        just_stopped = spoke_recently and not user_speaking
        features = feature_floats(0, "live", chunk, 8)
        u = features[params.energy_index]
        if just_stopped:
            features[params.energy_index] = 0.8 + 0.2 * u
        elif user_speaking:
            features[params.energy_index] = 0.6 + 0.4 * u
        else:
            features[params.energy_index] = 0.3 * u
        ctx = PredictorContext(
            feature_vector=tuple(features),
            user_speaking=user_speaking,
            assistant_speaking=state.mode is Mode.SPEAK,
            chunk_index=chunk,
            user_just_stopped=just_stopped,
        )
        decision = threshold_predictor(ctx, params)
        actions, state = session_tick(state, ctx, decision, now_ms=int(1000 * (time.monotonic() - t0)))
        if just_stopped:
            spoke_recently = False
        for action in actions:
            if action.kind is ActionKind.BEGIN_RESPONSE:
                _say(t0, f"decision: take turn (applies after {decision_delay:.2f}s)")
                pending.append((time.monotonic() + decision_delay, "begin"))
            elif action.kind is ActionKind.HALT_SPEECH:
                _say(t0, "decision: halt and listen")
                pending = [e for e in pending if e[1] not in ("first_audio", "finish")]
