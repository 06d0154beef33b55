"""Scoring of duplex prediction traces against annotated labels.

Turn-taking is scored with positive-class F1 at an offset window of K
chunks.  The default window is strict-after: a prediction at chunk p
matches an unmatched label at chunk g iff g <= p <= g + K, since a
turn-taking prediction cannot precede its cause.  A symmetric window
(|p - g| <= K) is available for sensitivity analysis.  Greedy
earliest-first matching is provably optimal under this interval
structure; the test suite cross-checks it against an exhaustive matcher.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import (
    ChunkGrid,
    DuplexLabels,
    EventKind,
    LatencyProfile,
    RatioPolicy,
    TraceEvent,
    UndefinedMetricError,
    ValidationError,
    ms_from_seconds,
    round_half_up,
    time_to_chunk,
)
from .interleave import stage_latencies_ms


class Task(str, Enum):
    ASSISTANT_TURN_TAKING = "assistant_turn_taking"
    USER_TURN_TAKING = "user_turn_taking"


@dataclass(frozen=True)
class OnsetPredictions:
    task: Task
    chunk_indices: tuple[int, ...]

    def __post_init__(self) -> None:
        idx = self.chunk_indices
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValidationError("prediction chunks must be sorted and unique")


@dataclass(frozen=True)
class MatchResult:
    f1: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int
    pairs: tuple[tuple[int, int], ...]  # (label_chunk, prediction_chunk)


def _check_sorted(name: str, values) -> None:
    if any(b <= a for a, b in zip(values, values[1:])):
        raise ValidationError(f"{name} must be sorted and unique")


def positive_f1_at_offset_k(
    preds: OnsetPredictions,
    label_onsets: list[int] | tuple[int, ...],
    k: int,
    window: str = "after",
) -> MatchResult:
    """Positive-class F1 with one-to-one greedy earliest-first matching."""
    if k < 0:
        raise ValidationError(f"K must be >= 0, got {k}")
    if window not in ("after", "symmetric"):
        raise ValidationError(f"unknown window mode {window!r}")
    labels = list(label_onsets)
    _check_sorted("label onsets", labels)
    predictions = list(preds.chunk_indices)

    matched = [False] * len(labels)
    pairs: list[tuple[int, int]] = []
    for p in predictions:
        for i, g in enumerate(labels):
            if matched[i]:
                continue
            lo = g if window == "after" else g - k
            if lo <= p <= g + k:
                matched[i] = True
                pairs.append((g, p))
                break
            if g > p + (0 if window == "after" else k):
                break  # labels are sorted; nothing further can match

    tp = len(pairs)
    fp = len(predictions) - tp
    fn = len(labels) - tp
    precision = tp / (tp + fp) if (tp + fp) else 0.0
    recall = tp / (tp + fn) if (tp + fn) else 0.0
    f1 = 2 * precision * recall / (precision + recall) if tp else 0.0
    return MatchResult(f1, precision, recall, tp, fp, fn, tuple(pairs))


def backchannel_accuracy(
    halt_events: list[int] | tuple[int, ...],
    backchannel_intervals: list[tuple[int, int]],
) -> float:
    """Fraction of back-channel intervals the system talked straight through."""
    if not backchannel_intervals:
        raise UndefinedMetricError("no back-channel intervals to score")
    for (a1, b1), (a2, b2) in zip(backchannel_intervals, backchannel_intervals[1:]):
        if a2 <= b1:
            raise ValidationError("back-channel intervals must be disjoint and sorted")
    kept = 0
    for start, end in backchannel_intervals:
        if not any(start <= h <= end for h in halt_events):
            kept += 1
    return kept / len(backchannel_intervals)


# ---------------------------------------------------------------------------
# Trace -> predictions

def onset_predictions_from_trace(
    trace: list[TraceEvent], task: Task
) -> OnsetPredictions:
    """Extract acted-on decision chunks from a trace for one task."""
    wanted = "take_turn" if task is Task.ASSISTANT_TURN_TAKING else "halt_and_listen"
    chunks = sorted(
        {
            ev.payload["chunk"]
            for ev in trace
            if ev.kind is EventKind.PREDICTOR_DECISION
            and ev.payload.get("decision") == wanted
            and not ev.payload.get("coerced", False)
        }
    )
    return OnsetPredictions(task=task, chunk_indices=tuple(chunks))


@dataclass(frozen=True)
class LatencyStats:
    mean_ms: float | None
    p50_ms: float | None
    p90_ms: float | None
    n: int


@dataclass
class EvalReport:
    ks: tuple[int, ...]
    f1: dict[Task, dict[int, MatchResult]] = field(default_factory=dict)
    backchannel: float | None = None
    n_backchannel_intervals: int = 0
    latency: dict[Task, LatencyStats] = field(default_factory=dict)
    warnings: int = 0

    def to_dict(self) -> dict:
        return {
            "ks": list(self.ks),
            "tasks": {
                task.value: {
                    "f1_at_k": {str(k): r.f1 for k, r in per_k.items()},
                    "counts_at_k": {
                        str(k): {"tp": r.tp, "fp": r.fp, "fn": r.fn}
                        for k, r in per_k.items()
                    },
                    "latency_ms": {
                        "mean": self.latency[task].mean_ms,
                        "p50": self.latency[task].p50_ms,
                        "p90": self.latency[task].p90_ms,
                        "n": self.latency[task].n,
                    }
                    if task in self.latency
                    else None,
                }
                for task, per_k in self.f1.items()
            },
            "backchannel": {
                "accuracy": self.backchannel,
                "n_intervals": self.n_backchannel_intervals,
            },
            "warnings": self.warnings,
        }


def _stats(values: list[float]) -> LatencyStats:
    if not values:
        return LatencyStats(None, None, None, 0)
    arr = np.asarray(values, dtype=float)
    return LatencyStats(
        mean_ms=float(arr.mean()),
        p50_ms=float(np.percentile(arr, 50)),
        p90_ms=float(np.percentile(arr, 90)),
        n=len(values),
    )


def response_latency_stats(
    trace: list[TraceEvent],
    labels: DuplexLabels,
    grid: ChunkGrid,
    k: int,
    window: str = "after",
) -> tuple[dict[Task, LatencyStats], int]:
    """Latency from each labeled onset to the system's reaction.

    User turn-taking reacts by halting; assistant turn-taking by the first
    audio packet of the response.  Only true-positive matches under the
    offset-K matching contribute.  Returns (stats per task, warning count).
    """
    warnings = 0
    halt_t_by_turn: dict[int, int] = {}
    first_audio_by_turn: dict[int, int] = {}
    decision_turn_by_chunk: dict[tuple[str, int], int | None] = {}
    for ev in trace:
        if ev.kind is EventKind.SPEECH_HALTED:
            halt_t_by_turn[ev.payload["turn"]] = ev.t_ms
        elif ev.kind is EventKind.FIRST_AUDIO_PACKET:
            first_audio_by_turn[ev.payload["turn"]] = ev.t_ms
        elif ev.kind is EventKind.PREDICTOR_DECISION and not ev.payload.get("coerced"):
            key = (ev.payload["decision"], ev.payload["chunk"])
            decision_turn_by_chunk[key] = ev.payload.get("turn")

    out: dict[Task, LatencyStats] = {}

    assistant_labels_ms = [ms_from_seconds(t) for t in labels.assistant_turn_onsets]
    assistant_label_chunks = [t // grid.chunk_ms for t in assistant_labels_ms]
    preds = onset_predictions_from_trace(trace, Task.ASSISTANT_TURN_TAKING)
    match = positive_f1_at_offset_k(preds, assistant_label_chunks, k, window)
    values: list[float] = []
    for label_chunk, pred_chunk in match.pairs:
        turn = decision_turn_by_chunk.get(("take_turn", pred_chunk))
        t_audio = first_audio_by_turn.get(turn) if turn is not None else None
        if t_audio is None:
            warnings += 1
            continue
        onset_ms = assistant_labels_ms[assistant_label_chunks.index(label_chunk)]
        values.append(t_audio - onset_ms)
    out[Task.ASSISTANT_TURN_TAKING] = _stats(values)

    user_labels_ms = [ms_from_seconds(t) for t in labels.user_turn_onsets]
    user_label_chunks = [t // grid.chunk_ms for t in user_labels_ms]
    preds = onset_predictions_from_trace(trace, Task.USER_TURN_TAKING)
    match = positive_f1_at_offset_k(preds, user_label_chunks, k, window)
    values = []
    for label_chunk, pred_chunk in match.pairs:
        turn = decision_turn_by_chunk.get(("halt_and_listen", pred_chunk))
        halt_t = halt_t_by_turn.get(turn) if turn is not None else None
        if halt_t is None:
            warnings += 1
            continue
        onset_ms = user_labels_ms[user_label_chunks.index(label_chunk)]
        values.append(halt_t - onset_ms)
    out[Task.USER_TURN_TAKING] = _stats(values)

    if not halt_t_by_turn and not first_audio_by_turn:
        warnings += 1

    return out, warnings


def evaluate_trace(
    trace: list[TraceEvent],
    labels: DuplexLabels,
    ks: list[int],
    grid: ChunkGrid | None = None,
    window: str = "after",
) -> EvalReport:
    """Full scoring pass: F1@K per task, back-channel accuracy, latencies."""
    if not ks:
        raise ValidationError("at least one K is required")
    grid = grid or ChunkGrid()
    ks = sorted(set(int(k) for k in ks))
    report = EvalReport(ks=tuple(ks))

    label_chunks = {
        Task.ASSISTANT_TURN_TAKING: sorted(
            time_to_chunk(t, grid) for t in labels.assistant_turn_onsets
        ),
        Task.USER_TURN_TAKING: sorted(
            time_to_chunk(t, grid) for t in labels.user_turn_onsets
        ),
    }
    for task in Task:
        preds = onset_predictions_from_trace(trace, task)
        report.f1[task] = {
            k: positive_f1_at_offset_k(preds, label_chunks[task], k, window) for k in ks
        }

    report.n_backchannel_intervals = len(labels.backchannel_intervals)
    if labels.backchannel_intervals:
        halt_chunks = sorted(
            ev.payload["chunk"]
            for ev in trace
            if ev.kind is EventKind.SPEECH_HALTED
        )
        intervals = [
            (time_to_chunk(a, grid), time_to_chunk(b, grid))
            for a, b in labels.backchannel_intervals
        ]
        report.backchannel = backchannel_accuracy(halt_chunks, intervals)

    stats, warnings = response_latency_stats(trace, labels, grid, max(ks), window)
    report.latency = stats
    report.warnings = warnings
    return report


# ---------------------------------------------------------------------------
# Stage latency decomposition

@dataclass(frozen=True)
class DecompositionRow:
    stage: str
    ms: int


@dataclass(frozen=True)
class DecompositionReport:
    rows: tuple[DecompositionRow, ...]
    total_ms: int
    single_token_first_batch_ms: int  # contrast cell: 1-token first text batch

    def to_dict(self) -> dict:
        return {
            "rows": [{"stage": r.stage, "ms": r.ms} for r in self.rows],
            "total_ms": self.total_ms,
            "single_token_first_batch_ms": self.single_token_first_batch_ms,
        }


def latency_decomposition_report(
    profile: LatencyProfile, policy: RatioPolicy
) -> DecompositionReport:
    """Per-stage first-audio latency table, rounded half-up per stage.

    The speech-to-text row reports a full first text group; the cost of a
    single-token first batch (prefill plus one token) is reported
    separately as a contrast cell, not added to the total.
    """
    stages = stage_latencies_ms(profile, policy)
    rows = (
        DecompositionRow("full_duplex_predictor", stages["duplex_predictor"]),
        DecompositionRow("speech_to_text", stages["speech_to_text"]),
        DecompositionRow("text_to_speech_token", stages["text_to_speech_token"]),
        DecompositionRow("token2wav", stages["token2wav"]),
    )
    total = sum(r.ms for r in rows)
    single = round_half_up(profile.prefill_ms + profile.d_llm)
    return DecompositionReport(rows=rows, total_ms=total, single_token_first_batch_ms=single)


def format_decomposition(report: DecompositionReport, policy: RatioPolicy) -> str:
    labels = {
        "full_duplex_predictor": "full-duplex predictor",
        "speech_to_text": f"speech-to-text ({policy.n_semantic} text tokens)",
        "text_to_speech_token": f"text-to-speech token ({policy.n_speech} tokens)",
        "token2wav": "token2wav (first chunk)",
    }
    lines = []
    width = max(len(v) for v in labels.values())
    for row in report.rows:
        lines.append(f"{labels[row.stage]:<{width}}  {row.ms:>6d} ms")
    lines.append(f"{'total':<{width}}  {report.total_ms:>6d} ms")
    lines.append(
        f"(first batch of 1 text token: {report.single_token_first_batch_ms} ms)"
    )
    return "\n".join(lines)


def format_eval_table(report: EvalReport) -> str:
    """Aligned text table: one row per task, F1 per K, then latency."""
    header = ["task"] + [f"F1@{k}" for k in report.ks] + ["mean ms", "p50 ms", "p90 ms", "n"]
    rows = [header]
    for task in Task:
        per_k = report.f1.get(task, {})
        stats = report.latency.get(task, LatencyStats(None, None, None, 0))
        row = [task.value]
        row += [f"{per_k[k].f1:.4f}" if k in per_k else "-" for k in report.ks]
        for v in (stats.mean_ms, stats.p50_ms, stats.p90_ms):
            row.append("-" if v is None else f"{v:.1f}")
        row.append(str(stats.n))
        rows.append(row)
    if report.backchannel is not None:
        rows.append(
            ["backchannel_accuracy", f"{report.backchannel:.4f}"]
            + [""] * (len(header) - 2)
        )
    widths = [max(len(r[i]) for r in rows if i < len(r)) for i in range(len(header))]
    out = []
    for r in rows:
        out.append("  ".join(f"{c:<{widths[i]}}" for i, c in enumerate(r)).rstrip())
    return "\n".join(out)
