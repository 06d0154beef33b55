"""Figure rendering for reports and traces.

Each function writes one PNG next to the delimited outputs; all figures
use the Agg backend so they work headless.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .core import DuplexLabels, EventKind, TraceEvent  # noqa: E402
from .metrics import DecompositionReport, EvalReport, Task  # noqa: E402

_STAGE_COLORS = {
    "full_duplex_predictor": "#4c72b0",
    "speech_to_text": "#dd8452",
    "text_to_speech_token": "#55a868",
    "token2wav": "#c44e52",
}


def save_decomposition_figure(report: DecompositionReport, path: str | Path) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(7, 2.4))
    left = 0
    for row in report.rows:
        ax.barh(0, row.ms, left=left, color=_STAGE_COLORS.get(row.stage, "#777777"),
                edgecolor="white", label=f"{row.stage} ({row.ms} ms)")
        left += row.ms
    ax.set_xlim(0, max(left, 1))
    ax.set_yticks([])
    ax.set_xlabel("milliseconds")
    ax.set_title(f"first-audio latency decomposition, total {report.total_ms} ms")
    ax.legend(loc="upper center", bbox_to_anchor=(0.5, -0.35), ncol=2, fontsize=8,
              frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_f1_figure(report: EvalReport, path: str | Path) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for task in Task:
        per_k = report.f1.get(task)
        if not per_k:
            continue
        ks = sorted(per_k)
        ax.plot(ks, [per_k[k].f1 for k in ks], marker="o", label=task.value)
    ax.set_xlabel("offset K (chunks)")
    ax.set_ylabel("positive F1")
    ax.set_ylim(-0.05, 1.05)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    ax.set_title("turn-taking F1 at offset K")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_trace_figure(
    trace: list[TraceEvent], path: str | Path, labels: DuplexLabels | None = None
) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(9, 3.2))

    user_spans = []
    start = None
    for ev in trace:
        if ev.kind is EventKind.USER_SPEECH_START:
            start = ev.t_ms
        elif ev.kind is EventKind.USER_SPEECH_END and start is not None:
            user_spans.append((start / 1000.0, (ev.t_ms - start) / 1000.0))
            start = None
    if user_spans:
        ax.broken_barh(user_spans, (1.1, 0.8), facecolors="#4c72b0", label="user speech")

    first_audio = [ev for ev in trace if ev.kind is EventKind.FIRST_AUDIO_PACKET]
    halts = [ev for ev in trace if ev.kind is EventKind.SPEECH_HALTED]
    decisions = [ev for ev in trace if ev.kind is EventKind.PREDICTOR_DECISION]

    # Assistant speaking span: first audio until halt (or last trace event).
    t_end = trace[-1].t_ms if trace else 0
    halt_times = sorted(ev.t_ms for ev in halts)
    spans = []
    for ev in first_audio:
        stop = next((h for h in halt_times if h >= ev.t_ms), t_end)
        spans.append((ev.t_ms / 1000.0, max(stop - ev.t_ms, 1) / 1000.0))
    if spans:
        ax.broken_barh(spans, (0.1, 0.8), facecolors="#55a868", label="assistant audio")

    for ev in decisions:
        color = "#dd8452" if ev.payload.get("decision") == "take_turn" else "#c44e52"
        ax.axvline(ev.t_ms / 1000.0, color=color, alpha=0.5, linewidth=1)
    for ev in halts:
        ax.plot(ev.t_ms / 1000.0, 0.5, "x", color="#c44e52", markersize=8)

    if labels is not None:
        for t in labels.assistant_turn_onsets:
            ax.plot(t, 2.1, "v", color="#4c72b0", markersize=6)
        for t in labels.user_turn_onsets:
            ax.plot(t, 2.1, "^", color="#c44e52", markersize=6)

    ax.set_yticks([0.5, 1.5])
    ax.set_yticklabels(["assistant", "user"])
    ax.set_xlabel("seconds")
    ax.set_title("session trace")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
