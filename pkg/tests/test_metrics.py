import random

import pytest

from duplexsim.core import (
    ChunkGrid,
    DuplexLabels,
    EventKind,
    LatencyProfile,
    RatioPolicy,
    TraceEvent,
    UndefinedMetricError,
    ValidationError,
)
from duplexsim.metrics import (
    OnsetPredictions,
    Task,
    backchannel_accuracy,
    evaluate_trace,
    format_decomposition,
    format_eval_table,
    latency_decomposition_report,
    onset_predictions_from_trace,
    positive_f1_at_offset_k,
    response_latency_stats,
)
from duplexsim.stagebus.engine import run_simulation


def preds(task, chunks):
    return OnsetPredictions(task=task, chunk_indices=tuple(chunks))


A = Task.ASSISTANT_TURN_TAKING


def optimal_matching_size(labels, predictions, k, window="after"):
    """Exhaustive oracle: maximum one-to-one matching via bitmask DP."""

    def compatible(g, p):
        lo = g if window == "after" else g - k
        return lo <= p <= g + k

    n = len(labels)
    best = {}

    def go(i, used):
        if i == len(predictions):
            return 0
        key = (i, used)
        if key in best:
            return best[key]
        score = go(i + 1, used)  # leave prediction i unmatched
        for j in range(n):
            if not used & (1 << j) and compatible(labels[j], predictions[i]):
                score = max(score, 1 + go(i + 1, used | (1 << j)))
        best[key] = score
        return score

    return go(0, 0)


class TestPositiveF1:
    def test_perfect_prediction(self):
        for k in (0, 1, 5, 10):
            r = positive_f1_at_offset_k(preds(A, [3, 9, 20]), [3, 9, 20], k)
            assert r.f1 == 1.0
            assert (r.tp, r.fp, r.fn) == (3, 0, 0)

    def test_mixed_case_counts(self):
        # one hit inside the window, one stray prediction, one missed label
        r = positive_f1_at_offset_k(preds(A, [11, 70]), [10, 50], 5)
        assert (r.tp, r.fp, r.fn) == (1, 1, 1)
        assert r.f1 == pytest.approx(0.5)
        assert optimal_matching_size([10, 50], [11, 70], 5) == 1

    def test_early_prediction_misses_under_strict_after(self):
        r = positive_f1_at_offset_k(preds(A, [9]), [10], 5)
        assert r.tp == 0
        assert r.f1 == 0.0
        assert optimal_matching_size([10], [9], 5, "after") == 0

    def test_early_prediction_hits_under_symmetric_window(self):
        r = positive_f1_at_offset_k(preds(A, [9]), [10], 5, window="symmetric")
        assert r.tp == 1
        assert r.f1 == 1.0

    def test_unsorted_inputs_rejected(self):
        with pytest.raises(ValidationError):
            positive_f1_at_offset_k(preds(A, [5, 9]), [9, 5], 1)
        with pytest.raises(ValidationError):
            OnsetPredictions(task=A, chunk_indices=(9, 5))

    def test_negative_k_rejected(self):
        with pytest.raises(ValidationError):
            positive_f1_at_offset_k(preds(A, [1]), [1], -1)

    @pytest.mark.parametrize("window", ["after", "symmetric"])
    def test_greedy_equals_exhaustive_on_seeded_cases(self, window):
        rng = random.Random(777)
        for _ in range(500):
            labels = sorted(rng.sample(range(60), rng.randint(0, 8)))
            predictions = sorted(rng.sample(range(60), rng.randint(0, 8)))
            k = rng.randint(0, 12)
            r = positive_f1_at_offset_k(preds(A, predictions), labels, k, window)
            assert r.tp == optimal_matching_size(labels, predictions, k, window)

    def test_monotone_in_k(self):
        rng = random.Random(5)
        for _ in range(200):
            labels = sorted(rng.sample(range(50), rng.randint(1, 8)))
            predictions = sorted(rng.sample(range(50), rng.randint(1, 8)))
            last = -1.0
            for k in range(0, 15):
                f1 = positive_f1_at_offset_k(preds(A, predictions), labels, k).f1
                assert f1 >= last
                last = f1

    def test_k_zero_requires_exact_equality(self):
        r = positive_f1_at_offset_k(preds(A, [4, 7]), [4, 8], 0)
        assert r.tp == 1


class TestBackchannelAccuracy:
    def test_partial(self):
        acc = backchannel_accuracy([12], [(0, 5), (10, 15), (20, 25)])
        assert acc == pytest.approx(2 / 3)

    def test_vacuous_success(self):
        assert backchannel_accuracy([], [(0, 5), (7, 9)]) == 1.0

    def test_zero_intervals_is_an_error(self):
        with pytest.raises(UndefinedMetricError):
            backchannel_accuracy([3], [])

    def test_overlapping_intervals_rejected(self):
        with pytest.raises(ValidationError):
            backchannel_accuracy([], [(0, 5), (4, 9)])


def make_trace(decisions=(), halts=(), audio=(), session="s0"):
    events = []
    seq = 0
    for t, chunk, kind, turn in decisions:
        events.append(
            TraceEvent(
                t,
                seq,
                session,
                EventKind.PREDICTOR_DECISION,
                {"chunk": chunk, "decision": kind, "confidence": 1.0, "coerced": False,
                 "turn": turn},
            )
        )
        seq += 1
    for t, chunk, turn in halts:
        events.append(
            TraceEvent(
                t, seq, session, EventKind.SPEECH_HALTED,
                {"turn": turn, "tokens_emitted": 0, "chunk": chunk},
            )
        )
        seq += 1
    for t, turn in audio:
        events.append(
            TraceEvent(t, seq, session, EventKind.FIRST_AUDIO_PACKET,
                       {"turn": turn, "decision_t_ms": 0})
        )
        seq += 1
    return sorted(events, key=lambda e: (e.t_ms, e.seq))


class TestLatencyStats:
    def test_single_halt_250ms_after_onset(self):
        labels = DuplexLabels((), (3.0,), ())
        trace = make_trace(
            decisions=[(3250, 30, "halt_and_listen", 0)], halts=[(3250, 32, 0)]
        )
        stats, warnings = response_latency_stats(trace, labels, ChunkGrid(), k=5)
        assert stats[Task.USER_TURN_TAKING].mean_ms == pytest.approx(250.0)
        assert stats[Task.USER_TURN_TAKING].n == 1

    def test_empty_trace(self):
        labels = DuplexLabels((2.0,), (3.0,), ())
        stats, warnings = response_latency_stats([], labels, ChunkGrid(), k=5)
        assert stats[Task.ASSISTANT_TURN_TAKING].n == 0
        assert stats[Task.USER_TURN_TAKING].n == 0
        assert warnings >= 1

    def test_mean_and_median(self):
        labels = DuplexLabels((2.0, 10.0), (), ())
        trace = make_trace(
            decisions=[(2000, 20, "take_turn", 0), (10000, 100, "take_turn", 1)],
            audio=[(2400, 0), (10800, 1)],
        )
        stats, _ = response_latency_stats(trace, labels, ChunkGrid(), k=5)
        s = stats[Task.ASSISTANT_TURN_TAKING]
        assert s.mean_ms == pytest.approx(600.0)
        assert s.p50_ms == pytest.approx(600.0)

    def test_prediction_extraction_ignores_coerced(self):
        trace = make_trace(decisions=[(100, 1, "take_turn", 0)])
        trace.append(
            TraceEvent(200, 99, "s0", EventKind.PREDICTOR_DECISION,
                       {"chunk": 2, "decision": "take_turn", "confidence": 1.0,
                        "coerced": True, "turn": None})
        )
        got = onset_predictions_from_trace(trace, Task.ASSISTANT_TURN_TAKING)
        assert got.chunk_indices == (1,)


class TestDecompositionReport:
    def test_reference_profile_rows(self):
        report = latency_decomposition_report(LatencyProfile(), RatioPolicy())
        assert [r.ms for r in report.rows] == [250, 150, 70, 130]
        assert report.total_ms == 600
        assert report.single_token_first_batch_ms == 95

    def test_zero_profile(self):
        profile = LatencyProfile(d_llm=0, d_lm=0, d_syn=0, d_pred=0, prefill_ms=0)
        report = latency_decomposition_report(profile, RatioPolicy())
        assert [r.ms for r in report.rows] == [0, 0, 0, 0]
        assert report.total_ms == 0

    def test_halved_profile_halves_rows(self):
        p = LatencyProfile()
        halved = LatencyProfile(
            d_llm=p.d_llm / 2, d_lm=p.d_lm / 2, d_syn=p.d_syn / 2,
            d_pred=p.d_pred / 2, prefill_ms=p.prefill_ms / 2,
        )
        report = latency_decomposition_report(halved, RatioPolicy())
        assert [r.ms for r in report.rows] == [125, 75, 35, 65]
        assert report.total_ms == 300

    def test_formatting_contains_rows_and_total(self):
        text = format_decomposition(
            latency_decomposition_report(LatencyProfile(), RatioPolicy()), RatioPolicy()
        )
        for token in ("250", "150", "70", "130", "600", "95"):
            assert token in text


class TestClosedLoop:
    def test_scripted_oracle_scores_perfectly(self, closed_loop_case):
        trace = run_simulation(closed_loop_case.scenario)
        report = evaluate_trace(
            trace, closed_loop_case.labels, ks=[1, 5, 10],
            grid=closed_loop_case.scenario.grid,
        )
        for task in Task:
            for k in (1, 5, 10):
                assert report.f1[task][k].f1 == 1.0, (task, k)
        assert report.backchannel == 1.0
        assert report.n_backchannel_intervals == 3
        table = format_eval_table(report)
        assert "assistant_turn_taking" in table
