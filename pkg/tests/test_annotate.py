import json
import statistics
import string
from pathlib import Path

import pytest

from duplexsim.annotate import (
    ChatMlMessage,
    ChatMlSample,
    GapDistribution,
    GapSampler,
    RNG_ID,
    annotate_timeline,
    chatml_from_dict,
    chatml_to_dict,
    detect_backchannels,
    labels_from_dict,
    labels_to_dict,
    parse_chatml,
    sample_turn_gap,
    to_chatml,
)
from duplexsim.core import (
    Channel,
    DialogueTimeline,
    SpeechSegment,
    ValidationError,
)

DATA = Path(__file__).parent / "data"


def tl(segs, duration=20.0):
    return DialogueTimeline(
        segments=tuple(
            sorted(
                (SpeechSegment(Channel(c), a, b) for c, a, b in segs),
                key=lambda s: (s.start_s, s.end_s),
            )
        ),
        duration_s=duration,
    )


class TestGapSampler:
    def test_degenerate_normal_is_mean(self):
        sampler = GapSampler(GapDistribution(std_s=0.0), seed=5)
        assert all(sampler.sample() == 0.6 for _ in range(10))

    def test_sample_mean_and_std(self):
        sampler = GapSampler(GapDistribution(), seed=2024)
        xs = [sampler.raw() for _ in range(10000)]
        assert statistics.fmean(xs) == pytest.approx(0.6, abs=0.02)
        assert statistics.pstdev(xs) == pytest.approx(0.4, abs=0.02)

    def test_clamped_at_minimum(self):
        gaps = GapDistribution(mean_s=0.0, std_s=1.0, clamp_min_s=0.1)
        sampler = GapSampler(gaps, seed=3)
        assert all(sampler.sample() >= 0.1 for _ in range(1000))

    def test_stream_is_deterministic(self):
        a = GapSampler(GapDistribution(), seed=11)
        b = GapSampler(GapDistribution(), seed=11)
        assert [a.sample() for _ in range(100)] == [b.sample() for _ in range(100)]

    def test_first_samples_pinned(self):
        # Frozen output of the pinned generator; a change here breaks
        # every golden label file in the wild.
        assert GapSampler(GapDistribution(), seed=0).sample() == 0.638549
        assert GapSampler(GapDistribution(), seed=1).sample() == 0.723484
        assert GapSampler(GapDistribution(), seed=7).sample() == 0.806466

    def test_sample_turn_gap_checks_distribution(self):
        sampler = GapSampler(GapDistribution(), seed=1)
        with pytest.raises(ValidationError):
            sample_turn_gap(GapDistribution(mean_s=0.5), sampler)
        assert sample_turn_gap(GapDistribution(), sampler) >= 0.0


class TestAnnotateTimeline:
    def test_assistant_onset_is_user_endpoint(self):
        timeline = tl([("user", 0.0, 2.0), ("assistant", 2.5, 5.0)])
        labels = annotate_timeline(timeline, seed=1)
        assert labels.assistant_turn_onsets == (2.0,)

    def test_user_onset_is_assistant_end_plus_gap(self):
        timeline = tl([("assistant", 2.5, 5.0), ("user", 5.8, 7.0)])
        labels = annotate_timeline(timeline, seed=7)
        # gap sampled from seed 7 stream: 0.806466
        assert labels.user_turn_onsets == (5.806466,)
        assert labels.user_turn_onsets[0] >= 5.0

    def test_empty_timeline(self):
        labels = annotate_timeline(tl([]), seed=0)
        assert labels.assistant_turn_onsets == ()
        assert labels.user_turn_onsets == ()
        assert labels.backchannel_intervals == ()

    def test_invalid_timeline_rejected(self):
        bad = tl([("user", 3.0, 1.0)])
        with pytest.raises(ValidationError):
            annotate_timeline(bad, seed=0)

    def test_backchannel_not_a_turn(self):
        timeline = tl(
            [
                ("user", 0.0, 2.0),
                ("assistant", 2.0, 6.0),
                ("user", 3.0, 3.5),  # back-channel inside the response
                ("user", 7.0, 8.0),
            ]
        )
        labels = annotate_timeline(timeline, seed=4)
        assert labels.assistant_turn_onsets == (2.0,)
        assert len(labels.user_turn_onsets) == 1
        assert labels.user_turn_onsets[0] >= 6.0
        assert labels.backchannel_intervals == ((3.0, 3.5),)

    def test_determinism_same_seed(self):
        timeline = tl([("user", 0.0, 2.0), ("assistant", 2.5, 5.0), ("user", 6.0, 7.0)])
        a = annotate_timeline(timeline, seed=33)
        b = annotate_timeline(timeline, seed=33)
        assert a == b

    def test_labels_sorted_and_in_range(self):
        timeline = tl(
            [
                ("user", 0.0, 1.0),
                ("assistant", 1.0, 3.0),
                ("user", 4.0, 5.0),
                ("assistant", 5.0, 19.5),
            ]
        )
        labels = annotate_timeline(timeline, seed=8)
        for seq in (labels.assistant_turn_onsets, labels.user_turn_onsets):
            assert list(seq) == sorted(seq)
            assert all(0 <= t <= timeline.duration_s for t in seq)

    def test_onset_beyond_duration_dropped(self):
        timeline = tl([("user", 0.0, 1.0), ("assistant", 1.0, 19.9)])
        labels = annotate_timeline(timeline, seed=8)
        assert all(t <= timeline.duration_s for t in labels.user_turn_onsets)

    def test_golden_labels_stable(self, tmp_path):
        from duplexsim.annotate import save_labels
        from duplexsim.core import load_timeline

        timeline = load_timeline(DATA / "two_round_timeline.json")
        labels = annotate_timeline(timeline, GapDistribution(), seed=20260810)
        out = tmp_path / "labels.json"
        save_labels(labels, out)
        golden = (DATA / "two_round_labels_seed20260810.json").read_bytes()
        assert out.read_bytes() == golden


class TestDetectBackchannels:
    def test_contained_with_margin(self):
        timeline = tl([("assistant", 2.0, 6.0), ("user", 3.0, 3.5)])
        assert detect_backchannels(timeline, 0.2) == [(3.0, 3.5)]

    def test_margin_too_small(self):
        timeline = tl([("assistant", 2.0, 3.6), ("user", 3.0, 3.5)])
        assert detect_backchannels(timeline, 0.2) == []

    def test_no_overlap(self):
        timeline = tl([("assistant", 2.0, 3.0), ("user", 4.0, 5.0)])
        assert detect_backchannels(timeline, 0.2) == []

    def test_every_interval_inside_some_assistant_segment(self):
        timeline = tl(
            [
                ("assistant", 0.0, 5.0),
                ("user", 1.0, 1.2),
                ("user", 4.0, 4.5),
                ("user", 6.0, 7.0),
            ]
        )
        hosts = timeline.channel_segments(Channel.ASSISTANT)
        for start, end in detect_backchannels(timeline, 0.2):
            assert any(h.start_s < start and end < h.end_s for h in hosts)


class TestLabelsIo:
    def test_round_trip(self):
        timeline = tl([("user", 0.0, 2.0), ("assistant", 2.5, 5.0), ("user", 6.0, 7.0)])
        labels = annotate_timeline(timeline, seed=5)
        assert labels_from_dict(labels_to_dict(labels)) == labels

    def test_meta_recorded(self):
        labels = annotate_timeline(tl([]), seed=17, epsilon_s=0.3)
        assert labels.meta["seed"] == 17
        assert labels.meta["rng"] == RNG_ID
        assert labels.meta["epsilon_s"] == 0.3


class TestChatMl:
    def test_transcription_sample(self):
        sample = to_chatml("Speech Transcription", "a.wav", "hello")
        assert sample.messages[0] == ChatMlMessage("system", "You are a helpful assistant.")
        assert sample.messages[1].content == (
            "Speech Transcription <|startofspeech|> a.wav <|endofspeech|>"
        )
        assert sample.messages[2] == ChatMlMessage("assistant", "hello")

    def test_translation_sample(self):
        sample = to_chatml("Translate zh into en", "b.wav", "hi")
        assert sample.messages[2].content == "hi"
        assert parse_chatml(sample) == ("Translate zh into en", "b.wav", "hi")

    def test_empty_wav_path_rejected(self):
        with pytest.raises(ValidationError):
            to_chatml("Speech Transcription", "", "x")

    def test_round_trip_random_printable(self):
        import random

        rng = random.Random(12)
        alphabet = string.ascii_letters + string.digits + " .,!?/-_"
        for _ in range(200):
            instr = "".join(rng.choice(alphabet) for _ in range(rng.randint(1, 30))).strip() or "x"
            wav = "".join(rng.choice(alphabet.replace(" ", "")) for _ in range(rng.randint(1, 20)))
            out = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 40)))
            assert parse_chatml(to_chatml(instr, wav, out)) == (instr, wav, out)

    def test_dict_round_trip(self):
        sample = to_chatml("Speech Transcription", "a.wav", "hello")
        assert chatml_from_dict(chatml_to_dict(sample)) == sample
        obj = chatml_to_dict(sample)
        assert json.dumps(obj)  # serializable as one JSON object

    def test_role_alternation_enforced(self):
        with pytest.raises(ValidationError):
            ChatMlSample(
                messages=(
                    ChatMlMessage("system", "s"),
                    ChatMlMessage("assistant", "wrong order"),
                )
            )
