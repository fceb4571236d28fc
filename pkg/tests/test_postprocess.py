import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import corpus
from fdyconv.errors import ConfigError
from fdyconv.postprocess import (
    Event,
    PostConfig,
    collar_f1,
    decode_events,
    intersection_f1,
    median_filter,
    read_events_tsv,
    write_events_tsv,
)


class TestMedianFilter:
    def test_window_one_identity(self):
        x = np.random.default_rng(0).uniform(0, 1, (3, 11))
        np.testing.assert_array_equal(median_filter(x, [1, 1, 1]), x)

    def test_hand_enumeration(self):
        x = np.array([[0.0, 1.0, 0.0, 1.0, 1.0]])
        np.testing.assert_array_equal(median_filter(x, [3]), [[0.0, 0.0, 1.0, 1.0, 1.0]])

    def test_even_window_rejected(self):
        with pytest.raises(ConfigError):
            median_filter(np.zeros((1, 5)), [4])

    @given(st.integers(0, 2**31 - 1), st.sampled_from([3, 5, 7]))
    @settings(max_examples=30, deadline=None)
    def test_against_sort_oracle(self, seed, w):
        rng = np.random.default_rng(seed)
        x = rng.uniform(0, 1, (1, 20))
        got = median_filter(x, [w])
        half = w // 2
        padded = np.concatenate([[x[0, 0]] * half, x[0], [x[0, -1]] * half])
        for t in range(20):
            window = sorted(padded[t : t + w])
            assert got[0, t] == window[half]

    def test_idempotent_on_binary_fixtures(self):
        # holds on these fixtures, not for every binary sequence
        fixtures = [
            [0, 1, 0, 1, 1],
            [0, 0, 1, 1, 1, 0, 0],
            [1, 1, 0, 0, 0, 1, 1, 1, 0],
        ]
        for seq in fixtures:
            x = np.asarray([seq], dtype=float)
            once = median_filter(x, [3])
            twice = median_filter(once, [3])
            np.testing.assert_array_equal(once, twice)


class TestDecodeEvents:
    CFG = PostConfig(threshold=0.5, frame_hop_seconds=0.02)

    def test_all_zero(self):
        assert decode_events(np.zeros((2, 10)), ["a", "b"], self.CFG, "clip") == []

    def test_single_run_index_arithmetic(self):
        scores = np.zeros((1, 30))
        scores[0, 10:20] = 1.0
        events = decode_events(scores, ["a"], self.CFG, "clip")
        assert len(events) == 1
        assert events[0].clip_id == "clip" and events[0].label == "a"
        assert events[0].onset == pytest.approx(0.20)
        assert events[0].offset == pytest.approx(0.40)

    def test_gap_splits_runs(self):
        scores = np.zeros((1, 10))
        scores[0, 2:4] = 1.0
        scores[0, 5:7] = 1.0
        events = decode_events(scores, ["a"], self.CFG, "clip")
        assert len(events) == 2

    def test_constant_one_spans_whole_clip(self):
        events = decode_events(np.ones((3, 25)), ["a", "b", "c"], self.CFG, "clip")
        assert len(events) == 3
        for ev in events:
            assert ev.onset == 0.0
            assert ev.offset == pytest.approx(25 * 0.02)


class TestCollarF1:
    def test_perfect(self):
        ref = [Event("c", 0.0, 1.0, "a"), Event("c", 2.0, 3.0, "b")]
        per_class, macro = collar_f1(ref, list(ref))
        assert per_class == {"a": 1.0, "b": 1.0}
        assert macro == 1.0

    def test_onset_within_collar(self):
        ref = [Event("c", 0.0, 1.0, "a")]
        hyp = [Event("c", 0.15, 1.1, "a")]
        _, macro = collar_f1(ref, hyp)
        assert macro == 1.0

    def test_onset_outside_collar(self):
        ref = [Event("c", 0.0, 1.0, "a")]
        hyp = [Event("c", 0.25, 1.0, "a")]
        per_class, _ = collar_f1(ref, hyp)
        assert per_class["a"] == 0.0

    def test_offset_rate_rule(self):
        ref = [Event("c", 0.0, 5.0, "a")]
        hyp = [Event("c", 0.1, 4.5, "a")]  # diff 0.5 <= 0.2 * 5.0
        _, macro = collar_f1(ref, hyp)
        assert macro == 1.0

    def test_empty_hyp(self):
        ref = [Event("c", 0.0, 1.0, "a")]
        per_class, macro = collar_f1(ref, [])
        assert per_class["a"] == 0.0
        assert macro == 0.0


class TestIntersectionF1:
    def test_perfect(self):
        ref = [Event("c", 0.0, 1.0, "a")]
        _, macro = intersection_f1(ref, list(ref))
        assert macro == 1.0

    def test_dtc_gtc_pass(self):
        ref = [Event("c", 0.0, 1.0, "a")]
        hyp = [Event("c", 0.4, 1.4, "a")]  # intersection 0.6
        _, macro = intersection_f1(ref, hyp)
        assert macro == 1.0

    def test_dtc_fail(self):
        ref = [Event("c", 0.0, 1.0, "a")]
        hyp = [Event("c", 0.8, 2.0, "a")]  # intersection 0.2 / 1.2 < 0.5
        per_class, _ = intersection_f1(ref, hyp)
        assert per_class["a"] == 0.0

    def test_invalid_thresholds(self):
        with pytest.raises(ConfigError):
            intersection_f1([], [], dtc=0.0)


class TestCorpus:
    def test_hand_derived_values(self):
        cb_per_class, cb_macro = collar_f1(corpus.REF, corpus.HYP)
        ib_per_class, ib_macro = intersection_f1(corpus.REF, corpus.HYP)
        for lab, frac in corpus.CB_F1.items():
            assert cb_per_class[lab] == pytest.approx(float(frac), abs=1e-12)
        for lab, frac in corpus.IB_F1.items():
            assert ib_per_class[lab] == pytest.approx(float(frac), abs=1e-12)
        assert cb_macro == pytest.approx(float(corpus.CB_MACRO), abs=1e-12)
        assert ib_macro == pytest.approx(float(corpus.IB_MACRO), abs=1e-12)

    def test_event_permutation_invariance(self):
        rng = np.random.default_rng(2)
        for _ in range(3):
            ref = [corpus.REF[i] for i in rng.permutation(len(corpus.REF))]
            hyp = [corpus.HYP[i] for i in rng.permutation(len(corpus.HYP))]
            assert collar_f1(ref, hyp) == collar_f1(corpus.REF, corpus.HYP)
            assert intersection_f1(ref, hyp) == intersection_f1(corpus.REF, corpus.HYP)

    def test_f1_range_and_empty_cases(self):
        _, macro = collar_f1(corpus.REF, [])
        assert macro == 0.0
        per_class, macro = collar_f1([], [])
        assert per_class == {} and macro == 0.0


class TestEventsTsv:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "events.tsv"
        write_events_tsv(path, corpus.REF)
        loaded = read_events_tsv(path)
        assert sorted(loaded, key=lambda e: (e.clip_id, e.onset, e.label)) == sorted(
            corpus.REF, key=lambda e: (e.clip_id, e.onset, e.label)
        )

    def test_header_format(self, tmp_path):
        path = tmp_path / "events.tsv"
        write_events_tsv(path, [Event("c", 0.0, 1.5, "a")])
        text = path.read_text()
        assert text.splitlines()[0] == "filename\tonset\toffset\tevent_label"
        assert "0.000\t1.500" in text

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.tsv"
        path.write_text("nope\n")
        with pytest.raises(ConfigError):
            read_events_tsv(path)
