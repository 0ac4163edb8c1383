"""Scene synthesis, endpoint sampling, grouping, and serialization tests."""

import numpy as np
import pytest

from asdgraph.errors import ConfigError, DataError, EndpointRangeError, SamplingError
from asdgraph.mfcc import MfccConfig, mfcc
from asdgraph.scene import (
    EndpointPlan,
    Scene,
    SynthParams,
    Tracklet,
    group_speakers,
    load_scene,
    make_endpoints,
    sample_training,
    save_scene,
    scene_from_dict,
    scene_to_dict,
    speaking_stationary_fraction,
    synth_scene,
)


class TestEndpoints:
    def test_basic_arithmetic(self):
        assert make_endpoints(EndpointPlan(0, 5, 7, 15, 2)) == [0, 5, 10, 15, 20, 25, 30]
        assert make_endpoints(EndpointPlan(3, 1, 1, 4, 1)) == [3]

    def test_strictly_increasing_and_bounded(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            plan = EndpointPlan(
                t0=int(rng.integers(0, 5)), k=int(rng.integers(1, 6)),
                l=int(rng.integers(1, 9)), clip_len=int(rng.integers(1, 10)),
                i=int(rng.integers(1, 4)))
            n = plan.t0 + plan.span + int(rng.integers(0, 10))
            eps = make_endpoints(plan, n)
            assert len(eps) == plan.l
            assert all(b > a for a, b in zip(eps, eps[1:]))
            assert max(eps) + plan.clip_len <= n

    def test_range_error_when_exceeding_scene(self):
        with pytest.raises(EndpointRangeError):
            make_endpoints(EndpointPlan(0, 5, 7, 15, 2), num_frames=40)

    def test_invalid_plan_rejected(self):
        with pytest.raises(ConfigError):
            EndpointPlan(0, 0, 7, 15, 2)


class TestGroups:
    def test_examples(self):
        assert group_speakers(["a", "b", "c", "d"]) == [["a", "b"], ["c", "d"]]
        assert group_speakers(["a", "b", "c"]) == [["a", "b"], ["c", "c"]]
        assert group_speakers(["a"]) == [["a", "a"]]

    def test_partition_property(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            ids = [f"t{j}" for j in range(int(rng.integers(1, 12)))]
            groups = group_speakers(ids)
            flattened = [x for g in groups for x in g]
            # Union of groups is the input set; every id appears exactly once
            # apart from the final self-duplication pad.
            assert set(flattened) == set(ids)
            distinct = [x for g in groups for x in dict.fromkeys(g)]
            assert sorted(distinct) == sorted(ids)
            assert all(len(g) == 2 for g in groups)

    def test_empty_raises(self):
        with pytest.raises(SamplingError):
            group_speakers([])


class TestSynthScene:
    def test_stationary_fraction_oracle(self):
        # Oracle: pi_speak = (1-p00) / ((1-p00) + (1-p11)), computed directly.
        p = SynthParams(num_speakers=1, num_frames=40000, fps=25.0,
                        stay_silent=0.95, stay_speaking=0.95)
        assert speaking_stationary_fraction(p) == pytest.approx(0.5)
        scene = synth_scene(p, np.random.default_rng(3))
        frac = scene.tracklets[0].speaking.mean()
        assert abs(frac - 0.5) < 0.03

    def test_zero_noise_channel0_equals_state(self):
        p = SynthParams(num_speakers=2, num_frames=60, visual_noise=0.0)
        scene = synth_scene(p, np.random.default_rng(4))
        for t in scene.tracklets:
            np.testing.assert_array_equal(t.visual_features[:, 0],
                                          t.speaking.astype(float))

    def test_same_seed_identical(self):
        p = SynthParams(num_speakers=3, num_frames=80)
        a = synth_scene(p, np.random.default_rng(9))
        b = synth_scene(p, np.random.default_rng(9))
        np.testing.assert_array_equal(a.audio, b.audio)
        for ta, tb in zip(a.tracklets, b.tracklets):
            np.testing.assert_array_equal(ta.visual_features, tb.visual_features)
            np.testing.assert_array_equal(ta.speaking, tb.speaking)
            np.testing.assert_array_equal(ta.face_area, tb.face_area)

    def test_speech_active_is_or_of_speakers(self):
        p = SynthParams(num_speakers=4, num_frames=200)
        scene = synth_scene(p, np.random.default_rng(5))
        expected = np.zeros(200, dtype=bool)
        for t in scene.tracklets:
            expected |= t.speaking
        np.testing.assert_array_equal(scene.speech_active, expected)

    def test_audio_length_invariant(self):
        p = SynthParams(num_speakers=1, num_frames=97, fps=30.0)
        scene = synth_scene(p, np.random.default_rng(6))
        assert scene.audio.size == round(97 / 30.0 * 16000)

    def test_invalid_params(self):
        with pytest.raises(ConfigError):
            SynthParams(num_speakers=0)
        with pytest.raises(ConfigError):
            SynthParams(num_speakers=5)
        with pytest.raises(ConfigError):
            SynthParams(stay_silent=1.0)


class TestSampling:
    def make_scene(self, n_speakers=3, frames=90, seed=11):
        return synth_scene(SynthParams(num_speakers=n_speakers, num_frames=frames),
                           np.random.default_rng(seed))

    def test_single_tracklet_forced_duplication(self):
        scene = self.make_scene(n_speakers=1)
        plan = EndpointPlan(0, 5, 3, 10, 2)
        s = sample_training(scene, plan, np.random.default_rng(0))
        for j in range(plan.l):
            assert s.tracklet_ids[j] == ["s0", "s0"]
            assert list(s.slot_valid[j]) == [True, False]

    def test_three_tracklets_two_distinct(self):
        scene = self.make_scene(n_speakers=3)
        plan = EndpointPlan(0, 5, 4, 10, 2)
        s = sample_training(scene, plan, np.random.default_rng(0))
        for j in range(plan.l):
            assert len(set(s.tracklet_ids[j])) == 2
            assert s.slot_valid[j].all()

    def test_seeded_rng_reproducible(self):
        scene = self.make_scene()
        plan = EndpointPlan(2, 4, 5, 8, 2)
        a = sample_training(scene, plan, np.random.default_rng(42))
        b = sample_training(scene, plan, np.random.default_rng(42))
        assert a.tracklet_ids == b.tracklet_ids
        np.testing.assert_array_equal(a.visual_clips, b.visual_clips)
        np.testing.assert_array_equal(a.video_labels, b.video_labels)
        np.testing.assert_array_equal(a.audio_labels, b.audio_labels)
        for ma, mb in zip(a.audio_clips, b.audio_clips):
            np.testing.assert_array_equal(ma, mb)

    def test_labels_and_clips_match_ground_truth_exhaustively(self):
        scene = self.make_scene(n_speakers=3, frames=120, seed=13)
        plan = EndpointPlan(1, 5, 6, 9, 3)
        s = sample_training(scene, plan, np.random.default_rng(7))
        by_id = {t.id: t for t in scene.tracklets}
        for j, e in enumerate(s.endpoints):
            for slot in range(plan.i):
                t = by_id[s.tracklet_ids[j][slot]]
                lo = e - t.start_frame
                window = t.speaking[lo:lo + plan.clip_len]
                assert s.video_labels[j, slot] == (window.mean() >= 0.5)
                np.testing.assert_array_equal(
                    s.visual_clips[j, slot],
                    t.visual_features[lo:lo + plan.clip_len])
            window = scene.speech_active[e:e + plan.clip_len]
            assert s.audio_labels[j] == (window.mean() >= 0.5)
            lo_s = round(e / scene.fps * 16000)
            n_s = round(plan.clip_len / scene.fps * 16000)
            np.testing.assert_array_equal(
                s.audio_clips[j], mfcc(scene.audio[lo_s:lo_s + n_s], MfccConfig()))

    def test_no_covering_tracklet_raises(self):
        scene = self.make_scene(n_speakers=1, frames=60)
        # Shrink the tracklet so the last endpoint's window is uncovered.
        t = scene.tracklets[0]
        short = Tracklet(id=t.id, start_frame=0, end_frame=29,
                         visual_features=t.visual_features[:30],
                         speaking=t.speaking[:30], face_area=t.face_area[:30])
        scene.tracklets = [short]
        plan = EndpointPlan(20, 5, 3, 10, 2)
        with pytest.raises(SamplingError):
            sample_training(scene, plan, np.random.default_rng(0))


class TestSerialization:
    def test_round_trip_lossless(self, tmp_path):
        scene = synth_scene(SynthParams(num_speakers=2, num_frames=50),
                            np.random.default_rng(21), name="rt")
        path = tmp_path / "scene.json"
        save_scene(scene, path)
        back = load_scene(path)
        np.testing.assert_array_equal(back.audio, scene.audio)
        np.testing.assert_array_equal(back.speech_active, scene.speech_active)
        assert back.name == "rt" and back.fps == scene.fps
        for ta, tb in zip(scene.tracklets, back.tracklets):
            assert ta.id == tb.id
            np.testing.assert_array_equal(ta.visual_features, tb.visual_features)
            np.testing.assert_array_equal(ta.face_area, tb.face_area)
            np.testing.assert_array_equal(ta.speaking, tb.speaking)

    def test_rerun_serialization_is_byte_identical(self, tmp_path):
        scene = synth_scene(SynthParams(num_speakers=2, num_frames=40),
                            np.random.default_rng(22))
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_scene(scene, p1)
        save_scene(scene, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_load_asserts_consistency(self):
        scene = synth_scene(SynthParams(num_speakers=2, num_frames=40),
                            np.random.default_rng(23))
        doc = scene_to_dict(scene)
        doc["speech_active"] = [False] * 40
        with pytest.raises(DataError):
            scene_from_dict(doc)

    def test_load_rejects_overlapping_same_id(self):
        scene = synth_scene(SynthParams(num_speakers=1, num_frames=40),
                            np.random.default_rng(24))
        doc = scene_to_dict(scene)
        doc["tracklets"].append(dict(doc["tracklets"][0]))
        with pytest.raises(DataError):
            scene_from_dict(doc)
