import numpy as np
import pytest

from wristhr.dsp import dominant_frequency_bpm
from wristhr.frames import window_stream
from wristhr.sessions import validate_session
from wristhr.synth import (
    AxisSpec,
    SynthSpec,
    gen_benchmark_suite,
    gen_session,
    write_synth_session,
)
from wristhr.sessions import load_session


class TestGenSession:
    def test_clean_constant_hr_dominant_frequency(self):
        spec = SynthSpec(duration_s=30.0, hr_nodes=((0.0, 75.0),), bvp_amps=(1.0, 0.4, 0.2))
        rec, truth = gen_session(spec, np.random.default_rng(0))
        assert abs(dominant_frequency_bpm(rec.channels["ppg"].samples, 32.0) - 75.0) <= 1.0

    def test_mixing_only_ppg_equals_artifact(self):
        mix = np.random.default_rng(3).normal(0, 1, (3, 5))
        spec = SynthSpec(
            duration_s=20.0,
            bvp_amps=(0.0, 0.0, 0.0),
            acc_axes=tuple(AxisSpec(tones=((1.0, 2.0),), noise_std=0.5) for _ in range(3)),
            planted_mix=mix,
        )
        rec, truth = gen_session(spec, np.random.default_rng(0))
        ppg = rec.channels["ppg"].samples
        assert np.allclose(ppg, truth["artifact"])
        assert np.corrcoef(ppg, truth["artifact"])[0, 1] > 0.999999

    def test_decomposition_identity(self):
        spec = SynthSpec(
            duration_s=15.0,
            acc_axes=tuple(AxisSpec(tones=((1.0, 2.2),), noise_std=1.0) for _ in range(3)),
            planted_mix=np.ones((3, 3)),
            noise_std=0.3,
        )
        rec, truth = gen_session(spec, np.random.default_rng(5))
        recon = truth["bvp"] + truth["artifact"] + truth["noise"]
        assert np.allclose(rec.channels["ppg"].samples, recon)

    def test_erasure_episode_removes_hr_band_power(self):
        spec = SynthSpec(
            duration_s=60.0,
            hr_nodes=((0.0, 75.0),),
            bvp_amps=(10.0, 4.0, 2.0),
            noise_std=0.1,
            erasure_episodes=((20.0, 40.0),),
        )
        rec, truth = gen_session(spec, np.random.default_rng(1))
        fs = 32.0
        ppg = rec.channels["ppg"].samples
        inside = ppg[int(22 * fs) : int(38 * fs)]
        outside = ppg[int(2 * fs) : int(18 * fs)]

        def band_power(x):
            mag = np.abs(np.fft.rfft(x))
            freqs = np.fft.rfftfreq(len(x), 1 / fs) * 60.0
            sel = np.abs(freqs - 75.0) <= 2.5
            return np.sum(mag[sel] ** 2)

        assert band_power(inside) < 0.01 * band_power(outside)

    def test_deterministic_per_seed(self):
        spec = SynthSpec(duration_s=10.0, noise_std=0.2)
        a, _ = gen_session(spec, np.random.default_rng(42))
        b, _ = gen_session(spec, np.random.default_rng(42))
        assert np.array_equal(a.channels["ppg"].samples, b.channels["ppg"].samples)

    def test_windowed_bvp_peak_tracks_hr(self):
        spec = SynthSpec(duration_s=60.0, hr_nodes=((0.0, 90.0),), bvp_amps=(1.0, 0.3, 0.1))
        rec, truth = gen_session(spec, np.random.default_rng(2))
        frames = window_stream(rec)
        for f in frames[::5]:
            assert abs(dominant_frequency_bpm(f.ppg, f.fs) - 90.0) <= 60.0 * 32.0 / (4 * 256)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SynthSpec(duration_s=10.0, hr_nodes=((0.0, 20.0),)).validate()
        with pytest.raises(ValueError):
            SynthSpec(duration_s=10.0, noise_std=-1.0).validate()
        with pytest.raises(ValueError):
            SynthSpec(duration_s=10.0, planted_mix=np.ones((2, 3))).validate()


@pytest.fixture(scope="module")
def suite():
    return gen_benchmark_suite(seed=7, segment_s=60.0)


class TestBenchmarkSuite:
    def test_four_subjects_with_stable_labels(self, suite):
        assert len(suite) == 4
        ids = [r.recording.subject_id for r in suite]
        assert len(set(ids)) == 4
        labels = [a[2] for a in suite[0].recording.activity_track]
        assert labels == ["clean", "ma_offband", "ma_overlap", "ma_erasure", "hr_ramp"]
        again = gen_benchmark_suite(seed=7, segment_s=60.0)
        assert [r.recording.subject_id for r in again] == ids
        assert np.array_equal(
            suite[0].recording.channels["ppg"].samples,
            again[0].recording.channels["ppg"].samples,
        )

    def test_sessions_validate(self, suite):
        for r in suite:
            assert validate_session(r.recording) == []

    def test_offband_scenario_raw_peak_is_motion_not_hr(self, suite):
        rec, truth = suite[0]
        a, b, _ = [iv for iv in rec.activity_track if iv[2] == "ma_offband"][0]
        fs = 32.0
        seg = rec.channels["ppg"].samples[int(a * fs) : int(b * fs)]
        raw_peak = dominant_frequency_bpm(seg, fs)
        hr_there = np.interp((a + b) / 2, rec.hr_track[:, 0], rec.hr_track[:, 1])
        assert abs(raw_peak - hr_there) > 10.0  # artifact dominates
        bvp_seg = truth["bvp"][int(a * fs) : int(b * fs)]
        assert abs(dominant_frequency_bpm(bvp_seg, fs) - hr_there) <= 6.0

    def test_ramp_labels_strictly_increasing(self, suite):
        rec, _ = suite[1]
        a, b, _ = [iv for iv in rec.activity_track if iv[2] == "hr_ramp"][0]
        frames = [f for f in window_stream(rec) if f.activity == "hr_ramp"]
        labels = [f.hr_label for f in frames]
        assert all(l2 > l1 for l1, l2 in zip(labels, labels[1:]))

    def test_roundtrip_with_truth_payloads(self, suite, tmp_path):
        write_synth_session(suite[0], tmp_path / "s1")
        back = load_session(tmp_path / "s1")
        assert validate_session(back) == []
        bvp = np.fromfile(tmp_path / "s1" / "truth" / "bvp.f32", dtype="<f4")
        assert len(bvp) == len(back.channels["ppg"].samples)
