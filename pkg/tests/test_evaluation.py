"""Distortion metrics against independent brute-force oracles."""
import math

import numpy as np
import pytest

from conftest import micro_model
from seedtts.audio import WaveformClip
from seedtts.conditioning import FrameTrack, ProsodyTrack
from seedtts.embeddings import MfccStatsEncoder
from seedtts.errors import DataError
from seedtts.evaluation import (AdaptationSpeaker, CepstraTrack,
                                DistortionReport, adaptation_curve,
                                extract_cepstra, load_curve_csv, mcd, rmse_f0,
                                save_curve_csv)
from seedtts.simulate import SpeakerProfile, make_utterance

SR = 16000


def mcd_bruteforce(ref, syn):
    """Straight-from-the-definition loop implementation."""
    n = min(len(ref), len(syn))
    total = 0.0
    for t in range(n):
        acc = 0.0
        for d in range(1, 25):
            acc += (ref[t][d] - syn[t][d]) ** 2
        total += (10.0 / math.log(10.0)) * math.sqrt(2.0 * acc)
    return total / n


def rmse_bruteforce(ref_f0, ref_uv, syn_f0, syn_uv):
    acc, count = 0.0, 0
    for t in range(len(ref_f0)):
        if ref_uv[t] == 1 and syn_uv[t] == 1:
            acc += (math.exp(ref_f0[t]) - math.exp(syn_f0[t])) ** 2
            count += 1
    return None if count == 0 else math.sqrt(acc / count)


def random_cepstra(rng, frames=30):
    return CepstraTrack(rng.normal(size=(frames, 25)))


class TestExtractCepstra:
    def clip(self, x):
        return WaveformClip(x, SR, "s", "s/u")

    def speech(self, seconds=1.0, seed=0):
        x, _ = make_utterance(SpeakerProfile.make("s", "f", seed), seconds,
                              np.random.default_rng(seed))
        return x[: int(seconds * SR)]

    def test_one_second_gives_200_frames(self):
        track = extract_cepstra(self.clip(self.speech(1.0)))
        assert len(track) == 200
        assert track.coeffs.shape == (200, 25)

    def test_deterministic(self):
        x = self.speech(0.5)
        a = extract_cepstra(self.clip(x))
        b = extract_cepstra(self.clip(x))
        np.testing.assert_array_equal(a.coeffs, b.coeffs)

    def test_gain_change_lands_in_c0_only(self):
        # dither keeps every mel energy above the log floor, where the
        # uniform log-spectrum shift property holds exactly
        rng = np.random.default_rng(1)
        x = self.speech(0.5) * 0.4 + 1e-4 * rng.standard_normal(int(0.5 * SR))
        a = extract_cepstra(self.clip(x))
        b = extract_cepstra(self.clip(2.0 * x))
        np.testing.assert_allclose(a.coeffs[:, 1:], b.coeffs[:, 1:], atol=1e-9)
        assert np.all(b.coeffs[:, 0] > a.coeffs[:, 0])

    def test_short_clip_errors(self):
        with pytest.raises(DataError):
            extract_cepstra(self.clip(np.zeros(100)))


class TestMcd:
    def test_identity_is_zero(self):
        track = random_cepstra(np.random.default_rng(0))
        assert mcd(track, track) == 0.0

    def test_unit_coefficient_spot_value(self):
        ref = CepstraTrack(np.zeros((1, 25)))
        syn = np.zeros((1, 25))
        syn[0, 3] = 1.0
        value = mcd(ref, CepstraTrack(syn))
        assert value == pytest.approx((10.0 / math.log(10.0)) * math.sqrt(2.0))
        assert abs(value - 6.1421) < 1e-3

    def test_c0_excluded(self):
        ref = CepstraTrack(np.zeros((4, 25)))
        syn = np.zeros((4, 25))
        syn[:, 0] = 99.0
        assert mcd(ref, CepstraTrack(syn)) == 0.0

    def test_positive_homogeneity(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(10, 25)), rng.normal(size=(10, 25))
        base = mcd(CepstraTrack(a), CepstraTrack(b))
        doubled = mcd(CepstraTrack(b + 2.0 * (a - b)), CepstraTrack(b))
        assert doubled == pytest.approx(2.0 * base)

    def test_pseudometric_properties(self):
        rng = np.random.default_rng(2)
        tracks = [random_cepstra(rng, 12) for _ in range(3)]
        a, b, c = tracks
        assert mcd(a, b) == pytest.approx(mcd(b, a))
        assert mcd(a, c) <= mcd(a, b) + mcd(b, c) + 1e-9

    def test_frame_mismatch_rules(self):
        rng = np.random.default_rng(3)
        a = random_cepstra(rng, 30)
        b = CepstraTrack(np.concatenate([a.coeffs, rng.normal(size=(2, 25))]))
        mcd(a, b)  # <= 2 frames: truncates
        c = CepstraTrack(np.concatenate([a.coeffs, rng.normal(size=(3, 25))]))
        with pytest.raises(DataError):
            mcd(a, c)

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            a = random_cepstra(rng, int(rng.integers(1, 40)))
            b = random_cepstra(rng, len(a))
            assert mcd(a, b) == pytest.approx(
                mcd_bruteforce(a.coeffs, b.coeffs), abs=1e-9)


class TestRmseF0:
    def track(self, hz, uv):
        return ProsodyTrack(np.log(np.asarray(hz, dtype=np.float64)),
                            np.asarray(uv))

    def test_identity_zero(self):
        t = self.track([100, 150, 200], [1, 1, 0])
        assert rmse_f0(t, t) == 0.0

    def test_worked_example(self):
        ref = self.track([100.0, 200.0], [1, 1])
        syn = self.track([110.0, 190.0], [1, 1])
        assert rmse_f0(ref, syn) == pytest.approx(10.0)

    def test_single_voiced_frames_do_not_contribute(self):
        ref = self.track([100.0, 200.0, 400.0], [1, 1, 0])
        syn = self.track([110.0, 190.0, 999.0], [1, 1, 1])
        trimmed = rmse_f0(self.track([100.0, 200.0], [1, 1]),
                          self.track([110.0, 190.0], [1, 1]))
        assert rmse_f0(ref, syn) == pytest.approx(trimmed)

    def test_joint_permutation_invariance(self):
        rng = np.random.default_rng(5)
        hz = rng.uniform(80, 300, 20)
        hz2 = rng.uniform(80, 300, 20)
        uv = rng.integers(0, 2, 20)
        uv2 = rng.integers(0, 2, 20)
        perm = rng.permutation(20)
        a = rmse_f0(self.track(hz, uv), self.track(hz2, uv2))
        b = rmse_f0(self.track(hz[perm], uv[perm]),
                    self.track(hz2[perm], uv2[perm]))
        assert a == pytest.approx(b)

    def test_no_joint_voicing_is_undefined(self):
        assert rmse_f0(self.track([100.0], [1]), self.track([100.0], [0])) is None

    def test_length_mismatch_errors(self):
        with pytest.raises(DataError):
            rmse_f0(self.track([100.0], [1]), self.track([100.0, 120.0], [1, 1]))

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            n = int(rng.integers(1, 50))
            ref = self.track(rng.uniform(60, 400, n), rng.integers(0, 2, n))
            syn = self.track(rng.uniform(60, 400, n), rng.integers(0, 2, n))
            got = rmse_f0(ref, syn)
            want = rmse_bruteforce(ref.log_f0, ref.uv, syn.log_f0, syn.uv)
            if want is None:
                assert got is None
            else:
                assert got == pytest.approx(want, abs=1e-9)


class TestDistortionReport:
    def fill(self, report):
        rng = np.random.default_rng(0)
        for spk in ("a", "b"):
            for t in (1.0, 10.0):
                for u in range(2):
                    report.add(speaker=spk, utterance=f"{spk}/u{u}",
                               seed_seconds=t, mcd_db=float(rng.uniform(4, 9)),
                               rmse_f0_hz=float(rng.uniform(5, 40)), frames=100)

    def test_curve_is_mean_of_speaker_means(self):
        report = DistortionReport()
        self.fill(report)
        curve = report.curve([1.0, 10.0])
        per_spk = report.speaker_means(seed_seconds=1.0)
        manual = np.mean([v[0] for v in per_spk.values()])
        assert curve[0][1] == pytest.approx(manual)

    def test_csv_roundtrip(self, tmp_path):
        report = DistortionReport()
        self.fill(report)
        report.add(speaker="c", utterance="c/u0", seed_seconds=None,
                   mcd_db=5.0, rmse_f0_hz=None, frames=50)
        path = tmp_path / "r.csv"
        report.save_csv(path)
        back = DistortionReport.load_csv(path)
        assert len(back.rows) == len(report.rows)
        assert back.rows[-1].rmse_f0_hz is None
        assert back.rows[-1].seed_seconds is None

    def test_curve_csv_roundtrip(self, tmp_path):
        rows = [(1.0, 8.0, 30.0), (10.0, 7.0, None)]
        path = tmp_path / "c.csv"
        save_curve_csv(path, rows)
        assert load_curve_csv(path) == rows


class TestAdaptationCurve:
    @pytest.mark.slow
    def test_structure_and_determinism(self):
        from seedtts.simulate import stationary_source
        model = micro_model(seed=7, n_numeric=4, e_dim=100)
        encoder = MfccStatsEncoder()
        rng = np.random.default_rng(0)
        speakers = []
        for spk in ("sa", "sb"):
            pool = [WaveformClip(stationary_source(45.0, rng), SR, spk,
                                 f"{spk}/p{i}") for i in range(3)]
            tests = []
            for u in range(1):
                x, _ = make_utterance(SpeakerProfile.make(spk, "f", 3), 0.55,
                                      np.random.default_rng(11))
                ref = WaveformClip(x, SR, spk, f"{spk}/t{u}")
                frames = -(-len(x) // 80)
                track = FrameTrack(
                    cat=rng.integers(0, [4, 3], (frames, 2)).astype(np.int32),
                    num=rng.normal(size=(frames, 4)),
                    num_names=["a", "b", "abs_duration", "rel_duration"],
                    speaker_id=spk, utterance_id=f"{spk}/t{u}")
                tests.append((ref, track))
            speakers.append(AdaptationSpeaker(spk, pool, tests))

        t_values = (1.0, 10.0, 60.0, 120.0)
        report = adaptation_curve(model, encoder, speakers, t_values, seed=5)
        assert len(report.rows) == len(speakers) * len(t_values)
        assert sorted({r.seed_seconds for r in report.rows}) == list(t_values)
        curve = report.curve(t_values)
        assert [c[0] for c in curve] == list(t_values)
        report2 = adaptation_curve(model, encoder, speakers, t_values, seed=5)
        for a, b in zip(report.rows, report2.rows):
            assert a.mcd_db == b.mcd_db and a.rmse_f0_hz == b.rmse_f0_hz
