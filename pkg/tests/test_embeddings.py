"""Encoder frames, time-averaged embeddings, seed sampling, one-hot table."""
import numpy as np
import pytest

from seedtts.audio import WaveformClip
from seedtts.embeddings import (ConvSpeechEncoder, EMBEDDING_DIM,
                                EncoderFrames, EncoderTrainConfig,
                                MfccStatsEncoder, OneHotSpeakerTable,
                                PrecomputedFrameEncoder, average_embedding,
                                embed_seed, load_embeddings, sample_seed,
                                save_embeddings, train_encoder)
from seedtts.errors import DataError, InsufficientDataError
from seedtts.simulate import SpeakerProfile, make_utterance, stationary_source

SR = 16000


def clip_of(x, speaker="s", utt="s/u"):
    return WaveformClip(x, SR, speaker, utt)


def speech(seconds, seed=0):
    profile = SpeakerProfile.make("s", "f", seed)
    x, _ = make_utterance(profile, seconds, np.random.default_rng(seed))
    return x


class TestEncoders:
    @pytest.mark.parametrize("encoder", [MfccStatsEncoder(), ConvSpeechEncoder()])
    def test_one_second_gives_100_frames(self, encoder):
        frames = encoder.encode(clip_of(speech(1.0)[:SR]))
        assert abs(len(frames) - 100) <= 1
        assert frames.frames.shape[1] == EMBEDDING_DIM

    @pytest.mark.parametrize("encoder", [MfccStatsEncoder(), ConvSpeechEncoder()])
    def test_deterministic(self, encoder):
        x = speech(0.5)
        a = encoder.encode(clip_of(x))
        b = encoder.encode(clip_of(x))
        np.testing.assert_array_equal(a.frames, b.frames)

    @pytest.mark.parametrize("encoder", [MfccStatsEncoder(), ConvSpeechEncoder()])
    def test_locality_prefix_agreement(self, encoder):
        x2 = speech(2.0)[: 2 * SR]
        x1 = x2[:SR]
        f1 = encoder.encode_array(x1, "one").frames
        f2 = encoder.encode_array(x2, "two").frames
        rf_frames = int(np.ceil(encoder.receptive_field / 160)) + 1
        safe = len(f1) - rf_frames
        np.testing.assert_allclose(f2[:safe], f1[:safe], atol=1e-12)

    def test_decimation_160(self):
        enc = ConvSpeechEncoder()
        assert enc.decimation == 160
        frames = enc.encode_array(np.zeros(16000), "z")
        assert len(frames) == 100

    def test_too_short_clip_errors(self):
        with pytest.raises(DataError):
            MfccStatsEncoder().encode_array(np.zeros(100), "tiny")

    def test_precomputed_roundtrip(self, tmp_path):
        frames = np.random.default_rng(0).normal(size=(50, EMBEDDING_DIM))
        np.save(tmp_path / "s%u.npy", frames)  # name with odd char untouched
        np.save(tmp_path / "u.npy", frames)
        enc = PrecomputedFrameEncoder(tmp_path)
        got = enc.encode(clip_of(np.zeros(SR), utt="u"))
        np.testing.assert_array_equal(got.frames, frames)
        with pytest.raises(DataError):
            enc.encode(clip_of(np.zeros(SR), utt="missing"))

    def test_conv_checkpoint_roundtrip(self, tmp_path):
        enc = ConvSpeechEncoder(seed=3)
        x = speech(0.4)
        before = enc.encode_array(x, "u").frames
        enc.save(tmp_path / "enc.npz")
        back = ConvSpeechEncoder.load(tmp_path / "enc.npz")
        np.testing.assert_array_equal(back.encode_array(x, "u").frames, before)


class TestAverageEmbedding:
    def test_constant_frames(self):
        v = np.linspace(-1, 1, EMBEDDING_DIM)
        frames = EncoderFrames(np.tile(v, (7, 1)), "s")
        np.testing.assert_allclose(average_embedding(frames).vector, v)

    def test_arithmetic_mean(self):
        a = np.zeros((2, EMBEDDING_DIM))
        a[0, 0], a[1, 0] = 1.0, 3.0
        emb = average_embedding(EncoderFrames(a, "s"))
        assert emb.vector[0] == pytest.approx(2.0)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(0)
        frames = rng.normal(size=(40, EMBEDDING_DIM))
        perm = rng.permutation(40)
        a = average_embedding(EncoderFrames(frames, "s")).vector
        b = average_embedding(EncoderFrames(frames[perm], "s")).vector
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_concatenation_linearity(self):
        rng = np.random.default_rng(1)
        fa = rng.normal(size=(30, EMBEDDING_DIM))
        fb = rng.normal(size=(50, EMBEDDING_DIM))
        ea = average_embedding(EncoderFrames(fa, "a")).vector
        eb = average_embedding(EncoderFrames(fb, "b")).vector
        eab = average_embedding(EncoderFrames(np.concatenate([fa, fb]), "ab")).vector
        np.testing.assert_allclose(eab, (30 * ea + 50 * eb) / 80.0, atol=1e-9)

    def test_zero_frames_error(self):
        with pytest.raises(DataError):
            average_embedding(EncoderFrames(np.zeros((0, EMBEDDING_DIM)), "s"))

    def test_dimension_always_100(self):
        enc = MfccStatsEncoder()
        pool = [clip_of(speech(8.0, seed=4))]
        for t in (1.0, 2.0, 5.0):
            sig = sample_seed(pool, t, np.random.default_rng(0))
            emb = embed_seed(sig, enc)
            assert emb.vector.shape == (100,)


class TestSampleSeed:
    def pool(self, total_seconds, n_clips=4, seed=0):
        per = total_seconds / n_clips
        return [clip_of(speech(per, seed=seed + i), utt=f"s/u{i}")
                for i in range(n_clips)]

    def test_one_second_seed(self):
        sig = sample_seed(self.pool(120), 1.0, np.random.default_rng(0))
        assert sig.total_seconds == pytest.approx(1.0, rel=0.01)
        assert len(sig.chunks) == 1

    def test_reproducible(self):
        pool = self.pool(40)
        a = sample_seed(pool, 10.0, np.random.default_rng(5))
        b = sample_seed(pool, 10.0, np.random.default_rng(5))
        assert a.chunks == b.chunks

    def test_exhausting_the_pool(self):
        pool = [clip_of(speech(30, seed=i), utt=f"s/u{i}") for i in range(4)]
        whole = sum(len(c.samples) // SR for c in pool)
        sig = sample_seed(pool, float(whole), np.random.default_rng(1))
        assert len(sig.chunks) == whole
        assert len(set(sig.chunks)) == whole   # without replacement

    def test_insufficient_pool_names_shortfall(self):
        with pytest.raises(InsufficientDataError, match="short"):
            sample_seed(self.pool(8), 20.0, np.random.default_rng(0))

    def test_chunks_come_from_pool(self):
        pool = self.pool(40)
        by_id = {c.utterance_id: c for c in pool}
        sig = sample_seed(pool, 10.0, np.random.default_rng(2))
        for (utt, start, stop), samples in zip(sig.chunks, sig.samples_per_chunk):
            np.testing.assert_array_equal(samples, by_id[utt].samples[start:stop])


class TestOneHotTable:
    def test_shape_and_lookup(self):
        speakers = [f"spk{i}" for i in range(40)]
        table = OneHotSpeakerTable(speakers)
        assert table.table.shape == (40, 100)
        a = table.lookup("spk3").vector
        b = table.lookup("spk3").vector
        np.testing.assert_array_equal(a, b)

    def test_unseen_speaker_is_an_error(self):
        table = OneHotSpeakerTable([f"spk{i}" for i in range(40)])
        with pytest.raises(DataError):
            table.lookup("spk40")

    def test_duplicate_speakers_rejected(self):
        with pytest.raises(DataError):
            OneHotSpeakerTable(["a", "a"])


class TestEncoderTraining:
    def test_workers_improve_and_encoder_freezes(self):
        clips = [clip_of(speech(4.0, seed=i), utt=f"s/u{i}") for i in range(4)]
        config = EncoderTrainConfig(steps=120, seed=0)
        encoder, history = train_encoder(clips, config)
        for worker in ("waveform", "logspec", "mfcc"):
            assert history["final"][worker] < history["initial"][worker]
        x = clips[0].samples[:SR]
        a = encoder.encode_array(x, "u").frames
        b = encoder.encode_array(x, "u").frames
        np.testing.assert_array_equal(a, b)

    @pytest.mark.slow
    def test_mfcc_worker_halves_on_ten_minutes(self):
        clips = []
        for i in range(10):
            spk = "a" if i % 2 == 0 else "b"
            x = speech(60.0, seed=100 + i)
            clips.append(clip_of(x, speaker=spk, utt=f"{spk}/u{i}"))
        encoder, history = train_encoder(
            clips, EncoderTrainConfig(steps=1200, learning_rate=2e-3, seed=0))
        assert history["final"]["mfcc"] < 0.5 * history["initial"]["mfcc"]

    def test_unknown_worker_rejected(self):
        with pytest.raises(DataError):
            train_encoder([clip_of(speech(2.0))],
                          EncoderTrainConfig(workers=("nope",), steps=1))


class TestEmbeddingRecords:
    def test_roundtrip(self, tmp_path):
        enc = MfccStatsEncoder()
        pool = [clip_of(speech(4.0, seed=1), utt="s/u0")]
        sig = sample_seed(pool, 2.0, np.random.default_rng(0), "s")
        emb = embed_seed(sig, enc)
        assert emb.provenance["kind"] == "encoder_averaged"
        assert emb.provenance["seconds"] == 2.0
        path = tmp_path / "emb.json"
        save_embeddings(path, {"s": emb})
        back = load_embeddings(path)
        np.testing.assert_allclose(back["s"].vector, emb.vector, atol=1e-12)
        assert back["s"].provenance["seconds"] == 2.0


class TestSeedLengthConvergence:
    def test_longer_seeds_land_closer(self):
        # one deterministic instance of the Monte-Carlo property: on a
        # stationary source, distance to the long-run embedding shrinks with T
        enc = MfccStatsEncoder()
        ref = average_embedding(enc.encode_array(
            stationary_source(240.0, np.random.default_rng(999)), "ref")).vector
        rng = np.random.default_rng(3)
        pool = [clip_of(stationary_source(40.0, rng), utt=f"s/u{i}")
                for i in range(3)]
        dists = []
        for t in (1.0, 10.0, 60.0, 120.0):
            sig = sample_seed(pool, t, np.random.default_rng(17), "s")
            emb = embed_seed(sig, enc)
            dists.append(np.linalg.norm(emb.vector - ref))
        assert dists[-1] < dists[0]
