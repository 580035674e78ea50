"""Speaker embeddings: learned one-hot table or time-averaged encoder frames.

The encoder side follows the seed scheme: a speech encoder turns a waveform
into 100-dim frames at 100 Hz, and the embedding of a speaker is the time
average of the frames computed from that speaker's seed signal.  Three
encoders share the interface: a file-backed one for precomputed frames, a
reduced trainable convolutional encoder with self-supervised worker heads,
and a deterministic MFCC-projection fallback for tests.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .audio import WaveformClip
from .dsp import hz_to_mel, mel_to_hz
from .errors import DataError, InsufficientDataError
from .optim import Adam

EMBEDDING_DIM = 100
FRAME_RATE = 100          # encoder frames per second
HOP = 160                 # 16 kHz samples per encoder frame


@dataclass
class EncoderFrames:
    """100-dim encoder frames at 100 Hz for one piece of audio."""

    frames: np.ndarray
    source: str

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != EMBEDDING_DIM:
            raise DataError(f"{self.source}: frames must be (L, {EMBEDDING_DIM})")

    def __len__(self):
        return len(self.frames)


@dataclass
class SpeakerEmbedding:
    """A fixed-length identity vector plus where it came from."""

    vector: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.shape != (EMBEDDING_DIM,):
            raise DataError(f"embedding must have dimension {EMBEDDING_DIM}")


@dataclass
class SeedSignal:
    """Concatenated 1 s speech chunks drawn from one speaker's seed pool."""

    speaker_id: str
    seconds: float
    chunks: list[tuple[str, int, int]]       # (utterance_id, start, stop) samples
    samples_per_chunk: list[np.ndarray]

    @property
    def total_seconds(self) -> float:
        return sum(len(s) for s in self.samples_per_chunk) / 16000.0


def average_embedding(frames: EncoderFrames, provenance: dict | None = None) -> SpeakerEmbedding:
    """Time average of encoder frames: e = (1/L) * sum_n frames[n]."""
    if len(frames) == 0:
        raise DataError(f"{frames.source}: cannot average zero frames")
    return SpeakerEmbedding(frames.frames.mean(axis=0), provenance or
                            {"kind": "encoder_averaged", "source": frames.source})


def sample_seed(pool: list[WaveformClip], seconds: float, rng: np.random.Generator,
                speaker_id: str | None = None) -> SeedSignal:
    """Uniformly sample 1 s chunks (without replacement) from a speaker's seed
    pool until ``seconds`` of material is collected; reproducible given the rng."""
    n_chunks = int(round(seconds))
    if n_chunks < 1 or abs(n_chunks - seconds) > 0.01 * max(seconds, 1.0):
        raise DataError("seed lengths are sampled at 1 s granularity (T >= 1)")
    candidates = []
    for i, clip in enumerate(pool):
        whole = len(clip.samples) // (clip.sample_rate)
        for c in range(whole):
            candidates.append((i, c * clip.sample_rate, (c + 1) * clip.sample_rate))
    if len(candidates) < n_chunks:
        raise InsufficientDataError(
            f"seed pool holds {len(candidates)} s, requested {n_chunks} s "
            f"({n_chunks - len(candidates)} s short)")
    picked = rng.choice(len(candidates), size=n_chunks, replace=False)
    speaker = speaker_id or (pool[0].speaker_id if pool else "")
    chunks, samples = [], []
    for idx in picked:
        i, start, stop = candidates[idx]
        chunks.append((pool[i].utterance_id, start, stop))
        samples.append(pool[i].samples[start:stop])
    return SeedSignal(speaker, float(seconds), chunks, samples)


def embed_seed(seed: SeedSignal, encoder) -> SpeakerEmbedding:
    """Encode each seed chunk separately, pool all frames, then average, so
    chunk boundaries never fabricate discontinuity frames."""
    pooled = [encoder.encode_array(s, f"{seed.speaker_id}/seed").frames
              for s in seed.samples_per_chunk]
    frames = EncoderFrames(np.concatenate(pooled, axis=0), f"{seed.speaker_id}/seed")
    return average_embedding(frames, {
        "kind": "encoder_averaged",
        "speaker": seed.speaker_id,
        "seconds": seed.seconds,
        "chunks": [list(c) for c in seed.chunks],
    })


class OneHotSpeakerTable:
    """Trainable embedding table over a fixed set of training speakers.

    Lookup of a speaker outside the table is an error: a one-hot identity
    cannot represent an unseen voice, which is the limitation the averaged
    encoder embeddings remove.
    """

    def __init__(self, speakers: list[str], dim: int = EMBEDDING_DIM,
                 rng: np.random.Generator | None = None):
        if len(set(speakers)) != len(speakers):
            raise DataError("duplicate speaker ids in the one-hot table")
        rng = rng or np.random.default_rng(0)
        self.speakers = list(speakers)
        self.index = {s: i for i, s in enumerate(self.speakers)}
        self.table = rng.uniform(-0.1, 0.1, size=(len(speakers), dim))

    def lookup(self, speaker_id: str) -> SpeakerEmbedding:
        if speaker_id not in self.index:
            raise DataError(f"speaker {speaker_id!r} is not in the one-hot table; "
                            "one-hot embeddings cannot represent unseen speakers")
        vec = self.table[self.index[speaker_id]]
        return SpeakerEmbedding(vec.copy(), {"kind": "onehot", "speaker": speaker_id})

    def row(self, speaker_id: str) -> int:
        if speaker_id not in self.index:
            raise DataError(f"speaker {speaker_id!r} is not in the one-hot table")
        return self.index[speaker_id]


# -- encoders -------------------------------------------------------------------

class MfccStatsEncoder:
    """Deterministic test encoder: per-frame MFCC + log-energy features pushed
    through a fixed random projection to 100 dims.  No training, no state."""

    receptive_field = 400

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.projection = rng.standard_normal((21, EMBEDDING_DIM)) / np.sqrt(21)
        self.offset = rng.standard_normal(EMBEDDING_DIM) * 0.1

    def encode_array(self, x: np.ndarray, source: str = "") -> EncoderFrames:
        x = np.asarray(x, dtype=np.float64)
        if len(x) < self.receptive_field:
            raise DataError(f"{source}: clip shorter than the encoder receptive "
                            f"field ({self.receptive_field} samples)")
        feats = dsp.mfcc(x, 16000, n_coeffs=20, hop=HOP)
        energy = np.log(np.maximum(
            np.mean(dsp.frame_signal(x, 400, HOP) ** 2, axis=1), dsp.LOG_FLOOR))
        feats = np.concatenate([feats, energy[:, None]], axis=1)
        return EncoderFrames(feats @ self.projection + self.offset, source)

    def encode(self, clip: WaveformClip) -> EncoderFrames:
        return self.encode_array(clip.samples, clip.utterance_id)


class PrecomputedFrameEncoder:
    """File-backed frames (one ``<utterance>.npy`` of shape (L, 100) per clip),
    for plugging in externally computed encodings."""

    receptive_field = HOP

    def __init__(self, root):
        self.root = Path(root)

    def encode(self, clip: WaveformClip) -> EncoderFrames:
        path = self.root / f"{clip.utterance_id}.npy"
        if not path.exists():
            raise DataError(f"no precomputed frames at {path}")
        return EncoderFrames(np.load(path), clip.utterance_id)

    def encode_array(self, x, source: str = ""):
        raise DataError("precomputed encoder can only encode cataloged clips")


def _ceil_pad(length: int, kernel: int, stride: int) -> int:
    out = -(-length // stride)
    return max(0, (out - 1) * stride + kernel - length)


class ConvSpeechEncoder:
    """Reduced trainable encoder: a strided convolutional stack with overall
    decimation 160, so 16 kHz audio becomes 100-dim frames at 100 Hz.

    The first layer is initialized as mel-spaced windowed cosine pairs (a
    crude learnable filterbank), hidden activations are leaky rectifiers, and
    the final layer is linear.  Zero padding is applied on the right only, so
    a frame depends on at most ``receptive_field`` past samples (locality).
    """

    LAYERS = ((64, 5, 32), (8, 4, 64), (4, 2, 96), (4, 2, 128), (4, 2, EMBEDDING_DIM))
    LEAK = 0.01

    def __init__(self, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        c_in = 1
        for li, (kernel, stride, c_out) in enumerate(self.LAYERS):
            fan_in = c_in * kernel
            if li == 0:
                self.weights.append(self._filterbank_init(kernel, c_out))
            else:
                self.weights.append(rng.uniform(-1, 1, (fan_in, c_out))
                                    / np.sqrt(fan_in))
            self.biases.append(np.zeros(c_out))
            c_in = c_out
        rf = 1
        dec = 1
        for kernel, stride, _ in self.LAYERS:
            rf += (kernel - 1) * dec
            dec *= stride
        self.receptive_field = rf
        self.decimation = dec

    @staticmethod
    def _filterbank_init(kernel: int, c_out: int) -> np.ndarray:
        """Quadrature pairs of windowed cosines at mel-spaced centers."""
        n_bands = c_out // 2
        centers = mel_to_hz(np.linspace(hz_to_mel(60.0), hz_to_mel(7400.0), n_bands))
        t = np.arange(kernel) - (kernel - 1) / 2.0
        window = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(kernel) / (kernel - 1))
        filters = []
        for f in centers:
            phase = 2.0 * np.pi * f * t / 16000.0
            filters.append(window * np.cos(phase))
            filters.append(window * np.sin(phase))
        w = np.stack(filters, axis=1)[:, :c_out]
        return w / np.sqrt((w**2).sum(axis=0, keepdims=True) * kernel)

    # -- forward / backward ----------------------------------------------

    def _forward(self, x: np.ndarray):
        h = np.asarray(x, dtype=np.float64)[None, :]       # (C=1, L)
        cache = []
        for li, (kernel, stride, _) in enumerate(self.LAYERS):
            pad = _ceil_pad(h.shape[1], kernel, stride)
            hp = np.pad(h, ((0, 0), (0, pad)))
            cols = np.lib.stride_tricks.sliding_window_view(hp, kernel, axis=1)[:, ::stride]
            cols = cols.transpose(1, 0, 2).reshape(cols.shape[1], -1)  # (L_out, C*k)
            pre = cols @ self.weights[li] + self.biases[li]
            out = pre if li == len(self.LAYERS) - 1 else \
                np.where(pre > 0, pre, self.LEAK * pre)
            cache.append((cols, pre, hp.shape, pad))
            h = out.T                                       # (C_out, L_out)
        return h.T, cache                                   # (L, 100)

    def _backward(self, d_out: np.ndarray, cache):
        grads_w = [None] * len(self.LAYERS)
        grads_b = [None] * len(self.LAYERS)
        d_h = d_out                                         # (L_out, C_out)
        for li in reversed(range(len(self.LAYERS))):
            kernel, stride, _ = self.LAYERS[li]
            cols, pre, hp_shape, pad = cache[li]
            d_pre = d_h if li == len(self.LAYERS) - 1 else \
                d_h * np.where(pre > 0, 1.0, self.LEAK)
            grads_w[li] = cols.T @ d_pre
            grads_b[li] = d_pre.sum(axis=0)
            d_cols = (d_pre @ self.weights[li].T).reshape(len(cols), -1, kernel)
            d_hp = np.zeros(hp_shape)
            n_out = len(cols)
            for t in range(kernel):
                d_hp[:, t: t + stride * n_out: stride] += d_cols[:, :, t].T
            d_h = d_hp[:, : hp_shape[1] - pad].T            # (L_in, C_in)
        return grads_w, grads_b

    def encode_array(self, x: np.ndarray, source: str = "") -> EncoderFrames:
        x = np.asarray(x, dtype=np.float64)
        if len(x) < HOP:
            raise DataError(f"{source}: clip shorter than one encoder frame")
        frames, _ = self._forward(x)
        return EncoderFrames(frames, source)

    def encode(self, clip: WaveformClip) -> EncoderFrames:
        return self.encode_array(clip.samples, clip.utterance_id)

    # -- persistence --------------------------------------------------------

    def save(self, path) -> None:
        arrays = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"w{i}"] = w
            arrays[f"b{i}"] = b
        arrays["meta"] = np.frombuffer(json.dumps(
            {"version": 1, "layers": [list(l) for l in self.LAYERS]}).encode(),
            dtype=np.uint8)
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path) -> "ConvSpeechEncoder":
        try:
            data = np.load(path)
        except FileNotFoundError:
            raise DataError(f"{path}: no encoder checkpoint; run 'train-encoder' "
                            "first")
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("version") != 1:
            raise DataError(f"{path}: unsupported encoder checkpoint version")
        if [tuple(l) for l in meta["layers"]] != list(cls.LAYERS):
            raise DataError(f"{path}: encoder layer layout mismatch")
        enc = cls()
        enc.weights = [data[f"w{i}"].copy() for i in range(len(cls.LAYERS))]
        enc.biases = [data[f"b{i}"].copy() for i in range(len(cls.LAYERS))]
        return enc


WORKERS = ("waveform", "logspec", "mfcc")
_WORKER_DIMS = {"waveform": HOP, "logspec": 257, "mfcc": 20}


def _worker_targets(x: np.ndarray, worker: str) -> np.ndarray:
    if worker == "waveform":
        t = dsp.frame_signal(x, HOP, HOP)
    elif worker == "logspec":
        t = dsp.log_power_spectrum(x, win_length=400, hop=HOP, nfft=512)
    elif worker == "mfcc":
        t = dsp.mfcc(x, 16000, n_coeffs=20, hop=HOP)
    else:
        raise DataError(f"unknown worker {worker!r}")
    mean = t.mean(axis=0)
    std = np.maximum(t.std(axis=0), 1e-6)
    return (t - mean) / std


@dataclass
class EncoderTrainConfig:
    workers: tuple[str, ...] = WORKERS
    steps: int = 300
    learning_rate: float = 1e-3
    chunk_seconds: float = 1.0
    worker_hidden: int = 64
    seed: int = 0


def train_encoder(clips: list[WaveformClip],
                  config: EncoderTrainConfig | None = None
                  ) -> tuple[ConvSpeechEncoder, dict]:
    """Train the reduced encoder with self-supervised regression workers
    (waveform, log-power spectrum, MFCC), each a small MLP on the frames.

    Returns the encoder and a history dict with each worker's loss on a fixed
    probe chunk before and after training.
    """
    config = config or EncoderTrainConfig()
    for w in config.workers:
        if w not in WORKERS:
            raise DataError(f"unknown worker {w!r}")
    rng = np.random.default_rng(config.seed)
    encoder = ConvSpeechEncoder(seed=config.seed)

    params: dict[str, np.ndarray] = {}
    for i, (w, b) in enumerate(zip(encoder.weights, encoder.biases)):
        params[f"enc.w{i}"] = w
        params[f"enc.b{i}"] = b
    heads = {}
    for w in config.workers:
        dim = _WORKER_DIMS[w]
        params[f"{w}.w1"] = rng.uniform(-1, 1, (EMBEDDING_DIM, config.worker_hidden)) \
            / np.sqrt(EMBEDDING_DIM)
        params[f"{w}.b1"] = np.zeros(config.worker_hidden)
        params[f"{w}.w2"] = rng.uniform(-1, 1, (config.worker_hidden, dim)) \
            / np.sqrt(config.worker_hidden)
        params[f"{w}.b2"] = np.zeros(dim)
        heads[w] = dim
    adam = Adam(params, lr=config.learning_rate)

    chunk = int(config.chunk_seconds * 16000)
    usable = [c for c in clips if len(c.samples) >= max(chunk, encoder.receptive_field)]
    if not usable:
        raise DataError("no clip is long enough for encoder training")

    def worker_losses(x, want_grads=False):
        z, cache = encoder._forward(x)
        losses = {}
        d_z = np.zeros_like(z)
        grads = {}
        for w in config.workers:
            try:
                y = _worker_targets(x, w)[: len(z)]
            except Exception:
                continue  # skip utterance for this worker
            h_pre = z[: len(y)] @ params[f"{w}.w1"] + params[f"{w}.b1"]
            h = np.tanh(h_pre)
            pred = h @ params[f"{w}.w2"] + params[f"{w}.b2"]
            diff = pred - y
            losses[w] = float(np.mean(diff**2))
            if want_grads:
                d_pred = 2.0 * diff / diff.size
                grads[f"{w}.w2"] = h.T @ d_pred
                grads[f"{w}.b2"] = d_pred.sum(axis=0)
                d_h = (d_pred @ params[f"{w}.w2"].T) * (1.0 - h**2)
                grads[f"{w}.w1"] = z[: len(y)].T @ d_h
                grads[f"{w}.b1"] = d_h.sum(axis=0)
                d_z[: len(y)] += d_h @ params[f"{w}.w1"].T
        if want_grads:
            gw, gb = encoder._backward(d_z, cache)
            for i in range(len(encoder.LAYERS)):
                grads[f"enc.w{i}"] = gw[i]
                grads[f"enc.b{i}"] = gb[i]
        return losses, grads

    probe = usable[0].samples[:chunk]
    history = {"initial": worker_losses(probe)[0], "per_step": []}
    for _ in range(config.steps):
        clip = usable[rng.integers(len(usable))]
        max_start = len(clip.samples) - chunk
        start = int(rng.integers(max_start + 1)) if max_start > 0 else 0
        x = clip.samples[start: start + chunk]
        losses, grads = worker_losses(x, want_grads=True)
        history["per_step"].append(sum(losses.values()))
        adam.step(grads)
    history["final"] = worker_losses(probe)[0]
    return encoder, history


# -- embedding records file -------------------------------------------------------

def save_embeddings(path, records: dict[str, SpeakerEmbedding]) -> None:
    """Per-speaker embedding records: id, provenance, 100 reals, format version."""
    payload = {
        "version": 1,
        "dim": EMBEDDING_DIM,
        "records": {
            spk: {"provenance": emb.provenance, "vector": emb.vector.tolist()}
            for spk, emb in sorted(records.items())
        },
    }
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True))


def load_embeddings(path) -> dict[str, SpeakerEmbedding]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no embedding records; run 'extract-embeddings' "
                        "first")
    payload = json.loads(path.read_text())
    if payload.get("version") != 1 or payload.get("dim") != EMBEDDING_DIM:
        raise DataError(f"{path}: unsupported embedding file")
    return {
        spk: SpeakerEmbedding(np.array(rec["vector"]), rec["provenance"])
        for spk, rec in payload["records"].items()
    }
