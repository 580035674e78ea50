"""Waveform ingestion, silence trimming, mu-law companding and window framing.

All operations are pure functions of their inputs and safe to run concurrently
on distinct utterances.
"""
from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from . import dsp
from .errors import AllSilenceWarning, DataError, IngestError, ShortUtteranceWarning

SAMPLE_RATE = 16000
Q_LEVELS = 256
MU = 255.0
LN_MU1 = np.log(256.0)

#: Code assigned to zero amplitude; used for head padding and generation history.
ZERO_CODE = 128


@dataclass
class WaveformClip:
    """16 kHz mono audio in [-1, 1] with speaker/utterance identity."""

    samples: np.ndarray
    sample_rate: int
    speaker_id: str
    utterance_id: str

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate != SAMPLE_RATE:
            raise IngestError(f"expected {SAMPLE_RATE} Hz, got {self.sample_rate}")
        if self.samples.ndim != 1:
            raise IngestError("expected a mono sample vector")
        if len(self.samples) and np.max(np.abs(self.samples)) > 1.0 + 1e-9:
            raise IngestError("samples exceed [-1, 1]")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass
class QuantizedSequence:
    """8-bit mu-law codes for one utterance."""

    codes: np.ndarray
    source: str

    def __post_init__(self):
        self.codes = np.asarray(self.codes)
        if self.codes.size and (self.codes.min() < 0 or self.codes.max() > 255):
            raise DataError(f"{self.source}: codes outside [0, 255]")
        self.codes = self.codes.astype(np.int64)


@dataclass
class TrainingWindow:
    """One 13-frame training slice: 1040 input codes, their shift-by-one targets
    and the 13 conditioning frames covering the predicted samples."""

    input_codes: np.ndarray
    target_codes: np.ndarray
    cat_frames: np.ndarray       # (seq_len, n_categorical) int
    num_frames: np.ndarray       # (seq_len, n_numeric) float
    speaker_id: str
    utterance_id: str = ""
    index: int = 0               # position within the utterance
    first: bool = True           # True when this is the utterance's first window


def load_waveform(path, speaker_id: str, utterance_id: str,
                  channel_policy: str = "error") -> WaveformClip:
    """Read a PCM WAV file, normalize to [-1, 1] and resample to 16 kHz.

    channel_policy: "error" rejects multi-channel input, "mix" averages
    channels down to mono.
    """
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise IngestError(f"{path}: no such file")
    except Exception as exc:
        raise IngestError(f"{path}: cannot decode ({exc})") from exc

    if data.ndim == 2:
        if channel_policy == "mix":
            data = data.mean(axis=1)
        else:
            raise IngestError(f"{path}: {data.shape[1]} channels; expected mono")
    elif data.ndim != 1:
        raise IngestError(f"{path}: unsupported shape {data.shape}")

    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.floating):
        x = data.astype(np.float64)
    else:
        raise IngestError(f"{path}: unsupported sample format {data.dtype}")

    if rate != SAMPLE_RATE:
        from math import gcd
        g = gcd(SAMPLE_RATE, int(rate))
        x = resample_poly(x, SAMPLE_RATE // g, int(rate) // g)

    peak = np.max(np.abs(x)) if len(x) else 0.0
    if peak > 1.0:
        x = x / peak
    return WaveformClip(x, SAMPLE_RATE, speaker_id, utterance_id)


def save_waveform(path, clip: WaveformClip) -> None:
    pcm = np.clip(np.round(clip.samples * 32767.0), -32768, 32767).astype(np.int16)
    wavfile.write(Path(path), clip.sample_rate, pcm)


@dataclass
class VadConfig:
    """Frame-energy voice activity detection settings."""

    win_ms: float = 25.0
    hop_ms: float = 10.0
    margin_db: float = 6.0            # threshold above the noise-floor estimate
    floor_clamp_db: float = -80.0
    threshold_min_db: float = -65.0   # silence is never quieter-gated than this
    threshold_max_db: float = -35.0   # and speech is never louder-gated
    max_silence_ms: float = 100.0


def _silence_mask(x: np.ndarray, sample_rate: int, vad: VadConfig) -> np.ndarray:
    """Per-hop silence flags.

    The threshold sits ``margin_db`` above the noise floor (the quietest
    frame, clamped), clipped into an absolute band so scarce silence cannot
    drag the floor up into quiet speech.  Clips with no dynamic range are
    decided as a whole by absolute level (a constant tone is all speech,
    digital silence is all silence).
    """
    win = int(round(vad.win_ms * sample_rate / 1000.0))
    hop = int(round(vad.hop_ms * sample_rate / 1000.0))
    levels = dsp.frame_rms_db(x, win, hop)
    lo, hi = np.percentile(levels, [5.0, 95.0])
    if hi - lo < 10.0:
        return np.full(len(levels), np.median(levels) < -60.0)
    floor = max(levels.min(), vad.floor_clamp_db)
    threshold = np.clip(floor + vad.margin_db, vad.threshold_min_db,
                        vad.threshold_max_db)
    return levels < threshold


def trim_silences(clip: WaveformClip, vad: VadConfig | None = None) -> WaveformClip:
    """Shorten every contiguous silence to at most ``max_silence_ms``.

    Speech samples are never altered or reordered; each silence run keeps its
    head.  An all-silence clip comes back empty with an AllSilenceWarning.
    """
    vad = vad or VadConfig()
    x = clip.samples
    if len(x) == 0:
        return clip

    hop = int(round(vad.hop_ms * clip.sample_rate / 1000.0))
    silent = _silence_mask(x, clip.sample_rate, vad)
    if silent.all():
        warnings.warn(f"{clip.utterance_id}: no speech found, returning empty clip",
                      AllSilenceWarning)
        return WaveformClip(x[:0], clip.sample_rate, clip.speaker_id, clip.utterance_id)

    max_keep = int(round(vad.max_silence_ms * clip.sample_rate / 1000.0))
    pieces = []
    i = 0
    while i < len(silent):
        j = i
        while j < len(silent) and silent[j] == silent[i]:
            j += 1
        start, stop = i * hop, min(j * hop, len(x))
        if stop > start:
            run = x[start:stop]
            pieces.append(run[:max_keep] if silent[i] else run)
        i = j
    out = np.concatenate(pieces) if pieces else x[:0]
    return WaveformClip(out, clip.sample_rate, clip.speaker_id, clip.utterance_id)


# -- mu-law companding --------------------------------------------------------

def mulaw_compand(x: np.ndarray) -> np.ndarray:
    """F(x) = sign(x) * ln(1 + 255|x|) / ln(256), mapping [-1,1] onto [-1,1]."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.log1p(MU * np.abs(x)) / LN_MU1


def mulaw_encode(samples, source: str = "", strict: bool = False) -> QuantizedSequence:
    """Quantize samples in [-1, 1] to 256 mu-law codes.

    code = floor((F(x) + 1)/2 * 255 + 0.5), clamped to [0, 255].  Out-of-range
    samples raise in strict mode and are clamped (with a warning) otherwise.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size and np.max(np.abs(x)) > 1.0:
        if strict:
            raise DataError(f"{source or 'input'}: samples outside [-1, 1]")
        warnings.warn(f"{source or 'input'}: clamping samples outside [-1, 1]")
        x = np.clip(x, -1.0, 1.0)
    codes = np.floor((mulaw_compand(x) + 1.0) / 2.0 * MU + 0.5)
    return QuantizedSequence(np.clip(codes, 0, 255).astype(np.int64), source)


def mulaw_decode(codes) -> np.ndarray:
    """Map codes back to bin-center amplitudes (the inverse companding of the
    uniform grid F = 2k/255 - 1)."""
    k = np.asarray(codes)
    if k.size and (k.min() < 0 or k.max() > 255):
        raise DataError("codes outside [0, 255]")
    f = 2.0 * k.astype(np.float64) / MU - 1.0
    return np.sign(f) * (np.expm1(np.abs(f) * LN_MU1)) / MU


def mulaw_bin_widths() -> np.ndarray:
    """Width of each quantization bin in amplitude space (for error bounds)."""
    edges_f = (2.0 * (np.arange(257) - 0.5) / MU) - 1.0
    edges_f = np.clip(edges_f, -1.0, 1.0)
    edges_x = np.sign(edges_f) * np.expm1(np.abs(edges_f) * LN_MU1) / MU
    return np.diff(edges_x)


# -- training windows ---------------------------------------------------------

def make_windows(seq: QuantizedSequence, cat_frames: np.ndarray,
                 num_frames: np.ndarray, config, speaker_id: str,
                 mode: str = "strict") -> list[TrainingWindow]:
    """Cut an utterance into consecutive non-overlapping training windows.

    The code stream is head-padded with the zero-amplitude code so the first
    prediction target is the utterance's first real sample; the model supplies
    the remaining zero-amplitude receptive context.  In strict mode the final
    partial window is dropped (an utterance shorter than one window yields
    none, with a warning); in lenient mode it is padded with zero-amplitude
    codes and repeated final conditioning frames.
    """
    if mode not in ("strict", "lenient"):
        raise DataError(f"unknown windowing mode {mode!r}")
    window = config.window_samples
    seq_len = config.seq_len
    frame = config.frame_size
    raw = np.asarray(seq.codes, dtype=np.int64)
    cat_frames = np.asarray(cat_frames)
    num_frames = np.asarray(num_frames)
    expected_frames = dsp.n_frames(len(raw), frame)
    if len(cat_frames) != expected_frames or len(num_frames) != expected_frames:
        raise DataError(
            f"{seq.source}: got {len(num_frames)} conditioning frames for "
            f"{len(raw)} codes; expected {expected_frames}"
        )

    if mode == "strict":
        count = len(raw) // window
        if count == 0:
            warnings.warn(
                f"{seq.source}: {len(raw)} codes is shorter than one window "
                f"({window}); skipped", ShortUtteranceWarning)
            return []
        raw = raw[: count * window]
    else:
        count = max(1, dsp.n_frames(len(raw), window))
        pad = count * window - len(raw)
        if pad:
            raw = np.concatenate([raw, np.full(pad, ZERO_CODE, dtype=np.int64)])
        need = count * seq_len
        if len(cat_frames) < need:
            reps = need - len(cat_frames)
            cat_frames = np.concatenate([cat_frames, np.repeat(cat_frames[-1:], reps, axis=0)])
            num_frames = np.concatenate([num_frames, np.repeat(num_frames[-1:], reps, axis=0)])

    padded = np.concatenate([[ZERO_CODE], raw])
    out = []
    for n in range(count):
        out.append(TrainingWindow(
            input_codes=padded[n * window: (n + 1) * window],
            target_codes=raw[n * window: (n + 1) * window],
            cat_frames=cat_frames[n * seq_len: (n + 1) * seq_len],
            num_frames=num_frames[n * seq_len: (n + 1) * seq_len],
            speaker_id=speaker_id,
            utterance_id=seq.source,
            index=n,
            first=(n == 0),
        ))
    return out


# -- persisted code container --------------------------------------------------
# Layout: magic 'QMU1' | u32 version | u64 code count | codes as u8.

_MAGIC = b"QMU1"
_VERSION = 1


def save_codes(path, seq: QuantizedSequence) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", _VERSION, len(seq.codes)))
        fh.write(seq.codes.astype(np.uint8).tobytes())


def load_codes(path, source: str = "") -> QuantizedSequence:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != _MAGIC:
        raise DataError(f"{path}: bad magic; not a quantized-code container")
    version, count = struct.unpack("<IQ", blob[4:16])
    if version != _VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    codes = np.frombuffer(blob[16:16 + count], dtype=np.uint8)
    if len(codes) != count:
        raise DataError(f"{path}: truncated container")
    return QuantizedSequence(codes.astype(np.int64), source or path.stem)
