"""Shared short-time analysis primitives (framing, autocorrelation, mel cepstra).

Analysis frames are tied to the model's 80-sample hop at 16 kHz (5 ms): frame
``f`` is centered on sample ``f*hop + hop//2`` so that every waveform yields
``ceil(n_samples / hop)`` frames, matching the conditioning frame count the
model expects.
"""
from __future__ import annotations

import numpy as np
from numpy.fft import irfft, rfft

LOG_FLOOR = 1e-10


def n_frames(n_samples: int, hop: int) -> int:
    return -(-n_samples // hop)


def frame_signal(x: np.ndarray, win_length: int, hop: int) -> np.ndarray:
    """Slice ``x`` into centered frames of ``win_length`` samples every ``hop``.

    Out-of-range samples are zero.  Returns an array of shape
    ``(n_frames(len(x), hop), win_length)``.
    """
    x = np.asarray(x, dtype=np.float64)
    count = n_frames(len(x), hop)
    left = win_length // 2 - hop // 2
    padded = np.pad(x, (left, win_length))  # generous right pad
    idx = np.arange(count)[:, None] * hop + np.arange(win_length)[None, :]
    return padded[idx]


def hann(win_length: int) -> np.ndarray:
    n = np.arange(win_length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / win_length)


def normalized_autocorrelation(frames: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased autocorrelation r[l]/r[0] per frame, computed with an FFT.

    The biased estimator (no lag renormalization) decays with lag, which keeps
    the fundamental-period peak above its multiples for periodic inputs.
    """
    frames = np.asarray(frames, dtype=np.float64)
    frames = frames - frames.mean(axis=1, keepdims=True)
    win = frames.shape[1]
    nfft = 1
    while nfft < win + max_lag + 1:
        nfft *= 2
    spec = rfft(frames, n=nfft, axis=1)
    acf = irfft(spec.real**2 + spec.imag**2, n=nfft, axis=1)[:, : max_lag + 1]
    r0 = acf[:, :1].copy()
    r0[r0 <= 0.0] = 1.0
    return acf / r0


def power_spectrum(frames: np.ndarray, nfft: int, window: np.ndarray | None = None) -> np.ndarray:
    if window is not None:
        frames = frames * window
    spec = rfft(frames, n=nfft, axis=-1)
    return spec.real**2 + spec.imag**2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_filters: int, nfft: int, sample_rate: int,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular mel filterbank, shape (n_filters, nfft//2 + 1)."""
    fmax = fmax if fmax is not None else sample_rate / 2.0
    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_filters + 2)
    hz_pts = mel_to_hz(mel_pts)
    bins = np.linspace(0.0, sample_rate / 2.0, nfft // 2 + 1)
    fb = np.zeros((n_filters, nfft // 2 + 1))
    for i in range(n_filters):
        lo, mid, hi = hz_pts[i], hz_pts[i + 1], hz_pts[i + 2]
        up = (bins - lo) / max(mid - lo, 1e-12)
        down = (hi - bins) / max(hi - mid, 1e-12)
        fb[i] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def dct_ortho_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Orthonormal DCT-II matrix (n_out, n_in); row 0 is the constant basis."""
    k = np.arange(n_out)[:, None]
    n = np.arange(n_in)[None, :]
    mat = np.cos(np.pi * k * (2 * n + 1) / (2 * n_in))
    mat *= np.sqrt(2.0 / n_in)
    mat[0] *= np.sqrt(0.5)
    return mat


def mel_cepstra(x: np.ndarray, sample_rate: int, *, order: int = 24,
                win_length: int = 400, hop: int = 80, n_mels: int = 40,
                nfft: int = 512, dynamic_range_db: float = 40.0) -> np.ndarray:
    """Mel-scale cepstra c0..c_order per centered frame.

    Each frame's mel energies are floored relative to that frame's maximum
    (``dynamic_range_db``), so dead bands cannot dominate cepstral distances.
    Because the floor scales with the frame, a uniform gain change still
    shifts every log-mel energy by the same constant, which the orthonormal
    DCT routes entirely into c0.
    """
    frames = frame_signal(x, win_length, hop)
    spec = power_spectrum(frames, nfft, hann(win_length))
    fb = mel_filterbank(n_mels, nfft, sample_rate)
    mels = spec @ fb.T
    rel = 10.0 ** (-dynamic_range_db / 10.0)
    floor = np.maximum(mels.max(axis=1, keepdims=True) * rel, LOG_FLOOR)
    logmel = np.log(np.maximum(mels, floor))
    return logmel @ dct_ortho_matrix(order + 1, n_mels).T


def mfcc(x: np.ndarray, sample_rate: int, *, n_coeffs: int = 20,
         win_length: int = 400, hop: int = 160, n_mels: int = 40,
         nfft: int = 512) -> np.ndarray:
    """MFCC features (c0..c_{n_coeffs-1}) per centered frame."""
    return mel_cepstra(x, sample_rate, order=n_coeffs - 1, win_length=win_length,
                       hop=hop, n_mels=n_mels, nfft=nfft)


def log_power_spectrum(x: np.ndarray, *, win_length: int = 400, hop: int = 160,
                       nfft: int = 512) -> np.ndarray:
    frames = frame_signal(x, win_length, hop)
    return np.log(np.maximum(power_spectrum(frames, nfft, hann(win_length)), LOG_FLOOR))


def frame_rms_db(x: np.ndarray, win_length: int, hop: int) -> np.ndarray:
    """Per-frame RMS level in dBFS; digital silence maps to -120 dB."""
    frames = frame_signal(x, win_length, hop)
    rms = np.sqrt(np.mean(frames**2, axis=1))
    out = np.full(len(rms), -120.0)
    nz = rms > 0
    out[nz] = 20.0 * np.log10(rms[nz])
    return np.maximum(out, -120.0)
