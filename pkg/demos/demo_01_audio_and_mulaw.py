"""Walkthrough: waveform ingestion, silence trimming and mu-law companding.

Builds a synthetic clip with an oversized internal pause, trims it to the
100 ms limit, and shows the 8-bit mu-law round trip with its error envelope.

Run:  python3 demos/demo_01_audio_and_mulaw.py
"""
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from seedtts.audio import (WaveformClip, mulaw_bin_widths, mulaw_decode,
                           mulaw_encode, trim_silences)

SR = 16000
OUT = __import__("pathlib").Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

# --- a clip with a 500 ms pause in the middle -------------------------------
t1 = np.arange(int(0.6 * SR)) / SR
speech_a = 0.4 * np.sin(2 * np.pi * 220 * t1) * (1 + 0.3 * np.sin(2 * np.pi * 3 * t1))
speech_b = 0.35 * np.sin(2 * np.pi * 330 * t1)
clip = WaveformClip(np.concatenate([speech_a, np.zeros(int(0.5 * SR)), speech_b]),
                    SR, "demo", "demo/pause")
trimmed = trim_silences(clip)
print(f"original {clip.duration:.2f}s -> trimmed {trimmed.duration:.2f}s "
      f"(the pause now fits in 100 ms)")

# --- mu-law round trip -------------------------------------------------------
x = np.linspace(-1, 1, 4001)
codes = mulaw_encode(x).codes
back = mulaw_decode(codes)
err = np.abs(x - back)
print(f"codes span [{codes.min()}, {codes.max()}]; zero amplitude -> code "
      f"{mulaw_encode([0.0]).codes[0]}")
print(f"max round-trip error {err.max():.4f} "
      f"(widest bin {mulaw_bin_widths().max():.4f})")

fig, axes = plt.subplots(1, 3, figsize=(12, 3.2))
axes[0].plot(np.arange(len(clip.samples)) / SR, clip.samples, lw=0.4)
axes[0].plot(np.arange(len(trimmed.samples)) / SR, trimmed.samples - 1.2, lw=0.4)
axes[0].set_title("original / trimmed (offset)")
axes[0].set_xlabel("s")
axes[1].plot(x, codes, lw=0.8)
axes[1].set_title("mu-law code vs amplitude")
axes[1].set_xlabel("x")
axes[2].semilogy(x, np.maximum(err, 1e-6), lw=0.6)
axes[2].set_title("round-trip error")
axes[2].set_xlabel("x")
fig.tight_layout()
fig.savefig(OUT / "demo_01_mulaw.png", dpi=110)
print(f"figure -> {OUT / 'demo_01_mulaw.png'}")
