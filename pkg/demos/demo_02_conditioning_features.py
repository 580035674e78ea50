"""Walkthrough: from a time-aligned label file to per-frame conditioning.

Renders one synthetic utterance with its labels, parses them, extracts the
log-F0 / voicing contour, assembles the 5 ms conditioning frames and applies
speaker z-normalization.

Run:  python3 demos/demo_02_conditioning_features.py
"""
import tempfile
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from seedtts.audio import WaveformClip
from seedtts.conditioning import (compute_speaker_stats, extract_f0_uv,
                                  parse_label_file, upsample_to_frames,
                                  zscore_normalize)
from seedtts.config import default_feature_schema
from seedtts.simulate import SpeakerProfile, make_utterance, write_label_file

SR = 16000
OUT = Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

profile = SpeakerProfile.make("demo", "f", seed=5)
samples, events = make_utterance(profile, 2.5, np.random.default_rng(5))
clip = WaveformClip(samples, SR, "demo", "demo/u0")

schema = default_feature_schema()
with tempfile.TemporaryDirectory() as tmp:
    lab = Path(tmp) / "u0.lab"
    write_label_file(lab, events, schema)
    annotations = parse_label_file(lab, schema)
print(f"{len(annotations)} phones covering {annotations[-1].end_time:.2f}s")

prosody = extract_f0_uv(clip)
n_frames = -(-len(samples) // 80)
track = upsample_to_frames(annotations, schema, n_frames, prosody,
                           speaker_id="demo", utterance_id="demo/u0")
print(f"{len(track)} conditioning frames "
      f"({track.cat.shape[1]} categorical ids + {track.num.shape[1]} numeric "
      "columns each)")

stats = compute_speaker_stats([track])
normed = zscore_normalize(track, stats)
cols = [i for i, n in enumerate(track.num_names)
        if n in stats.mean["demo"]]
print(f"z-normalized {len(cols)} columns; relative duration and voicing "
      "pass through")

fig, axes = plt.subplots(3, 1, figsize=(9, 6), sharex=True)
tt = np.arange(len(samples)) / SR
axes[0].plot(tt, samples, lw=0.3)
for ev in events:
    axes[0].axvline(ev.start, color="k", alpha=0.15, lw=0.5)
axes[0].set_ylabel("waveform")
ft = (np.arange(n_frames) + 0.5) * 80 / SR
f0 = np.exp(track.num[:, track.num_names.index("log_f0")])
uv = track.num[:, track.num_names.index("uv")]
axes[1].plot(ft, np.where(uv > 0, f0, np.nan), ".", ms=2, label="voiced F0")
axes[1].plot(ft, np.where(uv == 0, f0, np.nan), ".", ms=2, alpha=0.4,
             label="filled (unvoiced)")
axes[1].set_ylabel("F0 (Hz)")
axes[1].legend(fontsize=7)
axes[2].plot(ft, track.num[:, track.num_names.index("rel_duration")], lw=0.7)
axes[2].set_ylabel("relative duration")
axes[2].set_xlabel("s")
fig.tight_layout()
fig.savefig(OUT / "demo_02_conditioning.png", dpi=110)
print(f"figure -> {OUT / 'demo_02_conditioning.png'}")
