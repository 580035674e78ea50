"""Deterministic synthetic speech-like corpora with matching label files.

Utterances are phone sequences: voiced phones are formant-filtered pulse
trains at a speaker-dependent pitch, unvoiced phones are shaped noise, pauses
are digital silence kept under the 100 ms trimming limit so label timings
survive the preparation pipeline unchanged.  Every phone carries the full
53-feature answer vector of the default schema.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .audio import WaveformClip, save_waveform
from .config import FeatureSchema, default_feature_schema

SR = 16000

#: name -> (kind, base amplitude); order defines the category id space.
PHONES = [
    ("pau", "silence", 0.0),
    ("aa", "voiced", 0.42),
    ("eh", "voiced", 0.40),
    ("iy", "voiced", 0.38),
    ("ow", "voiced", 0.40),
    ("uw", "voiced", 0.36),
    ("nn", "voiced", 0.30),
    ("mm", "voiced", 0.28),
    ("ss", "unvoiced", 0.16),
    ("sh", "unvoiced", 0.18),
    ("ff", "unvoiced", 0.14),
    ("tt", "unvoiced", 0.20),
]
PHONE_INDEX = {name: i for i, (name, _, _) in enumerate(PHONES)}

#: per-phone formant targets (Hz); unvoiced entries give noise-shaping bands
_FORMANTS = {
    "aa": (730, 1090, 2440), "eh": (530, 1840, 2480), "iy": (270, 2290, 3010),
    "ow": (570, 840, 2410), "uw": (300, 870, 2240), "nn": (480, 1340, 2470),
    "mm": (400, 1100, 2300), "ss": (4500, 6000, 7000), "sh": (2500, 4000, 5500),
    "ff": (3500, 5500, 7200), "tt": (3000, 4500, 6000),
}

# fixed numeric answer templates per phone type (47 values + 1 positional)
_TEMPLATE_RNG = np.random.default_rng(20240817)
_TEMPLATES = {name: _TEMPLATE_RNG.normal(0.0, 1.0, size=47)
              for name, _, _ in PHONES}


@dataclass
class SpeakerProfile:
    speaker_id: str
    gender: str                 # "m" | "f"
    base_f0: float
    formant_shift: float        # per-speaker vocal-tract scaling
    seed: int

    @classmethod
    def make(cls, speaker_id: str, gender: str, seed: int) -> "SpeakerProfile":
        rng = np.random.default_rng(seed)
        base = 110.0 if gender == "m" else 210.0
        return cls(speaker_id, gender,
                   base_f0=base * float(rng.uniform(0.9, 1.1)),
                   formant_shift=float(rng.uniform(0.9, 1.12)),
                   seed=seed)


def _resonator(freq: float, bandwidth: float):
    r = np.exp(-np.pi * bandwidth / SR)
    theta = 2.0 * np.pi * freq / SR
    a = np.array([1.0, -2.0 * r * np.cos(theta), r * r])
    return np.array([1.0 - r]), a


def _render_phone(name: str, n: int, profile: SpeakerProfile,
                  rng: np.random.Generator, phase0: float) -> tuple[np.ndarray, float]:
    kind = PHONES[PHONE_INDEX[name]][1]
    amp = PHONES[PHONE_INDEX[name]][2]
    if kind == "silence" or n == 0:
        return np.zeros(n), phase0
    t = np.arange(n) / SR
    if kind == "voiced":
        f0 = profile.base_f0 * (1.0 + 0.04 * np.sin(2 * np.pi * 4.5 * t)
                                - 0.05 * t)
        phase = phase0 + np.cumsum(f0) / SR
        src = 2.0 * (phase % 1.0) - 1.0          # sawtooth pulse train
        phase_end = float(phase[-1] % 1.0)
    else:
        src = rng.standard_normal(n)
        src = src - 0.92 * np.concatenate([[0.0], src[:-1]])
        phase_end = phase0
    out = src
    for freq in _FORMANTS[name]:
        b, a = _resonator(min(freq * profile.formant_shift, 7600.0), 120.0)
        out = lfilter(b, a, out)
    peak = np.max(np.abs(out)) or 1.0
    out = out / peak * amp
    ramp = min(80, n // 4)
    if ramp:
        env = np.ones(n)
        env[:ramp] = 0.5 - 0.5 * np.cos(np.linspace(0, np.pi, ramp))
        env[-ramp:] = env[:ramp][::-1]
        out = out * env
    return out, phase_end


@dataclass
class PhoneEvent:
    name: str
    start: float
    end: float


def make_utterance(profile: SpeakerProfile, seconds: float,
                   rng: np.random.Generator) -> tuple[np.ndarray, list[PhoneEvent]]:
    """Render speech-like audio of about ``seconds`` with its phone timeline."""
    voiced = [n for n, k, _ in PHONES if k == "voiced"]
    unvoiced = [n for n, k, _ in PHONES if k == "unvoiced"]
    events: list[PhoneEvent] = []
    pieces: list[np.ndarray] = []
    pos = 0
    phase = 0.0
    since_pause = 0
    target = int(seconds * SR)
    while pos < target:
        since_pause += 1
        if since_pause > int(rng.integers(6, 11)):
            name = "pau"
            dur = int(rng.uniform(0.05, 0.09) * SR)   # always under the trim limit
            since_pause = 0
        elif rng.random() < 0.7:
            name = voiced[int(rng.integers(len(voiced)))]
            dur = int(rng.uniform(0.08, 0.22) * SR)
        else:
            name = unvoiced[int(rng.integers(len(unvoiced)))]
            dur = int(rng.uniform(0.06, 0.14) * SR)
        piece, phase = _render_phone(name, dur, profile, rng, phase)
        events.append(PhoneEvent(name, pos / SR, (pos + dur) / SR))
        pieces.append(piece)
        pos += dur
    return np.concatenate(pieces), events


def phone_features(events: list[PhoneEvent], index: int) -> tuple[np.ndarray, np.ndarray]:
    """(categorical ids, numeric answers) for one phone: quinphone context ids
    plus the 47-value type template and a position-in-utterance feature."""
    def pid(i):
        if 0 <= i < len(events):
            return PHONE_INDEX[events[i].name]
        return PHONE_INDEX["pau"]
    cat = np.array([pid(index - 2), pid(index - 1), pid(index),
                    pid(index + 1), pid(index + 2)], dtype=np.int64)
    numeric = np.concatenate([
        _TEMPLATES[events[index].name],
        [index / max(len(events) - 1, 1)],
    ])
    return cat, numeric


def write_label_file(path, events: list[PhoneEvent],
                     schema: FeatureSchema | None = None) -> None:
    """One line per phone: start end then the 53 features in schema order
    (categorical first)."""
    schema = schema or default_feature_schema()
    lines = []
    for i, ev in enumerate(events):
        cat, numeric = phone_features(events, i)
        values = [""] * schema.n_features
        for j, col_idx in enumerate(schema.categorical_indices):
            values[col_idx] = str(int(cat[j]))
        for j, col_idx in enumerate(schema.numeric_indices):
            values[col_idx] = f"{numeric[j]:.6f}"
        lines.append(f"{ev.start:.7f} {ev.end:.7f} " + " ".join(values))
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass
class SpeakerSpec:
    speaker_id: str
    gender: str
    n_utterances: int
    utterance_seconds: float


def make_corpus(root, speakers: list[SpeakerSpec], seed: int = 0,
                corpus_name: str = "synth") -> Path:
    """Write ``<root>/<corpus>/<speaker>/<utt>.wav`` + ``.lab`` pairs and the
    ``speakers.tsv`` gender metadata; returns the corpus directory."""
    root = Path(root)
    corpus_dir = root / corpus_name
    corpus_dir.mkdir(parents=True, exist_ok=True)
    schema = default_feature_schema()
    meta_lines = []
    for si, spec in enumerate(speakers):
        profile = SpeakerProfile.make(spec.speaker_id, spec.gender,
                                      seed * 1000 + si)
        meta_lines.append(f"{spec.speaker_id}\t{spec.gender}")
        spk_dir = corpus_dir / spec.speaker_id
        spk_dir.mkdir(exist_ok=True)
        for ui in range(spec.n_utterances):
            rng = np.random.default_rng([seed, si, ui])
            seconds = spec.utterance_seconds * float(rng.uniform(0.85, 1.15))
            samples, events = make_utterance(profile, seconds, rng)
            utt = f"utt{ui:04d}"
            clip = WaveformClip(samples, SR, spec.speaker_id,
                                f"{spec.speaker_id}/{utt}")
            save_waveform(spk_dir / f"{utt}.wav", clip)
            write_label_file(spk_dir / f"{utt}.lab", events, schema)
    (corpus_dir / "speakers.tsv").write_text("\n".join(meta_lines) + "\n")
    return corpus_dir


def stationary_source(seconds: float, rng: np.random.Generator) -> np.ndarray:
    """A stationary speech-band noise signal for embedding convergence studies.

    The gain is a fixed constant (not per-realization normalization), so every
    realization draws from the same process.
    """
    n = int(seconds * SR)
    x = rng.standard_normal(n)
    b, a = _resonator(900.0, 600.0)
    x = lfilter(b, a, x)
    b, a = _resonator(2400.0, 800.0)
    x = x + 0.5 * lfilter(b, a, rng.standard_normal(n))
    return np.clip(x * 0.5, -1.0, 1.0)
