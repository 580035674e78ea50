"""Objective distortion metrics and the seed-length adaptation experiment.

Synthesis consumes the reference utterance's own conditioning frames (forced
durations), so reference and synthesized tracks align frame-for-frame and no
time warping is needed.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .audio import WaveformClip, mulaw_decode
from .conditioning import ProsodyTrack
from .errors import DataError

CEPSTRAL_ORDER = 24
_MCD_CONST = 10.0 / np.log(10.0)


@dataclass
class CepstraTrack:
    """Mel cepstra c0..c24 per 5 ms frame."""

    coeffs: np.ndarray
    source: str = ""

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.ndim != 2 or self.coeffs.shape[1] != CEPSTRAL_ORDER + 1:
            raise DataError(f"{self.source}: cepstra must be (frames, "
                            f"{CEPSTRAL_ORDER + 1})")
        if not np.all(np.isfinite(self.coeffs)):
            raise DataError(f"{self.source}: non-finite cepstra")

    def __len__(self):
        return len(self.coeffs)


def extract_cepstra(clip: WaveformClip, win_length: int = 400,
                    hop: int = 80) -> CepstraTrack:
    """Mel cepstra with a 25 ms window and 5 ms hop; one frame per
    conditioning interval."""
    if len(clip.samples) < win_length:
        raise DataError(f"{clip.utterance_id}: clip shorter than one analysis window")
    coeffs = dsp.mel_cepstra(clip.samples, clip.sample_rate, order=CEPSTRAL_ORDER,
                             win_length=win_length, hop=hop)
    return CepstraTrack(coeffs, clip.utterance_id)


def _aligned(ref_len: int, syn_len: int, tolerance: int = 2) -> int:
    if abs(ref_len - syn_len) > tolerance:
        raise DataError(f"track lengths differ by {abs(ref_len - syn_len)} frames "
                        f"(> {tolerance}); refusing to compare")
    return min(ref_len, syn_len)


def mcd(ref: CepstraTrack, syn: CepstraTrack) -> float:
    """Mel-cepstral distortion in dB:
    mean over frames of (10/ln 10) * sqrt(2 * sum_{d=1..24} (c_d - c'_d)^2),
    with the energy coefficient c0 excluded."""
    n = _aligned(len(ref), len(syn))
    if n == 0:
        raise DataError("cannot compute MCD over zero frames")
    diff = ref.coeffs[:n, 1:] - syn.coeffs[:n, 1:]
    return float(np.mean(_MCD_CONST * np.sqrt(2.0 * np.sum(diff**2, axis=1))))


def rmse_f0(ref: ProsodyTrack, syn: ProsodyTrack) -> float | None:
    """RMSE of F0 in linear Hz over frames voiced in BOTH tracks.

    Returns None when no frame is jointly voiced (undefined; callers exclude
    such utterances from aggregation).
    """
    if len(ref.log_f0) != len(syn.log_f0):
        raise DataError(f"prosody tracks differ in length "
                        f"({len(ref.log_f0)} vs {len(syn.log_f0)})")
    both = (ref.uv == 1) & (syn.uv == 1)
    if not np.any(both):
        return None
    diff = np.exp(ref.log_f0[both]) - np.exp(syn.log_f0[both])
    return float(np.sqrt(np.mean(diff**2)))


@dataclass
class DistortionRow:
    speaker: str
    utterance: str
    seed_seconds: float | None      # None outside the adaptation experiment
    mcd_db: float
    rmse_f0_hz: float | None
    frames: int


@dataclass
class DistortionReport:
    rows: list[DistortionRow] = field(default_factory=list)

    def add(self, **kwargs):
        self.rows.append(DistortionRow(**kwargs))

    def speaker_means(self, seed_seconds=None) -> dict[str, tuple[float, float | None]]:
        """Per-speaker mean MCD and mean RMSE-F0 (None-valued rows excluded
        from the RMSE average)."""
        out = {}
        speakers = sorted({r.speaker for r in self.rows
                           if r.seed_seconds == seed_seconds})
        for spk in speakers:
            rows = [r for r in self.rows
                    if r.speaker == spk and r.seed_seconds == seed_seconds]
            mcds = [r.mcd_db for r in rows]
            rmses = [r.rmse_f0_hz for r in rows if r.rmse_f0_hz is not None]
            out[spk] = (float(np.mean(mcds)),
                        float(np.mean(rmses)) if rmses else None)
        return out

    def curve(self, t_values) -> list[tuple[float, float, float | None]]:
        """(T, mean MCD, mean RMSE-F0) across speakers, one row per T."""
        out = []
        for t in t_values:
            per_spk = self.speaker_means(seed_seconds=t)
            if not per_spk:
                raise DataError(f"no rows for seed length {t}")
            mcds = [v[0] for v in per_spk.values()]
            rmses = [v[1] for v in per_spk.values() if v[1] is not None]
            out.append((float(t), float(np.mean(mcds)),
                        float(np.mean(rmses)) if rmses else None))
        return out

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["speaker", "utterance", "T", "mcd_db",
                             "rmse_f0_hz", "frames"])
            for r in self.rows:
                writer.writerow([
                    r.speaker, r.utterance,
                    "" if r.seed_seconds is None else repr(float(r.seed_seconds)),
                    repr(r.mcd_db),
                    "" if r.rmse_f0_hz is None else repr(r.rmse_f0_hz),
                    r.frames,
                ])

    @classmethod
    def load_csv(cls, path) -> "DistortionReport":
        report = cls()
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header = ["speaker", "utterance", "T", "mcd_db", "rmse_f0_hz", "frames"]
        if not rows or rows[0] != header:
            raise DataError(f"{path}: not a distortion report")
        for row in rows[1:]:
            report.add(speaker=row[0], utterance=row[1],
                       seed_seconds=float(row[2]) if row[2] else None,
                       mcd_db=float(row[3]),
                       rmse_f0_hz=float(row[4]) if row[4] else None,
                       frames=int(row[5]))
        return report


def compare_clips(ref: WaveformClip, syn: WaveformClip, f0_config=None
                  ) -> tuple[float, float | None, int]:
    """(MCD dB, RMSE-F0 Hz or None, compared frame count) for two aligned clips."""
    from .conditioning import extract_f0_uv
    ref_cep = extract_cepstra(ref)
    syn_cep = extract_cepstra(syn)
    value = mcd(ref_cep, syn_cep)
    n = min(len(ref_cep), len(syn_cep))
    ref_f0 = extract_f0_uv(ref, f0_config)
    syn_f0 = extract_f0_uv(syn, f0_config)
    m = min(len(ref_f0.log_f0), len(syn_f0.log_f0))
    rmse = rmse_f0(ProsodyTrack(ref_f0.log_f0[:m], ref_f0.uv[:m]),
                   ProsodyTrack(syn_f0.log_f0[:m], syn_f0.uv[:m]))
    return value, rmse, n


@dataclass
class AdaptationSpeaker:
    """Everything the adaptation experiment needs for one unseen speaker:
    a seed pool and test utterances with their (already normalized)
    conditioning frames."""

    speaker_id: str
    seed_pool: list[WaveformClip]
    test_utterances: list[tuple[WaveformClip, "FrameTrack"]]  # noqa: F821


def adaptation_curve(model, encoder, speakers: list[AdaptationSpeaker],
                     t_values=(1.0, 10.0, 60.0, 120.0), seed: int = 0,
                     sampling: str = "categorical", temperature: float = 1.0,
                     f0_config=None) -> DistortionReport:
    """Distortion versus seed length: for each speaker and T, sample a seed,
    average its encoder frames into an embedding, synthesize every test
    utterance with forced conditionings, and score against ground truth."""
    from .embeddings import embed_seed, sample_seed

    report = DistortionReport()
    for si, spk in enumerate(sorted(speakers, key=lambda s: s.speaker_id)):
        for t in t_values:
            rng = np.random.default_rng([seed, si, int(round(t))])
            seed_sig = sample_seed(spk.seed_pool, t, rng, spk.speaker_id)
            emb = embed_seed(seed_sig, encoder)
            for ui, (ref_clip, frames) in enumerate(spk.test_utterances):
                gen_rng = np.random.default_rng([seed, si, int(round(t)), ui])
                codes = model.generate(frames.cat, frames.num, emb.vector,
                                       rng=gen_rng, sampling=sampling,
                                       temperature=temperature)
                syn = WaveformClip(mulaw_decode(codes), ref_clip.sample_rate,
                                   spk.speaker_id, f"{ref_clip.utterance_id}/syn")
                mcd_db, rmse, n = compare_clips(ref_clip, syn, f0_config)
                report.add(speaker=spk.speaker_id, utterance=ref_clip.utterance_id,
                           seed_seconds=float(t), mcd_db=mcd_db, rmse_f0_hz=rmse,
                           frames=n)
    return report


def save_curve_csv(path, curve_rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["T", "mcd_db", "rmse_f0_hz"])
        for t, m, r in curve_rows:
            writer.writerow([repr(float(t)), repr(m), "" if r is None else repr(r)])


def load_curve_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["T", "mcd_db", "rmse_f0_hz"]:
        raise DataError(f"{path}: not a curve summary")
    return [(float(r[0]), float(r[1]), float(r[2]) if r[2] else None)
            for r in rows[1:]]
