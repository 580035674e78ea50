"""Per-frame linguistic-prosodic conditioning vectors.

Phone-level label features are repeated across the 80-sample (5 ms) frames
they cover and enriched with absolute/relative duration and, optionally, a
log-F0 contour with voicing flags.  Real-valued columns are z-normalized with
speaker-dependent statistics; relative duration (already bounded), voicing
flags and categorical ids pass through untouched.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .audio import WaveformClip
from .config import FeatureSchema
from .errors import DataError, DegenerateFeatureWarning, LabelError

#: Numeric columns that are never z-normalized.
PASSTHROUGH_COLUMNS = ("rel_duration", "uv")

DEFAULT_UNVOICED_F0 = 100.0   # Hz, used only when an utterance is fully unvoiced


@dataclass
class PhonemeAnnotation:
    """One aligned phone: [start_time, end_time) seconds plus its 53 features."""

    start_time: float
    end_time: float
    categorical: np.ndarray    # integer category ids
    numeric: np.ndarray        # remaining real-valued features

    @property
    def duration(self) -> float:
        return self.end_time - self.start_time


@dataclass
class ProsodyTrack:
    """Frame-rate log-F0 (natural log of Hz) and binary voicing flags.

    Where ``uv`` is 0 the log-F0 value is interpolated/filled rather than
    measured.
    """

    log_f0: np.ndarray
    uv: np.ndarray

    def __post_init__(self):
        self.log_f0 = np.asarray(self.log_f0, dtype=np.float64)
        self.uv = np.asarray(self.uv, dtype=np.int8)
        if self.log_f0.shape != self.uv.shape:
            raise DataError("log_f0 and uv lengths differ")


@dataclass
class FrameTrack:
    """Conditioning frames for one utterance.

    ``cat`` holds raw category ids (embedded by the model, not here); ``num``
    holds the real-valued columns named by ``num_names``.
    """

    cat: np.ndarray            # (frames, n_categorical) int32
    num: np.ndarray            # (frames, n_numeric) float64
    num_names: list[str]
    speaker_id: str
    utterance_id: str
    normalized: bool = False

    def __len__(self):
        return len(self.num)


def numeric_column_names(schema: FeatureSchema, with_f0uv: bool) -> list[str]:
    names = [schema.columns[i].name for i in schema.numeric_indices]
    names += ["abs_duration", "rel_duration"]
    if with_f0uv:
        names += ["log_f0", "uv"]
    return names


def parse_label_file(path, schema: FeatureSchema) -> list[PhonemeAnnotation]:
    """Read a time-aligned label file: one phone per line,
    ``start end feature_1 ... feature_N`` (whitespace separated).

    Times are seconds, or 100 ns HTK units when the schema says so.  Phones
    must be ordered and non-overlapping; categorical fields must be integer
    ids within their declared cardinality.
    """
    path = Path(path)
    scale = 1e-7 if schema.time_unit == "htk" else 1.0
    cat_idx = schema.categorical_indices
    num_idx = schema.numeric_indices
    cards = {i: schema.columns[i].cardinality for i in cat_idx}

    annotations: list[PhonemeAnnotation] = []
    prev_end = None
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        fields = line.split()
        if len(fields) != 2 + schema.n_features:
            raise LabelError(
                f"expected 2 times + {schema.n_features} features, got {len(fields)}",
                path, lineno)
        try:
            start = float(fields[0]) * scale
            end = float(fields[1]) * scale
            values = np.array([float(v) for v in fields[2:]])
        except ValueError as exc:
            raise LabelError(f"non-numeric field ({exc})", path, lineno) from exc
        if end <= start:
            raise LabelError(f"end {end} not after start {start}", path, lineno)
        if prev_end is not None and start < prev_end - 1e-9:
            raise LabelError("phones overlap or are out of order", path, lineno)
        cat = values[cat_idx]
        if np.any(cat != np.round(cat)) or np.any(cat < 0):
            raise LabelError("categorical ids must be non-negative integers",
                             path, lineno)
        for j, i in enumerate(cat_idx):
            if cat[j] >= cards[i]:
                raise LabelError(
                    f"category id {int(cat[j])} out of range for "
                    f"{schema.columns[i].name} (cardinality {cards[i]})",
                    path, lineno)
        annotations.append(PhonemeAnnotation(
            start, end, cat.astype(np.int32), values[num_idx]))
        prev_end = end
    return annotations


def _covering_phones(annotations: list[PhonemeAnnotation], midpoints: np.ndarray,
                     tolerance: float, context: str) -> np.ndarray:
    starts = np.array([a.start_time for a in annotations])
    ends = np.array([a.end_time for a in annotations])
    clipped = np.clip(midpoints, starts[0] + 1e-12, ends[-1] - 1e-12)
    moved = np.abs(clipped - midpoints)
    if np.any(moved > tolerance):
        t = midpoints[np.argmax(moved)]
        raise DataError(f"{context}: frame at {t:.4f}s lies outside the labels "
                        f"([{starts[0]:.4f}, {ends[-1]:.4f}]s)")
    idx = np.searchsorted(ends, clipped, side="right")
    idx = np.minimum(idx, len(annotations) - 1)
    uncovered = clipped < starts[idx] - 1e-9
    if np.any(uncovered):
        t = midpoints[np.argmax(uncovered)]
        raise DataError(f"{context}: frame at {t:.4f}s falls in a label gap")
    return idx


def append_duration_features(annotations: list[PhonemeAnnotation], n_frames: int,
                             frame_size: int = 80, sample_rate: int = 16000,
                             context: str = "") -> np.ndarray:
    """Per-frame (absolute, relative) duration pairs.

    Absolute duration is the covering phone's length in seconds; relative
    duration is the frame midpoint's position inside that phone, in [0, 1].
    """
    if not annotations:
        raise DataError(f"{context}: no annotations")
    dt = frame_size / sample_rate
    midpoints = (np.arange(n_frames) + 0.5) * dt
    idx = _covering_phones(annotations, midpoints, dt / 2 + 1e-9, context or "labels")
    starts = np.array([a.start_time for a in annotations])[idx]
    durs = np.array([a.duration for a in annotations])[idx]
    rel = np.clip((midpoints - starts) / durs, 0.0, 1.0)
    return np.stack([durs, rel], axis=1)


@dataclass
class F0Config:
    """Autocorrelation pitch tracker: 25 ms window, 5 ms hop, 50-500 Hz."""

    win_ms: float = 25.0
    fmin: float = 50.0
    fmax: float = 500.0
    voicing_threshold: float = 0.3    # normalized autocorrelation peak strength
    energy_floor_db: float = -60.0


def extract_f0_uv(clip: WaveformClip, config: F0Config | None = None,
                  frame_size: int = 80) -> ProsodyTrack:
    """Track F0 with the normalized autocorrelation peak in the 50-500 Hz lag
    range; frames whose peak strength falls below the voicing threshold (or
    whose energy is at the noise floor) are unvoiced.

    Unvoiced log-F0 is filled by linear interpolation between neighboring
    voiced values (constant at the edges); a fully unvoiced utterance is
    filled with log(100 Hz).
    """
    config = config or F0Config()
    sr = clip.sample_rate
    x = clip.samples
    count = dsp.n_frames(len(x), frame_size)
    if count == 0:
        return ProsodyTrack(np.zeros(0), np.zeros(0, dtype=np.int8))

    win = int(round(config.win_ms * sr / 1000.0))
    lag_min = int(np.floor(sr / config.fmax))
    lag_max = int(np.ceil(sr / config.fmin))
    frames = dsp.frame_signal(x, win, frame_size)
    acf = dsp.normalized_autocorrelation(frames, lag_max + 1)
    energy_db = dsp.frame_rms_db(x, win, frame_size)

    band = acf[:, lag_min:lag_max + 1]
    peak_off = np.argmax(band, axis=1)
    lags = (peak_off + lag_min).astype(np.float64)
    strength = band[np.arange(count), peak_off]

    # parabolic peak refinement where neighbors exist
    li = peak_off + lag_min
    ok = (li >= 1) & (li + 1 < acf.shape[1])
    r0 = acf[np.arange(count), np.clip(li - 1, 0, None)]
    r1 = acf[np.arange(count), li]
    r2 = acf[np.arange(count), np.minimum(li + 1, acf.shape[1] - 1)]
    denom = (r0 - 2 * r1 + r2)
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.where(np.abs(denom) > 1e-12, 0.5 * (r0 - r2) / denom, 0.0)
    lags = np.where(ok, lags + np.clip(delta, -0.5, 0.5), lags)

    voiced = (strength >= config.voicing_threshold) & (energy_db > config.energy_floor_db)
    f0 = np.where(voiced, sr / np.maximum(lags, 1.0), 0.0)

    log_f0 = np.full(count, np.log(DEFAULT_UNVOICED_F0))
    vidx = np.flatnonzero(voiced)
    if len(vidx):
        values = np.log(f0[vidx])
        log_f0 = np.interp(np.arange(count), vidx, values)  # constant at edges
    return ProsodyTrack(log_f0, voiced.astype(np.int8))


def upsample_to_frames(annotations: list[PhonemeAnnotation],
                       schema: FeatureSchema, n_frames: int,
                       prosody: ProsodyTrack | None = None,
                       frame_size: int = 80, sample_rate: int = 16000,
                       speaker_id: str = "", utterance_id: str = "") -> FrameTrack:
    """Build one conditioning frame per 80-sample interval: phone features
    repeated piecewise-constant, duration pair appended, prosody (when given)
    appended last."""
    if not annotations:
        raise DataError(f"{utterance_id}: no annotations")
    with_f0uv = prosody is not None
    if with_f0uv and len(prosody.log_f0) != n_frames:
        raise DataError(f"{utterance_id}: prosody has {len(prosody.log_f0)} frames, "
                        f"expected {n_frames}")
    dt = frame_size / sample_rate
    midpoints = (np.arange(n_frames) + 0.5) * dt
    idx = _covering_phones(annotations, midpoints, dt / 2 + 1e-9,
                           utterance_id or "labels")
    cat = np.stack([annotations[i].categorical for i in idx]) if n_frames else \
        np.zeros((0, len(schema.categorical_indices)), dtype=np.int32)
    numeric = np.stack([annotations[i].numeric for i in idx]) if n_frames else \
        np.zeros((0, len(schema.numeric_indices)))
    durations = append_duration_features(annotations, n_frames, frame_size,
                                         sample_rate, utterance_id)
    cols = [numeric, durations]
    if with_f0uv:
        cols.append(np.stack([prosody.log_f0, prosody.uv.astype(np.float64)], axis=1))
    return FrameTrack(
        cat=cat.astype(np.int32),
        num=np.concatenate(cols, axis=1),
        num_names=numeric_column_names(schema, with_f0uv),
        speaker_id=speaker_id,
        utterance_id=utterance_id,
    )


@dataclass
class SpeakerStats:
    """Per-speaker mean/std for every z-normalized conditioning column."""

    mean: dict[str, dict[str, float]] = field(default_factory=dict)
    std: dict[str, dict[str, float]] = field(default_factory=dict)

    def speakers(self):
        return sorted(self.mean)

    def columns(self, speaker: str):
        return self.mean[speaker].keys()


def compute_speaker_stats(tracks: list[FrameTrack]) -> SpeakerStats:
    """Population mean/std per speaker over all given (training) frames.

    Accumulation visits utterances in sorted id order so the result does not
    depend on caller ordering.  Constant columns are excluded with a warning;
    the bounded passthrough columns are never normalized.
    """
    by_speaker: dict[str, list[FrameTrack]] = {}
    for t in tracks:
        by_speaker.setdefault(t.speaker_id, []).append(t)

    stats = SpeakerStats()
    for speaker in sorted(by_speaker):
        group = sorted(by_speaker[speaker], key=lambda t: t.utterance_id)
        names = group[0].num_names
        for t in group:
            if t.num_names != names:
                raise DataError(f"{speaker}: inconsistent conditioning columns")
            if t.normalized:
                raise DataError(f"{t.utterance_id}: already normalized")
        count = sum(len(t) for t in group)
        if count < 2:
            raise DataError(f"{speaker}: need at least 2 frames for statistics")
        total = np.zeros(len(names))
        total_sq = np.zeros(len(names))
        for t in group:
            total += t.num.sum(axis=0)
            total_sq += (t.num ** 2).sum(axis=0)
        mean = total / count
        var = np.maximum(total_sq / count - mean**2, 0.0)
        std = np.sqrt(var)
        stats.mean[speaker] = {}
        stats.std[speaker] = {}
        for j, name in enumerate(names):
            if name in PASSTHROUGH_COLUMNS:
                continue
            if std[j] < 1e-12:
                warnings.warn(f"{speaker}: feature {name!r} is constant; excluded "
                              "from normalization", DegenerateFeatureWarning)
                continue
            stats.mean[speaker][name] = float(mean[j])
            stats.std[speaker][name] = float(std[j])
    return stats


def zscore_normalize(track: FrameTrack, stats: SpeakerStats) -> FrameTrack:
    """(x - mean)/std per normalized column; passthrough and excluded columns
    are copied unchanged."""
    if track.normalized:
        raise DataError(f"{track.utterance_id}: already normalized")
    if track.speaker_id not in stats.mean:
        raise DataError(f"no statistics for speaker {track.speaker_id!r}")
    mean = stats.mean[track.speaker_id]
    std = stats.std[track.speaker_id]
    num = track.num.copy()
    for j, name in enumerate(track.num_names):
        if name in mean:
            num[:, j] = (num[:, j] - mean[name]) / std[name]
    return FrameTrack(track.cat.copy(), num, list(track.num_names),
                      track.speaker_id, track.utterance_id, normalized=True)


def zscore_denormalize(track: FrameTrack, stats: SpeakerStats) -> FrameTrack:
    if track.speaker_id not in stats.mean:
        raise DataError(f"no statistics for speaker {track.speaker_id!r}")
    mean = stats.mean[track.speaker_id]
    std = stats.std[track.speaker_id]
    num = track.num.copy()
    for j, name in enumerate(track.num_names):
        if name in mean:
            num[:, j] = num[:, j] * std[name] + mean[name]
    return FrameTrack(track.cat.copy(), num, list(track.num_names),
                      track.speaker_id, track.utterance_id, normalized=False)


# -- persisted statistics table -------------------------------------------------

def save_speaker_stats(path, stats: SpeakerStats) -> None:
    """Text table: speaker <TAB> feature <TAB> mean <TAB> std."""
    lines = ["speaker\tfeature\tmean\tstd"]
    for speaker in stats.speakers():
        for name in stats.columns(speaker):
            lines.append(f"{speaker}\t{name}\t{stats.mean[speaker][name]!r}\t"
                         f"{stats.std[speaker][name]!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_speaker_stats(path) -> SpeakerStats:
    stats = SpeakerStats()
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].split("\t") != ["speaker", "feature", "mean", "std"]:
        raise DataError(f"{path}: not a speaker statistics table")
    for line in lines[1:]:
        if not line.strip():
            continue
        speaker, name, mean, std = line.split("\t")
        stats.mean.setdefault(speaker, {})[name] = float(mean)
        stats.std.setdefault(speaker, {})[name] = float(std)
    return stats
