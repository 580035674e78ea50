"""End-to-end data preparation and experiment wiring.

``prepare`` runs ingestion, trimming, quantization, feature extraction and
the split protocol over a corpus tree, leaving a cache directory plus text
manifests behind; everything downstream (training, synthesis, evaluation,
adaptation) reads only those artifacts, so each command is reproducible from
the experiment manifest alone.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import audio, conditioning, datasets
from .audio import TrainingWindow, VadConfig, WaveformClip
from .conditioning import F0Config, FrameTrack, SpeakerStats
from .config import (FeatureSchema, ModelConfig, TrainConfig,
                     default_feature_schema, split_variant)
from .datasets import CorpusCatalog, SplitPlan
from .errors import DataError
from .model import WaveModel

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1


@dataclass
class ExperimentManifest:
    """Paths, seeds and configuration references for one experiment."""

    out_dir: str
    corpus_roots: list[str]
    seed: int
    model_config: ModelConfig
    train_config: TrainConfig
    schema: FeatureSchema
    n_per_gender: int
    n_adapt_per_gender: int
    duration_scale: float

    @property
    def root(self) -> Path:
        return Path(self.out_dir)

    @property
    def catalog_path(self) -> Path:
        return self.root / "catalog.tsv"

    @property
    def split_path(self) -> Path:
        return self.root / "split.tsv"

    @property
    def stats_path(self) -> Path:
        return self.root / "speaker_stats.tsv"

    @property
    def cache_dir(self) -> Path:
        return self.root / "cache"

    def save(self) -> None:
        payload = {
            "version": MANIFEST_VERSION,
            "out_dir": self.out_dir,
            "corpus_roots": self.corpus_roots,
            "seed": self.seed,
            "model_config": dataclasses.asdict(self.model_config),
            "train_config": dataclasses.asdict(self.train_config),
            "schema": self.schema.to_dict(),
            "n_per_gender": self.n_per_gender,
            "n_adapt_per_gender": self.n_adapt_per_gender,
            "duration_scale": self.duration_scale,
        }
        (self.root / "manifest.json").write_text(json.dumps(payload, indent=1,
                                                            sort_keys=True))

    @classmethod
    def load(cls, path) -> "ExperimentManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.json"
        if not path.exists():
            raise DataError(f"{path}: no experiment manifest; run 'prepare' first")
        d = json.loads(path.read_text())
        if d.get("version") != MANIFEST_VERSION:
            raise DataError(f"{path}: unsupported manifest version")
        mc = dict(d["model_config"])
        mc["upsampling_ratios"] = tuple(mc["upsampling_ratios"])
        return cls(
            out_dir=d["out_dir"],
            corpus_roots=d["corpus_roots"],
            seed=d["seed"],
            model_config=ModelConfig(**mc),
            train_config=TrainConfig(**d["train_config"]),
            schema=FeatureSchema.from_dict(d["schema"]),
            n_per_gender=d["n_per_gender"],
            n_adapt_per_gender=d["n_adapt_per_gender"],
            duration_scale=d["duration_scale"],
        )


def _cache_paths(manifest: ExperimentManifest, utt_id: str) -> tuple[Path, Path]:
    base = manifest.cache_dir / utt_id
    return base.with_suffix(".qmu"), base.with_suffix(".npz")


def _label_path(wav_path: str) -> Path:
    return Path(wav_path).with_suffix(".lab")


def _prepare_utterance(manifest: ExperimentManifest, utt: datasets.Utterance,
                       vad: VadConfig, f0cfg: F0Config) -> None:
    codes_path, frames_path = _cache_paths(manifest, utt.utterance_id)
    wav = Path(utt.path)
    lab = _label_path(utt.path)
    fresh = (codes_path.exists() and frames_path.exists()
             and codes_path.stat().st_mtime >= wav.stat().st_mtime
             and frames_path.stat().st_mtime >= lab.stat().st_mtime)
    if fresh:
        return
    codes_path.parent.mkdir(parents=True, exist_ok=True)

    clip = audio.load_waveform(wav, utt.speaker_id, utt.utterance_id)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        clip = audio.trim_silences(clip, vad)
    annotations = conditioning.parse_label_file(lab, manifest.schema)
    if not annotations:
        raise DataError(f"{lab}: empty label file")
    label_end = annotations[-1].end_time
    if abs(label_end - clip.duration) > 0.0126:  # two VAD hops of slack
        raise DataError(
            f"{utt.utterance_id}: labels cover {label_end:.3f}s but trimmed "
            f"audio lasts {clip.duration:.3f}s; re-align labels to the "
            "trimmed audio")
    seq = audio.mulaw_encode(clip.samples, utt.utterance_id)
    n_frames = -(-len(seq.codes) // manifest.model_config.frame_size)
    prosody = conditioning.extract_f0_uv(clip, f0cfg,
                                         manifest.model_config.frame_size)
    track = conditioning.upsample_to_frames(
        annotations, manifest.schema, n_frames, prosody,
        manifest.model_config.frame_size, clip.sample_rate,
        utt.speaker_id, utt.utterance_id)
    audio.save_codes(codes_path, seq)
    np.savez(frames_path, cat=track.cat, num=track.num,
             num_names=np.array(track.num_names))


def prepare(corpus_roots, out_dir, model_config: ModelConfig | None = None,
            train_config: TrainConfig | None = None,
            schema: FeatureSchema | None = None, seed: int = 0,
            n_per_gender: int = 20, n_adapt_per_gender: int = 5,
            duration_scale: float = 1.0, vad: VadConfig | None = None,
            f0_config: F0Config | None = None) -> ExperimentManifest:
    """Run the whole preparation pipeline; idempotent over fresh caches.

    Utterances whose labels are missing or unusable are excluded and listed
    in ``excluded.txt``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = ExperimentManifest(
        out_dir=str(out_dir),
        corpus_roots=[str(r) for r in corpus_roots],
        seed=seed,
        model_config=model_config or ModelConfig(),
        train_config=train_config or TrainConfig(),
        schema=schema or default_feature_schema(),
        n_per_gender=n_per_gender,
        n_adapt_per_gender=n_adapt_per_gender,
        duration_scale=duration_scale,
    )
    vad = vad or VadConfig()
    f0cfg = f0_config or F0Config()

    catalog = datasets.build_catalog(corpus_roots, vad)

    excluded: list[str] = []
    for speaker in catalog.speakers():
        kept = []
        for utt in catalog.utterances[speaker]:
            if not _label_path(utt.path).exists():
                excluded.append(f"{utt.utterance_id}\tmissing label file")
                continue
            try:
                _prepare_utterance(manifest, utt, vad, f0cfg)
                kept.append(utt)
            except DataError as exc:
                excluded.append(f"{utt.utterance_id}\t{exc}")
        catalog.utterances[speaker] = kept
    for speaker in [s for s in catalog.speakers() if not catalog.utterances[s]]:
        del catalog.utterances[speaker]
    if excluded:
        (out_dir / "excluded.txt").write_text("\n".join(excluded) + "\n")
        log.warning("excluded %d utterances; see excluded.txt", len(excluded))

    plan = datasets.make_split_plan(
        catalog, n_per_gender, n_adapt_per_gender, seed,
        duration_scale=duration_scale)

    _save_catalog(manifest.catalog_path, catalog)
    datasets.save_split_plan(manifest.split_path, plan, catalog)

    # speaker statistics: base speakers from their training split, adaptation
    # speakers from their seed pool (the only material available without
    # fine-tuning)
    tracks = []
    for utt in plan.utterances("train", catalog) + plan.utterances("adapt_seed", catalog):
        tracks.append(load_frame_track(manifest, utt.utterance_id, utt.speaker_id,
                                       with_f0uv=True))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        stats = conditioning.compute_speaker_stats(tracks)
    conditioning.save_speaker_stats(manifest.stats_path, stats)

    manifest.save()
    return manifest


def _save_catalog(path, catalog: CorpusCatalog) -> None:
    lines = ["speaker\tutterance\tpath\tduration_s\tgender\tcorpus"]
    for spk in catalog.speakers():
        for u in catalog.utterances[spk]:
            lines.append(f"{spk}\t{u.utterance_id}\t{u.path}\t{u.duration:.6f}"
                         f"\t{catalog.gender[spk]}\t{catalog.corpus[spk]}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_catalog(path) -> CorpusCatalog:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("speaker\t"):
        raise DataError(f"{path}: not a catalog")
    catalog = CorpusCatalog()
    for line in lines[1:]:
        if not line.strip():
            continue
        spk, utt, p, dur, gender, corpus = line.split("\t")
        catalog.utterances.setdefault(spk, []).append(
            datasets.Utterance(spk, utt, p, float(dur)))
        catalog.gender[spk] = gender
        catalog.corpus[spk] = corpus
    return catalog


# -- cache loading -------------------------------------------------------------

def load_frame_track(manifest: ExperimentManifest, utt_id: str, speaker_id: str,
                     with_f0uv: bool) -> FrameTrack:
    _, frames_path = _cache_paths(manifest, utt_id)
    if not frames_path.exists():
        raise DataError(f"{frames_path}: missing feature cache; run 'prepare'")
    data = np.load(frames_path)
    num = data["num"]
    names = [str(n) for n in data["num_names"]]
    if not with_f0uv:
        num, names = num[:, :-2], names[:-2]
    return FrameTrack(data["cat"], num, names, speaker_id, utt_id)


def load_utterance_codes(manifest: ExperimentManifest, utt_id: str):
    codes_path, _ = _cache_paths(manifest, utt_id)
    if not codes_path.exists():
        raise DataError(f"{codes_path}: missing code cache; run 'prepare'")
    return audio.load_codes(codes_path, utt_id)


def utterance_windows(manifest: ExperimentManifest, utt: datasets.Utterance,
                      stats: SpeakerStats, with_f0uv: bool,
                      mode: str = "strict") -> list[TrainingWindow]:
    seq = load_utterance_codes(manifest, utt.utterance_id)
    track = load_frame_track(manifest, utt.utterance_id, utt.speaker_id, with_f0uv)
    track = conditioning.zscore_normalize(track, stats)
    return audio.make_windows(seq, track.cat, track.num, manifest.model_config,
                              utt.speaker_id, mode)


def split_windows(manifest: ExperimentManifest, catalog: CorpusCatalog,
                  plan: SplitPlan, split: str, stats: SpeakerStats,
                  with_f0uv: bool) -> list[list[TrainingWindow]]:
    """Per-utterance window lists for a split (consecutive within an utterance,
    as the streaming trainer expects).  Short utterances are silently skipped."""
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for utt in plan.utterances(split, catalog):
            wins = utterance_windows(manifest, utt, stats, with_f0uv)
            if wins:
                out.append(wins)
    if not out:
        raise DataError(f"split {split!r} produced no training windows")
    return out


def build_model(manifest: ExperimentManifest, variant: str | None = None) -> WaveModel:
    variant = variant or manifest.train_config.variant
    _, with_f0uv = split_variant(variant)
    names = conditioning.numeric_column_names(manifest.schema, with_f0uv)
    return WaveModel(manifest.model_config, manifest.schema.cardinalities,
                     len(names), seed=manifest.seed)


def normalized_track_for(manifest: ExperimentManifest, utt: datasets.Utterance,
                         stats: SpeakerStats, with_f0uv: bool) -> FrameTrack:
    track = load_frame_track(manifest, utt.utterance_id, utt.speaker_id, with_f0uv)
    return conditioning.zscore_normalize(track, stats)


def load_trimmed_clip(utt: datasets.Utterance, vad: VadConfig | None = None) -> WaveformClip:
    clip = audio.load_waveform(utt.path, utt.speaker_id, utt.utterance_id)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return audio.trim_silences(clip, vad)
