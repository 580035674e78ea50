"""Corpus cataloging and the base/adaptation split protocol.

Base speakers are the top-duration speakers per gender; each contributes a
~45 s validation split, a ~45 s test split (both at utterance granularity,
measured after silence trimming) and the remainder to training.  Adaptation
speakers are disjoint random picks with a >=120 s seed pool and a ~180 s
adaptation test set; their model weights are never touched.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import VadConfig, load_waveform, trim_silences
from .errors import DataError, InsufficientDataError

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test", "adapt_seed", "adapt_test")


@dataclass
class Utterance:
    speaker_id: str
    utterance_id: str
    path: str
    duration: float        # seconds, post silence-trimming

    def __post_init__(self):
        if self.duration <= 0:
            raise DataError(f"{self.utterance_id}: non-positive duration")


@dataclass
class CorpusCatalog:
    utterances: dict[str, list[Utterance]] = field(default_factory=dict)
    gender: dict[str, str] = field(default_factory=dict)
    corpus: dict[str, str] = field(default_factory=dict)

    def speakers(self) -> list[str]:
        return sorted(self.utterances)

    def duration(self, speaker: str) -> float:
        return sum(u.duration for u in self.utterances[speaker])

    def total_duration(self) -> float:
        return sum(self.duration(s) for s in self.speakers())


def read_speaker_metadata(root: Path) -> dict[str, str]:
    """``speakers.tsv`` in a corpus root: speaker <TAB> gender (m/f)."""
    path = root / "speakers.tsv"
    if not path.exists():
        raise DataError(f"{root}: missing speakers.tsv metadata")
    gender = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or parts[1] not in ("m", "f"):
            raise DataError(f"{path}:{lineno}: expected 'speaker<TAB>m|f'")
        gender[parts[0]] = parts[1]
    return gender


def build_catalog(roots, vad: VadConfig | None = None) -> CorpusCatalog:
    """Scan ``<root>/<speaker>/<utterance>.wav`` layouts into a catalog with
    post-trimming durations; unreadable files are logged and skipped."""
    catalog = CorpusCatalog()
    for root in roots:
        root = Path(root)
        if not root.is_dir():
            raise DataError(f"{root}: not a directory")
        gender = read_speaker_metadata(root)
        for spk_dir in sorted(p for p in root.iterdir() if p.is_dir()):
            speaker = spk_dir.name
            if speaker in catalog.utterances:
                raise DataError(
                    f"speaker id {speaker!r} appears in {catalog.corpus[speaker]} "
                    f"and {root.name}; ids must be namespaced by corpus")
            if speaker not in gender:
                raise DataError(f"{root}: speaker {speaker!r} missing from speakers.tsv")
            utts = []
            for wav in sorted(spk_dir.glob("*.wav")):
                utt_id = f"{speaker}/{wav.stem}"
                try:
                    clip = load_waveform(wav, speaker, utt_id)
                except DataError as exc:
                    log.warning("skipping %s: %s", wav, exc)
                    continue
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    trimmed = trim_silences(clip, vad)
                if len(trimmed.samples) == 0:
                    log.warning("skipping %s: no speech", wav)
                    continue
                utts.append(Utterance(speaker, utt_id, str(wav), trimmed.duration))
            if utts:
                catalog.utterances[speaker] = utts
                catalog.gender[speaker] = gender[speaker]
                catalog.corpus[speaker] = root.name
    if not catalog.utterances:
        raise DataError("no usable utterances found")
    return catalog


@dataclass
class SplitPlan:
    """Per-utterance split assignment for base and adaptation speakers."""

    base_speakers: list[str]
    adaptation_speakers: list[str]
    assignment: dict[str, str]          # utterance_id -> split name
    seed: int

    def utterances(self, split: str, catalog: CorpusCatalog,
                   speaker: str | None = None) -> list[Utterance]:
        if split not in SPLITS:
            raise DataError(f"unknown split {split!r}")
        out = []
        speakers = [speaker] if speaker else catalog.speakers()
        for spk in speakers:
            for utt in catalog.utterances.get(spk, []):
                if self.assignment.get(utt.utterance_id) == split:
                    out.append(utt)
        return out


def _greedy_take(utts: list[Utterance], target: float) -> tuple[list[Utterance], list[Utterance]]:
    """Accumulate utterances until the duration target is first met or passed."""
    taken, rest = [], []
    acc = 0.0
    for u in utts:
        if acc < target:
            taken.append(u)
            acc += u.duration
        else:
            rest.append(u)
    if acc < target:
        raise InsufficientDataError(
            f"{utts[0].speaker_id if utts else '?'}: only {acc:.1f}s available "
            f"for a {target:.1f}s split target")
    return taken, rest


def make_split_plan(catalog: CorpusCatalog, n_per_gender: int = 20,
                    n_adapt_per_gender: int = 5, seed: int = 0,
                    val_seconds: float = 45.0, test_seconds: float = 45.0,
                    seed_pool_seconds: float = 120.0,
                    adapt_test_seconds: float = 180.0,
                    duration_scale: float = 1.0) -> SplitPlan:
    """Deterministic split plan: per gender, the top-duration speakers become
    base speakers and random disjoint picks become adaptation speakers.

    ``duration_scale`` shrinks every duration target so the protocol runs on
    tiny corpora.
    """
    rng = np.random.default_rng(seed)
    val_seconds *= duration_scale
    test_seconds *= duration_scale
    seed_pool_seconds *= duration_scale
    adapt_test_seconds *= duration_scale

    by_gender: dict[str, list[str]] = {"m": [], "f": []}
    for spk in catalog.speakers():
        g = catalog.gender.get(spk)
        if g not in by_gender:
            raise DataError(f"{spk}: unknown gender tag {g!r}")
        by_gender[g].append(spk)

    base, adapt = [], []
    for g in ("f", "m"):
        pool = by_gender[g]
        if len(pool) < n_per_gender + n_adapt_per_gender:
            raise InsufficientDataError(
                f"need {n_per_gender}+{n_adapt_per_gender} speakers of gender "
                f"{g!r}, have {len(pool)}")
        ranked = sorted(pool, key=lambda s: (-catalog.duration(s), s))
        base.extend(ranked[:n_per_gender])
        remaining = sorted(ranked[n_per_gender:])
        picks = rng.choice(len(remaining), size=n_adapt_per_gender, replace=False) \
            if n_adapt_per_gender else []
        adapt.extend(remaining[i] for i in sorted(picks))

    assignment: dict[str, str] = {}
    for spk in base:
        utts = list(catalog.utterances[spk])
        order = rng.permutation(len(utts))
        shuffled = [utts[i] for i in order]
        val, rest = _greedy_take(shuffled, val_seconds)
        test, train = _greedy_take(rest, test_seconds)
        if not train:
            raise InsufficientDataError(f"{spk}: nothing left for training")
        for u in val:
            assignment[u.utterance_id] = "val"
        for u in test:
            assignment[u.utterance_id] = "test"
        for u in train:
            assignment[u.utterance_id] = "train"

    for spk in adapt:
        utts = list(catalog.utterances[spk])
        order = rng.permutation(len(utts))
        shuffled = [utts[i] for i in order]
        pool, rest = _greedy_take(shuffled, seed_pool_seconds)
        test, _unused = _greedy_take(rest, adapt_test_seconds)
        for u in pool:
            assignment[u.utterance_id] = "adapt_seed"
        for u in test:
            assignment[u.utterance_id] = "adapt_test"

    return SplitPlan(sorted(base), sorted(adapt), assignment, seed)


def save_split_plan(path, plan: SplitPlan, catalog: CorpusCatalog) -> None:
    """Text manifest: speaker, utterance, split, duration; one line each."""
    lines = [f"# split plan, seed={plan.seed}",
             "speaker\tutterance\tsplit\tduration_s"]
    durations = {u.utterance_id: u.duration
                 for spk in catalog.speakers() for u in catalog.utterances[spk]}
    for utt_id in sorted(plan.assignment):
        split = plan.assignment[utt_id]
        speaker = utt_id.split("/")[0]
        lines.append(f"{speaker}\t{utt_id}\t{split}\t{durations[utt_id]:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_split_plan(path) -> SplitPlan:
    lines = Path(path).read_text().splitlines()
    seed = 0
    if lines and lines[0].startswith("# split plan"):
        seed = int(lines[0].rsplit("seed=", 1)[1])
        lines = lines[1:]
    if not lines or lines[0].split("\t") != ["speaker", "utterance", "split", "duration_s"]:
        raise DataError(f"{path}: not a split manifest")
    assignment = {}
    base, adapt = set(), set()
    for line in lines[1:]:
        if not line.strip():
            continue
        speaker, utt, split, _dur = line.split("\t")
        if split not in SPLITS:
            raise DataError(f"{path}: unknown split {split!r}")
        assignment[utt] = split
        (adapt if split.startswith("adapt") else base).add(speaker)
    return SplitPlan(sorted(base), sorted(adapt), assignment, seed)
