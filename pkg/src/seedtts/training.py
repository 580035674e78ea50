"""Optimization loop: Adam, plateau learning-rate halving, truncated BPTT.

Windows of one utterance stream through a fixed batch lane so recurrent state
carries across consecutive windows and resets to the learned initial state at
utterance starts.  Batches mix lanes (and therefore speakers) uniformly at
random; the unbalanced corpus is not rebalanced.
"""
from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import ZERO_CODE, TrainingWindow
from .config import TrainConfig
from .errors import DataError, NumericalError
from .model import WaveModel, WindowBatch
from .optim import Adam

log = logging.getLogger(__name__)


class PlateauScheduler:
    """Halve the learning rate after ``patience`` consecutive epochs whose
    validation loss failed to improve the best by at least ``min_improvement``."""

    def __init__(self, initial_lr: float, patience: int = 3, factor: float = 0.5,
                 min_improvement: float = 1e-4):
        self.lr = initial_lr
        self.patience = patience
        self.factor = factor
        self.min_improvement = min_improvement
        self.best = np.inf
        self.bad_epochs = 0

    def step(self, val_loss: float) -> bool:
        """Feed one epoch's validation loss; returns True when the lr halved."""
        if val_loss < self.best - self.min_improvement:
            self.best = val_loss
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.lr *= self.factor
            self.bad_epochs = 0
            return True
        return False


@dataclass
class RunLog:
    """Per-epoch train/validation NLL, the lr trajectory and checkpoint refs."""

    epochs: list[int] = field(default_factory=list)
    train_nll: list[float] = field(default_factory=list)
    val_nll: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    initial_val_nll: float = float("nan")
    best_epoch: int = -1
    best_val_nll: float = float("inf")
    checkpoints: dict[str, str] = field(default_factory=dict)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_nll", "val_nll", "lr"])
            writer.writerow([0, "", repr(self.initial_val_nll), ""])
            for i, epoch in enumerate(self.epochs):
                writer.writerow([epoch, repr(self.train_nll[i]),
                                 repr(self.val_nll[i]), repr(self.lr[i])])

    @classmethod
    def load_csv(cls, path) -> "RunLog":
        out = cls()
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != ["epoch", "train_nll", "val_nll", "lr"]:
            raise DataError(f"{path}: not a run log")
        for row in rows[1:]:
            if int(row[0]) == 0:
                out.initial_val_nll = float(row[2])
                continue
            out.epochs.append(int(row[0]))
            out.train_nll.append(float(row[1]))
            out.val_nll.append(float(row[2]))
            out.lr.append(float(row[3]))
        if out.val_nll:
            i = int(np.argmin(out.val_nll))
            out.best_epoch = out.epochs[i]
            out.best_val_nll = out.val_nll[i]
        return out


class FixedEmbeddings:
    """Frozen per-speaker embedding vectors (the encoder-averaged route)."""

    trainable = False

    def __init__(self, vectors: dict[str, np.ndarray]):
        self.vectors = {k: np.asarray(v.vector if hasattr(v, "vector") else v,
                                      dtype=np.float64)
                        for k, v in vectors.items()}

    def vector(self, speaker_id: str) -> np.ndarray:
        if speaker_id not in self.vectors:
            raise DataError(f"no embedding for speaker {speaker_id!r}")
        return self.vectors[speaker_id]


class TrainableEmbeddings:
    """Adapter putting a one-hot speaker table under the optimizer."""

    trainable = True

    def __init__(self, table):
        self.table = table

    def vector(self, speaker_id: str) -> np.ndarray:
        return self.table.table[self.table.row(speaker_id)]


def _zero_window(config, n_cat: int, n_num: int) -> TrainingWindow:
    w, s = config.window_samples, config.seq_len
    return TrainingWindow(
        input_codes=np.full(w, ZERO_CODE, dtype=np.int64),
        target_codes=np.full(w, ZERO_CODE, dtype=np.int64),
        cat_frames=np.zeros((s, n_cat), dtype=np.int64),
        num_frames=np.zeros((s, n_num)),
        speaker_id="", utterance_id="", index=0, first=True)


class _LaneStreamer:
    """Streams utterances through ``n_lanes`` parallel lanes, yielding one
    window batch per step with per-lane reset flags and carried context."""

    def __init__(self, utterances: list[list[TrainingWindow]], n_lanes: int,
                 model: WaveModel, embeddings, order: np.ndarray):
        self.model = model
        self.embeddings = embeddings
        cfg = model.config
        first = utterances[0][0]
        self._blank = _zero_window(cfg, first.cat_frames.shape[1],
                                   first.num_frames.shape[1])
        self.queues = [[] for _ in range(n_lanes)]
        for i, idx in enumerate(order):
            self.queues[i % n_lanes].extend(utterances[idx])
        self.pos = [0] * n_lanes
        self.ctx = np.full((n_lanes, cfg.frame_size), ZERO_CODE, dtype=np.int64)
        self.top_state = model.initial_state("top", n_lanes)
        self.mid_state = model.initial_state("mid", n_lanes)

    def done(self) -> bool:
        return all(p >= len(q) for p, q in zip(self.pos, self.queues))

    def next_batch(self):
        n = len(self.queues)
        windows, weight, reset, speakers = [], np.zeros(n), np.zeros(n, bool), []
        for i in range(n):
            if self.pos[i] < len(self.queues[i]):
                win = self.queues[i][self.pos[i]]
                self.pos[i] += 1
                windows.append(win)
                weight[i] = 1.0
                if win.first:
                    reset[i] = True
                    self.ctx[i] = ZERO_CODE
                speakers.append(win.speaker_id)
            else:
                windows.append(self._blank)
                reset[i] = True
                speakers.append(None)
        e = np.zeros((n, self.model.config.speaker_embedding_size))
        for i, spk in enumerate(speakers):
            if spk is not None:
                e[i] = self.embeddings.vector(spk)
        batch = WindowBatch(
            input_codes=np.stack([w.input_codes for w in windows]),
            target_codes=np.stack([w.target_codes for w in windows]),
            ctx_codes=self.ctx.copy(),
            cat=np.stack([w.cat_frames for w in windows]).astype(np.int64),
            num=np.stack([w.num_frames for w in windows]),
            e=e,
            weight=weight,
        )
        return batch, reset, speakers

    def advance(self, batch: WindowBatch, out: dict) -> None:
        self.top_state = out["top_state"]
        self.mid_state = out["mid_state"]
        active = batch.weight > 0
        self.ctx[active] = batch.target_codes[active][:, -self.model.config.frame_size:]


def evaluate_nll(model: WaveModel, utterances: list[list[TrainingWindow]],
                 embeddings, batch_size: int = 32) -> float:
    """Mean teacher-forced NLL (nats/sample) over a split; deterministic."""
    if not utterances:
        raise DataError("cannot evaluate an empty split")
    order = np.arange(len(utterances))
    streamer = _LaneStreamer(utterances, min(batch_size, len(utterances)),
                             model, embeddings, order)
    total, count = 0.0, 0
    w = model.config.window_samples
    while not streamer.done():
        batch, reset, _speakers = streamer.next_batch()
        out = model.forward_window(batch, streamer.top_state, streamer.mid_state, reset)
        active = batch.weight > 0
        total += float(out["per_lane_nll"][active].sum()) * w
        count += int(active.sum()) * w
        streamer.advance(batch, out)
    return total / count


def train(model: WaveModel, train_utts: list[list[TrainingWindow]],
          val_utts: list[list[TrainingWindow]], embeddings,
          config: TrainConfig, out_dir=None) -> RunLog:
    """Run the full loop: per-epoch shuffling, Adam updates, plateau halving,
    best-validation checkpointing.  Reproducible given ``config.seed``.

    A non-finite loss aborts after writing the last good checkpoint.
    """
    if not train_utts:
        raise DataError("no training utterances")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    params = dict(model.params)
    if embeddings.trainable:
        params["speaker_table"] = embeddings.table.table
    optimizer = Adam(params, lr=config.initial_learning_rate,
                     beta1=config.adam_beta1, beta2=config.adam_beta2,
                     eps=config.adam_epsilon)
    scheduler = PlateauScheduler(config.initial_learning_rate,
                                 config.learning_rate_patience,
                                 config.learning_rate_scaling_factor,
                                 config.min_improvement)
    runlog = RunLog()
    n_lanes = min(config.batch_size, len(train_utts))
    last_good = {k: v.copy() for k, v in params.items()}
    w = model.config.window_samples

    def one_epoch(epoch):
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(len(train_utts))
        streamer = _LaneStreamer(train_utts, n_lanes, model, embeddings, order)
        total, count = 0.0, 0
        while not streamer.done():
            batch, reset, speakers = streamer.next_batch()
            out = model.forward_window(batch, streamer.top_state,
                                       streamer.mid_state, reset,
                                       want_grads=True)
            grads = out["grads"]
            if embeddings.trainable:
                table_grad = np.zeros_like(embeddings.table.table)
                for i, spk in enumerate(speakers):
                    if spk is not None:
                        table_grad[embeddings.table.row(spk)] += out["d_e"][i]
                grads["speaker_table"] = table_grad
            optimizer.lr = scheduler.lr
            optimizer.step(grads)
            active = batch.weight > 0
            total += float(out["per_lane_nll"][active].sum()) * w
            count += int(active.sum()) * w
            streamer.advance(batch, out)
        return total / count

    try:
        runlog.initial_val_nll = evaluate_nll(model, val_utts, embeddings,
                                              config.batch_size)
        log.info("epoch 0: val_nll=%.4f", runlog.initial_val_nll)
        for epoch in range(1, config.epochs + 1):
            train_nll = one_epoch(epoch)
            val_nll = evaluate_nll(model, val_utts, embeddings, config.batch_size)
            runlog.epochs.append(epoch)
            runlog.train_nll.append(train_nll)
            runlog.val_nll.append(val_nll)
            runlog.lr.append(scheduler.lr)
            log.info("epoch %d: train_nll=%.4f val_nll=%.4f lr=%.2e",
                     epoch, train_nll, val_nll, scheduler.lr)

            if val_nll < runlog.best_val_nll:
                runlog.best_val_nll = val_nll
                runlog.best_epoch = epoch
                if out_dir:
                    model.save(out_dir / "best.npz")
                    runlog.checkpoints["best"] = str(out_dir / "best.npz")
            scheduler.step(val_nll)
            last_good = {k: v.copy() for k, v in params.items()}
    except NumericalError:
        if out_dir:
            for k, v in last_good.items():
                if k in model.params:
                    model.params[k] = v
            model.save(out_dir / "last_good.npz")
            runlog.checkpoints["last_good"] = str(out_dir / "last_good.npz")
        raise

    if out_dir:
        model.save(out_dir / "last.npz")
        runlog.checkpoints["last"] = str(out_dir / "last.npz")
        runlog.save_csv(out_dir / "runlog.csv")
    return runlog


def run_grid(prepare_variant, config: TrainConfig, out_root=None,
             variants=("onehot_f0uv", "onehot_nof0uv", "encoder_f0uv",
                       "encoder_nof0uv")) -> dict[str, RunLog]:
    """Train the 2x2 experiment grid with shared splits and seeds.

    ``prepare_variant(variant)`` must return
    ``(model, train_utts, val_utts, embeddings)`` built from the same split
    manifest for every variant; encoder variants consume cached 60 s
    embeddings.
    """
    out_root = Path(out_root) if out_root is not None else None
    logs = {}
    for variant in variants:
        model, train_utts, val_utts, embeddings = prepare_variant(variant)
        cfg = dataclasses.replace(config, variant=variant)
        out_dir = out_root / variant if out_root else None
        logs[variant] = train(model, train_utts, val_utts, embeddings, cfg, out_dir)
    return logs
