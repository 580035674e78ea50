"""Command-line entry point wiring the pipeline into the experiment workflows.

Command graph (acyclic)::

    prepare -> train-encoder -> extract-embeddings -> train
            -> synthesize -> evaluate / adapt-curve -> plot

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import conditioning, config as config_mod, datasets, evaluation, pipeline
from .audio import WaveformClip, mulaw_decode, save_waveform
from .config import ModelConfig, TrainConfig, VARIANTS, desk_scale, split_variant
from .errors import ConfigError, DataError, NumericalError
from .model import WaveModel
from .training import FixedEmbeddings, TrainableEmbeddings, evaluate_nll, train

log = logging.getLogger("seedtts")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _load_configs(args) -> tuple[ModelConfig, TrainConfig]:
    if getattr(args, "config", None):
        values = config_mod.read_kv_file(args.config)
        model_cfg, train_cfg = config_mod.configs_from_kv(values)
    else:
        model_cfg, train_cfg = ModelConfig(), TrainConfig()
    if getattr(args, "desk_scale", False):
        model_cfg, train_cfg = desk_scale(model_cfg, train_cfg)
    return model_cfg, train_cfg


def _manifest(args) -> pipeline.ExperimentManifest:
    return pipeline.ExperimentManifest.load(args.manifest)


def _load_experiment(manifest):
    catalog = pipeline.load_catalog(manifest.catalog_path)
    plan = datasets.load_split_plan(manifest.split_path)
    stats = conditioning.load_speaker_stats(manifest.stats_path)
    return catalog, plan, stats


def cmd_prepare(args) -> int:
    model_cfg, train_cfg = _load_configs(args)
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    schema = config_mod.load_feature_schema(args.schema) if args.schema else None
    n_per_gender = args.speakers_per_gender
    n_adapt = args.adapt_per_gender
    if args.desk_scale:
        n_per_gender = min(n_per_gender, 1)
        n_adapt = min(n_adapt, 0)
    manifest = pipeline.prepare(
        args.corpus, args.out, model_cfg, train_cfg, schema=schema,
        seed=train_cfg.seed, n_per_gender=n_per_gender,
        n_adapt_per_gender=n_adapt, duration_scale=args.duration_scale)
    catalog, plan, _ = _load_experiment(manifest)
    print(f"prepared {len(catalog.speakers())} speakers "
          f"({len(plan.base_speakers)} base, {len(plan.adaptation_speakers)} "
          f"adaptation) in {manifest.out_dir}")
    return 0


def cmd_train_encoder(args) -> int:
    from .embeddings import EncoderTrainConfig, train_encoder
    manifest = _manifest(args)
    catalog, plan, _ = _load_experiment(manifest)
    clips = []
    for utt in plan.utterances("train", catalog):
        clips.append(pipeline.load_trimmed_clip(utt))
        if args.max_utterances and len(clips) >= args.max_utterances:
            break
    enc_cfg = EncoderTrainConfig(steps=args.steps, seed=manifest.seed)
    encoder, history = train_encoder(clips, enc_cfg)
    encoder.save(args.out)
    print(f"encoder saved to {args.out}; worker losses "
          f"{json.dumps(history['initial'])} -> {json.dumps(history['final'])}")
    return 0


def _load_encoder(args):
    from .embeddings import ConvSpeechEncoder, MfccStatsEncoder, PrecomputedFrameEncoder
    if args.encoder_kind == "mfcc":
        return MfccStatsEncoder()
    if args.encoder_kind == "precomputed":
        if not args.encoder:
            raise ConfigError("--encoder must point at the frames directory")
        return PrecomputedFrameEncoder(args.encoder)
    if not args.encoder:
        raise ConfigError("--encoder checkpoint required (or use --encoder-kind mfcc)")
    return ConvSpeechEncoder.load(args.encoder)


def cmd_extract_embeddings(args) -> int:
    from .embeddings import embed_seed, sample_seed, save_embeddings
    manifest = _manifest(args)
    catalog, plan, _ = _load_experiment(manifest)
    encoder = _load_encoder(args)
    speakers = args.speakers or plan.base_speakers + plan.adaptation_speakers
    records = {}
    for si, speaker in enumerate(sorted(speakers)):
        if speaker in plan.adaptation_speakers:
            utts = plan.utterances("adapt_seed", catalog, speaker)
        elif speaker in plan.base_speakers:
            utts = plan.utterances("train", catalog, speaker)
        else:
            # outside the plan entirely: any of the speaker's speech may seed
            utts = catalog.utterances.get(speaker, [])
        pool = [pipeline.load_trimmed_clip(u) for u in utts]
        if not pool:
            raise DataError(f"{speaker}: no seed utterances available")
        rng = np.random.default_rng([manifest.seed if args.seed is None
                                     else args.seed, si])
        seed_sig = sample_seed(pool, args.T, rng, speaker)
        records[speaker] = embed_seed(seed_sig, encoder)
    save_embeddings(args.out, records)
    print(f"wrote {len(records)} embeddings (T={args.T:g}s) to {args.out}")
    return 0


def _embedding_provider(manifest, plan, variant, embeddings_path):
    mode, _ = split_variant(variant)
    if mode == "onehot":
        from .embeddings import OneHotSpeakerTable
        rng = np.random.default_rng([manifest.seed, 999])
        return TrainableEmbeddings(OneHotSpeakerTable(
            plan.base_speakers, manifest.model_config.speaker_embedding_size, rng))
    from .embeddings import load_embeddings
    if not embeddings_path:
        raise ConfigError("encoder variants need --embeddings "
                          "(from extract-embeddings)")
    return FixedEmbeddings(load_embeddings(embeddings_path))


def cmd_train(args) -> int:
    manifest = _manifest(args)
    catalog, plan, stats = _load_experiment(manifest)
    variant = args.variant or manifest.train_config.variant
    _, with_f0uv = split_variant(variant)
    train_cfg = dataclasses.replace(manifest.train_config, variant=variant)
    if args.epochs:
        train_cfg = dataclasses.replace(train_cfg, epochs=args.epochs)
    if args.seed is not None:
        train_cfg = dataclasses.replace(train_cfg, seed=args.seed)
    model = pipeline.build_model(manifest, variant)
    train_utts = pipeline.split_windows(manifest, catalog, plan, "train",
                                        stats, with_f0uv)
    val_utts = pipeline.split_windows(manifest, catalog, plan, "val",
                                      stats, with_f0uv)
    embeddings = _embedding_provider(manifest, plan, variant, args.embeddings)
    out_dir = Path(args.out)
    runlog = train(model, train_utts, val_utts, embeddings, train_cfg, out_dir)
    print(f"trained {variant}: best val NLL {runlog.best_val_nll:.4f} "
          f"(epoch {runlog.best_epoch}); artifacts in {out_dir}")
    return 0


def _utterance_by_id(catalog, utt_id):
    for spk in catalog.speakers():
        for u in catalog.utterances[spk]:
            if u.utterance_id == utt_id:
                return u
    raise DataError(f"unknown utterance {utt_id!r}")


def _synth_one(manifest, catalog, stats, model, emb_vector, utt_id, with_f0uv,
               rng, sampling, temperature):
    utt = _utterance_by_id(catalog, utt_id)
    track = pipeline.normalized_track_for(manifest, utt, stats, with_f0uv)
    codes = model.generate(track.cat, track.num, emb_vector, rng=rng,
                           sampling=sampling, temperature=temperature)
    return WaveformClip(mulaw_decode(codes), manifest.model_config.sample_rate,
                        utt.speaker_id, f"{utt_id}/syn"), utt


def cmd_synthesize(args) -> int:
    from .embeddings import load_embeddings
    manifest = _manifest(args)
    catalog, plan, stats = _load_experiment(manifest)
    variant = args.variant or manifest.train_config.variant
    _, with_f0uv = split_variant(variant)
    WaveModel.check_compatible(args.checkpoint, manifest.model_config)
    model = WaveModel.load(args.checkpoint)
    records = load_embeddings(args.embeddings)
    speaker = args.speaker or args.utterance.split("/")[0]
    if speaker not in records:
        raise DataError(f"no embedding record for speaker {speaker!r}")
    rng = np.random.default_rng(manifest.seed if args.seed is None else args.seed)
    clip, _ = _synth_one(manifest, catalog, stats, model, records[speaker].vector,
                         args.utterance, with_f0uv, rng, args.sampling,
                         args.temperature)
    save_waveform(args.out, clip)
    print(f"synthesized {args.utterance} ({clip.duration:.2f}s) -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    from .embeddings import load_embeddings
    manifest = _manifest(args)
    catalog, plan, stats = _load_experiment(manifest)
    variant = args.variant or manifest.train_config.variant
    _, with_f0uv = split_variant(variant)
    WaveModel.check_compatible(args.checkpoint, manifest.model_config)
    model = WaveModel.load(args.checkpoint)
    records = load_embeddings(args.embeddings)

    utts = plan.utterances(args.split, catalog)
    if not utts:
        raise DataError(f"split {args.split!r} is empty")
    test_windows = pipeline.split_windows(manifest, catalog, plan, args.split,
                                          stats, with_f0uv)
    nll = evaluate_nll(model, test_windows,
                       FixedEmbeddings({k: v for k, v in records.items()}),
                       manifest.train_config.batch_size)
    report = evaluation.DistortionReport()
    for ui, utt in enumerate(sorted(utts, key=lambda u: u.utterance_id)):
        if utt.speaker_id not in records:
            raise DataError(f"no embedding for {utt.speaker_id}")
        rng = np.random.default_rng([manifest.seed if args.seed is None
                                     else args.seed, ui])
        syn, _ = _synth_one(manifest, catalog, stats, model,
                            records[utt.speaker_id].vector, utt.utterance_id,
                            with_f0uv, rng, args.sampling, args.temperature)
        ref = pipeline.load_trimmed_clip(utt)
        mcd_db, rmse, n = evaluation.compare_clips(ref, syn)
        report.add(speaker=utt.speaker_id, utterance=utt.utterance_id,
                   seed_seconds=None, mcd_db=mcd_db, rmse_f0_hz=rmse, frames=n)
    report.save_csv(args.out)
    mcds = [r.mcd_db for r in report.rows]
    print(f"split={args.split} teacher-forced NLL {nll:.4f} nats/sample; "
          f"mean MCD {np.mean(mcds):.3f} dB over {len(mcds)} utterances; "
          f"report -> {args.out}")
    return 0


def cmd_adapt_curve(args) -> int:
    manifest = _manifest(args)
    catalog, plan, stats = _load_experiment(manifest)
    variant = args.variant or manifest.train_config.variant
    _, with_f0uv = split_variant(variant)
    WaveModel.check_compatible(args.checkpoint, manifest.model_config)
    model = WaveModel.load(args.checkpoint)
    encoder = _load_encoder(args)
    t_values = [float(t) for t in args.T.split(",")] if isinstance(args.T, str) \
        else list(args.T)
    if not plan.adaptation_speakers:
        raise DataError("split plan has no adaptation speakers")
    speakers = []
    for spk in plan.adaptation_speakers:
        pool = [pipeline.load_trimmed_clip(u)
                for u in plan.utterances("adapt_seed", catalog, spk)]
        tests = []
        for u in plan.utterances("adapt_test", catalog, spk):
            ref = pipeline.load_trimmed_clip(u)
            track = pipeline.normalized_track_for(manifest, u, stats, with_f0uv)
            tests.append((ref, track))
        speakers.append(evaluation.AdaptationSpeaker(spk, pool, tests))
    report = evaluation.adaptation_curve(
        model, encoder, speakers, t_values,
        seed=manifest.seed if args.seed is None else args.seed,
        sampling=args.sampling, temperature=args.temperature)
    report.save_csv(args.out)
    curve = report.curve(t_values)
    curve_path = Path(args.out).with_suffix(".curve.csv")
    evaluation.save_curve_csv(curve_path, curve)
    for t, m, r in curve:
        print(f"T={t:g}s: MCD {m:.3f} dB, RMSE-F0 "
              f"{'n/a' if r is None else f'{r:.2f} Hz'}")
    print(f"rows -> {args.out}; curve -> {curve_path}")
    return 0


def cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from .training import RunLog

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    made = []
    if args.runlog:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for path in args.runlog:
            runlog = RunLog.load_csv(path)
            label = Path(path).parent.name or Path(path).stem
            ax.plot(runlog.epochs, runlog.val_nll, label=f"{label} val")
            ax.plot(runlog.epochs, runlog.train_nll, "--", alpha=0.6,
                    label=f"{label} train")
        ax.set_xlabel("epoch")
        ax.set_ylabel("NLL (nats/sample)")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(out_dir / "loss_curves.png", dpi=120)
        plt.close(fig)
        made.append("loss_curves.png")
    if args.report:
        report = evaluation.DistortionReport.load_csv(args.report)
        fig, axes = plt.subplots(1, 2, figsize=(8, 3.5))
        speakers = sorted({r.speaker for r in report.rows})
        for spk in speakers:
            rows = [r for r in report.rows if r.speaker == spk]
            axes[0].plot(range(len(rows)), [r.mcd_db for r in rows],
                         marker="o", label=spk)
            withf0 = [(i, r.rmse_f0_hz) for i, r in enumerate(rows)
                      if r.rmse_f0_hz is not None]
            if withf0:
                axes[1].plot([i for i, _ in withf0], [v for _, v in withf0],
                             marker="o", label=spk)
        axes[0].set_ylabel("MCD (dB)")
        axes[1].set_ylabel("RMSE F0 (Hz)")
        for ax in axes:
            ax.set_xlabel("utterance")
            if ax.get_legend_handles_labels()[0]:
                ax.legend(fontsize=6)
        fig.tight_layout()
        fig.savefig(out_dir / "distortion.png", dpi=120)
        plt.close(fig)
        made.append("distortion.png")
    if args.adapt:
        curve = evaluation.load_curve_csv(args.adapt)
        fig, axes = plt.subplots(1, 2, figsize=(8, 3.5))
        ts = [c[0] for c in curve]
        axes[0].plot(ts, [c[1] for c in curve], marker="o")
        axes[0].set_ylabel("MCD (dB)")
        rmses = [(t, r) for t, _, r in curve if r is not None]
        if rmses:
            axes[1].plot([t for t, _ in rmses], [r for _, r in rmses], marker="o")
        axes[1].set_ylabel("RMSE F0 (Hz)")
        for ax in axes:
            ax.set_xscale("log")
            ax.set_xlabel("seed length T (s)")
            ax.set_xticks(ts)
            ax.set_xticklabels([f"{t:g}" for t in ts])
        fig.tight_layout()
        fig.savefig(out_dir / "adaptation_curve.png", dpi=120)
        plt.close(fig)
        made.append("adaptation_curve.png")
    if not made:
        raise ConfigError("nothing to plot; pass --runlog, --report and/or --adapt")
    print(f"wrote {', '.join(made)} to {out_dir}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="seedtts",
                     description="Multi-speaker waveform TTS with seed-based "
                                 "speaker embeddings")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=True):
        if manifest:
            p.add_argument("--manifest", required=True,
                           help="experiment directory or manifest.json")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("prepare", help="catalog, trim, quantize, features, split")
    p.add_argument("--corpus", action="append", required=True,
                   help="corpus root (repeatable)")
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--schema", help="feature schema JSON (default: quinphone+48)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--desk-scale", action="store_true")
    p.add_argument("--speakers-per-gender", type=int, default=20)
    p.add_argument("--adapt-per-gender", type=int, default=5)
    p.add_argument("--duration-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train-encoder", help="train the reduced speech encoder")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--max-utterances", type=int, default=0)
    p.set_defaults(func=cmd_train_encoder)

    p = sub.add_parser("extract-embeddings",
                       help="seed-sample and average encoder frames per speaker")
    common(p)
    p.add_argument("--encoder", help="encoder checkpoint or frames dir")
    p.add_argument("--encoder-kind", choices=("conv", "mfcc", "precomputed"),
                   default="conv")
    p.add_argument("--T", type=float, default=60.0,
                   help="seed seconds per speaker (default 60)")
    p.add_argument("--speakers", nargs="*")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract_embeddings)

    p = sub.add_parser("train", help="train one variant")
    common(p)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--embeddings", help="embedding records (encoder variants)")
    p.add_argument("--epochs", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    def synth_opts(p):
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--variant", choices=VARIANTS)
        p.add_argument("--sampling", choices=("categorical", "argmax"),
                       default="categorical")
        p.add_argument("--temperature", type=float, default=1.0)

    p = sub.add_parser("synthesize", help="generate one utterance's waveform")
    common(p)
    synth_opts(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--speaker", help="defaults to the utterance's speaker")
    p.add_argument("--utterance", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate", help="NLL + distortion over a split")
    common(p)
    synth_opts(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("adapt-curve",
                       help="distortion vs seed length for unseen speakers")
    common(p)
    synth_opts(p)
    p.add_argument("--encoder")
    p.add_argument("--encoder-kind", choices=("conv", "mfcc", "precomputed"),
                   default="conv")
    p.add_argument("--T", default="1,10,60,120")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_adapt_curve)

    p = sub.add_parser("plot", help="figures from run logs and reports")
    p.add_argument("--runlog", action="append", default=[])
    p.add_argument("--report")
    p.add_argument("--adapt")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
