"""The acceptance gate: one test per criterion, each printing a PASS line.

Run the gate alone with ``pytest tests/test_acceptance.py -v``.  Criteria 3,
6 and 8 run minutes, not seconds; the full gate fits comfortably in the
stated budgets (criterion 3 under five minutes, criterion 5 under ten,
criterion 8 well under two hours).
"""
import dataclasses
import sys
import time

import numpy as np
import pytest

from conftest import micro_config, micro_model, random_batch
from gradcheck import check_group, check_speaker_table, warm_up
from seedtts.audio import (WaveformClip, mulaw_bin_widths,
                           mulaw_compand, mulaw_decode, mulaw_encode)
from seedtts.cli import main as cli_main
from seedtts.config import write_kv_file, desk_scale
from seedtts.embeddings import (EncoderFrames, MfccStatsEncoder,
                                average_embedding, embed_seed, sample_seed)
from seedtts.evaluation import CepstraTrack, mcd, rmse_f0
from seedtts.conditioning import ProsodyTrack
from seedtts.model import WaveModel, WindowBatch
from seedtts.optim import Adam
from seedtts.simulate import SpeakerSpec, make_corpus, stationary_source
from seedtts.training import PlateauScheduler


def report(criterion, passed, detail):
    line = f"ACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} - {detail}"
    print(line, file=sys.__stdout__, flush=True)
    assert passed, line


def test_criterion_01_mulaw_suite():
    grid = np.linspace(-1.0, 1.0, 100_001)
    codes = mulaw_encode(grid).codes
    roundtrip_ok = np.abs(grid - mulaw_decode(codes)).max() <= mulaw_bin_widths().max()
    monotone_ok = np.all(np.diff(codes) >= 0)
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, 10_000)
    arg = (mulaw_compand(x) + 1.0) / 2.0 * 255.0
    frac = arg - np.floor(arg)
    x = x[np.abs(frac - 0.5) > 1e-9]
    symmetry_ok = np.array_equal(mulaw_encode(-x).codes, 255 - mulaw_encode(x).codes)
    endpoints_ok = (mulaw_encode([1.0]).codes[0] == 255
                    and mulaw_encode([-1.0]).codes[0] == 0)
    report(1, roundtrip_ok and monotone_ok and symmetry_ok and endpoints_ok,
           "round-trip bound, monotonicity, symmetry, endpoint codes 255/0")


@pytest.mark.parametrize("batch", [1, 2, 5])
def test_criterion_02_shape_chain(batch):
    model = micro_model()
    state = model.initial_state("top", batch)
    mid_conds = []
    for _ in range(13):
        cond, state = model.top_tier_step(
            np.zeros((batch, 80)), np.zeros((batch, 5)), state)
        mid_conds.append(cond)
    top_out = np.concatenate(mid_conds, axis=1)
    mstate = model.initial_state("mid", batch)
    n_sample_vectors = 0
    for m in range(top_out.shape[1]):
        scond, mstate = model.mid_tier_step(
            np.zeros((batch, 20)), top_out[:, m], np.zeros((batch, 5)), mstate)
        n_sample_vectors += scond.shape[1]
    wb = random_batch(model, batch=batch)
    logprobs = model.forward_window(wb, want_logprobs=True)["logprobs"]
    ok = (top_out.shape[1] == 52 and n_sample_vectors == 1040
          and logprobs.shape == (batch, 1040, 256))
    report(2, ok, f"batch {batch}: 13 top steps -> 52 mid vectors -> "
                  "1040 sample predictions")


def test_criterion_03_gradient_check():
    t0 = time.time()
    worst_overall = 0.0
    for activation in ("tanh", "relu"):
        model = micro_model(activation=activation, dtype="float64", seed=1)
        batch = random_batch(model, batch=1, seed=0)
        warm_up(model, batch)
        out = model.forward_window(batch, want_grads=True)
        rng = np.random.default_rng(11)
        for name in sorted(model.params):
            worst = check_group(model, batch, name, out["grads"][name], rng,
                                max_entries=16)
            worst_overall = max(worst_overall, worst)
        worst_overall = max(worst_overall, check_speaker_table(
            model, batch, out["d_e"], np.random.default_rng(2)))
    elapsed = time.time() - t0
    report(3, worst_overall < 1e-4 and elapsed < 300,
           f"all parameter groups (incl. learned initial states and speaker "
           f"embeddings), worst rel err {worst_overall:.2e}, {elapsed:.0f}s")


def test_criterion_04_causality():
    model = micro_model(seed=2)
    wb = random_batch(model, batch=1, seed=4)
    base = model.forward_window(wb, want_logprobs=True)["logprobs"]
    rng = np.random.default_rng(9)
    ok = True
    for _ in range(20):
        n = int(rng.integers(0, 1039))
        m = int(rng.integers(n, 1040))
        new_code = int(rng.integers(0, 256))
        tc = wb.target_codes.copy()
        ic = wb.input_codes.copy()
        tc[0, m] = new_code
        if m + 1 < 1040:
            ic[0, m + 1] = new_code
        wb2 = WindowBatch(ic, tc, wb.ctx_codes, wb.cat, wb.num, wb.e, wb.weight)
        probs = model.forward_window(wb2, want_logprobs=True)["logprobs"]
        ok = ok and np.array_equal(base[0, : n + 1], probs[0, : n + 1])
    report(4, ok, "20 probes: prediction at n bitwise invariant to inputs >= n")


def test_criterion_05_init_nll_and_overfit():
    t0 = time.time()
    cfg = dataclasses.replace(micro_config(hidden=16), code_embedding_size=4,
                              mlp_hidden_size=16)
    model = WaveModel(cfg, [4, 3], 4, seed=5)
    wb = random_batch(model, batch=1, seed=0, structured=True)
    init_nll = model.forward_window(wb)["loss"]
    init_ok = abs(init_nll - np.log(256)) / np.log(256) < 0.05
    opt = Adam(model.params, lr=5e-3)
    best = init_nll
    steps = 0
    for steps in range(1, 501):
        out = model.forward_window(wb, want_grads=True)
        opt.step(out["grads"])
        best = min(best, out["loss"])
        if best <= 0.5 * init_nll:
            break
    elapsed = time.time() - t0
    report(5, init_ok and best <= 0.5 * init_nll and elapsed < 600,
           f"init {init_nll:.3f} vs ln256 {np.log(256):.3f}; halved to "
           f"{best:.3f} in {steps} steps, {elapsed:.0f}s")


def test_criterion_06_embedding_average_suite():
    rng = np.random.default_rng(1)
    v = rng.normal(size=100)
    const = average_embedding(EncoderFrames(np.tile(v, (9, 1)), "c")).vector
    const_ok = np.allclose(const, v, atol=1e-9)
    frames = rng.normal(size=(64, 100))
    perm_ok = np.allclose(
        average_embedding(EncoderFrames(frames, "p")).vector,
        average_embedding(EncoderFrames(frames[rng.permutation(64)], "p")).vector,
        atol=1e-9)
    fa, fb = rng.normal(size=(30, 100)), rng.normal(size=(50, 100))
    ea = average_embedding(EncoderFrames(fa, "a")).vector
    eb = average_embedding(EncoderFrames(fb, "b")).vector
    eab = average_embedding(EncoderFrames(np.concatenate([fa, fb]), "ab")).vector
    concat_ok = np.allclose(eab, (30 * ea + 50 * eb) / 80.0, atol=1e-9)

    # Monte-Carlo seed-length convergence on a stationary source
    enc = MfccStatsEncoder()
    ref = average_embedding(enc.encode_array(
        stationary_source(600.0, np.random.default_rng(123456)), "ref")).vector
    t_values = (1.0, 10.0, 60.0, 120.0)
    violations, pairs = 0, 0
    for trial in range(100):
        trial_rng = np.random.default_rng([77, trial])
        pool = [WaveformClip(stationary_source(60.0, trial_rng), 16000, "s",
                             f"s/p{i}") for i in range(2)]
        dists = []
        for t in t_values:
            sig = sample_seed(pool, t, np.random.default_rng([88, trial, int(t)]),
                              "s")
            dists.append(np.linalg.norm(embed_seed(sig, enc).vector - ref))
        for a, b in zip(dists, dists[1:]):
            pairs += 1
            violations += b > a
    mc_ok = violations / pairs < 0.10
    report(6, const_ok and perm_ok and concat_ok and mc_ok,
           f"identity/permutation/concatenation exact; seed-length ordering "
           f"violated in {violations}/{pairs} adjacent pairs")


def test_criterion_07_metric_oracles():
    import math
    rng = np.random.default_rng(4)
    mcd_ok = True
    for _ in range(100):
        n = int(rng.integers(1, 40))
        a, b = rng.normal(size=(n, 25)), rng.normal(size=(n, 25))
        brute = np.mean([(10.0 / math.log(10.0))
                         * math.sqrt(2.0 * sum((a[t][d] - b[t][d]) ** 2
                                               for d in range(1, 25)))
                         for t in range(n)])
        mcd_ok = mcd_ok and abs(mcd(CepstraTrack(a), CepstraTrack(b)) - brute) < 1e-9
    rmse_ok = True
    for _ in range(100):
        n = int(rng.integers(1, 50))
        rf, sf = rng.uniform(60, 400, n), rng.uniform(60, 400, n)
        ru, su = rng.integers(0, 2, n), rng.integers(0, 2, n)
        got = rmse_f0(ProsodyTrack(np.log(rf), ru), ProsodyTrack(np.log(sf), su))
        joint = (ru == 1) & (su == 1)
        if not joint.any():
            rmse_ok = rmse_ok and got is None
        else:
            brute = math.sqrt(np.mean((rf[joint] - sf[joint]) ** 2))
            rmse_ok = rmse_ok and abs(got - brute) < 1e-9
    spot = np.zeros((1, 25))
    spot[0, 7] = 1.0
    spot_value = mcd(CepstraTrack(np.zeros((1, 25))), CepstraTrack(spot))
    spot_ok = abs(spot_value - 6.1421) < 1e-3
    report(7, mcd_ok and rmse_ok and spot_ok,
           f"100 random pairs match brute force to 1e-9; unit-coefficient "
           f"spot value {spot_value:.4f} dB")


@pytest.fixture(scope="module")
def micro_experiment(tiny_corpus, tmp_path_factory):
    """Tiny prepared experiment used by the determinism criterion."""
    root = tmp_path_factory.mktemp("acc_micro")
    cfg = {
        "gru_hidden_size": 8, "speaker_embedding_size": 100, "global_size": 8,
        "categorical_embedding_size": 2, "code_embedding_size": 4,
        "mlp_hidden_size": 8, "batch_size": 4, "initial_learning_rate": 2e-3,
        "epochs": 1, "variant": "encoder_nof0uv",
    }
    write_kv_file(root / "micro.cfg", cfg)
    out = root / "prep"
    assert cli_main(["prepare", "--corpus", str(tiny_corpus), "--config",
                     str(root / "micro.cfg"), "--out", str(out), "--seed", "3",
                     "--speakers-per-gender", "1", "--adapt-per-gender", "1",
                     "--duration-scale", "0.05"]) == 0
    emb = root / "emb.json"
    assert cli_main(["extract-embeddings", "--manifest", str(out),
                     "--encoder-kind", "mfcc", "--T", "2", "--out", str(emb)]) == 0
    run_dir = root / "run"
    assert cli_main(["train", "--manifest", str(out), "--variant",
                     "encoder_nof0uv", "--embeddings", str(emb), "--out",
                     str(run_dir)]) == 0
    return {"root": root, "out": out, "emb": emb, "run": run_dir}


@pytest.mark.slow
def test_criterion_08_desk_scale_end_to_end(tmp_path_factory):
    t_start = time.time()
    root = tmp_path_factory.mktemp("desk")
    corpus = make_corpus(root, [
        SpeakerSpec("deskm", "m", 100, 3.2),     # >= 5 minutes each
        SpeakerSpec("deskf", "f", 100, 3.2),
        SpeakerSpec("extra", "f", 14, 3.0),      # unseen third speaker
    ], seed=21)
    model_cfg, _ = desk_scale()
    cfg = dataclasses.asdict(model_cfg)
    cfg.update(batch_size=16, initial_learning_rate=5e-4, epochs=5,
               variant="encoder_nof0uv", seed=11)
    write_kv_file(root / "desk.cfg", cfg)
    prep, run_dir = root / "prep", root / "run"
    assert cli_main(["prepare", "--corpus", str(corpus), "--config",
                     str(root / "desk.cfg"), "--out", str(prep), "--seed", "11",
                     "--speakers-per-gender", "1", "--adapt-per-gender", "0"]) == 0
    assert cli_main(["extract-embeddings", "--manifest", str(prep),
                     "--encoder-kind", "mfcc", "--T", "60",
                     "--out", str(root / "emb.json")]) == 0
    assert cli_main(["train", "--manifest", str(prep), "--variant",
                     "encoder_nof0uv", "--embeddings", str(root / "emb.json"),
                     "--out", str(run_dir)]) == 0

    from seedtts.training import RunLog
    runlog = RunLog.load_csv(run_dir / "runlog.csv")
    improved = runlog.best_val_nll < runlog.initial_val_nll

    # held-out synthesis scored against ground truth
    from seedtts import pipeline
    from seedtts.audio import load_waveform
    from seedtts.datasets import load_split_plan
    from seedtts.evaluation import compare_clips
    plan = load_split_plan(prep / "split.tsv")
    test_utt = sorted(u for u, s in plan.assignment.items() if s == "test")[0]
    wav = root / "syn.wav"
    assert cli_main(["synthesize", "--manifest", str(prep), "--checkpoint",
                     str(run_dir / "best.npz"), "--embeddings",
                     str(root / "emb.json"), "--utterance", test_utt,
                     "--sampling", "categorical", "--seed", "2",
                     "--out", str(wav)]) == 0
    manifest = pipeline.ExperimentManifest.load(prep)
    catalog = pipeline.load_catalog(manifest.catalog_path)
    ref_utt = [u for spk in catalog.speakers() for u in catalog.utterances[spk]
               if u.utterance_id == test_utt][0]
    ref = pipeline.load_trimmed_clip(ref_utt)
    syn = load_waveform(wav, ref.speaker_id, "syn")
    mcd_db, rmse, frames = compare_clips(ref, syn)
    metrics_ok = np.isfinite(mcd_db) and rmse is not None and np.isfinite(rmse)

    # unseen speaker: seed embedding only, no retraining path exists
    assert cli_main(["extract-embeddings", "--manifest", str(prep),
                     "--encoder-kind", "mfcc", "--T", "10", "--speakers",
                     "extra", "--out", str(root / "emb_extra.json")]) == 0
    unseen_rc = cli_main(["synthesize", "--manifest", str(prep), "--checkpoint",
                          str(run_dir / "best.npz"), "--embeddings",
                          str(root / "emb_extra.json"), "--speaker", "extra",
                          "--utterance", test_utt, "--seed", "2",
                          "--out", str(root / "unseen.wav")])
    elapsed = (time.time() - t_start) / 60.0
    report(8, improved and metrics_ok and unseen_rc == 0 and elapsed < 120,
           f"val NLL {runlog.initial_val_nll:.3f} -> {runlog.best_val_nll:.3f}; "
           f"held-out MCD {mcd_db:.2f} dB, RMSE-F0 {rmse:.1f} Hz over {frames} "
           f"frames; unseen-speaker synthesis ok; {elapsed:.1f} min")


def test_criterion_09_scheduler_state_machine():
    sched = PlateauScheduler(1e-4, patience=3, factor=0.5)
    halved = [sched.step(v) for v in (5.0, 5.1, 5.2, 5.3, 5.4)]
    one_halving = halved == [False, False, False, True, False]
    sched2 = PlateauScheduler(1e-4, patience=3, factor=0.5)
    for v in (5.0, 5.1, 5.1, 5.1, 5.1, 5.1, 5.1):
        sched2.step(v)
    two_ok = abs(sched2.lr - 2.5e-5) < 1e-12
    sched3 = PlateauScheduler(1e-4, patience=3, factor=0.5, min_improvement=1e-4)
    seq = [sched3.step(v) for v in (5.0, 4.99995, 4.99996, 4.99995)]
    threshold_ok = seq == [False, False, False, True]   # all within 1e-4 of best
    sched4 = PlateauScheduler(1e-4, patience=3)
    lrs = []
    for v in (5.0, 4.0, 4.5, 4.5, 4.5, 3.9, 4.2, 4.2, 4.2):
        sched4.step(v)
        lrs.append(sched4.lr)
    nonincreasing = all(b <= a for a, b in zip(lrs, lrs[1:]))
    report(9, one_halving and two_ok and threshold_ok and nonincreasing,
           "patience-3/factor-0.5 halving exact under scripted sequences")


@pytest.mark.slow
def test_criterion_10_byte_identical_reports(micro_experiment, tmp_path):
    out = micro_experiment["out"]
    ckpt = micro_experiment["run"] / "best.npz"
    pairs = []
    for i in (0, 1):
        rep = tmp_path / f"eval{i}.csv"
        assert cli_main(["evaluate", "--manifest", str(out), "--checkpoint",
                         str(ckpt), "--embeddings", str(micro_experiment["emb"]),
                         "--split", "val", "--seed", "5", "--out", str(rep)]) == 0
        pairs.append(rep.read_bytes())
    eval_ok = pairs[0] == pairs[1]
    pairs = []
    for i in (0, 1):
        rep = tmp_path / f"adapt{i}.csv"
        assert cli_main(["adapt-curve", "--manifest", str(out), "--checkpoint",
                         str(ckpt), "--encoder-kind", "mfcc", "--T", "1,2",
                         "--seed", "5", "--out", str(rep)]) == 0
        pairs.append(rep.read_bytes() + rep.with_suffix(".curve.csv").read_bytes())
    adapt_ok = pairs[0] == pairs[1]
    runlog_bytes = (micro_experiment["run"] / "runlog.csv").read_bytes()
    rerun = tmp_path / "rerun"
    assert cli_main(["train", "--manifest", str(out), "--variant",
                     "encoder_nof0uv", "--embeddings",
                     str(micro_experiment["emb"]), "--out", str(rerun)]) == 0
    train_ok = (rerun / "runlog.csv").read_bytes() == runlog_bytes
    report(10, eval_ok and adapt_ok and train_ok,
           "evaluate, adapt-curve and train CSVs byte-identical across reruns")
