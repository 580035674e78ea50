import numpy as np
import pytest

from seedtts.audio import ZERO_CODE
from seedtts.config import ModelConfig
from seedtts.model import WaveModel, WindowBatch


def micro_config(activation="tanh", dtype="float64", hidden=8, e_dim=7):
    """Tiny but complete architecture for fast exact tests."""
    return ModelConfig(
        gru_hidden_size=hidden,
        speaker_embedding_size=e_dim,
        global_size=5,
        categorical_embedding_size=2,
        code_embedding_size=3,
        mlp_hidden_size=hidden,
        activation=activation,
        dtype=dtype,
    )


def micro_model(activation="tanh", dtype="float64", hidden=8, seed=1,
                cats=(4, 3), n_numeric=4, e_dim=7):
    return WaveModel(micro_config(activation, dtype, hidden, e_dim),
                     cat_cardinalities=list(cats), n_numeric=n_numeric, seed=seed)


def random_batch(model, batch=1, seed=0, structured=False):
    """A random window batch; ``structured`` draws codes from a smooth signal
    so there is something learnable."""
    cfg = model.config
    rng = np.random.default_rng(seed)
    w, s = cfg.window_samples, cfg.seq_len
    if structured:
        t = np.arange(w + 1) / cfg.sample_rate
        x = 0.5 * np.sin(2 * np.pi * 220.0 * t) + 0.2 * np.sin(2 * np.pi * 495.0 * t)
        from seedtts.audio import mulaw_encode
        codes = mulaw_encode(np.tile(x, (batch, 1)).reshape(batch, -1)).codes
        codes = codes.reshape(batch, -1)
        input_codes, target_codes = codes[:, :-1], codes[:, 1:]
    else:
        stream = rng.integers(0, cfg.quantization_levels, (batch, w + 1))
        input_codes, target_codes = stream[:, :-1], stream[:, 1:]
    cards = model.cat_cardinalities
    ctx = np.full((batch, cfg.frame_size), ZERO_CODE, dtype=np.int64)
    ctx[:, -1] = input_codes[:, 0]
    return WindowBatch(
        input_codes=np.ascontiguousarray(input_codes),
        target_codes=np.ascontiguousarray(target_codes),
        ctx_codes=ctx,
        cat=rng.integers(0, cards, (batch, s, len(cards))),
        num=rng.normal(size=(batch, s, model.n_numeric)),
        e=rng.normal(size=(batch, cfg.speaker_embedding_size)),
        weight=np.ones(batch),
    )


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """A small synthetic corpus: 2 base speakers per gender + 1 adaptation
    speaker per gender, shortish utterances."""
    from seedtts.simulate import SpeakerSpec, make_corpus
    root = tmp_path_factory.mktemp("corpus")
    make_corpus(root, [
        SpeakerSpec("spk_m0", "m", 10, 3.0),
        SpeakerSpec("spk_m1", "m", 8, 2.5),
        SpeakerSpec("spk_f0", "f", 10, 3.0),
        SpeakerSpec("spk_f1", "f", 8, 2.5),
    ], seed=7)
    return root / "synth"
