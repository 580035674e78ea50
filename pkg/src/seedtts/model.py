"""Conditioned hierarchical autoregressive waveform model.

Two frame-level GRU tiers (80-sample and 20-sample frames, upsampling ratios
4 and 20) condition a sample-level MLP that predicts a 256-way distribution
over mu-law codes.  A single learned affine map combines the speaker embedding
with the expanded linguistic frame into a global conditioning vector that is
concatenated to every tier's input.  Frame-tier inputs are real-valued
(mu-law-decoded) samples; the sample level embeds the last 20 codes.

Everything is plain numpy with hand-derived gradients.  Within one training
window the layout is::

    ext[j]       = code at raw position (window_start - 80 + j),  j in [0, 1119)
    top step t   consumes ext[80t   : 80t+80)   -> 4 mid conditioning vectors
    mid step m   consumes ext[60+20m: 80+20m)   -> 20 sample conditioning vectors
    prediction p consumes ext[60+p  : 80+p)     -> distribution for target[p]

so the 80 ``ext`` context codes ahead of the window (zero-amplitude at an
utterance start, the previous window's tail under truncated BPTT) give every
prediction a full receptive history while windows stay non-overlapping.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np
from scipy.special import expit as sigmoid

from .audio import ZERO_CODE, mulaw_decode
from .config import ModelConfig
from .errors import ConfigError, DataError, NumericalError

CKPT_VERSION = 1


@dataclass
class WindowBatch:
    """A batch of training windows plus the streaming context they need."""

    input_codes: np.ndarray          # (B, W) int
    target_codes: np.ndarray         # (B, W) int
    ctx_codes: np.ndarray            # (B, 80) int; codes preceding the window
    cat: np.ndarray                  # (B, S, n_cat) int
    num: np.ndarray                  # (B, S, n_num) float
    e: np.ndarray                    # (B, E) float
    weight: np.ndarray               # (B,) float; 0 disables a lane

    @property
    def batch_size(self) -> int:
        return len(self.input_codes)


def batch_from_windows(windows, e_vectors, ctx_codes=None, weight=None) -> WindowBatch:
    """Stack TrainingWindow objects; missing context defaults to zero-amplitude."""
    b = len(windows)
    input_codes = np.stack([w.input_codes for w in windows])
    target_codes = np.stack([w.target_codes for w in windows])
    if ctx_codes is None:
        ctx_codes = np.full((b, 80), ZERO_CODE, dtype=np.int64)
        ctx_codes[:, -1] = input_codes[:, 0]
    return WindowBatch(
        input_codes=input_codes,
        target_codes=target_codes,
        ctx_codes=np.asarray(ctx_codes, dtype=np.int64),
        cat=np.stack([w.cat_frames for w in windows]).astype(np.int64),
        num=np.stack([w.num_frames for w in windows]),
        e=np.asarray(e_vectors, dtype=np.float64),
        weight=np.ones(b) if weight is None else np.asarray(weight, dtype=np.float64),
    )


def _lecun(rng, shape, scale=1.0):
    fan_in = shape[0]
    bound = scale * np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _gru_step(x, h, Wx, Wh, bx, bh):
    hidden = h.shape[-1]
    gx = x @ Wx + bx
    gh = h @ Wh + bh
    z = sigmoid(gx[:, :hidden] + gh[:, :hidden])
    r = sigmoid(gx[:, hidden:2 * hidden] + gh[:, hidden:2 * hidden])
    hn = gh[:, 2 * hidden:]
    n = np.tanh(gx[:, 2 * hidden:] + r * hn)
    h_new = (1.0 - z) * n + z * h
    return h_new, (x, h, z, r, n, hn)


def _gru_step_backward(d_hnew, cache, Wx, Wh, grads, prefix):
    x, h, z, r, n, hn = cache
    dz = d_hnew * (h - n)
    dn = d_hnew * (1.0 - z)
    dh = d_hnew * z
    dan = dn * (1.0 - n * n)
    dr = dan * hn
    dhn = dan * r
    daz = dz * z * (1.0 - z)
    dar = dr * r * (1.0 - r)
    dgx = np.concatenate([daz, dar, dan], axis=1)
    dgh = np.concatenate([daz, dar, dhn], axis=1)
    grads[prefix + ".Wx"] += x.T @ dgx
    grads[prefix + ".Wh"] += h.T @ dgh
    grads[prefix + ".bx"] += dgx.sum(axis=0)
    grads[prefix + ".bh"] += dgh.sum(axis=0)
    dx = dgx @ Wx.T
    dh += dgh @ Wh.T
    return dx, dh


def _scatter_rows(table_shape, indices, values):
    """Sum ``values`` rows into a zero table at ``indices`` (deterministic)."""
    flat_idx = indices.reshape(-1)
    flat_val = values.reshape(len(flat_idx), -1)
    out = np.zeros(table_shape)
    for col in range(table_shape[1]):
        out[:, col] = np.bincount(flat_idx, weights=flat_val[:, col],
                                  minlength=table_shape[0])
    return out


def _log_softmax(logits, want_probs: bool = False):
    m = logits.max(axis=-1, keepdims=True)
    logp = logits - m
    e = np.exp(logp)
    total = e.sum(axis=-1, keepdims=True)
    logp -= np.log(total)
    if want_probs:
        e /= total
        return logp, e
    return logp, None


class WaveModel:
    """The conditioned two-tier recurrent waveform generator."""

    def __init__(self, config: ModelConfig, cat_cardinalities: list[int],
                 n_numeric: int, seed: int = 0):
        self.config = config
        self.cat_cardinalities = list(int(c) for c in cat_cardinalities)
        self.n_numeric = int(n_numeric)
        self.dtype = np.dtype(config.dtype)
        self._decode_table = mulaw_decode(
            np.arange(config.quantization_levels)).astype(self.dtype)
        self.params = self._init_params(np.random.default_rng(seed))

    # -- construction ------------------------------------------------------

    @property
    def expanded_feature_dim(self) -> int:
        return self.n_numeric + len(self.cat_cardinalities) * \
            self.config.categorical_embedding_size

    def _init_params(self, rng) -> dict[str, np.ndarray]:
        cfg = self.config
        hidden = cfg.gru_hidden_size
        cdim = cfg.categorical_embedding_size
        p: dict[str, np.ndarray] = {}
        p["cond.W"] = _lecun(rng, (cfg.speaker_embedding_size +
                                   self.expanded_feature_dim, cfg.global_size))
        p["cond.b"] = np.zeros(cfg.global_size)
        for k, card in enumerate(self.cat_cardinalities):
            p[f"cat_emb.{k}"] = rng.uniform(-0.1, 0.1, size=(card, cdim))

        def gru(prefix, in_dim):
            p[f"{prefix}.Wx"] = _lecun(rng, (in_dim, 3 * hidden))
            p[f"{prefix}.Wh"] = _lecun(rng, (hidden, 3 * hidden))
            p[f"{prefix}.bx"] = np.zeros(3 * hidden)
            p[f"{prefix}.bh"] = np.zeros(3 * hidden)
            p[f"{prefix}.h0"] = rng.uniform(-0.1, 0.1, size=hidden)

        r_top, r_mid = cfg.upsampling_ratios
        gru("top", cfg.frame_size + cfg.global_size)
        p["top.Wup"] = _lecun(rng, (hidden, r_top * hidden))
        p["top.bup"] = np.zeros(r_top * hidden)
        gru("mid", cfg.mid_frame_size + cfg.global_size + hidden)
        p["mid.Wup"] = _lecun(rng, (hidden, r_mid * hidden))
        p["mid.bup"] = np.zeros(r_mid * hidden)

        p["code_emb"] = rng.uniform(-0.1, 0.1,
                                    size=(cfg.quantization_levels, cfg.code_embedding_size))
        in_smp = cfg.ar_order * cfg.code_embedding_size + hidden + cfg.global_size
        p["mlp.W1"] = _lecun(rng, (in_smp, cfg.mlp_hidden_size))
        p["mlp.b1"] = np.zeros(cfg.mlp_hidden_size)
        p["mlp.W2"] = _lecun(rng, (cfg.mlp_hidden_size, cfg.mlp_hidden_size))
        p["mlp.b2"] = np.zeros(cfg.mlp_hidden_size)
        p["mlp.W3"] = _lecun(rng, (cfg.mlp_hidden_size, cfg.quantization_levels), scale=0.1)
        p["mlp.b3"] = np.zeros(cfg.quantization_levels)
        return {k: v.astype(self.dtype) for k, v in p.items()}

    def _act(self, a):
        if self.config.activation == "relu":
            return np.maximum(a, 0.0)
        return np.tanh(a)

    def _act_backward(self, d, a, out):
        if self.config.activation == "relu":
            return d * (a > 0)
        return d * (1.0 - out * out)

    # -- single-step API (used by generation and the equivalence tests) ------

    def build_global_conditioning(self, e, cat, num):
        """c = W [e ; expanded(l)] + b for each frame; categorical ids are
        expanded to their learned embeddings here."""
        e = np.asarray(e, dtype=self.dtype)
        cat = np.asarray(cat, dtype=np.int64)
        num = np.asarray(num, dtype=self.dtype)
        single = e.ndim == 1
        if single:
            e, cat, num = e[None], cat[None], num[None]
        if num.ndim == 2:           # (B, n_num) -> one frame per row
            cat, num = cat[:, None, :], num[:, None, :]
            frames_axis = False
        else:
            frames_axis = True
        if num.shape[-1] != self.n_numeric or cat.shape[-1] != len(self.cat_cardinalities):
            raise DataError(
                f"conditioning has {cat.shape[-1]} categorical / {num.shape[-1]} "
                f"numeric columns; model expects {len(self.cat_cardinalities)} / "
                f"{self.n_numeric}")
        if e.shape[-1] != self.config.speaker_embedding_size:
            raise DataError("speaker embedding dimension mismatch")
        parts = [num]
        for k in range(len(self.cat_cardinalities)):
            parts.append(self.params[f"cat_emb.{k}"][cat[..., k]])
        l_exp = np.concatenate(parts, axis=-1)
        e_tiled = np.broadcast_to(e[:, None, :], (len(e), l_exp.shape[1], e.shape[1]))
        x = np.concatenate([e_tiled, l_exp], axis=-1)
        c = x @ self.params["cond.W"] + self.params["cond.b"]
        if not frames_axis:
            c = c[:, 0]
        return c[0] if single else c

    def _tier_step(self, prefix, x, state):
        p = self.params
        state = np.asarray(state, dtype=self.dtype)
        if state.shape[-1] != self.config.gru_hidden_size:
            raise DataError("state dimension mismatch")
        h, _ = _gru_step(x, state, p[f"{prefix}.Wx"], p[f"{prefix}.Wh"],
                         p[f"{prefix}.bx"], p[f"{prefix}.bh"])
        up = h @ p[f"{prefix}.Wup"] + p[f"{prefix}.bup"]
        ratio = up.shape[-1] // h.shape[-1]
        return up.reshape(len(h), ratio, h.shape[-1]), h

    def initial_state(self, tier: str, batch: int) -> np.ndarray:
        return np.repeat(self.params[f"{tier}.h0"][None, :], batch, axis=0)

    def top_tier_step(self, prev_frame, c, state):
        """One top-tier step on the previous 80 samples (real-valued), giving
        4 conditioning vectors for the mid tier plus the new state."""
        prev_frame = np.atleast_2d(np.asarray(prev_frame, dtype=self.dtype))
        c = np.atleast_2d(np.asarray(c, dtype=self.dtype))
        if prev_frame.shape[1] != self.config.frame_size:
            raise DataError(f"top tier expects {self.config.frame_size} samples")
        x = np.concatenate([prev_frame, c], axis=1)
        return self._tier_step("top", x, np.atleast_2d(state))

    def mid_tier_step(self, prev_frame, top_conditioning, c, state):
        """One mid-tier step on the previous 20 samples, upsampled to 20
        per-sample conditioning vectors."""
        prev_frame = np.atleast_2d(np.asarray(prev_frame, dtype=self.dtype))
        c = np.atleast_2d(np.asarray(c, dtype=self.dtype))
        top_conditioning = np.atleast_2d(np.asarray(top_conditioning, dtype=self.dtype))
        if prev_frame.shape[1] != self.config.mid_frame_size:
            raise DataError(f"mid tier expects {self.config.mid_frame_size} samples")
        x = np.concatenate([prev_frame, c, top_conditioning], axis=1)
        return self._tier_step("mid", x, np.atleast_2d(state))

    def sample_level_predict(self, prev_codes, sample_conditioning, c):
        """Distribution over the 256 codes from the last ``ar_order`` codes
        (longer histories are allowed; only the last 20 matter)."""
        prev_codes = np.atleast_2d(np.asarray(prev_codes, dtype=np.int64))
        order = self.config.ar_order
        if prev_codes.shape[1] < order:
            raise DataError(f"need at least {order} previous codes")
        prev_codes = prev_codes[:, -order:]
        emb = self.params["code_emb"][prev_codes].reshape(len(prev_codes), -1)
        x = np.concatenate([
            emb,
            np.atleast_2d(np.asarray(sample_conditioning, dtype=self.dtype)),
            np.atleast_2d(np.asarray(c, dtype=self.dtype)),
        ], axis=1)
        p = self.params
        h1 = self._act(x @ p["mlp.W1"] + p["mlp.b1"])
        h2 = self._act(h1 @ p["mlp.W2"] + p["mlp.b2"])
        logits = h2 @ p["mlp.W3"] + p["mlp.b3"]
        _, probs = _log_softmax(np.asarray(logits, dtype=np.float64), want_probs=True)
        return probs

    # -- window forward/backward --------------------------------------------

    def _check_batch(self, batch: WindowBatch):
        cfg = self.config
        w = cfg.window_samples
        if batch.input_codes.shape[1] != w or batch.target_codes.shape[1] != w:
            raise DataError(f"windows must hold {w} codes")
        if batch.cat.shape[1] != cfg.seq_len or batch.num.shape[1] != cfg.seq_len:
            raise DataError(f"windows must hold {cfg.seq_len} conditioning frames")
        if batch.ctx_codes.shape[1] != cfg.frame_size:
            raise DataError(f"context must hold {cfg.frame_size} codes")

    def forward_window(self, batch: WindowBatch, top_state=None, mid_state=None,
                       reset_mask=None, want_grads: bool = False,
                       want_logprobs: bool = False):
        """Teacher-forced forward pass over a window batch.

        Returns a dict with the weighted mean NLL (nats/sample), carried tier
        states, and optionally parameter gradients (including ``d_e``, the
        gradient w.r.t. the speaker embeddings) and per-position log-probs.
        States default to the learned initial state; ``reset_mask`` marks
        lanes that restart from it (their initial-state gradient flows into
        ``h0``).
        """
        cfg = self.config
        self._check_batch(batch)
        p = self.params
        b = batch.batch_size
        seq, frame, hidden = cfg.seq_len, cfg.frame_size, cfg.gru_hidden_size
        mid_frame = cfg.mid_frame_size
        r_top, r_mid = cfg.upsampling_ratios
        n_top, n_mid = seq, seq * r_top
        w = cfg.window_samples
        order = cfg.ar_order
        q_levels = cfg.quantization_levels

        if reset_mask is None:
            reset_mask = np.ones(b, dtype=bool) if top_state is None else np.zeros(b, dtype=bool)
        if top_state is None:
            top_state = self.initial_state("top", b)
        if mid_state is None:
            mid_state = self.initial_state("mid", b)
        top_state = np.where(reset_mask[:, None], p["top.h0"][None, :], top_state)
        mid_state = np.where(reset_mask[:, None], p["mid.h0"][None, :], mid_state)
        top_state = top_state.astype(self.dtype)
        mid_state = mid_state.astype(self.dtype)

        ext_codes = np.concatenate([batch.ctx_codes, batch.input_codes[:, 1:]], axis=1)
        ext_real = self._decode_table[ext_codes]

        # global conditioning per frame
        cat = np.asarray(batch.cat, dtype=np.int64)
        num = np.asarray(batch.num, dtype=self.dtype)
        parts = [num]
        for k in range(len(self.cat_cardinalities)):
            parts.append(p[f"cat_emb.{k}"][cat[..., k]])
        l_exp = np.concatenate(parts, axis=2)
        e = np.asarray(batch.e, dtype=self.dtype)
        e_tiled = np.broadcast_to(e[:, None, :], (b, seq, e.shape[1]))
        cond_in = np.concatenate([e_tiled, l_exp], axis=2)
        c = cond_in @ p["cond.W"] + p["cond.b"]              # (B, S, C)

        # top tier
        frames_top = ext_real[:, : n_top * frame].reshape(b, n_top, frame)
        x_top = np.concatenate([frames_top, c], axis=2)
        top_caches = []
        h_top = np.empty((b, n_top, hidden), dtype=self.dtype)
        h = top_state
        for t in range(n_top):
            h, cache = _gru_step(x_top[:, t], h, p["top.Wx"], p["top.Wh"],
                                 p["top.bx"], p["top.bh"])
            top_caches.append(cache)
            h_top[:, t] = h
        top_state_out = h
        up_top = h_top @ p["top.Wup"] + p["top.bup"]
        top_cond = up_top.reshape(b, n_mid, hidden)

        # mid tier
        frames_mid = ext_real[:, frame - mid_frame: frame - mid_frame + n_mid * mid_frame]
        frames_mid = frames_mid.reshape(b, n_mid, mid_frame)
        c_mid = np.repeat(c, r_top, axis=1)
        x_mid = np.concatenate([frames_mid, c_mid, top_cond], axis=2)
        mid_caches = []
        h_mid = np.empty((b, n_mid, hidden), dtype=self.dtype)
        h = mid_state
        for m in range(n_mid):
            h, cache = _gru_step(x_mid[:, m], h, p["mid.Wx"], p["mid.Wh"],
                                 p["mid.bx"], p["mid.bh"])
            mid_caches.append(cache)
            h_mid[:, m] = h
        mid_state_out = h
        up_mid = h_mid @ p["mid.Wup"] + p["mid.bup"]
        samp_cond = up_mid.reshape(b, w, hidden)

        # sample level
        code_windows = np.lib.stride_tricks.sliding_window_view(
            ext_codes, order, axis=1)[:, frame - mid_frame: frame - mid_frame + w]
        emb = p["code_emb"][code_windows].reshape(b, w, -1)
        c_smp = np.repeat(c, frame, axis=1)
        x_smp = np.concatenate([emb, samp_cond, c_smp], axis=2).reshape(b * w, -1)
        a1 = x_smp @ p["mlp.W1"] + p["mlp.b1"]
        h1 = self._act(a1)
        a2 = h1 @ p["mlp.W2"] + p["mlp.b2"]
        h2 = self._act(a2)
        logits = h2 @ p["mlp.W3"] + p["mlp.b3"]
        logp, probs = _log_softmax(logits, want_probs=want_grads)
        logp = logp.reshape(b, w, q_levels)

        targets = np.asarray(batch.target_codes, dtype=np.int64)
        flat_targets = targets.reshape(-1)
        rows = np.arange(b * w)
        nll_terms = -np.asarray(logp.reshape(b * w, q_levels)[rows, flat_targets],
                                dtype=np.float64).reshape(b, w)
        weight = np.asarray(batch.weight, dtype=np.float64)
        total_weight = weight.sum()
        if total_weight <= 0:
            raise DataError("window batch has no active lanes")
        per_lane = nll_terms.mean(axis=1)
        loss = float((per_lane * weight).sum() / total_weight)
        if not np.isfinite(loss):
            norms = {k: float(np.linalg.norm(v)) for k, v in p.items()}
            worst = sorted(norms, key=norms.get)[-3:]
            raise NumericalError(
                "non-finite NLL; largest parameter norms: "
                + ", ".join(f"{k}={norms[k]:.3g}" for k in worst))

        out = {
            "loss": loss,
            "per_lane_nll": per_lane,
            "top_state": top_state_out,
            "mid_state": mid_state_out,
        }
        if want_logprobs:
            out["logprobs"] = logp
        if not want_grads:
            return out

        # -- backward ---------------------------------------------------------
        grads = {k: np.zeros_like(v, dtype=np.float64) for k, v in p.items()}
        lane_scale = weight / (w * total_weight)
        scale_flat = np.repeat(lane_scale, w)
        d_logits = probs * scale_flat[:, None].astype(self.dtype)
        # target indices are unique per row, so plain fancy indexing is safe
        d_logits[rows, flat_targets] -= scale_flat.astype(self.dtype)

        grads["mlp.W3"] += h2.T @ d_logits
        grads["mlp.b3"] += d_logits.sum(axis=0)
        d_h2 = d_logits @ p["mlp.W3"].T
        d_a2 = self._act_backward(d_h2, a2, h2)
        grads["mlp.W2"] += h1.T @ d_a2
        grads["mlp.b2"] += d_a2.sum(axis=0)
        d_h1 = d_a2 @ p["mlp.W2"].T
        d_a1 = self._act_backward(d_h1, a1, h1)
        grads["mlp.W1"] += x_smp.T @ d_a1
        grads["mlp.b1"] += d_a1.sum(axis=0)
        d_x_smp = (d_a1 @ p["mlp.W1"].T).reshape(b, w, -1)

        emb_width = order * cfg.code_embedding_size
        d_emb = d_x_smp[:, :, :emb_width].reshape(b, w, order, -1)
        grads["code_emb"] += _scatter_rows(p["code_emb"].shape, code_windows, d_emb)
        d_samp_cond = d_x_smp[:, :, emb_width: emb_width + hidden]
        d_c = d_x_smp[:, :, emb_width + hidden:].reshape(b, seq, frame, -1).sum(axis=2)

        # mid tier backward
        d_up_mid = d_samp_cond.reshape(b, n_mid, r_mid * hidden)
        flat_h_mid = h_mid.reshape(b * n_mid, hidden)
        grads["mid.Wup"] += flat_h_mid.T @ d_up_mid.reshape(b * n_mid, -1)
        grads["mid.bup"] += d_up_mid.reshape(b * n_mid, -1).sum(axis=0)
        d_h_mid = (d_up_mid.reshape(b * n_mid, -1) @ p["mid.Wup"].T).reshape(b, n_mid, hidden)
        d_x_mid = np.empty_like(x_mid)
        carry = np.zeros((b, hidden), dtype=self.dtype)
        for m in reversed(range(n_mid)):
            dx, carry = _gru_step_backward(d_h_mid[:, m] + carry, mid_caches[m],
                                           p["mid.Wx"], p["mid.Wh"], grads, "mid")
            d_x_mid[:, m] = dx
        d_mid_init = carry
        grads["mid.h0"] += (d_mid_init * reset_mask[:, None]).sum(axis=0)
        d_c += d_x_mid[:, :, mid_frame: mid_frame + cfg.global_size] \
            .reshape(b, seq, r_top, -1).sum(axis=2)
        d_top_cond = d_x_mid[:, :, mid_frame + cfg.global_size:]

        # top tier backward
        d_up_top = d_top_cond.reshape(b, n_top, r_top * hidden)
        flat_h_top = h_top.reshape(b * n_top, hidden)
        grads["top.Wup"] += flat_h_top.T @ d_up_top.reshape(b * n_top, -1)
        grads["top.bup"] += d_up_top.reshape(b * n_top, -1).sum(axis=0)
        d_h_top = (d_up_top.reshape(b * n_top, -1) @ p["top.Wup"].T).reshape(b, n_top, hidden)
        d_x_top = np.empty_like(x_top)
        carry = np.zeros((b, hidden), dtype=self.dtype)
        for t in reversed(range(n_top)):
            dx, carry = _gru_step_backward(d_h_top[:, t] + carry, top_caches[t],
                                           p["top.Wx"], p["top.Wh"], grads, "top")
            d_x_top[:, t] = dx
        d_top_init = carry
        grads["top.h0"] += (d_top_init * reset_mask[:, None]).sum(axis=0)
        d_c += d_x_top[:, :, frame:]

        # conditioning backward
        d_cond_flat = np.asarray(d_c.reshape(b * seq, -1), dtype=self.dtype)
        grads["cond.W"] += cond_in.reshape(b * seq, -1).T @ d_cond_flat
        grads["cond.b"] += d_cond_flat.sum(axis=0)
        d_cond_in = (d_cond_flat @ p["cond.W"].T).reshape(b, seq, -1)
        e_dim = cfg.speaker_embedding_size
        d_e = d_cond_in[:, :, :e_dim].sum(axis=1)
        offset = e_dim + self.n_numeric
        cdim = cfg.categorical_embedding_size
        for k in range(len(self.cat_cardinalities)):
            d_ck = d_cond_in[:, :, offset + k * cdim: offset + (k + 1) * cdim]
            grads[f"cat_emb.{k}"] += _scatter_rows(p[f"cat_emb.{k}"].shape,
                                                   cat[..., k], d_ck)

        out["grads"] = grads
        out["d_e"] = np.asarray(d_e, dtype=np.float64)
        return out

    # -- generation -----------------------------------------------------------

    def generate(self, cat, num, e, rng=None, sampling: str = "categorical",
                 temperature: float = 1.0) -> np.ndarray:
        """Autoregressively emit 80 codes per conditioning frame.

        History starts as zero-amplitude codes; each emitted code feeds every
        later step.  ``sampling`` is "categorical" (temperature applies) or
        "argmax".
        """
        if sampling not in ("categorical", "argmax"):
            raise ConfigError(f"unknown sampling scheme {sampling!r}")
        if sampling == "categorical":
            if rng is None:
                raise ConfigError("categorical sampling needs an rng")
            if temperature <= 0:
                raise ConfigError("temperature must be positive")
        cfg = self.config
        frame, mid_frame = cfg.frame_size, cfg.mid_frame_size
        cat = np.asarray(cat, dtype=np.int64)
        num = np.asarray(num)
        n_frames = len(num)
        c_all = self.build_global_conditioning(
            np.asarray(e)[None], cat[None], num[None])[0]     # (F, C)

        total = n_frames * frame
        codes = np.full(frame + total, ZERO_CODE, dtype=np.int64)
        real = self._decode_table[codes]
        top_state = self.initial_state("top", 1)
        mid_state = self.initial_state("mid", 1)
        top_cond = None
        mid_cond = None
        for q in range(total):
            t = q // frame
            if q % frame == 0:
                top_cond, top_state = self.top_tier_step(
                    real[q: q + frame][None], c_all[t][None], top_state)
            if q % mid_frame == 0:
                j = (q % frame) // mid_frame
                mid_cond, mid_state = self.mid_tier_step(
                    real[q + frame - mid_frame: q + frame][None],
                    top_cond[:, j], c_all[t][None], mid_state)
            probs = self.sample_level_predict(
                codes[q + frame - mid_frame: q + frame][None],
                mid_cond[:, q % mid_frame], c_all[t][None])[0]
            if sampling == "argmax":
                code = int(np.argmax(probs))
            else:
                if temperature != 1.0:
                    logp = np.log(np.maximum(probs, 1e-300)) / temperature
                    probs = np.exp(logp - logp.max())
                    probs /= probs.sum()
                code = int(np.searchsorted(np.cumsum(probs), rng.random()))
                code = min(code, cfg.quantization_levels - 1)
            codes[frame + q] = code
            real[frame + q] = self._decode_table[code]
        return codes[frame:]

    # -- persistence ------------------------------------------------------------

    def meta(self) -> dict:
        return {
            "version": CKPT_VERSION,
            "config": dataclasses.asdict(self.config),
            "cat_cardinalities": self.cat_cardinalities,
            "n_numeric": self.n_numeric,
        }

    def save(self, path) -> None:
        arrays = {f"param/{k}": v for k, v in self.params.items()}
        arrays["meta"] = np.frombuffer(json.dumps(self.meta()).encode(), dtype=np.uint8)
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path) -> "WaveModel":
        try:
            data = np.load(path)
        except FileNotFoundError:
            raise DataError(f"{path}: no model checkpoint; run 'train' first")
        if "meta" not in data:
            raise DataError(f"{path}: not a model checkpoint")
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("version") != CKPT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version")
        cfg_dict = dict(meta["config"])
        cfg_dict["upsampling_ratios"] = tuple(cfg_dict["upsampling_ratios"])
        config = ModelConfig(**cfg_dict)
        model = cls(config, meta["cat_cardinalities"], meta["n_numeric"])
        for key in data.files:
            if key.startswith("param/"):
                name = key[len("param/"):]
                if name not in model.params:
                    raise DataError(f"{path}: unexpected parameter {name}")
                if model.params[name].shape != data[key].shape:
                    raise DataError(f"{path}: shape mismatch for {name}")
                model.params[name] = data[key].astype(model.dtype)
        return model

    @classmethod
    def check_compatible(cls, path, config: ModelConfig) -> None:
        try:
            data = np.load(path)
        except FileNotFoundError:
            raise DataError(f"{path}: no model checkpoint; run 'train' first")
        meta = json.loads(bytes(data["meta"]).decode())
        stored = dict(meta["config"])
        stored["upsampling_ratios"] = tuple(stored["upsampling_ratios"])
        if stored != dataclasses.asdict(config):
            raise DataError(f"{path}: checkpoint config does not match; refusing to load")
