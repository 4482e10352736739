"""The two-head CNN-BiLSTM-attention network: forward, backward, init.

Parameters live in a flat name -> ndarray mapping. Batch-norm running
statistics are buffers: checkpointed but never updated by the optimizer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputTooShortError, NonFiniteError
from . import layers as L
from .config import ModelConfig


@dataclass
class ModelOutput:
    detect_prob: np.ndarray  # (B,)
    type_probs: np.ndarray  # (B, n_classes)
    attention: np.ndarray  # (B, T')


def _kaiming_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _orthogonal(rng, n, dtype):
    a = rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    return (q * np.sign(np.diag(r))).astype(dtype)


class TwoHeadCRNN:
    """CNN feature extractor, BiLSTM encoder, attention pooling, two heads."""

    def __init__(self, config: ModelConfig):
        self.config = config

    # ------------------------------------------------------------ parameters

    def init_params(self, seed: int = 0, dtype=np.float32) -> dict[str, np.ndarray]:
        cfg = self.config
        rng = np.random.default_rng(seed)
        p: dict[str, np.ndarray] = {}
        c_in = 1
        for i, c_out in enumerate(cfg.conv_channels):
            p[f"conv{i}.weight"] = _kaiming_uniform(rng, (c_out, c_in, 3, 3), c_in * 9, dtype)
            p[f"conv{i}.bias"] = np.zeros(c_out, dtype)
            p[f"bn{i}.gamma"] = np.ones(c_out, dtype)
            p[f"bn{i}.beta"] = np.zeros(c_out, dtype)
            p[f"bn{i}.running_mean"] = np.zeros(c_out, dtype)
            p[f"bn{i}.running_var"] = np.ones(c_out, dtype)
            c_in = c_out

        p["proj.weight"] = _kaiming_uniform(
            rng, (cfg.lstm_input_dim, cfg.flatten_dim), cfg.flatten_dim, dtype
        )
        p["proj.bias"] = np.zeros(cfg.lstm_input_dim, dtype)

        h = cfg.lstm_hidden
        for layer in range(cfg.lstm_layers):
            in_dim = cfg.lstm_input_dim if layer == 0 else 2 * h
            for d in ("fw", "bw"):
                base = f"lstm{layer}.{d}"
                p[f"{base}.w_x"] = _kaiming_uniform(rng, (4 * h, in_dim), in_dim, dtype)
                p[f"{base}.w_h"] = np.concatenate(
                    [_orthogonal(rng, h, dtype) for _ in range(4)], axis=0
                )
                bias = np.zeros(4 * h, dtype)
                bias[h : 2 * h] = 1.0  # forget gate starts open
                p[f"{base}.bias"] = bias

        f = cfg.feature_dim
        p["attn.w1"] = _kaiming_uniform(rng, (cfg.attn_hidden, f), f, dtype)
        p["attn.b1"] = np.zeros(cfg.attn_hidden, dtype)
        p["attn.w2"] = _kaiming_uniform(rng, (1, cfg.attn_hidden), cfg.attn_hidden, dtype)
        p["attn.b2"] = np.zeros(1, dtype)
        p["detect.weight"] = _kaiming_uniform(rng, (1, f), f, dtype)
        p["detect.bias"] = np.zeros(1, dtype)
        p["type1.weight"] = _kaiming_uniform(rng, (cfg.type_hidden, f), f, dtype)
        p["type1.bias"] = np.zeros(cfg.type_hidden, dtype)
        p["type2.weight"] = _kaiming_uniform(rng, (cfg.n_classes, cfg.type_hidden), cfg.type_hidden, dtype)
        p["type2.bias"] = np.zeros(cfg.n_classes, dtype)
        return p

    @staticmethod
    def is_buffer(name: str) -> bool:
        return name.endswith(".running_mean") or name.endswith(".running_var")

    def trainable_names(self, params: dict[str, np.ndarray]) -> list[str]:
        return [n for n in sorted(params) if not self.is_buffer(n)]

    # --------------------------------------------------------------- forward

    def forward(self, params, x, train: bool = False, rng=None, want_cache: bool = False):
        """x: (B, 1, n_mels, T) standardized log-mel windows."""
        cfg = self.config
        x = np.asarray(x)
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != cfg.n_mels:
            raise ValueError(f"expected (B, 1, {cfg.n_mels}, T), got {x.shape}")
        if x.shape[3] < cfg.min_frames:
            raise InputTooShortError(
                f"need at least {cfg.min_frames} frames, got {x.shape[3]}"
            )
        dtype = params["proj.weight"].dtype
        h = np.ascontiguousarray(x, dtype=dtype)

        cache: dict = {"conv": []}
        for i in range(len(cfg.conv_channels)):
            h, c_conv = L.conv3x3_forward(h, params[f"conv{i}.weight"], params[f"conv{i}.bias"])
            h, c_bn = L.batchnorm_forward(
                h, params[f"bn{i}.gamma"], params[f"bn{i}.beta"],
                params[f"bn{i}.running_mean"], params[f"bn{i}.running_var"], train,
            )
            h, c_relu = L.relu_forward(h)
            h, c_pool = L.maxpool_forward(h)
            cache["conv"].append((c_conv, c_bn, c_relu, c_pool))

        h, cache["conv_drop"] = L.dropout_forward(h, cfg.conv_dropout, train, rng)

        bsz, c_last, mel, t_out = h.shape
        cache["post_conv_shape"] = h.shape
        seq = np.ascontiguousarray(h.transpose(0, 3, 1, 2)).reshape(bsz, t_out, c_last * mel)

        seq, cache["proj"] = L.affine_forward(seq, params["proj.weight"], params["proj.bias"])

        cache["lstm"] = []
        z = seq
        for layer in range(cfg.lstm_layers):
            out_f, c_f = L.lstm_forward(
                z, params[f"lstm{layer}.fw.w_x"], params[f"lstm{layer}.fw.w_h"],
                params[f"lstm{layer}.fw.bias"], reverse=False,
            )
            out_b, c_b = L.lstm_forward(
                z, params[f"lstm{layer}.bw.w_x"], params[f"lstm{layer}.bw.w_h"],
                params[f"lstm{layer}.bw.bias"], reverse=True,
            )
            z = np.concatenate([out_f, out_b], axis=2)
            drop = None
            if layer < cfg.lstm_layers - 1:
                z, drop = L.dropout_forward(z, cfg.lstm_dropout, train, rng)
            cache["lstm"].append((c_f, c_b, drop))

        ctx, alpha, cache["attn"] = L.attention_forward(
            z, params["attn.w1"], params["attn.b1"], params["attn.w2"], params["attn.b2"],
            cfg.attn_dropout, train, rng,
        )

        dctx, cache["det_drop"] = L.dropout_forward(ctx, cfg.head_dropout, train, rng)
        det_logit, cache["det_aff"] = L.affine_forward(dctx, params["detect.weight"], params["detect.bias"])
        detect_prob = L.sigmoid(det_logit[:, 0])

        t1, cache["type1"] = L.affine_forward(ctx, params["type1.weight"], params["type1.bias"])
        t1r, cache["type_relu"] = L.relu_forward(t1)
        t1d, cache["type_drop"] = L.dropout_forward(t1r, cfg.head_dropout, train, rng)
        logits, cache["type2"] = L.affine_forward(t1d, params["type2.weight"], params["type2.bias"])
        type_probs = L.softmax(logits, axis=1)

        if not (np.all(np.isfinite(detect_prob)) and np.all(np.isfinite(type_probs))):
            raise NonFiniteError("non-finite model output (check parameters)")

        out = ModelOutput(detect_prob=detect_prob, type_probs=type_probs, attention=alpha)
        if not want_cache:
            return out
        cache["detect_prob"] = detect_prob
        cache["type_probs"] = type_probs
        return out, cache

    # -------------------------------------------------------------- backward

    def backward(self, params, cache, grad_detect_prob, grad_type_probs):
        """Gradients of a scalar loss given d(loss)/d(probabilities)."""
        cfg = self.config
        grads: dict[str, np.ndarray] = {}
        dtype = params["proj.weight"].dtype

        # type head
        dlogits = L.softmax_backward(
            grad_type_probs.astype(dtype), cache["type_probs"].astype(dtype), axis=1
        )
        dt1d, grads["type2.weight"], grads["type2.bias"] = L.affine_backward(dlogits, cache["type2"])
        dt1r = L.dropout_backward(dt1d, cache["type_drop"])
        dt1 = L.relu_backward(dt1r, cache["type_relu"])
        dctx_type, grads["type1.weight"], grads["type1.bias"] = L.affine_backward(dt1, cache["type1"])

        # detection head
        p = cache["detect_prob"]
        ddet_logit = (grad_detect_prob * p * (1.0 - p)).astype(dtype)[:, None]
        ddctx, grads["detect.weight"], grads["detect.bias"] = L.affine_backward(
            ddet_logit, cache["det_aff"]
        )
        dctx_det = L.dropout_backward(ddctx, cache["det_drop"])

        dctx = dctx_type + dctx_det
        dz, grads["attn.w1"], grads["attn.b1"], grads["attn.w2"], grads["attn.b2"] = (
            L.attention_backward(dctx, None, cache["attn"])
        )

        for layer in range(cfg.lstm_layers - 1, -1, -1):
            c_f, c_b, drop = cache["lstm"][layer]
            dz = L.dropout_backward(dz, drop)
            h = cfg.lstm_hidden
            dx_f, dwx_f, dwh_f, db_f = L.lstm_backward(np.ascontiguousarray(dz[:, :, :h]), c_f)
            dx_b, dwx_b, dwh_b, db_b = L.lstm_backward(np.ascontiguousarray(dz[:, :, h:]), c_b)
            grads[f"lstm{layer}.fw.w_x"] = dwx_f
            grads[f"lstm{layer}.fw.w_h"] = dwh_f
            grads[f"lstm{layer}.fw.bias"] = db_f
            grads[f"lstm{layer}.bw.w_x"] = dwx_b
            grads[f"lstm{layer}.bw.w_h"] = dwh_b
            grads[f"lstm{layer}.bw.bias"] = db_b
            dz = dx_f + dx_b

        dseq, grads["proj.weight"], grads["proj.bias"] = L.affine_backward(dz, cache["proj"])

        bsz, c_last, mel, t_out = cache["post_conv_shape"]
        dh = np.ascontiguousarray(
            dseq.reshape(bsz, t_out, c_last, mel).transpose(0, 2, 3, 1)
        )
        dh = L.dropout_backward(dh, cache["conv_drop"])

        for i in range(len(cfg.conv_channels) - 1, -1, -1):
            c_conv, c_bn, c_relu, c_pool = cache["conv"][i]
            dh = L.maxpool_backward(dh, c_pool)
            dh = L.relu_backward(dh, c_relu)
            dh, grads[f"bn{i}.gamma"], grads[f"bn{i}.beta"] = L.batchnorm_backward(dh, c_bn)
            dh, grads[f"conv{i}.weight"], grads[f"conv{i}.bias"] = L.conv3x3_backward(dh, c_conv)

        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for {name}")
        return grads
