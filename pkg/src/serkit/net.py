"""From-scratch differentiable layers on numpy.

Every layer exposes params (a dict of live arrays), forward(...) returning
(output, ctx), and backward(ctx, upstream) returning (input_grad, grads)
with grads keyed like params. Training runs in float32; passing
dtype=float64 at construction gives the wide-precision mode used by the
finite-difference checks. Variable-length inputs are handled by masking:
rows at or beyond a sample's valid length are exactly zero in outputs and
contribute exactly zero to every gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride_h: int = 1
    stride_w: int = 1
    padding: int = 0
    mode: str = "2d"  # "temporal" kernels must span the full feature axis

    def __post_init__(self) -> None:
        if min(self.out_channels, self.kernel_h, self.kernel_w,
               self.stride_h, self.stride_w) < 1:
            raise ConfigError(f"nonpositive conv dimension in {self}")
        if self.padding < 0:
            raise ConfigError(f"negative padding in {self}")
        if self.mode not in ("2d", "temporal"):
            raise ConfigError(f"unknown conv mode {self.mode!r}")


@dataclass(frozen=True)
class PoolSpec:
    kernel_h: int
    kernel_w: int

    def __post_init__(self) -> None:
        if min(self.kernel_h, self.kernel_w) < 1:
            raise ConfigError(f"nonpositive pool kernel in {self}")

    # Pooling windows do not overlap and never pad.
    @property
    def stride_h(self) -> int:
        return self.kernel_h

    @property
    def stride_w(self) -> int:
        return self.kernel_w

    @property
    def padding(self) -> int:
        return 0

    @property
    def out_channels(self) -> int | None:
        return None


def mask_size(shape: tuple[int, int], spec) -> tuple[int, int]:
    """Output extent per axis: floor((in - kernel + 2*padding)/stride) + 1.

    Also used to carry each sample's valid length through the stack.
    """
    h, w = shape
    out_h = (h - spec.kernel_h + 2 * spec.padding) // spec.stride_h + 1
    out_w = (w - spec.kernel_w + 2 * spec.padding) // spec.stride_w + 1
    if out_h < 1 or out_w < 1:
        raise ConfigError(f"spec {spec} collapses input {shape} to "
                          f"({out_h}, {out_w})")
    return out_h, out_w


def he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
              dtype=np.float32) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Branch on sign to keep exp() in the underflow-only regime.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _strided_windows(x_padded: np.ndarray, kernel: tuple[int, int],
                     stride: tuple[int, int]) -> np.ndarray:
    windows = np.lib.stride_tricks.sliding_window_view(x_padded, kernel,
                                                       axis=(2, 3))
    return windows[:, :, ::stride[0], ::stride[1]]


class Conv2D:
    """Cross-correlation with bias over (batch, channels, time, features)."""

    def __init__(self, spec: ConvSpec, in_channels: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.spec = spec
        self.in_channels = in_channels
        fan_in = in_channels * spec.kernel_h * spec.kernel_w
        self.params = {
            "w": he_normal(rng, (spec.out_channels, in_channels,
                                 spec.kernel_h, spec.kernel_w), fan_in, dtype),
            "b": np.zeros(spec.out_channels, dtype=dtype),
        }

    def forward(self, x: np.ndarray):
        spec = self.spec
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise DataError(f"conv expects (batch, {self.in_channels}, h, w), "
                            f"got {x.shape}")
        mask_size(x.shape[2:], spec)  # validates positive output extents
        p = spec.padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        windows = _strided_windows(xp, (spec.kernel_h, spec.kernel_w),
                                   (spec.stride_h, spec.stride_w))
        out = np.tensordot(windows, self.params["w"], axes=([1, 4, 5], [1, 2, 3]))
        out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
        out += self.params["b"][None, :, None, None]
        return out, (xp, x.shape)

    def backward(self, ctx, dy: np.ndarray):
        xp, x_shape = ctx
        spec = self.spec
        expected = (x_shape[0], spec.out_channels) + mask_size(x_shape[2:], spec)
        if dy.shape != expected:
            raise DataError(f"upstream shape {dy.shape} does not match "
                            f"forward context {expected}")
        windows = _strided_windows(xp, (spec.kernel_h, spec.kernel_w),
                                   (spec.stride_h, spec.stride_w))
        dw = np.tensordot(dy, windows, axes=([0, 2, 3], [0, 2, 3]))
        db = dy.sum(axis=(0, 2, 3))
        out_h, out_w = dy.shape[2:]
        dxp = np.zeros_like(xp)
        w = self.params["w"]
        for ki in range(spec.kernel_h):
            for kj in range(spec.kernel_w):
                contrib = np.einsum("bohw,oi->bihw", dy, w[:, :, ki, kj])
                dxp[:, :,
                    ki:ki + spec.stride_h * out_h:spec.stride_h,
                    kj:kj + spec.stride_w * out_w:spec.stride_w] += contrib
        p = spec.padding
        dx = dxp[:, :, p:p + x_shape[2], p:p + x_shape[3]] if p else dxp
        return dx, {"w": dw.astype(w.dtype, copy=False), "b": db}


class MaxPool2D:
    """Non-overlapping max pooling; backward routes to the window argmax."""

    def __init__(self, spec: PoolSpec):
        self.spec = spec
        self.params: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray):
        kh, kw = self.spec.kernel_h, self.spec.kernel_w
        out_h, out_w = mask_size(x.shape[2:], self.spec)
        windows = _strided_windows(x, (kh, kw), (kh, kw))
        flat = windows.reshape(*windows.shape[:4], kh * kw)
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        return np.ascontiguousarray(out), (x.shape, arg)

    def backward(self, ctx, dy: np.ndarray):
        x_shape, arg = ctx
        kh, kw = self.spec.kernel_h, self.spec.kernel_w
        b, c, out_h, out_w = dy.shape
        flat = np.zeros((b, c, out_h, out_w, kh * kw), dtype=dy.dtype)
        np.put_along_axis(flat, arg[..., None], dy[..., None], axis=-1)
        blocks = flat.reshape(b, c, out_h, out_w, kh, kw).transpose(0, 1, 2, 4, 3, 5)
        dx = np.zeros(x_shape, dtype=dy.dtype)
        dx[:, :, :out_h * kh, :out_w * kw] = blocks.reshape(b, c, out_h * kh,
                                                            out_w * kw)
        return dx, {}


class Dense:
    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator, dtype=np.float32):
        self.params = {
            "w": he_normal(rng, (in_features, out_features), in_features, dtype),
            "b": np.zeros(out_features, dtype=dtype),
        }

    def forward(self, x: np.ndarray):
        return x @ self.params["w"] + self.params["b"], x

    def backward(self, ctx, dy: np.ndarray):
        x = ctx
        return dy @ self.params["w"].T, {"w": x.T @ dy, "b": dy.sum(axis=0)}


class ReLU:
    params: dict = {}

    def forward(self, x: np.ndarray):
        return np.maximum(x, 0.0), x > 0

    def backward(self, ctx, dy: np.ndarray):
        return dy * ctx, {}


class Dropout:
    """Inverted dropout: kept units scale by 1/(1-rate); eval is identity."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.params: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None):
        if not train or self.rate == 0.0:
            return x, None
        if rng is None:
            raise ConfigError("training-mode dropout needs an rng")
        mask = (rng.random(x.shape) >= self.rate).astype(x.dtype) / (1.0 - self.rate)
        return x * mask, mask

    def backward(self, ctx, dy: np.ndarray):
        return (dy if ctx is None else dy * ctx), {}


def reverse_valid(x: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Reverse each sample's first valid rows; rows beyond become zero."""
    b, t = x.shape[:2]
    rows = np.arange(t)[None, :]
    src = np.clip(valid[:, None] - 1 - rows, 0, t - 1)
    gathered = x[np.arange(b)[:, None], src]
    return np.where((rows < valid[:, None]).reshape(b, t, *([1] * (x.ndim - 2))),
                    gathered, np.zeros((), dtype=x.dtype))


class BiLSTM:
    """Masked bidirectional LSTM returning all hidden states, (b, t, 2*hidden).

    The forward direction walks steps 0..valid-1, the backward direction
    starts at valid-1; output rows at or beyond valid are exactly zero.
    Gate order in the packed matrices is [input, forget, cell, output].
    """

    def __init__(self, input_size: int, hidden: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.input_size = input_size
        self.hidden = hidden
        self.params = {}
        for tag in ("fw", "bw"):
            self.params[f"w_{tag}"] = he_normal(rng, (input_size, 4 * hidden),
                                                input_size, dtype)
            self.params[f"u_{tag}"] = he_normal(rng, (hidden, 4 * hidden),
                                                hidden, dtype)
            self.params[f"b_{tag}"] = np.zeros(4 * hidden, dtype=dtype)

    def _pass(self, x: np.ndarray, valid: np.ndarray, tag: str):
        w, u, b = (self.params[f"w_{tag}"], self.params[f"u_{tag}"],
                   self.params[f"b_{tag}"])
        bsz, t, _ = x.shape
        hid = self.hidden
        xw = (x.reshape(bsz * t, -1) @ w).reshape(bsz, t, 4 * hid)
        active = np.arange(t)[None, :] < valid[:, None]
        h = np.zeros((bsz, hid), dtype=x.dtype)
        c = np.zeros((bsz, hid), dtype=x.dtype)
        gates = np.zeros((t, bsz, 4 * hid), dtype=x.dtype)
        c_cand = np.zeros((t, bsz, hid), dtype=x.dtype)
        h_prev = np.zeros((t, bsz, hid), dtype=x.dtype)
        c_prev = np.zeros((t, bsz, hid), dtype=x.dtype)
        y = np.zeros((bsz, t, hid), dtype=x.dtype)
        for step in range(t):
            a = xw[:, step] + h @ u + b
            gi = _sigmoid(a[:, :hid])
            gf = _sigmoid(a[:, hid:2 * hid])
            gg = np.tanh(a[:, 2 * hid:3 * hid])
            go = _sigmoid(a[:, 3 * hid:])
            cc = gf * c + gi * gg
            hc = go * np.tanh(cc)
            gates[step] = np.concatenate([gi, gf, gg, go], axis=1)
            c_cand[step] = cc
            h_prev[step] = h
            c_prev[step] = c
            act = active[:, step:step + 1]
            c = np.where(act, cc, c)
            h = np.where(act, hc, h)
            y[:, step] = np.where(act, hc, 0.0)
        return y, (x, valid, active, gates, c_cand, h_prev, c_prev, tag)

    def _pass_backward(self, ctx, dy: np.ndarray):
        x, valid, active, gates, c_cand, h_prev, c_prev, tag = ctx
        w, u = self.params[f"w_{tag}"], self.params[f"u_{tag}"]
        bsz, t, _ = x.shape
        hid = self.hidden
        dh = np.zeros((bsz, hid), dtype=x.dtype)
        dc = np.zeros((bsz, hid), dtype=x.dtype)
        da_all = np.zeros((bsz, t, 4 * hid), dtype=x.dtype)
        for step in reversed(range(t)):
            act = active[:, step:step + 1]
            gi = gates[step, :, :hid]
            gf = gates[step, :, hid:2 * hid]
            gg = gates[step, :, 2 * hid:3 * hid]
            go = gates[step, :, 3 * hid:]
            tanh_c = np.tanh(c_cand[step])
            dh_cand = np.where(act, dh + dy[:, step], 0.0)
            dcc = np.where(act, dc, 0.0) + dh_cand * go * (1.0 - tanh_c * tanh_c)
            da_all[:, step, :hid] = dcc * gg * gi * (1.0 - gi)
            da_all[:, step, hid:2 * hid] = dcc * c_prev[step] * gf * (1.0 - gf)
            da_all[:, step, 2 * hid:3 * hid] = dcc * gi * (1.0 - gg * gg)
            da_all[:, step, 3 * hid:] = dh_cand * tanh_c * go * (1.0 - go)
            dh = np.where(act, 0.0, dh) + da_all[:, step] @ u.T
            dc = np.where(act, 0.0, dc) + dcc * gf
        da_flat = da_all.reshape(bsz * t, 4 * hid)
        grads = {
            f"w_{tag}": x.reshape(bsz * t, -1).T @ da_flat,
            f"u_{tag}": h_prev.transpose(1, 0, 2).reshape(bsz * t, hid).T @ da_flat,
            f"b_{tag}": da_flat.sum(axis=0),
        }
        dx = (da_flat @ w.T).reshape(x.shape)
        return dx, grads

    def forward(self, x: np.ndarray, valid: np.ndarray):
        if x.ndim != 3 or x.shape[2] != self.input_size:
            raise DataError(f"bilstm expects (batch, time, {self.input_size}), "
                            f"got {x.shape}")
        valid = np.asarray(valid, dtype=np.int64)
        if valid.shape != (x.shape[0],) or valid.min() < 1 or valid.max() > x.shape[1]:
            raise DataError("valid lengths must lie in [1, time] per sample")
        y_f, ctx_f = self._pass(x, valid, "fw")
        y_b_rev, ctx_b = self._pass(reverse_valid(x, valid), valid, "bw")
        y_b = reverse_valid(y_b_rev, valid)
        return np.concatenate([y_f, y_b], axis=2), (ctx_f, ctx_b, valid)

    def backward(self, ctx, dy: np.ndarray):
        ctx_f, ctx_b, valid = ctx
        hid = self.hidden
        dx_f, grads_f = self._pass_backward(ctx_f, dy[:, :, :hid])
        dx_b_rev, grads_b = self._pass_backward(
            ctx_b, reverse_valid(dy[:, :, hid:], valid))
        dx = dx_f + reverse_valid(dx_b_rev, valid)
        return dx, {**grads_f, **grads_b}


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Per-sample losses, probabilities, and d(loss)/d(logits).

    The gradient is softmax(logits) - onehot(labels), unreduced; callers
    average over the batch themselves.
    """
    logits = np.atleast_2d(np.asarray(logits))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape[0] != logits.shape[0]:
        raise DataError(f"{logits.shape[0]} logit rows vs {labels.shape[0]} labels")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise DataError("label index out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    rows = np.arange(logits.shape[0])
    losses = np.log(exp.sum(axis=1)) - shifted[rows, labels]
    grad = probs.copy()
    grad[rows, labels] -= 1.0
    return losses, probs, grad


@dataclass(frozen=True)
class LossBreakdown:
    emotion: float
    gender: float | None
    total: float


def multitask_total(loss_emotion: float, loss_gender: float | None) -> LossBreakdown:
    """Unweighted sum of head losses; gender is None in single-task mode."""
    total = loss_emotion if loss_gender is None else loss_emotion + loss_gender
    return LossBreakdown(emotion=float(loss_emotion),
                         gender=None if loss_gender is None else float(loss_gender),
                         total=float(total))


def param_count(params: dict[str, np.ndarray] | Sequence[np.ndarray]) -> int:
    arrays = params.values() if isinstance(params, dict) else params
    return int(sum(a.size for a in arrays))
