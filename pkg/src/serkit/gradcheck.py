"""Finite-difference verification of every analytic gradient.

Each check builds its layer (or a small assembled network) in float64,
compares backward() against central differences, and reports the worst
relative error. Piecewise-linear units get their inputs resampled until
every decision point clears a margin, so the perturbation step cannot
flip a ReLU mask or a pooling argmax mid-check.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import NumericsError
from .model import EmotionRecognizer, ModelSpec, chain_valid
from .net import (BiLSTM, Conv2D, ConvSpec, Dense, Dropout, MaxPool2D,
                  PoolSpec, ReLU, softmax_cross_entropy)

THRESHOLD = 1e-4
_STEP = 1e-5
_KINK_MARGIN = 1e-3
_RESAMPLE_LIMIT = 50


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise NumericsError(f"gradient shapes differ: {a.shape} vs {n.shape}")
    denom = np.maximum(np.abs(a), np.abs(n)) + 1e-6
    return float(np.max(np.abs(a - n) / denom))


def numeric_gradient(loss_fn: Callable[[], float], arr: np.ndarray,
                     h: float = _STEP) -> np.ndarray:
    """Central differences, perturbing arr in place one element at a time."""
    grad = np.zeros(arr.shape, dtype=np.float64)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + h
        f_plus = loss_fn()
        arr[idx] = orig - h
        f_minus = loss_fn()
        arr[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


def _compare(analytic: dict[str, np.ndarray],
             loss_fn: Callable[[], float],
             tensors: dict[str, np.ndarray]) -> float:
    worst = 0.0
    for name, arr in tensors.items():
        err = max_relative_error(analytic[name], numeric_gradient(loss_fn, arr))
        worst = max(worst, err)
    return worst


# --- individual layers --------------------------------------------------------


def check_dense(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    layer = Dense(7, 5, rng, dtype=np.float64)
    x = rng.standard_normal((4, 7))
    r = rng.standard_normal((4, 5))

    def loss() -> float:
        return float((layer.forward(x)[0] * r).sum())

    _, ctx = layer.forward(x)
    dx, grads = layer.backward(ctx, r)
    return _compare({"x": dx, **grads}, loss,
                    {"x": x, "w": layer.params["w"], "b": layer.params["b"]})


def check_relu(seed: int = 0) -> float:
    layer = ReLU()
    for attempt in range(_RESAMPLE_LIMIT):
        rng = np.random.default_rng(seed + attempt)
        x = rng.standard_normal((4, 9))
        if np.abs(x).min() > _KINK_MARGIN:
            break
    else:
        raise NumericsError("could not sample relu inputs clear of zero")
    r = rng.standard_normal((4, 9))

    def loss() -> float:
        return float((layer.forward(x)[0] * r).sum())

    _, ctx = layer.forward(x)
    dx, _ = layer.backward(ctx, r)
    return _compare({"x": dx}, loss, {"x": x})


def _check_conv(spec: ConvSpec, in_channels: int, x_shape: tuple[int, ...],
                seed: int) -> float:
    rng = np.random.default_rng(seed)
    layer = Conv2D(spec, in_channels, rng, dtype=np.float64)
    x = rng.standard_normal(x_shape)
    y, ctx = layer.forward(x)
    r = rng.standard_normal(y.shape)

    def loss() -> float:
        return float((layer.forward(x)[0] * r).sum())

    dx, grads = layer.backward(ctx, r)
    return _compare({"x": dx, **grads}, loss,
                    {"x": x, "w": layer.params["w"], "b": layer.params["b"]})


def check_conv_temporal(seed: int = 0) -> float:
    spec = ConvSpec(3, kernel_h=3, kernel_w=5, stride_h=2, mode="temporal")
    return _check_conv(spec, in_channels=1, x_shape=(2, 1, 9, 5), seed=seed)


def check_conv_2d(seed: int = 0) -> float:
    spec = ConvSpec(4, kernel_h=3, kernel_w=3, stride_h=2, stride_w=2, padding=1)
    return _check_conv(spec, in_channels=2, x_shape=(2, 2, 7, 6), seed=seed)


def _pool_margin_ok(x: np.ndarray, spec: PoolSpec,
                    margin: float = _KINK_MARGIN) -> bool:
    """True when no pooling window can flip its argmax under perturbation.

    A window is safe when its max clears the runner-up by the margin, or
    when the runner-up is exactly zero: that happens on rectified inputs
    where everything but the max was clamped, and those clamped entries
    stay at zero as long as the rectifier margins hold.
    """
    kh, kw = spec.kernel_h, spec.kernel_w
    windows = np.lib.stride_tricks.sliding_window_view(
        x, (kh, kw), axis=(2, 3))[:, :, ::kh, ::kw]
    flat = windows.reshape(*windows.shape[:4], kh * kw)
    top2 = np.partition(flat, kh * kw - 2, axis=-1)[..., -2:]
    gap = top2[..., 1] - top2[..., 0]
    return bool(((gap > margin) | (top2[..., 0] == 0.0)).all())


def check_maxpool(seed: int = 0) -> float:
    spec = PoolSpec(2, 2)
    layer = MaxPool2D(spec)
    for attempt in range(_RESAMPLE_LIMIT):
        rng = np.random.default_rng(seed + attempt)
        x = rng.standard_normal((2, 3, 6, 6))
        if _pool_margin_ok(x, spec):
            break
    else:
        raise NumericsError("could not sample pooling inputs with distinct maxima")
    y, ctx = layer.forward(x)
    r = rng.standard_normal(y.shape)

    def loss() -> float:
        return float((layer.forward(x)[0] * r).sum())

    dx, _ = layer.backward(ctx, r)
    return _compare({"x": dx}, loss, {"x": x})


def check_dropout(seed: int = 0) -> float:
    # Reconstructing the rng from the same seed on every call freezes the
    # mask, which is what makes the loss differentiable in x at all.
    layer = Dropout(0.4)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((5, 6))
    r = rng.standard_normal((5, 6))
    mask_seed = seed + 104729

    def loss() -> float:
        y, _ = layer.forward(x, train=True, rng=np.random.default_rng(mask_seed))
        return float((y * r).sum())

    _, ctx = layer.forward(x, train=True, rng=np.random.default_rng(mask_seed))
    dx, _ = layer.backward(ctx, r)
    return _compare({"x": dx}, loss, {"x": x})


def check_bilstm(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    layer = BiLSTM(4, 3, rng, dtype=np.float64)
    x = rng.standard_normal((3, 5, 4))
    valid = np.array([5, 3, 1], dtype=np.int64)
    y, ctx = layer.forward(x, valid)
    r = rng.standard_normal(y.shape)

    def loss() -> float:
        return float((layer.forward(x, valid)[0] * r).sum())

    dx, grads = layer.backward(ctx, r)
    tensors = {"x": x, **layer.params}
    return _compare({"x": dx, **grads}, loss, tensors)


def check_softmax_ce(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((6, 4))
    labels = rng.integers(0, 4, size=6)

    def loss() -> float:
        return float(softmax_cross_entropy(logits, labels)[0].mean())

    _, _, grad = softmax_cross_entropy(logits, labels)
    return _compare({"logits": grad / logits.shape[0]}, loss, {"logits": logits})


# --- assembled networks ---------------------------------------------------------


def _model_margins_ok(model: EmotionRecognizer, x: np.ndarray,
                      valid: np.ndarray, mask_seed: int) -> bool:
    h = np.ascontiguousarray(x, dtype=model.dtype)
    for layer in model.stack_layers:
        if isinstance(layer, Conv2D):
            pre, _ = layer.forward(h)
            if np.abs(pre).min() <= _KINK_MARGIN:
                return False
            h, _ = model.relu.forward(pre)
        else:
            if not _pool_margin_ok(h, layer.spec):
                return False
            h, _ = layer.forward(h)
    b, ch, tt, ww = h.shape
    seq = np.ascontiguousarray(h.transpose(0, 2, 1, 3).reshape(b, tt, ch * ww))
    rec, _ = model.bilstm.forward(seq, chain_valid(valid, model.spec))
    dropped, _ = model.dropout.forward(rec, train=True,
                                       rng=np.random.default_rng(mask_seed))
    trunk_out, _ = model.trunk.forward(dropped.reshape(b, -1))
    return bool(np.abs(trunk_out).min() > _KINK_MARGIN)


def _check_model(spec: ModelSpec, seed: int) -> float:
    model = EmotionRecognizer(spec, seed=seed, dtype=np.float64)
    data_rng = np.random.default_rng(seed + 31337)
    batch = 2
    valid = np.array([spec.input_frames, max(1, spec.input_frames // 2 + 1)],
                     dtype=np.int64)
    labels_e = data_rng.integers(0, spec.n_emotions, size=batch)
    labels_g = data_rng.integers(0, 2, size=batch)
    mask_seed = seed + 65537
    for _ in range(_RESAMPLE_LIMIT):
        x = data_rng.standard_normal((batch, 1, spec.input_frames,
                                      spec.input_dims))
        if _model_margins_ok(model, x, valid, mask_seed):
            break
    else:
        raise NumericsError("could not sample network inputs clear of kinks")

    def loss() -> float:
        logits_e, logits_g, _ = model.forward(
            x, valid, train=True, rng=np.random.default_rng(mask_seed))
        total = float(softmax_cross_entropy(logits_e, labels_e)[0].mean())
        if logits_g is not None:
            total += float(softmax_cross_entropy(logits_g, labels_g)[0].mean())
        return total

    logits_e, logits_g, cache = model.forward(
        x, valid, train=True, rng=np.random.default_rng(mask_seed))
    _, _, grad_e = softmax_cross_entropy(logits_e, labels_e)
    grad_g = None
    if logits_g is not None:
        _, _, grad_g = softmax_cross_entropy(logits_g, labels_g)
        grad_g = grad_g / batch
    dx, grads = model.backward(cache, grad_e / batch, grad_g)
    return _compare({"x": dx, **grads}, loss, {"x": x, **model.params()})


def check_model_temporal(seed: int = 0) -> float:
    spec = ModelSpec(
        stack=(ConvSpec(2, kernel_h=3, kernel_w=6, stride_h=2, mode="temporal"),
               ConvSpec(3, kernel_h=2, kernel_w=1, mode="temporal")),
        input_frames=12, input_dims=6, n_emotions=4,
        recurrent_hidden=2, recurrent_dropout=0.5, trunk_hidden=3,
        multitask=True)
    return _check_model(spec, seed)


def check_model_2d(seed: int = 0) -> float:
    spec = ModelSpec(
        stack=(ConvSpec(2, kernel_h=3, kernel_w=3), PoolSpec(2, 2)),
        input_frames=8, input_dims=8, n_emotions=3,
        recurrent_hidden=2, recurrent_dropout=0.5, trunk_hidden=3,
        multitask=True)
    return _check_model(spec, seed)


CHECKS: dict[str, Callable[[int], float]] = {
    "dense": check_dense,
    "relu": check_relu,
    "conv_temporal": check_conv_temporal,
    "conv_2d": check_conv_2d,
    "maxpool": check_maxpool,
    "dropout": check_dropout,
    "bilstm": check_bilstm,
    "softmax_ce": check_softmax_ce,
    "model_temporal": check_model_temporal,
    "model_2d": check_model_2d,
}


def run_gradcheck(seed: int = 0, threshold: float = THRESHOLD) -> dict:
    """Run every check; the report is JSON-ready."""
    errors = {name: float(fn(seed)) for name, fn in CHECKS.items()}
    worst = max(errors.values())
    return {
        "threshold": threshold,
        "step": _STEP,
        "checks": errors,
        "max_error": worst,
        "pass": worst <= threshold,
    }
