"""Model assembly: conv stack over padded sub-segments, masked BiLSTM,
flatten-all-timesteps readout, dense trunk, and classification heads.

The checkpoint format is a named-tensor container (float32 little-endian)
with a JSON sidecar carrying the model spec and arbitrary pipeline
metadata.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .net import (BiLSTM, Conv2D, ConvSpec, Dense, Dropout, MaxPool2D, PoolSpec,
                  ReLU, mask_size, param_count)

GENDER_CLASSES = ("M", "F")


@dataclass(frozen=True)
class ModelSpec:
    stack: tuple
    input_frames: int
    input_dims: int
    n_emotions: int
    recurrent_hidden: int = 60
    recurrent_dropout: float = 0.5
    trunk_hidden: int = 9
    multitask: bool = True

    def __post_init__(self) -> None:
        if self.n_emotions < 2:
            raise ConfigError(f"need at least 2 emotion classes, got {self.n_emotions}")
        if not self.stack:
            raise ConfigError("conv stack cannot be empty")
        if self.input_frames < 1 or self.input_dims < 1:
            raise ConfigError("input extents must be positive")

    def to_json_dict(self) -> dict:
        items = []
        for item in self.stack:
            if isinstance(item, ConvSpec):
                items.append({"type": "conv", "out_channels": item.out_channels,
                              "kernel_h": item.kernel_h, "kernel_w": item.kernel_w,
                              "stride_h": item.stride_h, "stride_w": item.stride_w,
                              "padding": item.padding, "mode": item.mode})
            else:
                items.append({"type": "pool", "kernel_h": item.kernel_h,
                              "kernel_w": item.kernel_w})
        return {"stack": items, "input_frames": self.input_frames,
                "input_dims": self.input_dims, "n_emotions": self.n_emotions,
                "recurrent_hidden": self.recurrent_hidden,
                "recurrent_dropout": self.recurrent_dropout,
                "trunk_hidden": self.trunk_hidden, "multitask": self.multitask}

    @classmethod
    def from_json_dict(cls, data: dict) -> "ModelSpec":
        stack = []
        for item in data["stack"]:
            kind = item.get("type")
            if kind == "conv":
                stack.append(ConvSpec(out_channels=item["out_channels"],
                                      kernel_h=item["kernel_h"],
                                      kernel_w=item["kernel_w"],
                                      stride_h=item["stride_h"],
                                      stride_w=item["stride_w"],
                                      padding=item["padding"], mode=item["mode"]))
            elif kind == "pool":
                stack.append(PoolSpec(kernel_h=item["kernel_h"],
                                      kernel_w=item["kernel_w"]))
            else:
                raise DataError(f"unknown stack item type {kind!r}")
        return cls(stack=tuple(stack), input_frames=data["input_frames"],
                   input_dims=data["input_dims"], n_emotions=data["n_emotions"],
                   recurrent_hidden=data["recurrent_hidden"],
                   recurrent_dropout=data["recurrent_dropout"],
                   trunk_hidden=data["trunk_hidden"], multitask=data["multitask"])


def default_temporal_spec(input_dims: int, input_frames: int = 300,
                          n_emotions: int = 4, multitask: bool = True) -> ModelSpec:
    """Temporal stack: kernels span the full feature axis, stride 2 on time
    for the first layer. Sized to land near 219k parameters at 120 dims."""
    stack = (
        ConvSpec(out_channels=24, kernel_h=5, kernel_w=input_dims,
                 stride_h=2, mode="temporal"),
        ConvSpec(out_channels=24, kernel_h=3, kernel_w=1, mode="temporal"),
        ConvSpec(out_channels=32, kernel_h=3, kernel_w=1, mode="temporal"),
    )
    return ModelSpec(stack=stack, input_frames=input_frames, input_dims=input_dims,
                     n_emotions=n_emotions, trunk_hidden=9, multitask=multitask)


def default_2d_spec(input_dims: int, input_frames: int = 300,
                    n_emotions: int = 4, multitask: bool = True) -> ModelSpec:
    """2-D stack with square kernels. Sized to land near 1.25M parameters
    at 120 dims."""
    stack = (
        ConvSpec(out_channels=16, kernel_h=4, kernel_w=4, stride_h=2, stride_w=2),
        ConvSpec(out_channels=32, kernel_h=4, kernel_w=4, stride_h=2, stride_w=2),
        ConvSpec(out_channels=48, kernel_h=4, kernel_w=4, stride_h=2, stride_w=2),
    )
    return ModelSpec(stack=stack, input_frames=input_frames, input_dims=input_dims,
                     n_emotions=n_emotions, trunk_hidden=210, multitask=multitask)


def stack_output_shape(spec: ModelSpec) -> tuple[int, int, int]:
    """(time, width, channels) after the conv stack, validating temporal
    kernels against the running feature width."""
    h, w = spec.input_frames, spec.input_dims
    channels = 1
    for item in spec.stack:
        if isinstance(item, ConvSpec):
            if item.mode == "temporal" and item.kernel_w != w:
                raise ConfigError(
                    f"temporal kernel width {item.kernel_w} must span the "
                    f"feature axis (width {w})"
                )
            channels = item.out_channels
        h, w = mask_size((h, w), item)
    return h, w, channels


def chain_valid(valid: np.ndarray, spec: ModelSpec) -> np.ndarray:
    """Carry per-sample valid lengths through the stack's time arithmetic."""
    v = np.asarray(valid, dtype=np.int64)
    for item in spec.stack:
        v = (v - item.kernel_h + 2 * item.padding) // item.stride_h + 1
    if v.min() < 1:
        raise DataError(
            "a sub-segment is too short for the conv stack "
            f"(valid lengths {np.asarray(valid).tolist()} collapse to {v.tolist()})"
        )
    return v


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


class EmotionRecognizer:
    """Sub-segment classifier with an optional gender auxiliary head."""

    def __init__(self, spec: ModelSpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.stack_layers: list = []
        channels = 1
        for item in spec.stack:
            if isinstance(item, ConvSpec):
                self.stack_layers.append(Conv2D(item, channels, rng, dtype))
                channels = item.out_channels
            else:
                self.stack_layers.append(MaxPool2D(item))
        seq_t, seq_w, seq_c = stack_output_shape(spec)
        self.seq_frames = seq_t
        self.seq_features = seq_w * seq_c
        self.bilstm = BiLSTM(self.seq_features, spec.recurrent_hidden, rng, dtype)
        self.dropout = Dropout(spec.recurrent_dropout)
        self.trunk = Dense(seq_t * 2 * spec.recurrent_hidden, spec.trunk_hidden,
                           rng, dtype)
        self.relu = ReLU()
        self.head_emotion = Dense(spec.trunk_hidden, spec.n_emotions, rng, dtype)
        self.head_gender = (Dense(spec.trunk_hidden, len(GENDER_CLASSES), rng, dtype)
                            if spec.multitask else None)

    # --- parameter plumbing ------------------------------------------------

    def _named_layers(self) -> list[tuple[str, object]]:
        named = [(f"stack{i}", layer) for i, layer in enumerate(self.stack_layers)]
        named += [("bilstm", self.bilstm), ("trunk", self.trunk),
                  ("head_emotion", self.head_emotion)]
        if self.head_gender is not None:
            named.append(("head_gender", self.head_gender))
        return named

    def params(self) -> dict[str, np.ndarray]:
        """Live parameter arrays keyed as '<layer>/<tensor>'."""
        out = {}
        for name, layer in self._named_layers():
            for key, arr in layer.params.items():
                out[f"{name}/{key}"] = arr
        return out

    def set_params(self, values: dict[str, np.ndarray]) -> None:
        own = self.params()
        if set(values) != set(own):
            raise DataError(f"parameter names mismatch: {sorted(set(values) ^ set(own))}")
        for key, arr in own.items():
            incoming = np.asarray(values[key], dtype=arr.dtype)
            if incoming.shape != arr.shape:
                raise DataError(f"shape mismatch for {key}: "
                                f"{incoming.shape} vs {arr.shape}")
            arr[...] = incoming

    def param_count(self) -> int:
        return param_count(self.params())

    # --- forward / backward -------------------------------------------------

    def forward(self, x: np.ndarray, valid: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None):
        x = np.ascontiguousarray(x, dtype=self.dtype)
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != self.spec.input_frames \
                or x.shape[3] != self.spec.input_dims:
            raise DataError(
                f"expected (batch, 1, {self.spec.input_frames}, "
                f"{self.spec.input_dims}), got {x.shape}"
            )
        v = chain_valid(valid, self.spec)
        stack_ctx = []
        h = x
        for layer in self.stack_layers:
            h, ctx = layer.forward(h)
            if isinstance(layer, Conv2D):
                h, mask = self.relu.forward(h)
                stack_ctx.append((layer, ctx, mask))
            else:
                stack_ctx.append((layer, ctx, None))
        b, ch, tt, ww = h.shape
        seq = np.ascontiguousarray(h.transpose(0, 2, 1, 3).reshape(b, tt, ch * ww))
        rec, rec_ctx = self.bilstm.forward(seq, v)
        dropped, drop_ctx = self.dropout.forward(rec, train=train, rng=rng)
        flat = dropped.reshape(b, tt * rec.shape[2])
        trunk_out, trunk_ctx = self.trunk.forward(flat)
        act, act_mask = self.relu.forward(trunk_out)
        logits_e, he_ctx = self.head_emotion.forward(act)
        logits_g = None
        hg_ctx = None
        if self.head_gender is not None:
            logits_g, hg_ctx = self.head_gender.forward(act)
        cache = (stack_ctx, (b, ch, tt, ww), rec_ctx, drop_ctx, trunk_ctx,
                 act_mask, he_ctx, hg_ctx)
        return logits_e, logits_g, cache

    def backward(self, cache, dlogits_e: np.ndarray,
                 dlogits_g: np.ndarray | None = None):
        (stack_ctx, shape4, rec_ctx, drop_ctx, trunk_ctx,
         act_mask, he_ctx, hg_ctx) = cache
        grads: dict[str, np.ndarray] = {}
        dact, head_grads = self.head_emotion.backward(he_ctx, dlogits_e)
        for key, g in head_grads.items():
            grads[f"head_emotion/{key}"] = g
        if self.head_gender is not None:
            if dlogits_g is None:
                raise DataError("multitask model needs gender upstream gradients")
            dact_g, g_grads = self.head_gender.backward(hg_ctx, dlogits_g)
            dact = dact + dact_g
            for key, g in g_grads.items():
                grads[f"head_gender/{key}"] = g
        dtrunk_out, _ = self.relu.backward(act_mask, dact)
        dflat, trunk_grads = self.trunk.backward(trunk_ctx, dtrunk_out)
        for key, g in trunk_grads.items():
            grads[f"trunk/{key}"] = g
        b, ch, tt, ww = shape4
        ddropped = dflat.reshape(b, tt, 2 * self.spec.recurrent_hidden)
        drec, _ = self.dropout.backward(drop_ctx, ddropped)
        dseq, rec_grads = self.bilstm.backward(rec_ctx, drec)
        for key, g in rec_grads.items():
            grads[f"bilstm/{key}"] = g
        dh = np.ascontiguousarray(
            dseq.reshape(b, tt, ch, ww).transpose(0, 2, 1, 3))
        for i in reversed(range(len(stack_ctx))):
            layer, ctx, mask = stack_ctx[i]
            if mask is not None:
                dh, _ = self.relu.backward(mask, dh)
            dh, layer_grads = layer.backward(ctx, dh)
            for key, g in layer_grads.items():
                grads[f"stack{i}/{key}"] = g
        return dh, grads

    def predict_posteriors(self, values: np.ndarray, valid: np.ndarray,
                           batch_size: int = 256):
        """Eval-mode posteriors for stacked sub-segments (n, frames, dims)."""
        values = np.asarray(values)
        n = values.shape[0]
        probs_e = np.zeros((n, self.spec.n_emotions), dtype=np.float64)
        probs_g = (np.zeros((n, len(GENDER_CLASSES)), dtype=np.float64)
                   if self.head_gender is not None else None)
        for start in range(0, n, batch_size):
            stop = min(start + batch_size, n)
            batch = values[start:stop][:, None, :, :]
            logits_e, logits_g, _ = self.forward(batch, valid[start:stop],
                                                 train=False)
            probs_e[start:stop] = _softmax(logits_e)
            if probs_g is not None:
                probs_g[start:stop] = _softmax(logits_g)
        return probs_e, probs_g


# --- checkpoints -----------------------------------------------------------

CHECKPOINT_MAGIC = b"SERM"
CHECKPOINT_VERSION = 1


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_checkpoint(path: str | Path, model: EmotionRecognizer,
                    meta: dict | None = None) -> None:
    """Write named float32 tensors plus a JSON sidecar with the spec."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    params = model.params()
    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack("<II", CHECKPOINT_VERSION, len(params)))
        for name, arr in params.items():
            encoded = name.encode("utf-8")
            handle.write(struct.pack("<H", len(encoded)))
            handle.write(encoded)
            handle.write(struct.pack("<B", arr.ndim))
            handle.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            handle.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    sidecar = {"model_spec": model.spec.to_json_dict(), "meta": meta or {}}
    sidecar_path(path).write_text(json.dumps(sidecar, indent=2) + "\n",
                                  encoding="utf-8")


def read_checkpoint_tensors(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError as exc:
        raise DataError(f"checkpoint not found: {path}") from exc
    if blob[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"bad checkpoint magic in {path}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {version} in {path}")
    offset = 12
    tensors = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(blob, dtype="<f4", count=size, offset=offset)
            offset += 4 * size
            tensors[name] = data.reshape(shape).copy()
    except (struct.error, ValueError) as exc:
        raise DataError(f"truncated or corrupt checkpoint: {path}") from exc
    return tensors


def load_checkpoint(path: str | Path) -> tuple[EmotionRecognizer, dict]:
    """Rebuild a model from a checkpoint and its sidecar; returns (model, meta)."""
    side = sidecar_path(path)
    try:
        sidecar = json.loads(side.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DataError(f"checkpoint sidecar not found: {side}") from exc
    spec = ModelSpec.from_json_dict(sidecar["model_spec"])
    model = EmotionRecognizer(spec, seed=0)
    model.set_params(read_checkpoint_tensors(path))
    return model, sidecar.get("meta", {})
