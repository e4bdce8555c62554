"""Depth-fused adapter, modality and multi-class adapters, depth embeddings.

Token tensors are ``(D, N, C)``: depth frames, tokens per frame, channels.
Channel projections act on the last axis and depth projections on the first.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from selfprompt.core import LabelVolume, ScalarVolume
from selfprompt.errors import ValidationError
from selfprompt.nn.conv import ConvLayer, ConvStack
from selfprompt.nn.functional import gelu, gelu_grad, softmax

PARAM_NAMES = ("W_dn", "W_up", "W_Dup", "W_Ddn")


def check_tensor3(x: np.ndarray, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or min(x.shape) < 1:
        raise ValidationError(f"{name} must be a non-empty (D, N, C) tensor, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{name} contains non-finite values")
    return x


@dataclass
class AdapterParams:
    W_dn: np.ndarray   # (C, C/4)
    W_up: np.ndarray   # (C/4, C)
    W_Dup: np.ndarray  # (D, 4D)
    W_Ddn: np.ndarray  # (4D, D)
    activation: str = "gelu"

    def __post_init__(self) -> None:
        for name in PARAM_NAMES:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        c, r = self.W_dn.shape
        d = self.W_Dup.shape[0]
        if c % 4 or r != c // 4:
            raise ValidationError(f"W_dn must be (C, C/4) with C divisible by 4, got {self.W_dn.shape}")
        expected = {"W_up": (r, c), "W_Dup": (d, 4 * d), "W_Ddn": (4 * d, d)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValidationError(f"{name} must be {shape}, got {getattr(self, name).shape}")
        if self.activation != "gelu":
            raise ValidationError(f"unsupported adapter activation {self.activation!r}")

    @property
    def channels(self) -> int:
        return int(self.W_dn.shape[0])

    @property
    def depth(self) -> int:
        return int(self.W_Dup.shape[0])

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    @classmethod
    def init(cls, channels: int, depth: int, rng: np.random.Generator,
             zero_up: bool = True, scale: float = 0.1) -> "AdapterParams":
        r = channels // 4
        return cls(
            W_dn=rng.uniform(-scale, scale, (channels, r)),
            W_up=np.zeros((r, channels)) if zero_up else rng.uniform(-scale, scale, (r, channels)),
            W_Dup=rng.uniform(-scale, scale, (depth, 4 * depth)),
            W_Ddn=rng.uniform(-scale, scale, (4 * depth, depth)),
        )


def _check_adapter_input(x: np.ndarray, p: AdapterParams) -> np.ndarray:
    x = check_tensor3(x)
    if x.shape[2] != p.channels or x.shape[0] != p.depth:
        raise ValidationError(
            f"input (D={x.shape[0]}, C={x.shape[2]}) does not match adapter (D={p.depth}, C={p.channels})"
        )
    return x


def _dfused_parts(x: np.ndarray, p: AdapterParams):
    a = x @ p.W_dn
    h = gelu(a)
    b = np.einsum("dnk,de->enk", h, p.W_Dup)
    g = gelu(b)
    c = np.einsum("enk,ed->dnk", g, p.W_Ddn)
    m = h + c
    return a, h, b, g, m


def dfused_forward(x: np.ndarray, p: AdapterParams) -> np.ndarray:
    """``x + (s(x Wdn) + s(s(x Wdn) . WDup) . WDdn) Wup`` with s = GELU."""
    x = _check_adapter_input(x, p)
    m = _dfused_parts(x, p)[-1]
    return x + m @ p.W_up


def dfused_backward(x: np.ndarray, p: AdapterParams, upstream_grad: np.ndarray):
    """Gradients of ``sum(upstream_grad * dfused_forward(x, p))``.

    Returns ``(grad_x, {name: grad})`` with one entry per weight matrix.
    """
    x = _check_adapter_input(x, p)
    g_out = np.asarray(upstream_grad, dtype=np.float64)
    if g_out.shape != x.shape:
        raise ValidationError(f"upstream_grad shape {g_out.shape} != output shape {x.shape}")
    a, h, b, g, m = _dfused_parts(x, p)

    grad_up = np.einsum("dnk,dnc->kc", m, g_out)
    dm = g_out @ p.W_up.T
    grad_Ddn = np.einsum("enk,dnk->ed", g, dm)
    dg = np.einsum("ed,dnk->enk", p.W_Ddn, dm)
    db = dg * gelu_grad(b)
    grad_Dup = np.einsum("dnk,enk->de", h, db)
    dh = dm + np.einsum("de,enk->dnk", p.W_Dup, db)
    da = dh * gelu_grad(a)
    grad_dn = np.einsum("dnc,dnk->ck", x, da)
    grad_x = g_out + da @ p.W_dn.T
    return grad_x, {"W_dn": grad_dn, "W_up": grad_up, "W_Dup": grad_Dup, "W_Ddn": grad_Ddn}


# ---------------------------------------------------------------------------
# depth positional embedding


@dataclass
class DepthPosEmbed:
    table: np.ndarray  # (D_max, C)

    def __post_init__(self) -> None:
        self.table = np.asarray(self.table, dtype=np.float64)
        if self.table.ndim != 2 or not np.all(np.isfinite(self.table)):
            raise ValidationError("depth embedding must be a finite (D_max, C) matrix")

    @property
    def max_depth(self) -> int:
        return int(self.table.shape[0])


def apply_depth_pos_embed(x: np.ndarray, e: DepthPosEmbed) -> np.ndarray:
    x = check_tensor3(x)
    if x.shape[0] > e.max_depth:
        raise ValidationError(f"depth {x.shape[0]} exceeds embedding capacity {e.max_depth}")
    if x.shape[2] != e.table.shape[1]:
        raise ValidationError(f"channels {x.shape[2]} != embedding width {e.table.shape[1]}")
    return x + e.table[: x.shape[0], None, :]


# ---------------------------------------------------------------------------
# modality adapter: M input modalities -> 3 channels


def _check_invert_bottleneck(stack: ConvStack, c_in: int, c_out: int, what: str) -> None:
    if stack.in_channels != c_in:
        raise ValidationError(f"{what}: stack expects {stack.in_channels} input channels, got {c_in}")
    if stack.out_channels != c_out:
        raise ValidationError(f"{what}: stack emits {stack.out_channels} channels, expected {c_out}")
    hidden = 4 * max(c_in, c_out)
    if list(stack.hidden_widths()) != [hidden]:
        raise ValidationError(f"{what}: expected two layers with hidden width {hidden}")


def init_madapter(modalities: int, rng: np.random.Generator, kernel: int = 3) -> ConvStack:
    hidden = 4 * max(modalities, 3)
    return ConvStack([
        ConvLayer.init(modalities, hidden, kernel, rng, activation="gelu"),
        ConvLayer.init(hidden, 3, 1, rng),
    ])


def madapter_forward(x: np.ndarray, stack: ConvStack) -> np.ndarray:
    """Map an ``(M, H, W)`` modality stack to ``(3, H, W)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValidationError(f"expected (M, H, W) input, got shape {x.shape}")
    _check_invert_bottleneck(stack, x.shape[0], 3, "MAdapter")
    out = stack(x)
    if out.shape[1:] != x.shape[1:]:
        raise ValidationError(f"stack changed spatial dims {x.shape[1:]} -> {out.shape[1:]}")
    return out


# ---------------------------------------------------------------------------
# multi-class fusion


def identity_mc_stack(num_classes: int) -> ConvStack:
    """K -> 4K -> K stack of 1x1 convolutions that passes logits through unchanged."""
    k = num_classes
    w1 = np.zeros((4 * k, k, 1, 1))
    w1[np.arange(k), np.arange(k)] = 1.0
    w2 = np.zeros((k, 4 * k, 1, 1))
    w2[np.arange(k), np.arange(k)] = 1.0
    return ConvStack([ConvLayer(w1, np.zeros(4 * k)), ConvLayer(w2, np.zeros(k))])


def init_mcadapter(num_classes: int, rng: np.random.Generator, kernel: int = 3) -> ConvStack:
    k = num_classes
    return ConvStack([
        ConvLayer.init(k, 4 * k, kernel, rng, activation="gelu"),
        ConvLayer.init(4 * k, k, 1, rng),
    ])


def mcadapter_fuse(per_class_logits: ScalarVolume, stack: Optional[ConvStack] = None,
                   ) -> tuple[ScalarVolume, LabelVolume]:
    """Per-voxel softmax over adapted class logits and its argmax labels.

    The conv stack runs on each z-slice as a ``(K, nx, ny)`` image.  Argmax ties
    resolve to the smallest class id.
    """
    k = per_class_logits.channels
    if k < 2:
        raise ValidationError(f"fusion needs at least 2 classes, got {k}")
    if stack is None:
        stack = identity_mc_stack(k)
    _check_invert_bottleneck(stack, k, k, "MC-Adapter")
    logits = per_class_logits.values
    adapted = np.stack([stack(logits[..., z]) for z in range(logits.shape[3])], axis=-1)
    if adapted.shape != logits.shape:
        raise ValidationError(f"stack changed logit shape {logits.shape} -> {adapted.shape}")
    probs = softmax(adapted, axis=0)
    labels = np.argmax(probs, axis=0).astype(np.uint8)
    spacing = per_class_logits.spacing
    return ScalarVolume(probs, spacing), LabelVolume(labels, spacing, k)
