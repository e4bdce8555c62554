"""Minimal pre-norm ViT block with optional depth-fused adapters.

Attention runs independently inside each depth frame; only the adapters mix
information across frames.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from selfprompt.errors import ValidationError
from selfprompt.nn.adapters import AdapterParams, check_tensor3, dfused_forward
from selfprompt.nn.functional import gelu, layer_norm, softmax


@dataclass
class BlockParams:
    heads: int
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    W_qkv: np.ndarray  # (C, 3C)
    b_qkv: np.ndarray
    W_o: np.ndarray    # (C, C)
    b_o: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray
    W_1: np.ndarray    # (C, 4C)
    b_1: np.ndarray
    W_2: np.ndarray    # (4C, C)
    b_2: np.ndarray

    @property
    def channels(self) -> int:
        return int(self.W_o.shape[0])

    @classmethod
    def init(cls, channels: int, heads: int, rng: np.random.Generator, scale: float = 0.1) -> "BlockParams":
        if channels % heads:
            raise ValidationError(f"channels {channels} not divisible by {heads} heads")
        c = channels

        def u(*shape):
            return rng.uniform(-scale, scale, shape)

        return cls(
            heads=heads,
            ln1_gamma=1.0 + u(c), ln1_beta=u(c),
            W_qkv=u(c, 3 * c), b_qkv=u(3 * c),
            W_o=u(c, c), b_o=u(c),
            ln2_gamma=1.0 + u(c), ln2_beta=u(c),
            W_1=u(c, 4 * c), b_1=u(4 * c),
            W_2=u(4 * c, c), b_2=u(c),
        )


def multi_head_attention(z: np.ndarray, p: BlockParams) -> np.ndarray:
    """Self-attention over the N tokens of each frame of a ``(D, N, C)`` tensor."""
    d, n, c = z.shape
    hd = c // p.heads
    qkv = z @ p.W_qkv + p.b_qkv
    q, k, v = (t.reshape(d, n, p.heads, hd).transpose(0, 2, 1, 3) for t in np.split(qkv, 3, axis=-1))
    att = softmax(q @ k.transpose(0, 1, 3, 2) / np.sqrt(hd), axis=-1)
    mixed = (att @ v).transpose(0, 2, 1, 3).reshape(d, n, c)
    return mixed @ p.W_o + p.b_o


def mlp(z: np.ndarray, p: BlockParams) -> np.ndarray:
    return gelu(z @ p.W_1 + p.b_1) @ p.W_2 + p.b_2


def transformer_block_forward(
    x: np.ndarray,
    p: BlockParams,
    adapters: Optional[tuple[AdapterParams, AdapterParams]] = None,
) -> np.ndarray:
    """One block; ``adapters`` is ``(after_attention, parallel_to_mlp)``.

    The first adapter wraps the attention residual stream.  The second sees the
    normalised MLP input and contributes only its increment over that input,
    summed alongside the MLP branch.
    """
    x = check_tensor3(x)
    if x.shape[2] != p.channels:
        raise ValidationError(f"input channels {x.shape[2]} != block width {p.channels}")
    y1 = x + multi_head_attention(layer_norm(x, p.ln1_gamma, p.ln1_beta), p)
    y2 = dfused_forward(y1, adapters[0]) if adapters is not None else y1
    z = layer_norm(y2, p.ln2_gamma, p.ln2_beta)
    out = y2 + mlp(z, p)
    if adapters is not None:
        out = out + (dfused_forward(z, adapters[1]) - z)
    return out
