"""Plain-numpy 2-D convolution and transposed convolution.

Images are ``(C, H, W)``.  Convolution weights are ``(C_out, C_in, k, k)``;
transposed-convolution weights follow the ``(C_in, C_out, k, k)`` convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from selfprompt.errors import ValidationError
from selfprompt.nn.functional import activate


def conv2d(x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray] = None,
           stride: int = 1, padding: int = 0) -> np.ndarray:
    c_out, c_in, kh, kw = weight.shape
    if x.ndim != 3 or x.shape[0] != c_in:
        raise ValidationError(f"conv2d expects ({c_in}, H, W) input, got {x.shape}")
    xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    out = np.einsum("chwij,ocij->ohw", win, weight, optimize=True)
    if bias is not None:
        out = out + bias[:, None, None]
    return out


def conv_transpose2d(x: np.ndarray, weight: np.ndarray, bias: Optional[np.ndarray] = None,
                     stride: int = 1, padding: int = 0, output_padding: int = 0) -> np.ndarray:
    c_in, c_out, kh, kw = weight.shape
    if x.ndim != 3 or x.shape[0] != c_in:
        raise ValidationError(f"conv_transpose2d expects ({c_in}, H, W) input, got {x.shape}")
    _, h, w = x.shape
    full_h = (h - 1) * stride + kh + output_padding
    full_w = (w - 1) * stride + kw + output_padding
    full = np.zeros((c_out, full_h, full_w), dtype=np.result_type(x, weight))
    for a in range(kh):
        for b in range(kw):
            contrib = np.einsum("chw,co->ohw", x, weight[:, :, a, b])
            full[:, a : a + (h - 1) * stride + 1 : stride, b : b + (w - 1) * stride + 1 : stride] += contrib
    out_h = (h - 1) * stride - 2 * padding + kh + output_padding
    out_w = (w - 1) * stride - 2 * padding + kw + output_padding
    out = full[:, padding : padding + out_h, padding : padding + out_w]
    if bias is not None:
        out = out + bias[:, None, None]
    return out


@dataclass
class ConvLayer:
    """One layer of a :class:`ConvStack`; ``activation`` runs after the bias."""

    weight: np.ndarray
    bias: np.ndarray
    stride: int = 1
    padding: Optional[int] = None  # None means k // 2 ("same" for stride 1)
    transposed: bool = False
    output_padding: int = 0
    activation: str = "identity"

    def __post_init__(self) -> None:
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 4 or self.weight.shape[2] != self.weight.shape[3]:
            raise ValidationError(f"kernel must be square, weight shape {self.weight.shape}")
        if self.weight.shape[2] % 2 == 0:
            raise ValidationError(f"kernel size must be odd, got {self.weight.shape[2]}")
        if self.bias.shape != (self.out_channels,):
            raise ValidationError(f"bias shape {self.bias.shape} != ({self.out_channels},)")
        if self.padding is None:
            self.padding = self.kernel // 2

    @property
    def kernel(self) -> int:
        return int(self.weight.shape[2])

    @property
    def in_channels(self) -> int:
        return int(self.weight.shape[0 if self.transposed else 1])

    @property
    def out_channels(self) -> int:
        return int(self.weight.shape[1 if self.transposed else 0])

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.transposed:
            y = conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding, self.output_padding)
        else:
            y = conv2d(x, self.weight, self.bias, self.stride, self.padding)
        return activate(self.activation, y)

    @classmethod
    def init(cls, c_in: int, c_out: int, kernel: int, rng: np.random.Generator,
             scale: float = 0.1, **kw) -> "ConvLayer":
        """Seeded uniform weights in ``[-scale, scale]`` and zero bias."""
        shape = (c_in, c_out, kernel, kernel) if kw.get("transposed") else (c_out, c_in, kernel, kernel)
        return cls(rng.uniform(-scale, scale, size=shape), np.zeros(c_out), **kw)

    @classmethod
    def upsample2x(cls, c_in: int, c_out: int, rng: np.random.Generator, **kw) -> "ConvLayer":
        """3x3 transposed convolution that exactly doubles H and W."""
        return cls.init(c_in, c_out, 3, rng, transposed=True, stride=2, padding=1, output_padding=1, **kw)


@dataclass
class ConvStack:
    layers: list[ConvLayer] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValidationError("a conv stack needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_channels != nxt.in_channels:
                raise ValidationError(
                    f"layer channels do not chain: {prev.out_channels} -> {nxt.in_channels}"
                )

    @property
    def in_channels(self) -> int:
        return self.layers[0].in_channels

    @property
    def out_channels(self) -> int:
        return self.layers[-1].out_channels

    def hidden_widths(self) -> Sequence[int]:
        return [layer.out_channels for layer in self.layers[:-1]]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer(x)
        return x
