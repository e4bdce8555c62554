"""Hierarchical decoder turning five encoder feature maps into class logits.

All five features come from a uniform-stride encoder, so they share the
resolution ``H/16``.  Decoding starts from the deepest map.  Each later stage
doubles the resolution with a transposed convolution, then concatenates the
next shallower feature after learned upsampling to the same size, then fuses
the result with a 3x3 convolution.  Every stage has a 1x1 head emitting K
logits, giving outputs at ``H/16, H/8, H/4, H/2, H``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from selfprompt.errors import ValidationError
from selfprompt.nn.conv import ConvLayer, ConvStack

NUM_FEATURES = 5


@dataclass
class MSPGeneratorParams:
    stem: ConvLayer                 # deepest feature -> decoder width
    ups: list[ConvLayer]            # 4 stride-2 transposed convs
    skips: list[ConvStack]          # skips[i] lifts a feature by 2**(i+1)
    fuse: list[ConvLayer]           # 4 convs on the concatenation
    heads: list[ConvLayer]          # 5 1x1 convs to K logits

    @property
    def feature_channels(self) -> int:
        return self.stem.in_channels

    @property
    def num_classes(self) -> int:
        return self.heads[0].out_channels

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {"stem.weight": self.stem.weight, "stem.bias": self.stem.bias}
        for i, layer in enumerate(self.ups):
            out[f"ups.{i}.weight"], out[f"ups.{i}.bias"] = layer.weight, layer.bias
        for i, stack in enumerate(self.skips):
            for j, layer in enumerate(stack.layers):
                out[f"skips.{i}.{j}.weight"], out[f"skips.{i}.{j}.bias"] = layer.weight, layer.bias
        for i, layer in enumerate(self.fuse):
            out[f"fuse.{i}.weight"], out[f"fuse.{i}.bias"] = layer.weight, layer.bias
        for i, layer in enumerate(self.heads):
            out[f"heads.{i}.weight"], out[f"heads.{i}.bias"] = layer.weight, layer.bias
        return out


def init_mspgenerator(feature_channels: int, num_classes: int, rng: np.random.Generator,
                      width: Optional[int] = None, zero: bool = False) -> MSPGeneratorParams:
    """Seeded parameters; ``zero=True`` gives all-zero weights and biases."""
    cd = width or feature_channels
    scale = 0.0 if zero else 0.1
    stem = ConvLayer.init(feature_channels, cd, 3, rng, scale=scale, activation="gelu")
    ups = [ConvLayer.upsample2x(cd, cd, rng, scale=scale, activation="gelu") for _ in range(4)]
    skips = []
    for level in range(1, 5):
        layers = [ConvLayer.upsample2x(feature_channels, cd, rng, scale=scale, activation="gelu")]
        layers += [ConvLayer.upsample2x(cd, cd, rng, scale=scale, activation="gelu") for _ in range(level - 1)]
        skips.append(ConvStack(layers))
    fuse = [ConvLayer.init(2 * cd, cd, 3, rng, scale=scale, activation="gelu") for _ in range(4)]
    heads = [ConvLayer.init(cd, num_classes, 1, rng, scale=scale) for _ in range(5)]
    return MSPGeneratorParams(stem, ups, skips, fuse, heads)


def mspgenerator_forward(features: Sequence[np.ndarray], params: MSPGeneratorParams):
    """Decode ``features`` (shallowest first) into logits.

    Returns ``(final, deep)`` where ``final`` is ``(K, H, W)`` and ``deep``
    lists the four coarser head outputs from ``H/16`` up to ``H/2``.
    """
    if len(features) != NUM_FEATURES:
        raise ValidationError(f"expected {NUM_FEATURES} feature maps, got {len(features)}")
    feats = [np.asarray(f, dtype=np.float64) for f in features]
    shape = feats[0].shape
    if len(shape) != 3 or shape[0] != params.feature_channels:
        raise ValidationError(f"features must be ({params.feature_channels}, h, w), got {shape}")
    if any(f.shape != shape for f in feats):
        raise ValidationError(f"feature shapes differ: {[f.shape for f in feats]}")

    x = params.stem(feats[-1])
    outputs = [params.heads[0](x)]
    for stage in range(1, 5):
        up = params.ups[stage - 1](x)
        skip = params.skips[stage - 1](feats[NUM_FEATURES - 1 - stage])
        x = params.fuse[stage - 1](np.concatenate([up, skip], axis=0))
        outputs.append(params.heads[stage](x))
    return outputs[-1], outputs[:-1]
