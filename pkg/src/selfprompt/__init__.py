"""Automatic prompt generation and adapter numerics for SAM-style segmentation."""

from selfprompt.core import (
    BinaryMask,
    LabelVolume,
    ScalarVolume,
    Sphere,
    one_hot,
    read_spv,
    synth_spheres,
    write_spv,
)
from selfprompt.edt import edt_bruteforce, edt_exact
from selfprompt.prompt import generate_prompts, read_prompts, write_prompts

__version__ = "0.1.0"

__all__ = [
    "BinaryMask",
    "LabelVolume",
    "ScalarVolume",
    "Sphere",
    "edt_bruteforce",
    "edt_exact",
    "generate_prompts",
    "one_hot",
    "read_prompts",
    "read_spv",
    "synth_spheres",
    "write_prompts",
    "write_spv",
]
