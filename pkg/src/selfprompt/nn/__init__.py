from selfprompt.nn.adapters import (
    AdapterParams,
    DepthPosEmbed,
    apply_depth_pos_embed,
    dfused_backward,
    dfused_forward,
    identity_mc_stack,
    init_madapter,
    init_mcadapter,
    madapter_forward,
    mcadapter_fuse,
)
from selfprompt.nn.checkpoint import load_checkpoint, save_checkpoint
from selfprompt.nn.conv import ConvLayer, ConvStack, conv2d, conv_transpose2d
from selfprompt.nn.mspgen import MSPGeneratorParams, init_mspgenerator, mspgenerator_forward
from selfprompt.nn.transformer import BlockParams, transformer_block_forward

__all__ = [
    "AdapterParams",
    "BlockParams",
    "ConvLayer",
    "ConvStack",
    "DepthPosEmbed",
    "MSPGeneratorParams",
    "apply_depth_pos_embed",
    "conv2d",
    "conv_transpose2d",
    "dfused_backward",
    "dfused_forward",
    "identity_mc_stack",
    "init_madapter",
    "init_mcadapter",
    "init_mspgenerator",
    "load_checkpoint",
    "madapter_forward",
    "mcadapter_fuse",
    "mspgenerator_forward",
    "save_checkpoint",
    "transformer_block_forward",
]
