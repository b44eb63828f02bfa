"""Helpers shared by test modules that need degenerate codecs."""

from qpf.attention import BlockParams
from qpf.model import CodecParams


def zero_blocks(codec: CodecParams) -> CodecParams:
    """Replace every transformer block with all-zero weights so both
    transforms act as identity maps on their query tables."""
    cfg = codec.config
    codec.encoder.blocks = [
        BlockParams.zeros(cfg.embed_dim, cfg.patch_dim, cfg.heads,
                          cfg.ffw_mult, cfg.norm_mode, scale=cfg.head_scale)
        for _ in range(cfg.depth)]
    codec.decoder.blocks = [
        BlockParams.zeros(cfg.embed_dim, cfg.embed_dim, cfg.heads,
                          cfg.ffw_mult, cfg.norm_mode, scale=cfg.head_scale)
        for _ in range(cfg.depth)]
    return codec
