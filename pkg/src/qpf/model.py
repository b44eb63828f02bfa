"""Analysis and synthesis transforms.

The encoder runs N learned image queries through a stack of decoder blocks
whose cross-attention context is the (position-encoded) patch tokens of one
tile; the final query states are the latent code. The decoder mirrors this:
learned per-patch prototype queries attend to the latent code and the final
states are reshaped back into pixels.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import patches
from .attention import (AttentionRecord, BlockParams, LinearParams, linear,
                        decoder_block)
from .autodiff import Tensor
from .errors import ConfigError, InvalidInputError, ShapeError

CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class ModelConfig:
    patch_size: int = 16
    tile_size: int = 256
    embed_dim: int = 768
    n_queries: int = 64
    depth: int = 12
    heads: int = 12
    ffw_mult: int = 4
    norm_mode: str = "pre"
    use_attn_scale: bool = True
    attn_scale_override: float | None = None  # explicit similarity temperature
    prior_filters: tuple[int, ...] = (3, 3, 3)
    prior_init_scale: float = 10.0

    def __post_init__(self):
        if self.patch_size not in patches.SUPPORTED_PATCH_SIZES:
            raise ConfigError(
                f"patch_size must be one of {patches.SUPPORTED_PATCH_SIZES}")
        if self.tile_size % self.patch_size:
            raise ConfigError("tile_size must be a multiple of patch_size")
        if self.embed_dim % self.heads:
            raise ConfigError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if min(self.n_queries, self.depth, self.heads, self.ffw_mult) < 1:
            raise ConfigError("n_queries, depth, heads, ffw_mult must be >= 1")

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * 3

    @property
    def patches_per_tile(self) -> int:
        return (self.tile_size // self.patch_size) ** 2

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    @property
    def head_scale(self) -> float:
        if self.attn_scale_override is not None:
            return float(self.attn_scale_override)
        return 1.0 / math.sqrt(self.head_dim) if self.use_attn_scale else 1.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        d = dict(d)
        if "prior_filters" in d:
            d["prior_filters"] = tuple(d["prior_filters"])
        return ModelConfig(**d)


PAPER_MODEL = ModelConfig()
TOY_MODEL = ModelConfig(embed_dim=32, n_queries=4, depth=2, heads=2)


@dataclass
class LatentCode:
    """Encoder output queries: continuous before quantization, int after."""
    values: np.ndarray  # (N, d); float64 or int32
    mode: str = "continuous"  # continuous | quantized

    @property
    def n_queries(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass
class EncoderParams:
    image_queries: Tensor        # (N, d)
    position_table: Tensor       # (patches_per_tile, patch_dim)
    blocks: list[BlockParams]


@dataclass
class DecoderParams:
    patch_prototypes: Tensor     # (patches_per_tile, d)
    blocks: list[BlockParams]
    output_map: LinearParams | None  # d -> patch_dim when d != patch_dim


@dataclass
class CodecParams:
    config: ModelConfig
    encoder: EncoderParams
    decoder: DecoderParams
    prior: "object"  # FactorizedPrior; typed loosely to avoid an import cycle


def init_codec(config: ModelConfig, seed: int = 0) -> CodecParams:
    from .prior import FactorizedPrior  # deferred: prior.py imports model types

    rng = np.random.default_rng(seed)
    d, kv = config.embed_dim, config.patch_dim
    enc = EncoderParams(
        image_queries=ad.param(rng.normal(0.0, 0.02, size=(config.n_queries, d))),
        position_table=ad.param(
            rng.normal(0.0, 0.02, size=(config.patches_per_tile, kv))),
        blocks=[BlockParams.init(d, kv, config.heads, rng, config.ffw_mult,
                                 config.norm_mode, scale=config.head_scale)
                for _ in range(config.depth)])
    out_map = None
    if d != config.patch_dim:
        # bias 0.5 so a fresh decoder emits mid-gray inside the clamp interval
        out_map = LinearParams.init(d, config.patch_dim, rng, bias=0.5)
    dec = DecoderParams(
        patch_prototypes=ad.param(
            rng.normal(0.0, 0.02, size=(config.patches_per_tile, d))),
        blocks=[BlockParams.init(d, d, config.heads, rng, config.ffw_mult,
                                 config.norm_mode, scale=config.head_scale)
                for _ in range(config.depth)],
        output_map=out_map)
    prior = FactorizedPrior.init(channels=d, filters=config.prior_filters,
                                 init_scale=config.prior_init_scale, rng=rng)
    return CodecParams(config=config, encoder=enc, decoder=dec, prior=prior)


# -- forward passes -----------------------------------------------------------

def encode_tokens(image_tile: np.ndarray, config: ModelConfig) -> np.ndarray:
    """phi without the positional table: patchify one tile."""
    tile = np.asarray(image_tile, dtype=np.float64)
    t = config.tile_size
    if tile.shape != (t, t, 3):
        raise ShapeError(f"expected {t}x{t}x3 tile, got {tile.shape}")
    return patches.patchify(tile, config.patch_size)


def encode_t(image_tile: np.ndarray, params: CodecParams,
             capture: list[AttentionRecord] | None = None) -> Tensor:
    """Tape-level analysis transform; returns the continuous latent Tensor."""
    tokens = encode_tokens(image_tile, params.config)
    context = ad.constant(tokens) + params.encoder.position_table
    q = params.encoder.image_queries
    for n, block in enumerate(params.encoder.blocks):
        q = decoder_block(q, context, block, capture=capture, layer=n)
    return q


def encode(image_tile: np.ndarray, params: CodecParams,
           capture: bool = False) -> tuple[LatentCode, list[AttentionRecord]]:
    records: list[AttentionRecord] | None = [] if capture else None
    latent = encode_t(image_tile, params, capture=records)
    return LatentCode(values=latent.value.copy()), (records or [])


def _context_tensor(latent: LatentCode | np.ndarray) -> Tensor:
    values = latent.values if isinstance(latent, LatentCode) else latent
    return ad.constant(np.asarray(values, dtype=np.float64))


def decode_t(context: Tensor, params: CodecParams,
             capture: list[AttentionRecord] | None = None) -> Tensor:
    """Tape-level synthesis transform; returns the clamped image Tensor."""
    cfg = params.config
    if context.shape[-1] != cfg.embed_dim:
        raise ShapeError(
            f"latent dim {context.shape[-1]} != model dim {cfg.embed_dim}")
    q = params.decoder.patch_prototypes
    for n, block in enumerate(params.decoder.blocks):
        q = decoder_block(q, context, block, capture=capture, layer=n)
    if params.decoder.output_map is not None:
        q = linear(q, params.decoder.output_map)
    return _tokens_to_image_t(q, cfg)


def _tokens_to_image_t(tokens: Tensor, cfg: ModelConfig) -> Tensor:
    """Tape twin of `patches.unpatchify` (same frozen layout, then clamp)."""
    p = cfg.patch_size
    side = cfg.tile_size // p
    img = ad.reshape(tokens, (side, side, p, p, 3))
    img = ad.transpose(img, (0, 2, 1, 3, 4))
    img = ad.reshape(img, (side * p, side * p, 3))
    return ad.clip(img, 0.0, 1.0)


def decode(latent: LatentCode | np.ndarray, params: CodecParams,
           capture: bool = False) -> tuple[np.ndarray, list[AttentionRecord]]:
    cfg = params.config
    values = latent.values if isinstance(latent, LatentCode) else np.asarray(latent)
    if values.shape != (cfg.n_queries, cfg.embed_dim):
        raise ShapeError(
            f"latent shape {values.shape} != ({cfg.n_queries}, {cfg.embed_dim})")
    records: list[AttentionRecord] | None = [] if capture else None
    img = decode_t(_context_tensor(values), params, capture=records)
    return img.value.copy(), (records or [])


def decode_ablated(latent: LatentCode | np.ndarray, drop_index: int,
                   params: CodecParams) -> np.ndarray:
    """Decode with one latent query removed from the context sequence."""
    values = latent.values if isinstance(latent, LatentCode) else np.asarray(latent)
    n = values.shape[0]
    if not 0 <= drop_index < n:
        raise InvalidInputError(f"query index {drop_index} out of range [0, {n})")
    if n == 1:
        raise InvalidInputError("cannot ablate the only query: context would be empty")
    kept = np.delete(values, drop_index, axis=0)
    img = decode_t(_context_tensor(kept), params, capture=None)
    return img.value.copy()


# -- parameter tree -----------------------------------------------------------

def named_parameters(params: CodecParams) -> list[tuple[str, Tensor]]:
    out: list[tuple[str, Tensor]] = [
        ("encoder/image_queries", params.encoder.image_queries),
        ("encoder/position_table", params.encoder.position_table),
    ]

    def block_entries(prefix: str, blk: BlockParams):
        for unit_name, unit in (("sa", blk.sa), ("ca", blk.ca)):
            for lin_name, lin in (("q", unit.q), ("k", unit.k),
                                  ("v", unit.v), ("o", unit.o)):
                out.append((f"{prefix}/{unit_name}/{lin_name}/w", lin.w))
                out.append((f"{prefix}/{unit_name}/{lin_name}/b", lin.b))
        out.append((f"{prefix}/ffw_in/w", blk.ffw_in.w))
        out.append((f"{prefix}/ffw_in/b", blk.ffw_in.b))
        out.append((f"{prefix}/ffw_out/w", blk.ffw_out.w))
        out.append((f"{prefix}/ffw_out/b", blk.ffw_out.b))
        for ln_name, ln in (("ln_sa", blk.ln_sa), ("ln_ca", blk.ln_ca),
                            ("ln_ffw", blk.ln_ffw)):
            if ln is not None:
                out.append((f"{prefix}/{ln_name}/gamma", ln.gamma))
                out.append((f"{prefix}/{ln_name}/beta", ln.beta))

    for i, blk in enumerate(params.encoder.blocks):
        block_entries(f"encoder/block{i:02d}", blk)
    out.append(("decoder/patch_prototypes", params.decoder.patch_prototypes))
    for i, blk in enumerate(params.decoder.blocks):
        block_entries(f"decoder/block{i:02d}", blk)
    if params.decoder.output_map is not None:
        out.append(("decoder/output_map/w", params.decoder.output_map.w))
        out.append(("decoder/output_map/b", params.decoder.output_map.b))
    out.extend(params.prior.named_parameters("prior"))
    return out


def config_digest(params: CodecParams) -> str:
    """Hex digest over config + every parameter tensor; embedded in bitstreams."""
    h = hashlib.sha256()
    h.update(params.config.to_json().encode())
    for name, t in sorted(named_parameters(params)):
        h.update(name.encode())
        h.update(np.ascontiguousarray(t.value, dtype=np.float64).tobytes())
    return h.hexdigest()[:32]


def save_checkpoint(path, params: CodecParams, extra: dict | None = None) -> None:
    """Single-archive checkpoint: parameter tensors keyed by module path plus
    a config blob and digest. `extra` (JSON-serializable) rides along for
    training state."""
    arrays = {name.replace("/", "."): t.value for name, t in named_parameters(params)}
    meta = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(params.config),
        "digest": config_digest(params),
        "extra": extra or {},
    }
    arrays["_meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path) -> tuple[CodecParams, dict]:
    """Rebuild a codec from an archive; returns (params, extra)."""
    with np.load(path) as z:
        if "_meta" not in z:
            raise ConfigError(f"{path}: not a codec checkpoint (missing metadata)")
        meta = json.loads(bytes(z["_meta"].tobytes()).decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError(f"{path}: unsupported checkpoint format {meta.get('format')}")
        config = ModelConfig.from_dict(meta["config"])
        params = init_codec(config, seed=0)
        for name, t in named_parameters(params):
            key = name.replace("/", ".")
            if key not in z:
                raise ConfigError(f"{path}: checkpoint missing tensor {name}")
            stored = z[key]
            if stored.shape != t.value.shape:
                raise ConfigError(
                    f"{path}: tensor {name} has shape {stored.shape}, "
                    f"expected {t.value.shape}")
            t.value = stored.astype(np.float64)
    digest = config_digest(params)
    if digest != meta["digest"]:
        raise ConfigError(f"{path}: checkpoint digest mismatch (corrupt archive?)")
    return params, meta.get("extra", {})
