"""Bitstream container and the end-to-end compress/decompress pipeline.

Wire format (versioned, little-endian; see docs/bitstream.md for the
normative layout and test vectors):

    magic "QPF1" | version u16 | flags u16
    image_h u32 | image_w u32 | crop_y u16 | crop_x u16
    rows u16 | cols u16 | tile_size u16 | n_queries u16 | embed_dim u16 |
    reserved u16 | digest 16 bytes
    per tile (raster order): n_min i16, n_max i16
    per tile: payload_len u32
    if flags bit 0 (side-info mode): per tile, embed_dim rows of
        (support width) u16 values, each the symbol frequency minus one
    payloads, concatenated

Tiles are coded independently. Symbol order inside a tile is channel-major:
all N query values of embedding dimension 0, then dimension 1, and so on —
a frozen bijection with the (N, d) latent layout. By default CDF tables are
not transmitted; the decoder rebuilds them from the checkpoint prior and the
per-tile support bounds, which is what makes decoding bit-exact across
machines that share the checkpoint. Side-info mode trades stream size for
independence from the prior's float evaluation.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import patches
from .errors import BitstreamError, DigestMismatchError, LatentRangeError
from .model import CodecParams, LatentCode, config_digest, decode, encode
from .patches import TileGrid
from .prior import CDF_TOTAL, CdfTables, build_cdf_tables, latent_support, quantize
from .rangecoder import range_decode, range_encode

MAGIC = b"QPF1"
VERSION = 1
FLAG_SIDE_INFO = 1  # CDF tables carried in the stream
_HEADER = struct.Struct("<4sHHIIHHHHHHHH16s")
_SUPPORT = struct.Struct("<hh")
_PAYLOAD_LEN = struct.Struct("<I")
_I16_MIN, _I16_MAX = -(1 << 15), (1 << 15) - 1


@dataclass
class Bitstream:
    image_h: int
    image_w: int
    grid: TileGrid
    n_queries: int
    embed_dim: int
    digest: str                      # 32 hex chars
    supports: list[tuple[int, int]]  # per tile
    payloads: list[bytes]            # per tile
    flags: int = 0
    tables: list[CdfTables] | None = None  # present in side-info mode

    @property
    def n_tiles(self) -> int:
        return self.grid.rows * self.grid.cols

    @property
    def payload_bytes(self) -> int:
        return sum(len(p) for p in self.payloads)

    @property
    def file_bytes(self) -> int:
        total = (_HEADER.size + self.n_tiles * (_SUPPORT.size + _PAYLOAD_LEN.size)
                 + self.payload_bytes)
        if self.tables is not None:
            total += sum(self.embed_dim * (hi - lo + 1) * 2
                         for lo, hi in self.supports)
        return total

    def file_bpp(self) -> float:
        return self.file_bytes * 8.0 / self.grid.n_pixels

    def payload_bpp(self) -> float:
        return self.payload_bytes * 8.0 / self.grid.n_pixels

    def to_bytes(self) -> bytes:
        g = self.grid
        flags = self.flags | (FLAG_SIDE_INFO if self.tables is not None else 0)
        out = bytearray()
        out += _HEADER.pack(MAGIC, VERSION, flags, self.image_h, self.image_w,
                            g.crop_offset[0], g.crop_offset[1], g.rows, g.cols,
                            g.tile_size, self.n_queries, self.embed_dim, 0,
                            bytes.fromhex(self.digest))
        for lo, hi in self.supports:
            out += _SUPPORT.pack(lo, hi)
        for p in self.payloads:
            out += _PAYLOAD_LEN.pack(len(p))
        if self.tables is not None:
            for t in self.tables:
                freqs = np.diff(t.cdf, axis=1).astype(np.int64) - 1
                out += (freqs.astype("<u2")).tobytes()
        for p in self.payloads:
            out += p
        return bytes(out)

    @staticmethod
    def from_bytes(data: bytes) -> "Bitstream":
        if len(data) < _HEADER.size:
            raise BitstreamError("truncated stream: header incomplete")
        (magic, version, flags, image_h, image_w, crop_y, crop_x, rows, cols,
         tile_size, n_queries, embed_dim, _reserved, digest) = \
            _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise BitstreamError(f"bad magic {magic!r}: not a coded image stream")
        if version != VERSION:
            raise BitstreamError(f"unsupported stream version {version}")
        n_tiles = rows * cols
        pos = _HEADER.size
        need = n_tiles * (_SUPPORT.size + _PAYLOAD_LEN.size)
        if len(data) < pos + need:
            raise BitstreamError("truncated stream: tile directory incomplete")
        supports = []
        for _ in range(n_tiles):
            lo, hi = _SUPPORT.unpack_from(data, pos)
            supports.append((lo, hi))
            pos += _SUPPORT.size
        lengths = []
        for _ in range(n_tiles):
            lengths.append(_PAYLOAD_LEN.unpack_from(data, pos)[0])
            pos += _PAYLOAD_LEN.size
        tables = None
        if flags & FLAG_SIDE_INFO:
            tables = []
            for lo, hi in supports:
                width = hi - lo + 1
                if width < 1:
                    raise BitstreamError(
                        f"corrupt support bounds [{lo}, {hi}] in table section")
                n_bytes = embed_dim * width * 2
                if len(data) < pos + n_bytes:
                    raise BitstreamError("truncated stream: table section incomplete")
                freqs = np.frombuffer(data, dtype="<u2", count=embed_dim * width,
                                      offset=pos).astype(np.int64)
                freqs = freqs.reshape(embed_dim, width) + 1
                if not np.all(freqs.sum(axis=1) == CDF_TOTAL):
                    raise BitstreamError("corrupt table section: bad frequency total")
                cdf = np.zeros((embed_dim, width + 1), dtype=np.int64)
                np.cumsum(freqs, axis=1, out=cdf[:, 1:])
                tables.append(CdfTables(offset=lo, cdf=cdf))
                pos += n_bytes
        payloads = []
        for n in lengths:
            if len(data) < pos + n:
                raise BitstreamError("truncated stream: payload incomplete")
            payloads.append(data[pos:pos + n])
            pos += n
        if pos != len(data):
            raise BitstreamError(f"{len(data) - pos} trailing bytes after payloads")
        grid = TileGrid(tile_size=tile_size, rows=rows, cols=cols,
                        crop_offset=(crop_y, crop_x))
        return Bitstream(image_h=image_h, image_w=image_w, grid=grid,
                         n_queries=n_queries, embed_dim=embed_dim,
                         digest=digest.hex(), supports=supports,
                         payloads=payloads, flags=flags, tables=tables)

    def write(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @staticmethod
    def read(path) -> "Bitstream":
        with open(path, "rb") as f:
            return Bitstream.from_bytes(f.read())


def _symbol_channels(n_queries: int, dim: int) -> np.ndarray:
    return np.repeat(np.arange(dim), n_queries)


def latent_to_symbols(latent: LatentCode) -> np.ndarray:
    """Channel-major symbol stream: all queries of dim 0, then dim 1, ..."""
    return np.ascontiguousarray(latent.values.T).ravel()


def symbols_to_latent(symbols: np.ndarray, n_queries: int, dim: int) -> LatentCode:
    values = np.asarray(symbols, dtype=np.int32).reshape(dim, n_queries).T
    return LatentCode(values=np.ascontiguousarray(values), mode="quantized")


def compress_tile(tile: np.ndarray, params: CodecParams) \
        -> tuple[tuple[int, int], CdfTables, bytes]:
    """Analysis transform, round quantization, range coding for one tile."""
    latent, _ = encode(tile, params)
    quantized = quantize(latent, "round")
    support = latent_support(quantized)
    if support[0] < _I16_MIN or support[1] > _I16_MAX:
        raise LatentRangeError(
            f"latent support {support} exceeds the 16-bit header range")
    tables = build_cdf_tables(params.prior, support)
    symbols = latent_to_symbols(quantized) - tables.offset
    channels = _symbol_channels(quantized.values.shape[0], quantized.values.shape[1])
    return support, tables, range_encode(symbols, tables, channels)


def decompress_tile(payload: bytes, support: tuple[int, int], params: CodecParams,
                    tables: CdfTables | None = None) -> np.ndarray:
    cfg = params.config
    if tables is None:
        tables = build_cdf_tables(params.prior, support)
    count = cfg.n_queries * cfg.embed_dim
    channels = _symbol_channels(cfg.n_queries, cfg.embed_dim)
    idx = range_decode(payload, tables, count, channels)
    latent = symbols_to_latent(idx + tables.offset, cfg.n_queries, cfg.embed_dim)
    img, _ = decode(latent, params)
    return img


def compress_image(image: np.ndarray, params: CodecParams,
                   side_info: bool = False) -> Bitstream:
    """Tile, encode, quantize, and entropy-code a full image.

    With `side_info` the per-tile CDF tables travel in the stream instead of
    being rebuilt from the checkpoint at decode time.
    """
    cfg = params.config
    grid, tiles = patches.tile_image(image, cfg.tile_size)
    supports, all_tables, payloads = [], [], []
    for tile in tiles:
        support, tables, payload = compress_tile(tile, params)
        supports.append(support)
        all_tables.append(tables)
        payloads.append(payload)
    return Bitstream(image_h=image.shape[0], image_w=image.shape[1], grid=grid,
                     n_queries=cfg.n_queries, embed_dim=cfg.embed_dim,
                     digest=config_digest(params), supports=supports,
                     payloads=payloads, tables=all_tables if side_info else None)


def decompress_image(stream: Bitstream, params: CodecParams) -> np.ndarray:
    """Decode a bitstream back to the cropped pixel region it covers."""
    cfg = params.config
    if stream.digest != config_digest(params):
        raise DigestMismatchError(
            f"stream digest {stream.digest} does not match checkpoint "
            f"{config_digest(params)}")
    if (stream.n_queries, stream.embed_dim, stream.grid.tile_size) != \
            (cfg.n_queries, cfg.embed_dim, cfg.tile_size):
        raise DigestMismatchError("stream dimensions do not match checkpoint config")
    if len(stream.payloads) != stream.n_tiles:
        raise BitstreamError("tile count mismatch")
    stream_tables = stream.tables or [None] * stream.n_tiles
    tiles = [decompress_tile(p, s, params, tables=t)
             for p, s, t in zip(stream.payloads, stream.supports, stream_tables)]
    return patches.reassemble(stream.grid, tiles)
