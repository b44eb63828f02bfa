"""Image <-> token conversion, positional tables, and the tiling protocol.

Flattening convention (frozen; bitstream compatibility depends on it):
token i corresponds to patch i in raster order over the patch grid, and each
token is the row-major flattening of its patch with the channel index
innermost: (py, px, c).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import InvalidInputError, ConfigError, ShapeError

SUPPORTED_PATCH_SIZES = (8, 16, 32)


def patchify(image: np.ndarray, patch_size: int = 16) -> np.ndarray:
    """Split an HxWx3 image into flattened patch tokens, raster order.

    Returns an (H/p * W/p, p*p*3) array.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected HxWx3 image, got shape {image.shape}")
    if patch_size not in SUPPORTED_PATCH_SIZES:
        raise ConfigError(f"patch_size must be one of {SUPPORTED_PATCH_SIZES}")
    h, w, _ = image.shape
    if h % patch_size or w % patch_size:
        raise InvalidInputError(
            f"image sides {h}x{w} not divisible by patch size {patch_size}")
    gy, gx = h // patch_size, w // patch_size
    tokens = image.reshape(gy, patch_size, gx, patch_size, 3)
    tokens = tokens.transpose(0, 2, 1, 3, 4)
    return tokens.reshape(gy * gx, patch_size * patch_size * 3)


def unpatchify(tokens: np.ndarray, patch_size: int = 16) -> np.ndarray:
    """Inverse of `patchify` for a square patch grid; output clamped to [0, 1]."""
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2:
        raise ShapeError(f"expected LxD token matrix, got shape {tokens.shape}")
    n, d = tokens.shape
    if d != patch_size * patch_size * 3:
        raise ShapeError(
            f"token dim {d} does not match patch size {patch_size} (need {patch_size**2 * 3})")
    side = math.isqrt(n)
    if side * side != n:
        raise ShapeError(f"token count {n} is not a square patch grid")
    img = tokens.reshape(side, side, patch_size, patch_size, 3)
    img = img.transpose(0, 2, 1, 3, 4)
    img = img.reshape(side * patch_size, side * patch_size, 3)
    return np.clip(img, 0.0, 1.0)


def add_positional_encoding(tokens: np.ndarray, table: np.ndarray) -> np.ndarray:
    """tokens[i] + table[i]; the table may be longer than the sequence."""
    tokens = np.asarray(tokens, dtype=np.float64)
    table = np.asarray(table, dtype=np.float64)
    if table.ndim != 2 or table.shape[1] != tokens.shape[1]:
        raise ConfigError(
            f"position table dim {table.shape} incompatible with tokens {tokens.shape}")
    if table.shape[0] < tokens.shape[0]:
        raise ConfigError(
            f"position table has {table.shape[0]} rows, need >= {tokens.shape[0]}")
    return tokens + table[: tokens.shape[0]]


def make_position_table(rows: int, dim: int, rng: np.random.Generator,
                        std: float = 0.02) -> np.ndarray:
    return rng.normal(0.0, std, size=(rows, dim))


@dataclass(frozen=True)
class TileGrid:
    """Maximal centered crop of an image as a rows x cols grid of square tiles."""
    tile_size: int
    rows: int
    cols: int
    crop_offset: tuple[int, int]  # (y, x)

    @property
    def crop_height(self) -> int:
        return self.rows * self.tile_size

    @property
    def crop_width(self) -> int:
        return self.cols * self.tile_size

    @property
    def n_pixels(self) -> int:
        return self.crop_height * self.crop_width


def plan_tiling(height: int, width: int, tile_size: int = 256) -> TileGrid:
    if height < tile_size or width < tile_size:
        raise InvalidInputError(
            f"image {height}x{width} is smaller than one {tile_size}x{tile_size} tile")
    rows, cols = height // tile_size, width // tile_size
    oy = (height - rows * tile_size) // 2
    ox = (width - cols * tile_size) // 2
    return TileGrid(tile_size=tile_size, rows=rows, cols=cols, crop_offset=(oy, ox))


def tile_image(image: np.ndarray, tile_size: int = 256) -> tuple[TileGrid, list[np.ndarray]]:
    """Center-crop to the largest tile-aligned region and cut it into tiles.

    Tiles come back in raster order over the grid.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"expected HxWx3 image, got shape {image.shape}")
    grid = plan_tiling(image.shape[0], image.shape[1], tile_size)
    oy, ox = grid.crop_offset
    tiles = []
    for r in range(grid.rows):
        for c in range(grid.cols):
            y0 = oy + r * tile_size
            x0 = ox + c * tile_size
            tiles.append(image[y0:y0 + tile_size, x0:x0 + tile_size].copy())
    return grid, tiles


def center_crop(image: np.ndarray, tile_size: int = 256) -> np.ndarray:
    """The region `tile_image` covers, as one array."""
    image = np.asarray(image, dtype=np.float64)
    grid = plan_tiling(image.shape[0], image.shape[1], tile_size)
    oy, ox = grid.crop_offset
    return image[oy:oy + grid.crop_height, ox:ox + grid.crop_width].copy()


def reassemble(grid: TileGrid, tiles: list[np.ndarray]) -> np.ndarray:
    """Stitch raster-order tiles back into the cropped region."""
    if len(tiles) != grid.rows * grid.cols:
        raise ShapeError(f"expected {grid.rows * grid.cols} tiles, got {len(tiles)}")
    t = grid.tile_size
    out = np.empty((grid.crop_height, grid.crop_width, 3), dtype=np.float64)
    for r in range(grid.rows):
        for c in range(grid.cols):
            out[r * t:(r + 1) * t, c * t:(c + 1) * t] = tiles[r * grid.cols + c]
    return out


def load_image(path) -> np.ndarray:
    """Decode PNG/PPM/JPEG to float64 RGB in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_image(path, image: np.ndarray) -> None:
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8)).save(path)
