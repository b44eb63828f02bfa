"""Interpretability toolkit: encoder attention heatmaps, query ablation
studies, and low-dimensional projections of the latent queries rendered
through the decoder's cross-attention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import patches
from .attention import AttentionRecord
from .errors import InvalidInputError, ShapeError
from .model import CodecParams, LatentCode, decode, decode_ablated, encode

# anchor colors for the built-in heat colormap (dark purple -> yellow)
_HEAT_ANCHORS = np.array([
    (0.001, 0.000, 0.014), (0.144, 0.043, 0.323), (0.373, 0.074, 0.432),
    (0.572, 0.166, 0.399), (0.763, 0.262, 0.294), (0.902, 0.406, 0.148),
    (0.978, 0.596, 0.034), (0.975, 0.813, 0.216), (0.988, 0.998, 0.645),
])


def apply_colormap(values: np.ndarray, name: str = "heat") -> np.ndarray:
    v = np.clip(values, 0.0, 1.0)
    if name == "gray":
        return np.repeat(v[..., None], 3, axis=-1)
    if name != "heat":
        raise InvalidInputError(f"unknown colormap {name!r}")
    pos = v * (len(_HEAT_ANCHORS) - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, len(_HEAT_ANCHORS) - 1)
    w = (pos - lo)[..., None]
    return _HEAT_ANCHORS[lo] * (1.0 - w) + _HEAT_ANCHORS[hi] * w


def _upsample_nearest(grid: np.ndarray, out_side: int) -> np.ndarray:
    g = grid.shape[0]
    if out_side % g:
        raise ShapeError(f"cannot upsample {g} grid to {out_side} pixels evenly")
    f = out_side // g
    return np.repeat(np.repeat(grid, f, axis=0), f, axis=1)


@dataclass(frozen=True)
class HeatmapSpec:
    """`max` reduces over every query, layer, and head; `mean` averages over
    layers and heads for one query."""
    reduction: str = "max"           # max | mean
    query_index: int | None = None   # required for mean
    colormap: str = "heat"
    overlay_alpha: float = 0.55


@dataclass
class Heatmap:
    grid: np.ndarray        # (g, g) raw reduced scores per patch
    map: np.ndarray         # (S, S) normalized to [0, 1]
    overlay: np.ndarray     # (S, S, 3) rendered
    raw_min: float
    raw_max: float

    @property
    def legend(self) -> str:
        return f"Low attn({self.raw_min:.3f})  High attn({self.raw_max:.3f})"


def attention_heatmap(records: list[AttentionRecord], spec: HeatmapSpec,
                      image: np.ndarray | None = None,
                      out_side: int = 256) -> Heatmap:
    """Reduce captured encoder cross-attention to a per-patch score map.

    Raw softmax scores are reduced per the selected mode, reshaped onto the
    patch grid, nearest-neighbor upsampled, and min-max normalized; the raw
    extremes are kept for the legend.
    """
    cross = [r.weights for r in records if r.role == "cross"]
    if not cross:
        raise InvalidInputError("no cross-attention records captured")
    stack = np.stack(cross)  # (records, queries, keys)
    if spec.reduction == "max":
        scores = stack.max(axis=(0, 1))
    elif spec.reduction == "mean":
        if spec.query_index is None:
            raise InvalidInputError("mean reduction needs a query index")
        n_queries = stack.shape[1]
        if not 0 <= spec.query_index < n_queries:
            raise InvalidInputError(
                f"query index {spec.query_index} out of range [0, {n_queries})")
        scores = stack[:, spec.query_index, :].mean(axis=0)
    else:
        raise InvalidInputError(f"unknown reduction {spec.reduction!r}")
    g = math.isqrt(scores.size)
    if g * g != scores.size:
        raise ShapeError(f"key count {scores.size} is not a square patch grid")
    grid = scores.reshape(g, g)
    raw_min, raw_max = float(grid.min()), float(grid.max())
    if raw_max - raw_min > 1e-12:
        normalized = (grid - raw_min) / (raw_max - raw_min)
    else:
        normalized = np.zeros_like(grid)
    upsampled = _upsample_nearest(normalized, out_side)
    colored = apply_colormap(upsampled, spec.colormap)
    if image is not None:
        image = np.asarray(image, dtype=np.float64)
        if image.shape[:2] != (out_side, out_side):
            raise ShapeError(f"overlay image must be {out_side}x{out_side}")
        a = spec.overlay_alpha
        colored = a * colored + (1.0 - a) * image
    return Heatmap(grid=grid, map=upsampled, overlay=colored,
                   raw_min=raw_min, raw_max=raw_max)


# -- query ablation ---------------------------------------------------------------

@dataclass
class AblationStudy:
    query_index: int
    mean_error_map: np.ndarray                 # (S, S)
    reconstructions: list[tuple[str, np.ndarray, np.ndarray]]  # (name, full, ablated)


def query_ablation_study(dataset, params: CodecParams, query_index: int,
                         keep_reconstructions: bool = True) -> AblationStudy:
    """Decode each image with and without one latent query; the per-pixel
    absolute difference, averaged over the dataset, localizes what that
    query encodes. Images larger than one tile contribute their center tile.
    """
    names, images = _load_center_tiles(dataset, params.config.tile_size)
    if not images:
        raise InvalidInputError("dataset holds no usable images")
    accum = None
    recons = []
    for name, tile in zip(names, images):
        latent, _ = encode(tile, params)
        full, _ = decode(latent, params)
        ablated = decode_ablated(latent, query_index, params)
        err = np.abs(full - ablated).mean(axis=-1)
        accum = err if accum is None else accum + err
        if keep_reconstructions:
            recons.append((name, full, ablated))
    return AblationStudy(query_index=query_index,
                         mean_error_map=accum / len(images),
                         reconstructions=recons)


def _load_center_tiles(dataset, tile_size: int) -> tuple[list[str], list[np.ndarray]]:
    from .training import IMAGE_EXTENSIONS
    if isinstance(dataset, (str, Path)):
        paths = sorted(p for p in Path(dataset).rglob("*")
                       if p.suffix.lower() in IMAGE_EXTENSIONS)
        items = [(p.name, patches.load_image(p)) for p in paths]
    else:
        items = [(f"image{i:03d}", np.asarray(img, dtype=np.float64))
                 for i, img in enumerate(dataset)]
    names, tiles = [], []
    for name, img in items:
        if img.shape[0] < tile_size or img.shape[1] < tile_size:
            continue
        oy = (img.shape[0] - tile_size) // 2
        ox = (img.shape[1] - tile_size) // 2
        names.append(name)
        tiles.append(img[oy:oy + tile_size, ox:ox + tile_size])
    return names, tiles


# -- PCA meta-queries ----------------------------------------------------------------

@dataclass
class MetaQueries:
    """Latent queries projected onto their top three principal directions."""
    projected: np.ndarray            # (N, 3)
    components: np.ndarray           # (3, d), orthonormal rows
    explained_variance: np.ndarray   # (3,), nonincreasing
    mean: np.ndarray                 # (d,) row mean removed before projection


def fit_meta_queries(rows: np.ndarray) -> MetaQueries:
    """PCA of latent rows down to three dimensions.

    Sign convention: each component's largest-magnitude coordinate is made
    positive, so projections are reproducible across runs.
    """
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise InvalidInputError(
            f"meta-queries need at least 3 latent rows, got {x.shape}")
    mean = x.mean(axis=0)
    centered = x - mean
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    tol = max(x.shape) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    if s.size < 3 or s[2] <= tol:
        raise InvalidInputError(
            "latent rows span fewer than 3 dimensions; PCA projection is degenerate")
    components = vt[:3].copy()
    for i in range(3):
        j = int(np.argmax(np.abs(components[i])))
        if components[i, j] < 0:
            components[i] = -components[i]
    projected = centered @ components.T
    variance = (s[:3] ** 2) / (x.shape[0] - 1)
    return MetaQueries(projected=projected, components=components,
                       explained_variance=variance, mean=mean)


def pca_meta_queries(latent: LatentCode | np.ndarray) -> MetaQueries:
    values = latent.values if isinstance(latent, LatentCode) else latent
    return fit_meta_queries(np.asarray(values, dtype=np.float64))


def project_onto_basis(latent: LatentCode | np.ndarray,
                       meta: MetaQueries) -> np.ndarray:
    """Project other latent rows onto an existing basis (shared fits keep
    colors comparable across the tiles of one image)."""
    values = latent.values if isinstance(latent, LatentCode) else latent
    return (np.asarray(values, np.float64) - meta.mean) @ meta.components.T


# -- decoder attention projection ------------------------------------------------------

def meta_projection(records: list[AttentionRecord], meta: MetaQueries,
                    layer: int) -> np.ndarray:
    """Head-averaged cross-attention of one decoder layer applied to the
    meta-queries: rows are per-patch 3-vectors."""
    heads = [r.weights for r in records if r.role == "cross" and r.layer == layer]
    if not heads:
        raise InvalidInputError(f"no cross-attention records for layer {layer}")
    total = None
    for a in heads:
        if a.shape[1] != meta.projected.shape[0]:
            raise ShapeError(
                f"attention keys {a.shape[1]} != meta-query rows "
                f"{meta.projected.shape[0]} (records from a different latent?)")
        part = a @ meta.projected
        total = part if total is None else total + part
    return total / len(heads)


def _rescale(x: np.ndarray, lo: float, hi: float,
             bounds: tuple[float, float] | None = None) -> np.ndarray:
    x_lo, x_hi = bounds if bounds is not None else (x.min(), x.max())
    span = x_hi - x_lo
    if span < 1e-12:
        return np.full_like(x, (lo + hi) / 2.0)
    return np.clip((x - x_lo) / span, 0.0, 1.0) * (hi - lo) + lo


def projection_ranges(projections) -> tuple[tuple[float, float], ...]:
    """Shared per-component (min, max) over several projections, so tiles of
    one image render with comparable colors."""
    stacked = np.concatenate([np.asarray(p) for p in projections], axis=0)
    return tuple((float(stacked[:, i].min()), float(stacked[:, i].max()))
                 for i in range(stacked.shape[1]))


def render_meta_projection(projection: np.ndarray, out_side: int = 256,
                           value_ranges=None) -> np.ndarray:
    """Rasterize per-patch 3-vectors as an image: components become Y, Cb, Cr
    (each rescaled to its valid range), converted to RGB.

    `value_ranges` (from `projection_ranges`) pins the rescaling so multiple
    renders share one color mapping."""
    if projection.ndim != 2 or projection.shape[1] != 3:
        raise ShapeError(f"expected (patches, 3), got {projection.shape}")
    g = math.isqrt(projection.shape[0])
    if g * g != projection.shape[0]:
        raise ShapeError(f"patch count {projection.shape[0]} is not a square grid")
    ranges = value_ranges or (None, None, None)
    y = _rescale(projection[:, 0], 0.0, 1.0, ranges[0])
    cb = _rescale(projection[:, 1], -0.5, 0.5, ranges[1])
    cr = _rescale(projection[:, 2], -0.5, 0.5, ranges[2])
    r = y + 1.402 * cr
    gch = y - 0.344136 * cb - 0.714136 * cr
    b = y + 1.772 * cb
    rgb = np.clip(np.stack([r, gch, b], axis=-1), 0.0, 1.0)
    return _upsample_nearest(rgb.reshape(g, g, 3), out_side)


def project_decoder_attention(records: list[AttentionRecord], meta: MetaQueries,
                              layer: int, out_side: int = 256,
                              value_ranges=None) -> np.ndarray:
    """End-to-end render of one decoder layer's view of the meta-queries."""
    return render_meta_projection(meta_projection(records, meta, layer),
                                  out_side, value_ranges)
