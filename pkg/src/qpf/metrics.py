"""Quality metrics: PSNR, multi-scale SSIM, and a pluggable feature-space
perceptual distance.

The perceptual metric loads its convolutional feature extractor from a
weight file so the core package never depends on downloaded models; any
stack matching the documented .npz layout works. Distances are computed on
the autodiff tape, so the same backend serves training and evaluation.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidInputError, MissingWeightsError, ShapeError

PSNR_CAP_DB = 100.0
_MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); identical inputs report the 100 dB sentinel."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(float(10.0 * np.log10(peak * peak / mse)), PSNR_CAP_DB)


def _gauss_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img: np.ndarray, win: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation along both spatial axes."""
    from numpy.lib.stride_tricks import sliding_window_view
    k = win.size
    out = sliding_window_view(img, k, axis=0) @ win
    out = sliding_window_view(out, k, axis=1) @ win
    return out


def _ssim_pair(a: np.ndarray, b: np.ndarray, win: np.ndarray,
               k1: float, k2: float, peak: float) -> tuple[float, float]:
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    mu_a = _filter_valid(a, win)
    mu_b = _filter_valid(b, win)
    var_a = _filter_valid(a * a, win) - mu_a * mu_a
    var_b = _filter_valid(b * b, win) - mu_b * mu_b
    cov = _filter_valid(a * b, win) - mu_a * mu_b
    cs_map = (2.0 * cov + c2) / (var_a + var_b + c2)
    ssim_map = ((2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)) * cs_map
    return float(ssim_map.mean()), float(cs_map.mean())


def _halve(img: np.ndarray) -> np.ndarray:
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    img = img[:h, :w]
    return (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2]) / 4.0


def ms_ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0,
            k1: float = 0.01, k2: float = 0.03) -> float:
    """Five-scale structural similarity with the standard scale weights.

    Inputs must be at least 176 pixels on each side so the 11-tap window
    fits at the coarsest scale.
    """
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    scales = len(_MSSSIM_WEIGHTS)
    min_side = 11 * 2 ** (scales - 1)
    if min(a.shape[0], a.shape[1]) < min_side:
        raise InvalidInputError(
            f"ms_ssim needs sides >= {min_side}, got {a.shape[:2]}")
    win = _gauss_window()
    result = 1.0
    for s in range(scales):
        ssim_mean, cs_mean = _ssim_pair(a, b, win, k1, k2, peak)
        if s < scales - 1:
            result *= max(cs_mean, 0.0) ** _MSSSIM_WEIGHTS[s]
            a, b = _halve(a), _halve(b)
        else:
            result *= max(ssim_mean, 0.0) ** _MSSSIM_WEIGHTS[s]
    return float(result)


# -- differentiable bilinear resize ---------------------------------------------

def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic 1-D bilinear interpolation matrix (half-pixel centers)."""
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    w = src - lo
    m[np.arange(n_out), lo] += 1.0 - w
    m[np.arange(n_out), hi] += w
    return m


def resize_bilinear_t(img: Tensor, out_h: int, out_w: int) -> Tensor:
    """Tape-level bilinear resize of an (H, W, C) tensor."""
    h, w, c = img.shape
    ry = ad.constant(_resize_matrix(h, out_h))
    rx = ad.constant(_resize_matrix(w, out_w))
    x = ad.reshape(ad.matmul(ry, ad.reshape(img, (h, w * c))), (out_h, w, c))
    x = ad.transpose(x, (1, 0, 2))
    x = ad.reshape(ad.matmul(rx, ad.reshape(x, (w, out_h * c))), (out_w, out_h, c))
    return ad.transpose(x, (1, 0, 2))


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    return resize_bilinear_t(ad.constant(img), out_h, out_w).value


# -- pluggable perceptual distance ------------------------------------------------

BACKEND_FORMAT = 1


@dataclass
class FeatureBackend:
    """Feature-space distance: stagewise squared differences of
    channel-normalized conv features, spatially averaged and channel-weighted."""
    mean: np.ndarray               # (3,)
    std: np.ndarray                # (3,)
    weights: list[np.ndarray]      # conv kernels (kh, kw, cin, cout)
    biases: list[np.ndarray]       # (cout,)
    channel_weights: list[np.ndarray]  # (cout,), nonnegative
    name: str = "feature-backend"

    def distance_t(self, a: Tensor, b: Tensor) -> Tensor:
        fa = self._features(a)
        fb = self._features(b)
        total = None
        for xa, xb, lin in zip(fa, fb, self.channel_weights):
            diff = _unit_normalize(xa) - _unit_normalize(xb)
            stage = ad.tmean(ad.tsum(diff * diff * ad.constant(lin),
                                     axis=-1))
            total = stage if total is None else total + stage
        return total

    def distance(self, a: np.ndarray, b: np.ndarray) -> float:
        a, b = _check_pair(a, b)
        return float(self.distance_t(ad.constant(a), ad.constant(b)).value)

    def _features(self, x: Tensor) -> list[Tensor]:
        x = (x - ad.constant(self.mean)) / ad.constant(self.std)
        feats = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if i > 0:
                x = _avg_pool2(x)
            x = ad.relu(conv2d_same(x, ad.constant(w), ad.constant(b)))
            feats.append(x)
        return feats


def _unit_normalize(x: Tensor, eps: float = 1e-10) -> Tensor:
    norm = ad.sqrt(ad.tsum(x * x, axis=-1, keepdims=True) + eps)
    return x / norm


def _avg_pool2(x: Tensor) -> Tensor:
    h, w, c = x.shape
    x = ad.reshape(x[: h // 2 * 2, : w // 2 * 2], (h // 2, 2, w // 2, 2, c))
    return ad.tmean(x, axis=(1, 3))


def conv2d_same(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """'same' convolution of an (H, W, Cin) tensor with (kh, kw, cin, cout)
    kernels, composed from shifted slices so the tape stays primitive-only."""
    h, width, cin = x.shape
    kh, kw, wcin, cout = w.shape
    if wcin != cin:
        raise ShapeError(f"kernel expects {wcin} channels, input has {cin}")
    ph, pw = kh // 2, kw // 2
    zrow = ad.constant(np.zeros((ph, width, cin)))
    x = ad.concatenate([zrow, x, zrow], axis=0)
    zcol = ad.constant(np.zeros((h + 2 * ph, pw, cin)))
    x = ad.concatenate([zcol, x, zcol], axis=1)
    out = None
    for i in range(kh):
        for j in range(kw):
            tap = ad.matmul(x[i:i + h, j:j + width], w[i, j])
            out = tap if out is None else out + tap
    return out + b


def write_feature_backend(path, weights, biases, channel_weights,
                          mean=None, std=None, name="feature-backend") -> None:
    arrays = {
        "meta": np.frombuffer(json.dumps({
            "format": BACKEND_FORMAT,
            "stages": len(weights),
            "name": name,
        }).encode(), dtype=np.uint8),
        "mean": np.asarray(mean if mean is not None else [0.5, 0.5, 0.5], float),
        "std": np.asarray(std if std is not None else [0.5, 0.5, 0.5], float),
    }
    for i, (w, b, lin) in enumerate(zip(weights, biases, channel_weights)):
        arrays[f"conv{i}_w"] = np.asarray(w, dtype=np.float64)
        arrays[f"conv{i}_b"] = np.asarray(b, dtype=np.float64)
        arrays[f"lin{i}"] = np.asarray(lin, dtype=np.float64)
    np.savez(path, **arrays)


def write_random_feature_backend(path, seed: int = 0,
                                 widths: tuple[int, ...] = (8, 16, 24)) -> None:
    """Random-filter backend: useful as a hermetic stand-in where no trained
    perceptual weights are available (random projections still separate
    images, they are just not calibrated to human judgements)."""
    rng = np.random.default_rng(seed)
    weights, biases, chans = [], [], []
    cin = 3
    for cout in widths:
        w = rng.normal(0.0, 1.0 / np.sqrt(9 * cin), size=(3, 3, cin, cout))
        weights.append(w)
        biases.append(np.zeros(cout))
        chans.append(np.abs(rng.normal(0.5, 0.2, size=cout)))
        cin = cout
    write_feature_backend(path, weights, biases, chans, name=f"random-{seed}")


def load_feature_backend(path) -> FeatureBackend:
    if not os.path.exists(path):
        raise MissingWeightsError(
            f"perceptual weight file not found: {path}")
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta"].tobytes()).decode())
        if meta.get("format") != BACKEND_FORMAT:
            raise MissingWeightsError(
                f"{path}: unsupported backend format {meta.get('format')}")
        stages = int(meta["stages"])
        weights = [z[f"conv{i}_w"] for i in range(stages)]
        biases = [z[f"conv{i}_b"] for i in range(stages)]
        chans = [np.maximum(z[f"lin{i}"], 0.0) for i in range(stages)]
        mean, std = z["mean"], z["std"]
    return FeatureBackend(mean=mean, std=std, weights=weights,
                          biases=biases, channel_weights=chans,
                          name=meta.get("name", "feature-backend"))


def perceptual_distance(a: np.ndarray, b: np.ndarray,
                        backend: FeatureBackend) -> float:
    return backend.distance(a, b)
