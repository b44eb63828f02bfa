"""Quantization and the factorized prior over latent symbols.

Each embedding dimension is one channel; the N query rows of a latent are
i.i.d. samples of that channel. A channel's CDF is a composition of small
monotone stages (softplus-positive matrices, bounded tanh gates, final
sigmoid), so integer symbol likelihoods are CDF differences at +-1/2 and are
differentiable in both the latent and the prior parameters.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, LatentRangeError, ShapeError
from .model import LatentCode

LIKELIHOOD_FLOOR = 1e-9
CDF_PRECISION = 16
CDF_TOTAL = 1 << CDF_PRECISION
MAX_SUPPORT_WIDTH = 4096
INT_LIMIT = 2 ** 31 - 1

_LN2 = float(np.log(2.0))


@dataclass
class FactorizedPrior:
    channels: int
    matrices: list[Tensor]   # stage k: (C, w_out, w_in)
    biases: list[Tensor]     # stage k: (C, w_out, 1)
    gates: list[Tensor]      # stage k < K-1: (C, w_out, 1)

    @staticmethod
    def init(channels: int, filters: tuple[int, ...] = (3, 3, 3),
             init_scale: float = 10.0,
             rng: np.random.Generator | None = None) -> "FactorizedPrior":
        if rng is None:
            rng = np.random.default_rng(0)
        widths = (1,) + tuple(int(f) for f in filters) + (1,)
        if min(widths) < 1:
            raise ConfigError("prior filter widths must be >= 1")
        scale = init_scale ** (1.0 / (len(widths) - 1))
        matrices, biases, gates = [], [], []
        for k in range(len(widths) - 1):
            w_in, w_out = widths[k], widths[k + 1]
            init = np.log(np.expm1(1.0 / (scale * w_out)))
            matrices.append(ad.param(np.full((channels, w_out, w_in), init)))
            biases.append(ad.param(rng.uniform(-0.5, 0.5, size=(channels, w_out, 1))))
            if k < len(widths) - 2:
                gates.append(ad.param(np.zeros((channels, w_out, 1))))
        return FactorizedPrior(channels=channels, matrices=matrices,
                               biases=biases, gates=gates)

    @property
    def n_stages(self) -> int:
        return len(self.matrices)

    def named_parameters(self, prefix: str = "prior") -> list[tuple[str, Tensor]]:
        out = []
        for k in range(self.n_stages):
            out.append((f"{prefix}/stage{k}/matrix", self.matrices[k]))
            out.append((f"{prefix}/stage{k}/bias", self.biases[k]))
            if k < len(self.gates):
                out.append((f"{prefix}/stage{k}/gate", self.gates[k]))
        return out

    def logits(self, x: Tensor) -> Tensor:
        """Pre-sigmoid cumulative logits; x has shape (C, 1, M)."""
        if x.shape[0] != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {x.shape[0]}")
        for k in range(self.n_stages):
            x = ad.matmul(ad.softplus(self.matrices[k]), x) + self.biases[k]
            if k < len(self.gates):
                x = x + ad.tanh(self.gates[k]) * ad.tanh(x)
        return x

    def cdf(self, x: np.ndarray) -> np.ndarray:
        """Numeric CDF values c(x) per channel; x has shape (C, M)."""
        t = self.logits(ad.constant(x[:, None, :]))
        from scipy.special import expit
        return expit(t.value[:, 0, :])


# -- quantization ---------------------------------------------------------------

def quantize(latent: LatentCode, mode: str,
             rng: np.random.Generator | None = None) -> LatentCode:
    """noise: add U(-1/2, 1/2) (training relaxation, stays continuous).
    round: nearest integer, ties to even (coding path, becomes integer)."""
    if mode not in ("noise", "round"):
        raise ConfigError(f"unknown quantizer mode {mode!r}")
    if mode == "noise":
        if latent.mode != "continuous":
            raise ConfigError("noise quantization applies to continuous latents only")
        if rng is None:
            raise ConfigError("noise quantization requires an rng")
        u = rng.uniform(-0.5, 0.5, size=latent.values.shape)
        return LatentCode(values=latent.values + u, mode="continuous")
    if latent.mode == "quantized":
        warnings.warn("rounding an already-quantized latent is a no-op")
        return LatentCode(values=latent.values.copy(), mode="quantized")
    rounded = np.round(latent.values)
    if np.abs(rounded).max(initial=0.0) > INT_LIMIT:
        raise LatentRangeError("latent magnitude exceeds 32-bit symbol range")
    return LatentCode(values=rounded.astype(np.int32), mode="quantized")


# -- likelihood and rate ----------------------------------------------------------

def _to_channel_layout(latent: Tensor, channels: int) -> Tensor:
    """(N, C) latent -> (C, 1, N) channel batches."""
    if latent.shape[-1] != channels:
        raise ShapeError(f"latent dim {latent.shape[-1]} != prior channels {channels}")
    n = latent.shape[0]
    return ad.reshape(ad.transpose(latent, (1, 0)), (channels, 1, n))


def likelihood_t(latent: Tensor, prior: FactorizedPrior,
                 floor: float = LIKELIHOOD_FLOOR) -> Tensor:
    """Per-element symbol probability c(y + 1/2) - c(y - 1/2), shape (N, C).

    Differences are taken on whichever sigmoid tail is better conditioned.
    """
    x = _to_channel_layout(latent, prior.channels)
    lower = prior.logits(x - 0.5)
    upper = prior.logits(x + 0.5)
    sign = -np.sign(lower.value + upper.value)
    p = ad.tabs(ad.sigmoid(sign * upper) - ad.sigmoid(sign * lower))
    if floor > 0:
        p = ad.maximum(p, floor)
    n = latent.shape[0]
    return ad.transpose(ad.reshape(p, (prior.channels, n)), (1, 0))


def likelihood(latent: LatentCode | np.ndarray, prior: FactorizedPrior,
               floor: float = LIKELIHOOD_FLOOR) -> np.ndarray:
    values = latent.values if isinstance(latent, LatentCode) else np.asarray(latent)
    return likelihood_t(ad.constant(values.astype(np.float64)), prior, floor).value


def rate_bits_t(latent: Tensor, prior: FactorizedPrior,
                floor: float = LIKELIHOOD_FLOOR) -> Tensor:
    """Total code length estimate in bits: -sum log2 p(y)."""
    p = likelihood_t(latent, prior, floor)
    return ad.tsum(ad.log(p)) * (-1.0 / _LN2)


def rate_bits(latent: LatentCode | np.ndarray, prior: FactorizedPrior,
              floor: float = LIKELIHOOD_FLOOR) -> float:
    values = latent.values if isinstance(latent, LatentCode) else np.asarray(latent)
    return float(rate_bits_t(ad.constant(values.astype(np.float64)), prior, floor).value)


def bits_per_pixel(total_bits: float, n_pixels: int) -> float:
    return total_bits / n_pixels


# -- integer CDF tables ------------------------------------------------------------

@dataclass
class CdfTables:
    """16-bit-precision cumulative frequency tables, one row per channel.

    Row invariants: strictly increasing, first entry 0, last entry 65536,
    so every in-support symbol has mass >= 1.
    """
    offset: int            # symbol value of table index 0
    cdf: np.ndarray        # (C, width + 1) int64

    @property
    def width(self) -> int:
        return self.cdf.shape[1] - 1

    @property
    def channels(self) -> int:
        return self.cdf.shape[0]

    def rows(self) -> list[list[int]]:
        return [row.tolist() for row in self.cdf]


def pmf_to_cdf_rows(pmf: np.ndarray) -> np.ndarray:
    """Quantize (C, W) probability rows to 16-bit cumulative tables (C, W+1).

    Largest-remainder rounding with one guaranteed count per symbol; fully
    deterministic. Equal masses split the total exactly evenly.
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    if pmf.ndim != 2 or pmf.shape[1] < 1:
        raise ShapeError(f"expected (channels, width) pmf, got {pmf.shape}")
    channels, width = pmf.shape
    pmf = pmf + 1e-12  # keep ordering well-defined when all mass is off-support
    target = CDF_TOTAL - width
    scaled = pmf / pmf.sum(axis=1, keepdims=True) * target
    base = np.floor(scaled).astype(np.int64)
    frac = scaled - base
    freq = base + 1
    for c in range(channels):
        rem = target - int(base[c].sum())
        if rem > 0:
            order = np.lexsort((np.arange(width), -frac[c]))
            freq[c, order[:rem]] += 1
        elif rem < 0:
            order = np.lexsort((np.arange(width), frac[c]))
            take = 0
            for i in order:
                if take == -rem:
                    break
                if freq[c, i] > 1:
                    freq[c, i] -= 1
                    take += 1
    cdf = np.zeros((channels, width + 1), dtype=np.int64)
    np.cumsum(freq, axis=1, out=cdf[:, 1:])
    return cdf


def build_cdf_tables(prior: FactorizedPrior, support: tuple[int, int],
                     max_width: int = MAX_SUPPORT_WIDTH) -> CdfTables:
    """Quantize the prior to integer frequencies over [n_min, n_max].

    Deterministic given (prior, support): the decoder rebuilds identical
    tables from the checkpoint and the header's support bounds.
    """
    n_min, n_max = int(support[0]), int(support[1])
    if n_max < n_min:
        raise ConfigError(f"empty support [{n_min}, {n_max}]")
    width = n_max - n_min + 1
    if width > max_width:
        raise LatentRangeError(
            f"support width {width} exceeds {max_width}: latent range has diverged")
    edges = np.arange(n_min, n_max + 2, dtype=np.float64) - 0.5
    xs = np.broadcast_to(edges, (prior.channels, width + 1))
    lo = prior.logits(ad.constant(xs[:, None, :-1])).value[:, 0, :]
    hi = prior.logits(ad.constant(xs[:, None, 1:])).value[:, 0, :]
    from scipy.special import expit
    sign = -np.sign(lo + hi)
    pmf = np.abs(expit(sign * hi) - expit(sign * lo))
    return CdfTables(offset=n_min, cdf=pmf_to_cdf_rows(pmf))


def table_cross_entropy_bits(tables: CdfTables, symbols: np.ndarray,
                             channels: np.ndarray) -> float:
    """Ideal code length of `symbols` under the quantized tables, in bits."""
    idx = np.asarray(symbols, dtype=np.int64) - tables.offset
    if idx.min(initial=0) < 0 or idx.max(initial=-1) >= tables.width:
        raise LatentRangeError("symbol outside table support")
    freqs = tables.cdf[channels, idx + 1] - tables.cdf[channels, idx]
    return float(-np.log2(freqs / CDF_TOTAL).sum())


def latent_support(latent: LatentCode) -> tuple[int, int]:
    """Per-tile symbol support: latent min/max widened by one on each side."""
    if latent.mode != "quantized":
        raise ConfigError("support is defined for quantized latents")
    return int(latent.values.min()) - 1, int(latent.values.max()) + 1
