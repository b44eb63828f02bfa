"""Rate-distortion training and the tiled evaluation protocol.

Training relaxes quantization to additive uniform noise; the loss is

    rate_bits(noisy latent) / pixels  +  lambda * distortion(I, decode(noisy))

with distortion either plain MSE or a feature-backend perceptual distance on
512-upscaled images. Evaluation always runs the real coding path: round
quantization, range coding, tile reassembly.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import autodiff as ad
from . import bitstream as bs
from . import metrics as qmetrics
from . import patches
from .errors import ConfigError, InvalidInputError, TrainingDivergedError
from .model import (CodecParams, ModelConfig, decode_t, encode_t, init_codec,
                    load_checkpoint, named_parameters, save_checkpoint)
from .optim import Adam
from .prior import rate_bits_t

log = logging.getLogger("qpf")

IMAGE_EXTENSIONS = (".png", ".ppm", ".pgm", ".bmp", ".jpg", ".jpeg")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 100_000
    lr: float = 1e-4
    batch_size: int = 8
    seed: int = 0
    rd_lambda: float = 650.25
    distortion: str = "mse"             # mse | perceptual
    perceptual_weights: str | None = None
    perceptual_upscale: int = 512
    augment: str = "hflip"              # none | hflip | flips
    log_every: int = 50
    checkpoint_every: int = 1000

    def __post_init__(self):
        if self.rd_lambda <= 0:
            raise ConfigError("rd_lambda must be positive")
        if self.distortion not in ("mse", "perceptual"):
            raise ConfigError(f"unknown distortion {self.distortion!r}")
        if self.distortion == "perceptual" and not self.perceptual_weights:
            raise ConfigError("perceptual distortion needs perceptual_weights")
        if self.augment not in ("none", "hflip", "flips"):
            raise ConfigError(f"unknown augment mode {self.augment!r}")


TOY_TRAIN = TrainConfig(steps=2000, lr=3e-3, batch_size=1, seed=0,
                        rd_lambda=5e4, distortion="mse", augment="none",
                        log_every=100, checkpoint_every=2000)


@dataclass
class RdLossValue:
    loss: ad.Tensor
    rate_bits: float
    distortion: float


def rd_loss(image: np.ndarray, params: CodecParams, config: TrainConfig,
            rng: np.random.Generator | None = None,
            noise: np.ndarray | None = None,
            backend: "qmetrics.FeatureBackend | None" = None) -> RdLossValue:
    """Differentiable rate + distortion for one tile-sized crop.

    Either an rng (fresh noise draw) or a fixed noise array must be given;
    fixing the noise makes the loss a deterministic function of the
    parameters, which the finite-difference checks rely on.
    """
    cfg = params.config
    latent = encode_t(image, params)
    if noise is None:
        if rng is None:
            raise ConfigError("rd_loss needs an rng or an explicit noise array")
        noise = rng.uniform(-0.5, 0.5, size=latent.shape)
    noisy = latent + ad.constant(noise)
    rate = rate_bits_t(noisy, params.prior)
    recon = decode_t(noisy, params)
    target = ad.constant(np.asarray(image, dtype=np.float64))
    if config.distortion == "mse":
        diff = recon - target
        distortion = ad.tmean(diff * diff)
    else:
        if backend is None:
            backend = qmetrics.load_feature_backend(config.perceptual_weights)
        side = config.perceptual_upscale
        distortion = backend.distance_t(
            qmetrics.resize_bilinear_t(target, side, side),
            qmetrics.resize_bilinear_t(recon, side, side))
    n_pixels = cfg.tile_size * cfg.tile_size
    loss = rate * (1.0 / n_pixels) + distortion * config.rd_lambda
    if not np.isfinite(loss.value):
        raise TrainingDivergedError("loss is not finite")
    return RdLossValue(loss=loss, rate_bits=float(rate.value),
                       distortion=float(distortion.value))


PRELOAD_LIMIT = 256  # datasets up to this size are held decoded in memory


class ImageSampler:
    """Recursive folder walk; random tile-sized crops with optional flips.

    Small datasets are decoded once and kept in memory; larger ones are
    size-probed up front and decoded per sample, which keeps memory flat for
    thousands of files. Sampling consumes the rng identically either way.
    """

    def __init__(self, dataset, tile_size: int = 256, augment: str = "hflip",
                 preload: bool | None = None):
        if isinstance(dataset, (str, Path)):
            paths = sorted(p for p in Path(dataset).rglob("*")
                           if p.suffix.lower() in IMAGE_EXTENSIONS)
        else:
            paths = [Path(p) for p in dataset]
        self.tile_size = tile_size
        self.augment = augment
        usable: list[Path] = []
        for p in paths:
            with Image.open(p) as im:
                w, h = im.size
            if h < tile_size or w < tile_size:
                log.warning("skipping %s: smaller than %dx%d", p, tile_size, tile_size)
                continue
            usable.append(p)
        if not usable:
            raise InvalidInputError(
                f"dataset holds no usable images (>= {tile_size}px per side)")
        self.paths = usable
        if preload is None:
            preload = len(usable) <= PRELOAD_LIMIT
        self._cache: list[np.ndarray] | None = (
            [patches.load_image(p) for p in usable] if preload else None)

    def __len__(self) -> int:
        return len(self.paths)

    def _image(self, index: int) -> np.ndarray:
        if self._cache is not None:
            return self._cache[index]
        return patches.load_image(self.paths[index])

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        img = self._image(int(rng.integers(len(self.paths))))
        t = self.tile_size
        y = int(rng.integers(img.shape[0] - t + 1))
        x = int(rng.integers(img.shape[1] - t + 1))
        crop = img[y:y + t, x:x + t]
        if self.augment == "hflip":
            if rng.random() < 0.5:
                crop = crop[:, ::-1]
        elif self.augment == "flips":
            variant = int(rng.integers(4))
            if variant & 1:
                crop = crop[:, ::-1]
            if variant & 2:
                crop = crop[::-1]
        return np.ascontiguousarray(crop)


def _snapshot_divergence(out_dir, params, step, batch) -> str:
    directory = Path(out_dir) if out_dir else Path.cwd()
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"diverged_step{step:06d}.npz"
    arrays = {name.replace("/", "."): t.value for name, t in named_parameters(params)}
    arrays["batch"] = np.stack(batch)
    np.savez(path, **arrays)
    return str(path)


def train(model_config: ModelConfig, train_config: TrainConfig, dataset,
          out_dir: str | None = None, resume_from: str | None = None,
          progress=None) -> tuple[CodecParams, list[dict]]:
    """Optimize a codec on a folder (or list) of images.

    Deterministic for a given seed: the data order, noise draws, and
    optimizer state are all derived from it, and resuming from a saved
    training state continues the exact same sequence.
    """
    sampler = ImageSampler(dataset, tile_size=model_config.tile_size,
                           augment=train_config.augment)
    backend = None
    if train_config.distortion == "perceptual":
        backend = qmetrics.load_feature_backend(train_config.perceptual_weights)

    start_step = 0
    if resume_from:
        params, extra = load_checkpoint(resume_from)
        if params.config != model_config:
            raise ConfigError("resume checkpoint was trained with a different config")
        opt = Adam(named_parameters(params), lr=train_config.lr)
        rng = np.random.default_rng(train_config.seed)
        state_path = Path(str(resume_from) + ".state.npz")
        if state_path.exists():
            start_step, rng = _load_train_state(state_path, opt)
        else:
            start_step = int(extra.get("step", 0))
    else:
        params = init_codec(model_config, seed=train_config.seed)
        opt = Adam(named_parameters(params), lr=train_config.lr)
        rng = np.random.default_rng(train_config.seed)

    out_path = Path(out_dir) if out_dir else None
    csv_file = None
    writer = None
    if out_path:
        out_path.mkdir(parents=True, exist_ok=True)
        mode = "a" if (resume_from and (out_path / "metrics.csv").exists()) else "w"
        csv_file = open(out_path / "metrics.csv", mode, newline="")
        writer = csv.writer(csv_file)
        if mode == "w":
            writer.writerow(["step", "loss", "rate_bits", "distortion"])

    history: list[dict] = []
    t_start = time.time()
    try:
        for step in range(start_step, train_config.steps):
            batch = [sampler.sample(rng) for _ in range(train_config.batch_size)]
            opt.zero_grad()
            total = None
            rate_acc = 0.0
            dist_acc = 0.0
            try:
                for crop in batch:
                    part = rd_loss(crop, params, train_config, rng=rng,
                                   backend=backend)
                    rate_acc += part.rate_bits
                    dist_acc += part.distortion
                    total = part.loss if total is None else total + part.loss
            except TrainingDivergedError:
                path = _snapshot_divergence(out_dir, params, step, batch)
                raise TrainingDivergedError(
                    f"loss diverged at step {step}; snapshot saved to {path}")
            total = total * (1.0 / train_config.batch_size)
            entry = {"step": step, "loss": float(total.value),
                     "rate_bits": rate_acc / train_config.batch_size,
                     "distortion": dist_acc / train_config.batch_size}
            history.append(entry)
            if writer and (step % train_config.log_every == 0
                           or step == train_config.steps - 1):
                writer.writerow([entry["step"], entry["loss"],
                                 entry["rate_bits"], entry["distortion"]])
                csv_file.flush()
            if progress and step % train_config.log_every == 0:
                progress(entry)
            total.backward()
            opt.step()
            if out_path and train_config.checkpoint_every and \
                    (step + 1) % train_config.checkpoint_every == 0:
                _save_training_checkpoint(out_path / "checkpoint.npz", params,
                                          opt, rng, step + 1)
    finally:
        if csv_file:
            csv_file.close()
    if out_path:
        _save_training_checkpoint(out_path / "checkpoint.npz", params, opt, rng,
                                  train_config.steps)
        log.info("trained %d steps in %.1fs; checkpoint at %s",
                 train_config.steps - start_step, time.time() - t_start,
                 out_path / "checkpoint.npz")
    return params, history


def _save_training_checkpoint(path, params, opt: Adam, rng, step: int) -> None:
    save_checkpoint(path, params, extra={"step": step})
    state = opt.state_dict()
    arrays = {"step": np.array([step])}
    for k, v in state["m"].items():
        arrays["m." + k.replace("/", ".")] = v
    for k, v in state["v"].items():
        arrays["v." + k.replace("/", ".")] = v
    arrays["_opt"] = np.frombuffer(json.dumps(
        {"step": state["step"], "lr": state["lr"]}).encode(), dtype=np.uint8)
    arrays["_rng"] = np.frombuffer(json.dumps(
        rng.bit_generator.state).encode(), dtype=np.uint8)
    np.savez(str(path) + ".state.npz", **arrays)


def _load_train_state(path, opt: Adam) -> tuple[int, np.random.Generator]:
    with np.load(path) as z:
        meta = json.loads(bytes(z["_opt"].tobytes()).decode())
        state = {
            "step": meta["step"], "lr": meta["lr"],
            "m": {k[2:].replace(".", "/"): z[k] for k in z.files if k.startswith("m.")},
            "v": {k[2:].replace(".", "/"): z[k] for k in z.files if k.startswith("v.")},
        }
        opt.load_state_dict(state)
        rng_state = json.loads(bytes(z["_rng"].tobytes()).decode())
        step = int(z["step"][0])
    rng = np.random.default_rng()
    rng.bit_generator.state = rng_state
    return step, rng


# -- evaluation -----------------------------------------------------------------

@dataclass
class ImageMetrics:
    name: str
    psnr_db: float
    ms_ssim: float
    perceptual: float | None
    bpp_file: float
    bpp_payload: float


@dataclass
class MetricReport:
    rows: list[ImageMetrics] = field(default_factory=list)

    def mean(self, attr: str) -> float:
        vals = [getattr(r, attr) for r in self.rows if getattr(r, attr) is not None]
        return float(np.mean(vals)) if vals else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["image", "psnr_db", "ms_ssim", "perceptual",
                    "bpp_file", "bpp_payload"])
        for r in self.rows:
            w.writerow([r.name, f"{r.psnr_db:.4f}", f"{r.ms_ssim:.6f}",
                        "" if r.perceptual is None else f"{r.perceptual:.6f}",
                        f"{r.bpp_file:.6f}", f"{r.bpp_payload:.6f}"])
        if self.rows:
            w.writerow(["mean", f"{self.mean('psnr_db'):.4f}",
                        f"{self.mean('ms_ssim'):.6f}",
                        "" if all(r.perceptual is None for r in self.rows)
                        else f"{self.mean('perceptual'):.6f}",
                        f"{self.mean('bpp_file'):.6f}",
                        f"{self.mean('bpp_payload'):.6f}"])
        return buf.getvalue()

    def summary(self) -> str:
        if not self.rows:
            return "no images evaluated"
        return (f"{len(self.rows)} images | PSNR {self.mean('psnr_db'):.2f} dB | "
                f"MS-SSIM {self.mean('ms_ssim'):.4f} | "
                f"bpp {self.mean('bpp_file'):.4f} (file) / "
                f"{self.mean('bpp_payload'):.4f} (payload)")


def evaluate(dataset, params: CodecParams,
             backend: "qmetrics.FeatureBackend | None" = None,
             csv_path: str | None = None) -> MetricReport:
    """Compress, decode, and score every usable image in a folder or list.

    Per-image: tile, code through the real bitstream, reassemble, then
    compare against the center crop the codec covers. Undersized images are
    skipped with a logged warning.
    """
    if isinstance(dataset, (str, Path)):
        paths = sorted(p for p in Path(dataset).rglob("*")
                       if p.suffix.lower() in IMAGE_EXTENSIONS)
    else:
        paths = [Path(p) for p in dataset]
    tile = params.config.tile_size
    report = MetricReport()
    for p in paths:
        img = patches.load_image(p)
        if img.shape[0] < tile or img.shape[1] < tile:
            log.warning("skipping %s: smaller than one %dx%d tile", p, tile, tile)
            continue
        stream = bs.compress_image(img, params)
        recon = bs.decompress_image(stream, params)
        reference = patches.center_crop(img, tile)
        report.rows.append(ImageMetrics(
            name=p.name,
            psnr_db=qmetrics.psnr(reference, recon),
            ms_ssim=qmetrics.ms_ssim(reference, recon),
            perceptual=(backend.distance(reference, recon) if backend else None),
            bpp_file=stream.file_bpp(),
            bpp_payload=stream.payload_bpp()))
    if csv_path:
        Path(csv_path).write_text(report.to_csv())
    return report
