"""Command-line interface.

Subcommands: train, compress, decompress, eval, viz-attn, viz-ablate,
viz-pca. Failures print one machine-parsable line to stderr —
`error:<ErrorClass>: <message>` — and exit nonzero.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, bitstream as bs, metrics as qmetrics, patches
from .config import load_config_file
from .errors import InvalidInputError, QpfError
from .model import encode, load_checkpoint
from .training import evaluate, train


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qpf",
        description="Attention-only learned image codec and analysis tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="optimize a codec on an image folder")
    p.add_argument("--config", required=True, help="TOML file with [model]/[train]")
    p.add_argument("--dataset", required=True, help="image folder (recursive)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")

    p = sub.add_parser("compress", help="encode an image to a .qpf stream")
    p.add_argument("input", help="image file (PNG/PPM/JPEG)")
    p.add_argument("-o", "--output", required=True, help=".qpf output path")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--side-info", action="store_true",
                   help="embed CDF tables in the stream")

    p = sub.add_parser("decompress", help="decode a .qpf stream to an image")
    p.add_argument("input", help=".qpf stream")
    p.add_argument("-o", "--output", required=True, help="image output path")
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("eval", help="tile/compress/decode a folder and report metrics")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("-o", "--output", default=None, help="CSV report path")
    p.add_argument("--perceptual", default=None,
                   help="feature-backend weight file for the perceptual column")

    p = sub.add_parser("viz-attn", help="encoder attention heatmap for one image")
    p.add_argument("--image", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("-o", "--output", required=True, help="PNG output path")
    p.add_argument("--mode", choices=("max", "mean"), default="max")
    p.add_argument("--query", type=int, default=None,
                   help="query index (mean mode)")
    p.add_argument("--alpha", type=float, default=0.55, help="overlay opacity")

    p = sub.add_parser("viz-ablate", help="mean reconstruction-error maps for "
                                          "decoding without one query")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--query", type=int, default=None,
                   help="single query index (default: loop over all)")
    p.add_argument("--save-recons", action="store_true",
                   help="also write per-image full/ablated reconstructions")

    p = sub.add_parser("viz-pca", help="decoder cross-attention projected onto "
                                       "3-dim meta-queries")
    p.add_argument("--image", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--layer", type=int, required=True, help="decoder layer index")
    p.add_argument("-o", "--output", required=True, help="PNG output path")
    return parser


def _cmd_train(args) -> int:
    model_cfg, train_cfg = load_config_file(args.config)
    params, history = train(model_cfg, train_cfg, args.dataset,
                            out_dir=args.out, resume_from=args.resume,
                            progress=lambda e: print(
                                f"step {e['step']}: loss {e['loss']:.5f} "
                                f"rate {e['rate_bits']:.0f}b "
                                f"distortion {e['distortion']:.6f}"))
    print(f"checkpoint written to {Path(args.out) / 'checkpoint.npz'}")
    return 0


def _cmd_compress(args) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    image = patches.load_image(args.input)
    stream = bs.compress_image(image, params, side_info=args.side_info)
    stream.write(args.output)
    print(f"{args.output}: {stream.file_bytes} bytes | "
          f"bpp {stream.file_bpp():.4f} (file) / {stream.payload_bpp():.4f} (payload)")
    return 0


def _cmd_decompress(args) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    stream = bs.Bitstream.read(args.input)
    image = bs.decompress_image(stream, params)
    patches.save_image(args.output, image)
    print(f"{args.output}: {image.shape[1]}x{image.shape[0]} "
          f"(crop offset {stream.grid.crop_offset} of "
          f"{stream.image_w}x{stream.image_h})")
    return 0


def _cmd_eval(args) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    backend = qmetrics.load_feature_backend(args.perceptual) if args.perceptual else None
    report = evaluate(args.dataset, params, backend=backend, csv_path=args.output)
    print(report.summary())
    if args.output:
        print(f"report written to {args.output}")
    return 0


def _cmd_viz_attn(args) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    tile = _center_tile(args.image, params.config.tile_size)
    _, records = encode(tile, params, capture=True)
    spec = analysis.HeatmapSpec(reduction=args.mode, query_index=args.query,
                                overlay_alpha=args.alpha)
    heat = analysis.attention_heatmap(records, spec, image=tile,
                                      out_side=params.config.tile_size)
    patches.save_image(args.output, heat.overlay)
    print(f"{args.output}: {heat.legend}")
    return 0


def _cmd_viz_ablate(args) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    queries = ([args.query] if args.query is not None
               else range(params.config.n_queries))
    for q in queries:
        study = analysis.query_ablation_study(args.dataset, params, q,
                                              keep_reconstructions=args.save_recons)
        err = study.mean_error_map
        scale = err.max() if err.max() > 0 else 1.0
        patches.save_image(out_dir / f"error_q{q:02d}.png",
                           analysis.apply_colormap(err / scale))
        if args.save_recons:
            for name, full, ablated in study.reconstructions:
                stem = Path(name).stem
                patches.save_image(out_dir / f"{stem}_full.png", full)
                patches.save_image(out_dir / f"{stem}_no_q{q:02d}.png", ablated)
        print(f"query {q}: mean |error| {err.mean():.6f} "
              f"(max {err.max():.6f}) -> {out_dir / f'error_q{q:02d}.png'}")
    return 0


def _cmd_viz_pca(args) -> int:
    from .model import decode

    params, _ = load_checkpoint(args.checkpoint)
    cfg = params.config
    if not 0 <= args.layer < cfg.depth:
        raise InvalidInputError(f"layer {args.layer} out of range [0, {cfg.depth})")
    image = patches.load_image(args.image)
    grid, tiles = patches.tile_image(image, cfg.tile_size)
    latents = [encode(t, params)[0] for t in tiles]
    # one shared basis across all tiles keeps colors comparable
    meta_fit = analysis.fit_meta_queries(
        np.concatenate([l.values for l in latents], axis=0))
    per_tile = []
    for latent in latents:
        _, records = decode(latent, params, capture=True)
        meta = analysis.MetaQueries(
            projected=analysis.project_onto_basis(latent, meta_fit),
            components=meta_fit.components,
            explained_variance=meta_fit.explained_variance,
            mean=meta_fit.mean)
        per_tile.append(analysis.meta_projection(records, meta, args.layer))
    ranges = analysis.projection_ranges(per_tile)
    rendered = [analysis.render_meta_projection(p, out_side=cfg.tile_size,
                                                value_ranges=ranges)
                for p in per_tile]
    patches.save_image(args.output, patches.reassemble(grid, rendered))
    ev = meta_fit.explained_variance
    print(f"{args.output}: layer {args.layer}, explained variance "
          f"[{ev[0]:.3g}, {ev[1]:.3g}, {ev[2]:.3g}]")
    return 0


def _center_tile(path, tile_size: int) -> np.ndarray:
    img = patches.load_image(path)
    if img.shape[0] < tile_size or img.shape[1] < tile_size:
        raise InvalidInputError(
            f"{path} is smaller than one {tile_size}x{tile_size} tile")
    oy = (img.shape[0] - tile_size) // 2
    ox = (img.shape[1] - tile_size) // 2
    return img[oy:oy + tile_size, ox:ox + tile_size]


_COMMANDS = {
    "train": _cmd_train,
    "compress": _cmd_compress,
    "decompress": _cmd_decompress,
    "eval": _cmd_eval,
    "viz-attn": _cmd_viz_attn,
    "viz-ablate": _cmd_viz_ablate,
    "viz-pca": _cmd_viz_pca,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except QpfError as e:
        print(f"error:{type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error:FileNotFoundError: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
