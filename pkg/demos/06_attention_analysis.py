"""Peeking inside the codec: attention heatmaps, query ablation, and
meta-query renders of the decoder's cross-attention.

Uses a briefly trained miniature model so structure (not photorealism) is
visible. All renders land in demos/out/.
"""

import dataclasses
from pathlib import Path

import numpy as np

from qpf import analysis
from qpf.model import ModelConfig, decode, encode, init_codec, named_parameters
from qpf.optim import Adam
from qpf.patches import save_image
from qpf.training import TOY_TRAIN, rd_loss

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)
rng = np.random.default_rng(5)


def textured_image(seed):
    r = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:256, 0:256] / 255.0
    img = np.zeros((256, 256, 3))
    for c in range(3):
        acc = np.zeros((256, 256))
        for k in range(1, 6):
            f = r.normal(0, 2.0 * k, 2)
            acc += np.sin(2 * np.pi * (f[0] * yy + f[1] * xx) + r.uniform(0, 7)) / k
        img[..., c] = acc
    return ((img - img.min()) / (img.max() - img.min())).clip(0, 1)


images = [textured_image(s) for s in range(4)]
config = ModelConfig(embed_dim=32, n_queries=4, depth=2, heads=2)
codec = init_codec(config, seed=0)
opt = Adam(named_parameters(codec), lr=2e-3)
cfg = dataclasses.replace(TOY_TRAIN, steps=500, lr=2e-3)
for step in range(cfg.steps):
    opt.zero_grad()
    out = rd_loss(images[int(rng.integers(4))], codec, cfg, rng=rng)
    out.loss.backward()
    opt.step()
print(f"mini training done (final mse {out.distortion:.4f})")

image = images[0]
latent, enc_records = encode(image, codec, capture=True)

# --- heatmaps: where does the encoder look? ----------------------------------
heat = analysis.attention_heatmap(enc_records, analysis.HeatmapSpec("max"),
                                  image=image)
save_image(OUT / "attn_max.png", heat.overlay)
print(f"max-attention map: {heat.legend}")

for q in range(config.n_queries):
    spec = analysis.HeatmapSpec("mean", query_index=q)
    heat = analysis.attention_heatmap(enc_records, spec, image=image)
    save_image(OUT / f"attn_mean_q{q}.png", heat.overlay)
print(f"per-query mean maps -> {OUT}/attn_mean_q*.png")

# --- ablation: what breaks when a query is removed? ------------------------------
study = analysis.query_ablation_study(images, codec, query_index=1)
err = study.mean_error_map
save_image(OUT / "ablate_q1_error.png",
           analysis.apply_colormap(err / max(err.max(), 1e-9)))
print(f"ablating query 1: mean |error| {err.mean():.5f}, peak {err.max():.5f}")

# --- meta-queries: what do decoder layers extract? --------------------------------
meta = analysis.pca_meta_queries(latent)
print("explained variance of the 3 meta-query directions:",
      np.round(meta.explained_variance, 3))
_, dec_records = decode(latent, codec, capture=True)
for layer in range(config.depth):
    render = analysis.project_decoder_attention(dec_records, meta, layer)
    save_image(OUT / f"meta_layer{layer}.png", render)
print(f"decoder-layer renders -> {OUT}/meta_layer*.png")
