"""The attention stack, from a single softmax lookup to a full decoder block.

Shows the structural properties the codec leans on: softmax rows are
probability distributions, residual paths make zero-weight blocks exact
identities, and every gradient matches finite differences.
"""

import numpy as np

from qpf import autodiff as ad
from qpf.attention import (BlockParams, MhaParams, attention, decoder_block,
                           multi_head_attention)

rng = np.random.default_rng(1)

# --- scaled dot-product attention ------------------------------------------
q = rng.normal(size=(4, 8))
k = rng.normal(size=(10, 8))
v = rng.normal(size=(10, 8))
out, weights = attention(q, k, v, scale=1 / np.sqrt(8))
print("attention rows sum to 1:",
      np.allclose(weights.value.sum(axis=-1), 1.0, atol=1e-12))

# equal logits spread attention uniformly; the output is the value mean
_, uniform = attention(np.zeros((1, 8)), np.zeros((10, 8)), v, scale=1.0)
print("constant logits -> uniform weights:",
      np.allclose(uniform.value, 0.1, atol=1e-15))

# --- multi-head aggregation with residual -----------------------------------
params = MhaParams.init(dim=8, kv_dim=8, heads=2, rng=rng)
x = rng.normal(size=(5, 8))
y = multi_head_attention(ad.constant(x), ad.constant(rng.normal(size=(7, 8))), params)
print("MHA preserves the query shape:", y.shape == (5, 8))

# --- zero-weight blocks are identities ----------------------------------------
blk = BlockParams.zeros(dim=8, kv_dim=8, heads=2)
z = decoder_block(ad.constant(x), ad.constant(rng.normal(size=(6, 8))), blk)
print("zeroed decoder block is the identity:", np.array_equal(z.value, x))

# --- gradients agree with finite differences ------------------------------------
blk = BlockParams.init(dim=8, kv_dim=6, heads=2, rng=rng)
probe = rng.normal(size=(4, 8))
ctx = rng.normal(size=(3, 6))
qx = ad.param(rng.normal(size=(4, 8)))

loss = (decoder_block(qx, ad.constant(ctx), blk) * probe).sum()
loss.backward()
analytic = qx.grad.copy()

eps = 1e-5
numeric = np.zeros_like(qx.value)
flat, nflat = qx.value.ravel(), numeric.ravel()
for i in range(flat.size):
    orig = flat[i]
    for sign, slot in ((+1, 0), (-1, 1)):
        flat[i] = orig + sign * eps
        val = float((decoder_block(qx, ad.constant(ctx), blk) * probe).sum().value)
        nflat[i] += sign * val / (2 * eps)
    flat[i] = orig
rel = np.abs(analytic - numeric).max() / np.abs(numeric).max()
print(f"decoder-block input gradient vs finite differences: rel err {rel:.2e}")
