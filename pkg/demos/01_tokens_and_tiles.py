"""Patch tokenization and the tiling protocol.

An image becomes a sequence of flattened 16x16 patches (768 numbers each);
images that are not tile-multiples are center-cropped to the largest grid of
256x256 tiles. Both conversions are exact inverses on their domains.
"""

import numpy as np

from qpf import patches

rng = np.random.default_rng(0)

# --- image -> tokens -> image, bit-exact ------------------------------------
image = rng.random((256, 256, 3))
tokens = patches.patchify(image, patch_size=16)
print(f"256x256x3 image -> {tokens.shape[0]} tokens of dim {tokens.shape[1]}")

back = patches.unpatchify(tokens)
print("unpatchify(patchify(I)) == I exactly:", np.array_equal(back, image))

# token 17 is patch (1, 1): rows 16:32, cols 16:32, channel-innermost
manual = image[16:32, 16:32].reshape(-1)
print("token 17 matches manual flattening:", np.array_equal(tokens[17], manual))

# --- learned positional table -------------------------------------------------
table = patches.make_position_table(256, 768, rng, std=0.02)
with_pos = patches.add_positional_encoding(tokens, table)
print("positional encoding is additive:",
      np.allclose(with_pos - tokens, table[:256]))

# --- tiling an awkward size ----------------------------------------------------
odd = rng.random((600, 900, 3))
grid, tiles = patches.tile_image(odd)
print(f"\n600x900 image -> {grid.rows}x{grid.cols} grid of {grid.tile_size}px tiles, "
      f"crop offset {grid.crop_offset}")
recombined = patches.reassemble(grid, tiles)
print("reassemble(tiles) == center_crop(I):",
      np.array_equal(recombined, patches.center_crop(odd)))

# a Kodak-sized frame splits 3x2
kodak = rng.random((768, 512, 3))
grid, _ = patches.tile_image(kodak)
print(f"768x512 frame -> {grid.rows}x{grid.cols} tiles")
