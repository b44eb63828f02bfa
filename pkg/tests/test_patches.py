import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpf import patches
from qpf.errors import ConfigError, InvalidInputError, ShapeError


rng = np.random.default_rng(11)


class TestPatchify:
    def test_256_image_gives_256_tokens_of_768(self):
        img = rng.random((256, 256, 3))
        tok = patches.patchify(img, 16)
        assert tok.shape == (256, 768)

    def test_constant_image_gives_identical_tokens(self):
        img = np.full((256, 256, 3), 0.5)
        tok = patches.patchify(img, 16)
        assert np.all(tok == tok[0])

    def test_round_trip_is_bitwise_exact(self):
        img = rng.random((256, 256, 3))
        assert np.array_equal(patches.unpatchify(patches.patchify(img)), img)

    def test_token_round_trip_is_bitwise_exact(self):
        tok = rng.random((256, 768))
        assert np.array_equal(patches.patchify(patches.unpatchify(tok)), tok)

    def test_flattening_order_is_row_major_channel_innermost(self):
        img = np.arange(256 * 256 * 3, dtype=np.float64).reshape(256, 256, 3)
        tok = patches.patchify(img, 16)
        # token 1 is the patch at grid position (0, 1), pixels [0:16, 16:32]
        expect = img[0:16, 16:32].reshape(-1)
        np.testing.assert_array_equal(tok[1], expect)

    def test_swapping_patches_swaps_exactly_those_tokens(self):
        img = rng.random((256, 256, 3))
        swapped = img.copy()
        swapped[0:16, 0:16], swapped[16:32, 0:16] = (
            img[16:32, 0:16].copy(), img[0:16, 0:16].copy())
        a = patches.patchify(img)
        b = patches.patchify(swapped)
        # patches (0,0) and (1,0) are tokens 0 and 16
        np.testing.assert_array_equal(b[0], a[16])
        np.testing.assert_array_equal(b[16], a[0])
        mask = np.ones(256, dtype=bool)
        mask[[0, 16]] = False
        np.testing.assert_array_equal(b[mask], a[mask])

    def test_indivisible_image_rejected(self):
        with pytest.raises(InvalidInputError):
            patches.patchify(rng.random((250, 256, 3)), 16)

    def test_unsupported_patch_size_rejected(self):
        with pytest.raises(ConfigError):
            patches.patchify(rng.random((256, 256, 3)), 13)

    @given(st.sampled_from([8, 16, 32]), st.integers(1, 3), st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_round_trip_property(self, p, mult, seed):
        side = p * 16 * mult if p == 8 else p * mult * 8
        r = np.random.default_rng(seed)
        img = r.random((side, side, 3))
        assert np.array_equal(patches.unpatchify(patches.patchify(img, p), p), img)


class TestUnpatchify:
    def test_all_zero_tokens_black_image(self):
        img = patches.unpatchify(np.zeros((256, 768)))
        assert img.shape == (256, 256, 3)
        assert np.all(img == 0.0)

    def test_out_of_range_tokens_clamped(self):
        tok = np.full((256, 768), 2.5)
        tok[0] = -1.0
        img = patches.unpatchify(tok)
        assert img.min() == 0.0 and img.max() == 1.0

    def test_wrong_dim_rejected(self):
        with pytest.raises(ShapeError):
            patches.unpatchify(np.zeros((256, 700)))
        with pytest.raises(ShapeError):
            patches.unpatchify(np.zeros((255, 768)))


class TestPositionalEncoding:
    def test_zero_table_is_identity(self):
        tok = rng.random((256, 768))
        out = patches.add_positional_encoding(tok, np.zeros((256, 768)))
        np.testing.assert_array_equal(out, tok)

    def test_shape_preserved(self):
        out = patches.add_positional_encoding(
            rng.random((256, 768)), rng.random((256, 768)))
        assert out.shape == (256, 768)

    def test_addition_is_local_to_each_token(self):
        table = rng.random((256, 768))
        a = rng.random((256, 768))
        b = a.copy()
        b[7] = rng.random(768)
        ea = patches.add_positional_encoding(a, table)
        eb = patches.add_positional_encoding(b, table)
        diff = np.any(ea != eb, axis=1)
        assert diff[7] and not diff[np.arange(256) != 7].any()

    def test_short_table_rejected(self):
        with pytest.raises(ConfigError):
            patches.add_positional_encoding(rng.random((256, 768)),
                                            np.zeros((100, 768)))


class TestTiling:
    def test_exact_division_512x768(self):
        grid, tiles = patches.tile_image(rng.random((512, 768, 3)))
        assert (grid.rows, grid.cols) == (2, 3)
        assert len(tiles) == 6
        assert grid.crop_offset == (0, 0)

    def test_300x300_center_crop_offset(self):
        # floor((300 - 256) / 2) = 22
        grid, tiles = patches.tile_image(rng.random((300, 300, 3)))
        assert (grid.rows, grid.cols) == (1, 1)
        assert grid.crop_offset == (22, 22)

    def test_kodak_768x512_grid(self):
        grid, _ = patches.tile_image(rng.random((768, 512, 3)))
        assert (grid.rows, grid.cols) == (3, 2)

    def test_reassembly_is_lossless_on_crop(self):
        img = rng.random((600, 900, 3))
        grid, tiles = patches.tile_image(img)
        np.testing.assert_array_equal(patches.reassemble(grid, tiles),
                                      patches.center_crop(img))

    def test_undersized_image_rejected_with_message(self):
        with pytest.raises(InvalidInputError, match="smaller than one"):
            patches.tile_image(rng.random((255, 300, 3)))

    def test_tile_count_mismatch_rejected(self):
        grid, tiles = patches.tile_image(rng.random((512, 512, 3)))
        with pytest.raises(ShapeError):
            patches.reassemble(grid, tiles[:-1])


class TestImageIO:
    def test_png_round_trip(self, tmp_path):
        img = rng.random((64, 64, 3))
        p = tmp_path / "x.png"
        patches.save_image(p, img)
        back = patches.load_image(p)
        assert back.shape == (64, 64, 3)
        assert back.min() >= 0.0 and back.max() <= 1.0
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12
