import numpy as np
import pytest

from qpf import bitstream as bs
from qpf.errors import BitstreamError, DigestMismatchError, InvalidInputError
from qpf.model import LatentCode, ModelConfig, decode, encode, init_codec
from qpf.patches import TileGrid, center_crop
from qpf.prior import quantize


rng = np.random.default_rng(31)

SMALL = ModelConfig(embed_dim=16, n_queries=4, depth=1, heads=2)


@pytest.fixture(scope="module")
def codec():
    return init_codec(SMALL, seed=1)


class TestSymbolOrder:
    def test_channel_major_bijection(self):
        values = np.arange(12, dtype=np.int32).reshape(3, 4)  # 3 queries, 4 dims
        latent = LatentCode(values=values, mode="quantized")
        syms = bs.latent_to_symbols(latent)
        # all queries of dim 0 first: column-major over the (N, d) matrix
        np.testing.assert_array_equal(syms, [0, 4, 8, 1, 5, 9, 2, 6, 10, 3, 7, 11])
        back = bs.symbols_to_latent(syms, 3, 4)
        np.testing.assert_array_equal(back.values, values)


class TestContainer:
    def _stream(self):
        grid = TileGrid(tile_size=256, rows=2, cols=3, crop_offset=(22, 7))
        return bs.Bitstream(image_h=534, image_w=775, grid=grid, n_queries=4,
                            embed_dim=16, digest="ab" * 16,
                            supports=[(-5, 9)] * 6,
                            payloads=[bytes([i] * (10 + i)) for i in range(6)])

    def test_header_round_trips_field_exact(self):
        s = self._stream()
        raw = s.to_bytes()
        back = bs.Bitstream.from_bytes(raw)
        assert back.image_h == 534 and back.image_w == 775
        assert back.grid == s.grid
        assert back.n_queries == 4 and back.embed_dim == 16
        assert back.digest == "ab" * 16
        assert back.supports == s.supports
        assert back.payloads == s.payloads
        assert back.to_bytes() == raw

    def test_total_bits_is_eight_times_bytes(self):
        s = self._stream()
        assert s.file_bytes == len(s.to_bytes())
        assert s.file_bpp() == s.file_bytes * 8.0 / (2 * 3 * 256 * 256)

    def test_bad_magic_rejected(self):
        raw = bytearray(self._stream().to_bytes())
        raw[:4] = b"JUNK"
        with pytest.raises(BitstreamError, match="magic"):
            bs.Bitstream.from_bytes(bytes(raw))

    def test_bad_version_rejected(self):
        raw = bytearray(self._stream().to_bytes())
        raw[4] = 99
        with pytest.raises(BitstreamError, match="version"):
            bs.Bitstream.from_bytes(bytes(raw))

    def test_truncations_rejected(self):
        raw = self._stream().to_bytes()
        for cut in (10, bs._HEADER.size + 3, len(raw) - 4):
            with pytest.raises(BitstreamError):
                bs.Bitstream.from_bytes(raw[:cut])

    def test_trailing_garbage_rejected(self):
        raw = self._stream().to_bytes() + b"xx"
        with pytest.raises(BitstreamError, match="trailing"):
            bs.Bitstream.from_bytes(raw)

    def test_known_header_vector(self):
        # frozen wire layout: any change here is a format break
        grid = TileGrid(tile_size=256, rows=1, cols=1, crop_offset=(0, 0))
        s = bs.Bitstream(image_h=256, image_w=256, grid=grid, n_queries=2,
                         embed_dim=4, digest="00112233445566778899aabbccddeeff",
                         supports=[(-1, 1)], payloads=[b"\xde\xad"])
        expect = (b"QPF1" + b"\x01\x00" + b"\x00\x00"
                  + (256).to_bytes(4, "little") * 2
                  + b"\x00\x00" * 2
                  + b"\x01\x00" * 2
                  + (256).to_bytes(2, "little")
                  + b"\x02\x00" + b"\x04\x00" + b"\x00\x00"
                  + bytes.fromhex("00112233445566778899aabbccddeeff")
                  + b"\xff\xff" + b"\x01\x00"
                  + b"\x02\x00\x00\x00"
                  + b"\xde\xad")
        assert s.to_bytes() == expect


class TestPipeline:
    def test_compress_decompress_round_trip(self, codec):
        img = rng.random((300, 300, 3))
        stream = bs.compress_image(img, codec)
        recon = bs.decompress_image(stream, codec)
        assert recon.shape == (256, 256, 3)
        assert stream.grid.crop_offset == (22, 22)

    def test_equivalence_with_in_process_reconstruction(self, codec):
        img = rng.random((256, 256, 3))
        stream = bs.Bitstream.from_bytes(bs.compress_image(img, codec).to_bytes())
        through_file = bs.decompress_image(stream, codec)
        latent, _ = encode(img, codec)
        q = quantize(latent, "round")
        in_process, _ = decode(q.values.astype(np.float64), codec)
        assert np.array_equal(through_file, in_process)

    def test_multi_tile_reassembly(self, codec):
        img = rng.random((512, 300, 3))
        stream = bs.compress_image(img, codec)
        assert (stream.grid.rows, stream.grid.cols) == (2, 1)
        recon = bs.decompress_image(stream, codec)
        assert recon.shape == center_crop(img).shape

    def test_digest_mismatch_rejected(self, codec):
        img = rng.random((256, 256, 3))
        stream = bs.compress_image(img, codec)
        other = init_codec(SMALL, seed=99)
        with pytest.raises(DigestMismatchError):
            bs.decompress_image(stream, other)

    def test_undersized_image_rejected(self, codec):
        with pytest.raises(InvalidInputError):
            bs.compress_image(rng.random((100, 100, 3)), codec)

    def test_side_info_mode_round_trips(self, codec):
        img = rng.random((256, 256, 3))
        stream = bs.compress_image(img, codec, side_info=True)
        raw = stream.to_bytes()
        assert stream.file_bytes == len(raw)  # table section counted
        back = bs.Bitstream.from_bytes(raw)
        assert back.tables is not None
        np.testing.assert_array_equal(back.tables[0].cdf, stream.tables[0].cdf)
        plain = bs.compress_image(img, codec)
        assert np.array_equal(bs.decompress_image(back, codec),
                              bs.decompress_image(plain, codec))
        assert len(raw) > len(plain.to_bytes())  # tables cost stream size

    def test_payload_bpp_below_file_bpp(self, codec):
        img = rng.random((256, 256, 3))
        stream = bs.compress_image(img, codec)
        assert stream.payload_bpp() < stream.file_bpp()

    def test_corrupt_side_info_support_rejected(self, codec):
        img = rng.random((256, 256, 3))
        raw = bytearray(bs.compress_image(img, codec, side_info=True).to_bytes())
        # swap the tile's support bounds so hi < lo
        lo, hi = raw[48:50], raw[50:52]
        raw[48:50], raw[50:52] = hi, lo
        with pytest.raises(BitstreamError):
            bs.Bitstream.from_bytes(bytes(raw))
