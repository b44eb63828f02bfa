"""Acceptance gate: every criterion at its stated tolerance.

Each passing criterion prints one `ACCEPTANCE <n> <name>: PASS` line (run
with `pytest tests/test_acceptance.py -v -s` to see them). The two trained
checkpoints come from session fixtures in conftest.py; published full-scale
rate/quality figures require large-scale training and are intentionally not
asserted here.
"""

import time

import numpy as np

from qpf import analysis
from qpf import autodiff as ad
from qpf import bitstream as bs
from qpf import patches
from qpf.attention import BlockParams, MhaParams, attention, decoder_block
from qpf.metrics import psnr
from qpf.model import (ModelConfig, decode, encode, init_codec,
                       named_parameters)
from qpf.prior import (FactorizedPrior, likelihood_t, pmf_to_cdf_rows,
                       quantize, rate_bits)
from qpf.rangecoder import TOTAL, range_decode, range_encode
from qpf.training import TOY_TRAIN, rd_loss

from helpers import fd_check_params
from tests_support_zero import zero_blocks
from trained_fixtures import held_out_images


def _ok(n, name, detail=""):
    print(f"\nACCEPTANCE {n} {name}: PASS {detail}")


def _draw(rng, cdf_row, n):
    pmf = np.diff(cdf_row) / TOTAL
    return rng.choice(len(pmf), size=n, p=pmf)


class TestCriterion1LosslessCoding:
    def test_randomized_round_trip_suite(self):
        t0 = time.time()
        total = 0
        for seed in range(100):
            r = np.random.default_rng(seed)
            n_sym = int(r.integers(2, 400))
            pmf = r.dirichlet(np.full(n_sym, float(r.uniform(0.1, 1.5))))
            table = pmf_to_cdf_rows(pmf[None, :])
            syms = _draw(r, table[0], 10_000)
            total += syms.size
            back = range_decode(range_encode(syms, table), table, syms.size)
            assert np.array_equal(back, syms)
        # adversarial edges: single-symbol support, maximally skewed mass,
        # constant streams, the empty stream
        one = np.array([[0, TOTAL]])
        assert np.array_equal(
            range_decode(range_encode(np.zeros(5000, int), one), one, 5000),
            np.zeros(5000, dtype=np.int32))
        skew = pmf_to_cdf_rows(np.array([[1e-15, 1e-15, 1.0]]))
        pattern = np.array([2, 2, 0, 2, 1, 2] * 2000)
        assert np.array_equal(
            range_decode(range_encode(pattern, skew), skew, pattern.size), pattern)
        const = np.ones(20_000, dtype=int)
        assert np.array_equal(
            range_decode(range_encode(const, skew), skew, const.size), const)
        assert range_decode(range_encode([], skew), skew, 0).size == 0
        total += 5000 + pattern.size + const.size
        elapsed = time.time() - t0
        assert total >= 1_000_000
        assert elapsed < 120.0
        _ok(1, "lossless round trips",
            f"({total} symbols, 100+ tables, {elapsed:.1f}s < 120s)")


class TestCriterion2CodingEfficiency:
    def test_rate_within_one_percent_of_cross_entropy(self):
        # 4-symbol source tuned by bisection to exactly 1.5 bits of entropy
        base = np.arange(4.0)
        lo, hi = 0.01, 5.0
        for _ in range(200):
            t = 0.5 * (lo + hi)
            pmf = np.exp(-t * base)
            pmf /= pmf.sum()
            h = float(-(pmf * np.log2(pmf)).sum())
            if h > 1.5:
                lo = t
            else:
                hi = t
        assert abs(h - 1.5) < 1e-9
        table = pmf_to_cdf_rows(pmf[None, :])
        rng = np.random.default_rng(12)
        syms = _draw(rng, table[0], 100_000)
        payload = range_encode(syms, table)
        measured = len(payload) * 8.0 / syms.size
        cross_entropy = float(-np.log2(np.diff(table[0])[syms] / TOTAL).sum())
        assert len(payload) * 8.0 <= cross_entropy * 1.01 + 32 * 8
        assert measured <= 1.515
        _ok(2, "coding efficiency",
            f"({measured:.4f} bits/symbol vs 1.5 entropy, bound 1.515)")


class TestCriterion3GradientCorrectness:
    def test_all_gradient_paths_match_finite_differences(self):
        t0 = time.time()
        local = np.random.default_rng(3)

        # scaled dot-product attention w.r.t. projected inputs
        q = ad.param(local.normal(size=(3, 4)))
        k = ad.param(local.normal(size=(3, 4)))
        v = ad.param(local.normal(size=(3, 4)))
        probe = local.normal(size=(3, 4))

        def attn_loss():
            for t in (q, k, v):
                t.grad = None
            out, _ = attention(q, k, v, scale=0.5)
            return (out * probe).sum()

        fd_check_params(attn_loss, [("q", q), ("k", k), ("v", v)],
                        rtol=1e-3, atol=1e-7)

        # full decoder block, every parameter (4 tokens, d=8, h=2)
        blk = BlockParams.init(8, 6, heads=2, rng=local)
        qx = local.normal(size=(4, 8))
        ctx = local.normal(size=(3, 6))
        probe_b = local.normal(size=(4, 8))
        names = []
        for un, unit in (("sa", blk.sa), ("ca", blk.ca)):
            for ln, lin in (("q", unit.q), ("k", unit.k), ("v", unit.v), ("o", unit.o)):
                names += [(f"{un}.{ln}.w", lin.w), (f"{un}.{ln}.b", lin.b)]
        names += [("ffw_in.w", blk.ffw_in.w), ("ffw_in.b", blk.ffw_in.b),
                  ("ffw_out.w", blk.ffw_out.w), ("ffw_out.b", blk.ffw_out.b),
                  ("ln1.g", blk.ln_sa.gamma), ("ln1.b", blk.ln_sa.beta),
                  ("ln2.g", blk.ln_ca.gamma), ("ln2.b", blk.ln_ca.beta),
                  ("ln3.g", blk.ln_ffw.gamma), ("ln3.b", blk.ln_ffw.beta)]

        def block_loss():
            return (decoder_block(ad.constant(qx), ad.constant(ctx), blk)
                    * probe_b).sum()

        fd_check_params(block_loss, names, rtol=1e-3, atol=1e-7)

        # factorized-prior log-likelihood w.r.t. prior parameters and latent
        prior = FactorizedPrior.init(channels=2, rng=local)
        lat = ad.param(local.normal(size=(5, 2)) * 2)

        def prior_loss():
            lat.grad = None
            return ad.tsum(ad.log(likelihood_t(lat, prior)))

        fd_check_params(prior_loss, prior.named_parameters() + [("latent", lat)],
                        rtol=1e-3, atol=1e-7)

        # rd loss, MSE profile, fixed noise; sampled parameters across the tree
        cfg = ModelConfig(embed_dim=8, n_queries=2, depth=1, heads=2)
        codec = init_codec(cfg, seed=4)
        img = local.random((256, 256, 3))
        noise = local.uniform(-0.5, 0.5, size=(2, 8))

        def rd(codec_params=codec):
            return rd_loss(img, codec_params, TOY_TRAIN, noise=noise).loss

        sampled = [(n, t) for n, t in named_parameters(codec)]
        fd_check_params(rd, sampled, rtol=1e-3, atol=1e-6,
                        max_entries=2, rng=local)
        elapsed = time.time() - t0
        assert elapsed < 300.0
        _ok(3, "gradient correctness",
            f"(attention, decoder block, prior, rd loss; {elapsed:.1f}s < 300s)")


class TestCriterion4ToyOverfit:
    def test_one_image_overfit_quality(self, toy_overfit):
        codec, image = toy_overfit.codec, toy_overfit.images[0]
        latent, _ = encode(image, codec)
        coded = quantize(latent, "round")
        recon, _ = decode(coded.values.astype(np.float64), codec)
        mse = float(np.mean((recon - image) ** 2))
        db = psnr(image, recon)
        assert mse < 1e-3
        assert db > 30.0
        assert toy_overfit.train_seconds < 900.0
        _ok(4, "toy overfit",
            f"(2000 steps in {toy_overfit.train_seconds:.0f}s < 900s, "
            f"MSE {mse:.2e} < 1e-3, PSNR {db:.2f} dB > 30)")


class TestCriterion5PipelineEquivalence:
    def test_file_path_equals_in_process_path(self, toy_multi):
        codec = toy_multi.codec
        rng = np.random.default_rng(55)
        checked = 0
        for i in range(20):
            h = int(rng.integers(256, 400))
            w = int(rng.integers(256, 400))
            image = rng.random((h, w, 3))
            raw = bs.compress_image(image, codec).to_bytes()
            through_file = bs.decompress_image(bs.Bitstream.from_bytes(raw), codec)
            grid, tiles = patches.tile_image(image, codec.config.tile_size)
            rebuilt = []
            for tile in tiles:
                latent, _ = encode(tile, codec)
                q = quantize(latent, "round")
                img, _ = decode(q.values.astype(np.float64), codec)
                rebuilt.append(img)
            in_process = patches.reassemble(grid, rebuilt)
            assert np.array_equal(through_file, in_process)
            checked += 1
        _ok(5, "pipeline equivalence",
            f"({checked} random images, bitwise identical through the file)")


class TestCriterion6RateAccounting:
    def test_reported_bpp_is_exact(self, toy_multi):
        rng = np.random.default_rng(66)
        image = rng.random((300, 520, 3))
        stream = bs.compress_image(image, toy_multi.codec)
        n_pixels = stream.grid.rows * stream.grid.cols * 256 * 256
        assert stream.file_bpp() == len(stream.to_bytes()) * 8.0 / n_pixels
        assert stream.payload_bpp() == \
            sum(len(p) for p in stream.payloads) * 8.0 / n_pixels

    def test_noise_vs_round_rate_gap(self, toy_multi):
        codec = toy_multi.codec
        rng = np.random.default_rng(67)
        gaps = []
        for image in held_out_images(4):
            latent, _ = encode(image, codec)
            noisy = latent.values + rng.uniform(-0.5, 0.5, latent.values.shape)
            rate_noise = rate_bits(noisy, codec.prior)
            rounded = quantize(latent, "round")
            rate_round = rate_bits(rounded.values.astype(np.float64), codec.prior)
            gaps.append(abs(rate_noise - rate_round) / rate_round)
        mean_gap = float(np.mean(gaps))
        assert mean_gap <= 0.1
        _ok(6, "rate accounting",
            f"(bpp exact; held-out noise/round gap {mean_gap:.4f} <= 0.1)")


class TestCriterion7StructuralInvariants:
    def test_softmax_rows(self):
        rng = np.random.default_rng(77)
        _, w = attention(rng.normal(size=(20, 8)) * 4,
                         rng.normal(size=(30, 8)) * 4,
                         rng.normal(size=(30, 8)), scale=0.35)
        np.testing.assert_allclose(w.value.sum(axis=-1), 1.0, atol=1e-5)
        assert w.value.min() >= 0.0

    def test_residual_identities(self):
        rng = np.random.default_rng(78)
        x = rng.normal(size=(5, 8))
        for mode in ("pre", "off"):
            blk = BlockParams.zeros(8, 6, heads=2, norm_mode=mode)
            out = decoder_block(ad.constant(x), ad.constant(rng.normal(size=(4, 6))),
                                blk)
            assert np.array_equal(out.value, x)
        p = MhaParams.zeros(8, 8, heads=2)
        from qpf.attention import multi_head_attention
        assert np.array_equal(
            multi_head_attention(ad.constant(x), ad.constant(x), p).value, x)

    def test_patch_and_tile_round_trips(self):
        rng = np.random.default_rng(79)
        img = rng.random((256, 256, 3))
        assert np.array_equal(patches.unpatchify(patches.patchify(img)), img)
        tok = rng.random((256, 768))
        assert np.array_equal(patches.patchify(patches.unpatchify(tok)), tok)
        big = rng.random((600, 700, 3))
        grid, tiles = patches.tile_image(big)
        assert np.array_equal(patches.reassemble(grid, tiles),
                              patches.center_crop(big))

    def test_pca_ordering_and_oracle(self):
        rng = np.random.default_rng(80)
        x = rng.normal(size=(8, 5)) * [4, 2, 1, 0.3, 0.1]
        meta = analysis.fit_meta_queries(x)
        ev = meta.explained_variance
        assert ev[0] >= ev[1] >= ev[2] > 0
        c = x - x.mean(axis=0)
        evals = np.linalg.eigh(c.T @ c / (x.shape[0] - 1))[0][::-1]
        np.testing.assert_allclose(ev, evals[:3], atol=1e-9)
        _ok(7, "structural invariants",
            "(softmax rows, residual identities, exact round trips, PCA order)")


class TestCriterion8AnalysisToolkit:
    def test_projection_closed_forms(self):
        meta = analysis.fit_meta_queries(
            np.random.default_rng(88).normal(size=(5, 8)) * [5, 3, 2, 1, 1, 1, 1, 1])
        from qpf.attention import AttentionRecord
        one_hot = np.zeros((4, 5))
        perm = [2, 0, 4, 1]
        one_hot[np.arange(4), perm] = 1.0
        rec = AttentionRecord(layer=0, head=0, role="cross", weights=one_hot)
        np.testing.assert_array_equal(
            analysis.meta_projection([rec], meta, 0), meta.projected[perm])
        uniform = AttentionRecord(layer=0, head=0, role="cross",
                                  weights=np.full((6, 5), 0.2))
        np.testing.assert_allclose(
            analysis.meta_projection([uniform], meta, 0),
            np.tile(meta.projected.mean(axis=0), (6, 1)), atol=1e-12)
        _ok(8, "analysis toolkit (closed forms)",
            "(one-hot and uniform attention projections exact)")

    def test_max_attention_coverage(self, toy_multi):
        """Every patch should exceed the uniform 1/256 baseline somewhere in
        the captured max-attention map.

        Known red at toy width: 16 attention rows (4 queries x 2 layers x 2
        heads) cannot robustly tile 256 patches strictly above uniform.
        Lightly trained toy variants miss the baseline by ~1% (and cross it
        under ~1e-4 hyperparameter jitter); variants trained far enough to
        carry real content in the rounded code concentrate attention and
        drive the floor to ~0. The property genuinely emerges with
        attention-row count at larger scale, so the assertion is kept at its
        stated tolerance rather than weakened or tuned into a hairline pass.
        """
        worst = 1.0
        for image in toy_multi.images:
            _, records = encode(image, toy_multi.codec, capture=True)
            heat = analysis.attention_heatmap(records, analysis.HeatmapSpec("max"))
            worst = min(worst, float(heat.grid.min()))
        assert worst > 1.0 / 256.0, (
            f"coverage floor {worst:.6f} <= uniform baseline {1/256:.6f} "
            f"(16 toy attention rows cannot tile 256 patches)")
        _ok(8, "analysis toolkit (coverage)",
            f"(coverage min {worst:.5f} > {1/256:.5f})")

    def test_ablation_zero_for_identity_model(self):
        cfg = ModelConfig(embed_dim=8, n_queries=4, depth=1, heads=2)
        codec = zero_blocks(init_codec(cfg, seed=8))
        imgs = [np.random.default_rng(89).random((256, 256, 3))]
        study = analysis.query_ablation_study(imgs, codec, query_index=2)
        assert np.all(study.mean_error_map == 0.0)

    def test_ablation_nonzero_for_trained_model(self, toy_multi):
        study = analysis.query_ablation_study(
            toy_multi.images[:2], toy_multi.codec, query_index=0,
            keep_reconstructions=False)
        assert study.mean_error_map.max() > 0.0
        _ok(8, "analysis toolkit (ablation)",
            "(error map zero for identity model, nonzero for trained model)")
