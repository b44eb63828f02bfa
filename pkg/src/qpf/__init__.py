"""Attention-only learned image codec.

Pixels are split into patch tokens; a small set of learned queries aggregates
them through cross-attention into a latent code, which is quantized, modeled
by a per-channel factorized prior, and range-coded into a compact bitstream.
Decoding mirrors the path with learned patch prototypes. Everything runs on
a NumPy reverse-mode autodiff tape, so training, gradient checks, and
inference share one implementation.
"""

from .analysis import (AblationStudy, Heatmap, HeatmapSpec, MetaQueries,
                       apply_colormap,
                       attention_heatmap, fit_meta_queries, meta_projection,
                       pca_meta_queries, project_decoder_attention,
                       project_onto_basis, query_ablation_study,
                       render_meta_projection)
from .attention import (AttentionRecord, BlockParams, LinearParams, MhaParams,
                        attention, decoder_block, multi_head_attention,
                        self_attention)
from .bitstream import (Bitstream, compress_image, decompress_image,
                        latent_to_symbols, symbols_to_latent)
from .errors import (BitstreamError, ConfigError, DigestMismatchError,
                     EncodeError, InvalidInputError, LatentRangeError,
                     MissingWeightsError, QpfError, ShapeError,
                     TrainingDivergedError)
from .metrics import (FeatureBackend, load_feature_backend, ms_ssim,
                      perceptual_distance, psnr, resize_bilinear,
                      write_random_feature_backend)
from .model import (CodecParams, LatentCode, ModelConfig, PAPER_MODEL,
                    TOY_MODEL, config_digest, decode, decode_ablated, encode,
                    init_codec, load_checkpoint, save_checkpoint)
from .patches import (TileGrid, add_positional_encoding, center_crop,
                      load_image, patchify, reassemble, save_image,
                      tile_image, unpatchify)
from .prior import (CdfTables, FactorizedPrior, bits_per_pixel,
                    build_cdf_tables, latent_support, likelihood, quantize,
                    rate_bits)
from .rangecoder import range_decode, range_encode
from .training import (ImageSampler, MetricReport, TOY_TRAIN, TrainConfig,
                       evaluate, rd_loss, train)

__version__ = "0.1.0"
