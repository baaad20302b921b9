"""trajcodec: discrete tokenization of continuous action trajectories.

Pipeline: percentile normalization -> fixed-length B-spline control points ->
part-grouped residual vector quantization -> byte-pair encoding, with exact
inversion of every stage after the quantizer, plus baselines and an
evaluation harness for reconstruction error and compression ratio.
"""

from .core import (
    Channel,
    Chunk,
    NormStats,
    Trajectory,
    denormalize,
    fit_norm_stats,
    normalize,
    split_chunks,
)
from .bspline import SplineConfig, basis_eval, design_matrix, knot_vector, reconstruct, ridge_fit
from .rvq import Codebook, decode_channel, encode_channel, nearest_codeword, train_epoch
from .bpe import MergeTable, bpe_decode, bpe_encode, train_merges
from .tokenizer import (
    TokenizerArtifact,
    TokenizerConfig,
    TokenLayout,
    detokenize,
    fit,
    load_artifact,
    pack_stream,
    save_artifact,
    tokenize,
)
from .evaluation import EvalReport, evaluate, mae, sweep, train_test_split
from .synth import gen_corpus

__version__ = "0.1.0"

__all__ = [
    "Channel",
    "Chunk",
    "Codebook",
    "EvalReport",
    "MergeTable",
    "NormStats",
    "SplineConfig",
    "TokenLayout",
    "TokenizerArtifact",
    "TokenizerConfig",
    "Trajectory",
    "basis_eval",
    "bpe_decode",
    "bpe_encode",
    "decode_channel",
    "denormalize",
    "design_matrix",
    "detokenize",
    "encode_channel",
    "evaluate",
    "fit",
    "fit_norm_stats",
    "gen_corpus",
    "knot_vector",
    "load_artifact",
    "mae",
    "nearest_codeword",
    "normalize",
    "pack_stream",
    "reconstruct",
    "ridge_fit",
    "save_artifact",
    "split_chunks",
    "sweep",
    "tokenize",
    "train_epoch",
    "train_merges",
    "train_test_split",
]
