"""Dual-stream knowledge-preserving hashing for video retrieval.

A from-scratch NumPy implementation: a teacher transformer trained on
masked-frame reconstruction, a Gaussian-adaptive anchor similarity graph
distilled from its embeddings, a dual-stream student whose hash head emits
one binary code per video while a temporal head absorbs reconstruction
detail, and a packed-bit Hamming retrieval/evaluation harness. Every
backward pass is hand-written and gated by finite-difference checks.
"""

from .codes import BinaryCode, pack_bits, unpack_bits
from .config import RunConfig
from .encoder import EncoderConfig, EncoderParams, VisualEmbeddings, encode_backward, encode_forward
from .graph import (
    AnchorSet,
    GaussianThresholds,
    PairSample,
    SignedGraph,
    SparseAffinity,
    adjacency_row,
    build_affinity,
    build_signed_graph,
    kmeans,
    row_thresholds,
    sample_pairs,
    sign_row,
)
from .numerics import GradCheckReport, finite_diff_check, matmul, row_softmax
from .pipeline import ablation_suite, run_pipeline
from .retrieval import CodeIndex, RankedList, hamming, map_at_k, pr_curve, query_topk
from .student import (
    LossWeights,
    StudentParams,
    bsim_loss,
    student_forward,
    student_recon_loss,
    train_student,
    tsim_loss,
)
from .synth import SynthConfig, generate_synthetic
from .teacher import TeacherParams, teacher_forward, teacher_recon_loss, train_teacher, video_code_from_frames

__version__ = "0.1.0"

__all__ = [
    "AnchorSet", "BinaryCode", "CodeIndex", "EncoderConfig", "EncoderParams",
    "GaussianThresholds", "GradCheckReport", "LossWeights", "PairSample",
    "RankedList", "RunConfig", "SignedGraph", "SparseAffinity", "StudentParams",
    "SynthConfig", "TeacherParams", "VisualEmbeddings", "ablation_suite",
    "adjacency_row", "bsim_loss", "build_affinity", "build_signed_graph",
    "encode_backward", "encode_forward", "finite_diff_check", "generate_synthetic",
    "hamming", "kmeans", "map_at_k", "matmul", "pack_bits", "pr_curve",
    "query_topk", "row_softmax", "row_thresholds", "run_pipeline", "sample_pairs",
    "sign_row", "student_forward", "student_recon_loss", "teacher_forward",
    "teacher_recon_loss", "train_student", "train_teacher", "tsim_loss",
    "unpack_bits", "video_code_from_frames",
]
