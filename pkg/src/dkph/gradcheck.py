"""End-to-end finite-difference verification of both training objectives.

The checks run the full losses in "relaxed" binarization mode, where
sign(tanh(z)) is replaced by tanh(z). In that mode the implemented backward
passes are the exact gradients, so central differences must agree to
~1e-4 in double precision. The sign layer itself is excluded by
construction: its true derivative is zero almost everywhere, and training
deliberately substitutes the straight-through estimator for it, so finite
differences can neither see it nor certify it. Everything else - encoder,
both heads, decoder, and all three loss terms - is covered.
"""

from __future__ import annotations

import numpy as np

from .encoder import EncoderConfig, EncoderParams
from .graph import build_affinity, build_signed_graph, default_bandwidth, kmeans, sample_pairs
from .numerics import GradCheckReport, finite_diff_check
from .student import LossWeights, StudentParams, batch_gradients
from .teacher import TeacherParams, teacher_backward, teacher_forward, teacher_recon_loss


def student_gradient_check(n_videos: int = 6, frames: int = 4, feat_dim: int = 6,
                           model_dim: int = 8, code_bits: int = 8, seed: int = 0,
                           step: float = 1e-5) -> GradCheckReport:
    """Check d(recon + gamma1*bsim + gamma2*tsim)/d(theta) for every tensor.

    The pair set and anchor centers come from a real graph build over the
    toy features, then stay frozen while the parameters are swept.
    """
    rng = np.random.default_rng(seed)
    cfg = EncoderConfig(frame_count=frames, input_dim=feat_dim,
                        model_dim=model_dim, ffn_dim=2 * model_dim)
    features = rng.normal(size=(n_videos, frames, feat_dim))
    params = StudentParams.init(cfg, rng, code_bits)
    weights = LossWeights()

    # frozen supervision: anchors and signed pairs over the raw feature means
    points = features.mean(axis=1) @ rng.normal(size=(feat_dim, model_dim))
    anchors = kmeans(points, 3, seed=seed)
    z = build_affinity(points, anchors, p=2, alpha=default_bandwidth(points, anchors, 2))
    graph = build_signed_graph(z, lambda1=0.5, lambda2=2.0)
    pairs = sample_pairs(graph, list(range(n_videos)), count=n_videos, seed=seed + 1)

    def anchor_of(v: int) -> np.ndarray:
        return anchors.centers[anchors.assignments[v]]

    batch = list(range(n_videos))

    def loss(_):
        losses, _g = batch_gradients(features, batch, pairs, params, weights,
                                     anchor_of, binarize="relaxed")
        return losses["total"]

    _, grads = batch_gradients(features, batch, pairs, params, weights,
                               anchor_of, binarize="relaxed")
    names = [f"encoder.{n}" for n in EncoderParams.TENSOR_FIELDS] + list(StudentParams.EXTRA_FIELDS)
    pd, gd = params.as_dict(), grads.as_dict()
    return finite_diff_check(loss, [pd[n] for n in names], [gd[n] for n in names], step=step)


def teacher_gradient_check(frames: int = 4, feat_dim: int = 6, model_dim: int = 8,
                           code_bits: int = 8, seed: int = 0,
                           step: float = 1e-5) -> GradCheckReport:
    """Check the masked-reconstruction gradient for every teacher tensor."""
    rng = np.random.default_rng(seed)
    cfg = EncoderConfig(frame_count=frames, input_dim=feat_dim,
                        model_dim=model_dim, ffn_dim=2 * model_dim)
    x = rng.normal(size=(frames, feat_dim))
    params = TeacherParams.init(cfg, rng, code_bits)
    mask = (0, frames - 1)

    def loss(_):
        fwd = teacher_forward(x, params, mask=mask, binarize="relaxed")
        return teacher_recon_loss(x, fwd.recon, mask)

    fwd = teacher_forward(x, params, mask=mask, binarize="relaxed")
    grads = teacher_backward(x, fwd, params)
    names = [f"encoder.{n}" for n in EncoderParams.TENSOR_FIELDS] + list(TeacherParams.EXTRA_FIELDS)
    pd, gd = params.as_dict(), grads.as_dict()
    return finite_diff_check(loss, [pd[n] for n in names], [gd[n] for n in names], step=step)
