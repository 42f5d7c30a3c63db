"""Single-block, single-head transformer encoder with explicit backward.

Maps an M x D matrix of per-frame features to M visual embeddings of width
``model_dim``. Architecture, per video:

    h   = proj(x)                      # D -> model_dim, per frame
    h   = mask_embed at masked rows    # cloze mode only; replaces content
    h0  = h + pos_embed
    h1  = h0 + W_o(softmax(Q K^T / sqrt(d)) V)     on LN(h0)
    out = h1 + FFN(LN(h1))             # FFN = W2 gelu(W1 .)

Pre-norm residuals; attention rows are a probability simplex; the embedding
mean is the plain row average. Forward caches every intermediate needed by
:func:`encode_backward`, and the backward is verified against central finite
differences in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ShapeError, StaleCacheError

_LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


@dataclass
class EncoderConfig:
    frame_count: int
    input_dim: int
    model_dim: int = 256
    ffn_dim: int | None = None

    def __post_init__(self):
        if self.ffn_dim is None:
            self.ffn_dim = 2 * self.model_dim
        for name in ("frame_count", "input_dim", "model_dim", "ffn_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class EncoderParams:
    """All learnable tensors of the encoder block.

    The same class doubles as a gradient accumulator (see :meth:`zeros`).
    ``version`` is bumped by trainers after each in-place optimizer step so
    that stale forward caches can be rejected.
    """

    w_in: np.ndarray
    b_in: np.ndarray
    e_pos: np.ndarray
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray
    b_o: np.ndarray
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    w_f1: np.ndarray
    b_f1: np.ndarray
    w_f2: np.ndarray
    b_f2: np.ndarray
    version: int = 0

    TENSOR_FIELDS = (
        "w_in", "b_in", "e_pos", "w_q", "w_k", "w_v", "w_o", "b_o",
        "ln1_g", "ln1_b", "ln2_g", "ln2_b", "w_f1", "b_f1", "w_f2", "b_f2",
    )

    @classmethod
    def init(cls, cfg: EncoderConfig, rng: np.random.Generator) -> "EncoderParams":
        m, d_in, d, f = cfg.frame_count, cfg.input_dim, cfg.model_dim, cfg.ffn_dim
        return cls(
            w_in=_uniform(rng, (d_in, d), d_in),
            b_in=_uniform(rng, d, d_in),
            e_pos=_uniform(rng, (m, d), d),
            w_q=_uniform(rng, (d, d), d),
            w_k=_uniform(rng, (d, d), d),
            w_v=_uniform(rng, (d, d), d),
            w_o=_uniform(rng, (d, d), d),
            b_o=_uniform(rng, d, d),
            ln1_g=np.ones(d),
            ln1_b=np.zeros(d),
            ln2_g=np.ones(d),
            ln2_b=np.zeros(d),
            w_f1=_uniform(rng, (d, f), d),
            b_f1=_uniform(rng, f, d),
            w_f2=_uniform(rng, (f, d), f),
            b_f2=_uniform(rng, d, f),
        )

    @classmethod
    def zeros(cls, cfg: EncoderConfig) -> "EncoderParams":
        m, d_in, d, f = cfg.frame_count, cfg.input_dim, cfg.model_dim, cfg.ffn_dim
        z = np.zeros
        return cls(
            w_in=z((d_in, d)), b_in=z(d), e_pos=z((m, d)),
            w_q=z((d, d)), w_k=z((d, d)), w_v=z((d, d)),
            w_o=z((d, d)), b_o=z(d),
            ln1_g=z(d), ln1_b=z(d), ln2_g=z(d), ln2_b=z(d),
            w_f1=z((d, f)), b_f1=z(f), w_f2=z((f, d)), b_f2=z(d),
        )

    def config(self) -> EncoderConfig:
        return EncoderConfig(
            frame_count=self.e_pos.shape[0],
            input_dim=self.w_in.shape[0],
            model_dim=self.w_in.shape[1],
            ffn_dim=self.w_f1.shape[1],
        )

    def as_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {prefix + name: getattr(self, name) for name in self.TENSOR_FIELDS}

    @classmethod
    def from_dict(cls, d: dict[str, np.ndarray], prefix: str = "") -> "EncoderParams":
        kwargs = {}
        for name in cls.TENSOR_FIELDS:
            arr = np.asarray(d[prefix + name], dtype=np.float64)
            kwargs[name] = arr.reshape(-1) if name.startswith(("b_", "ln")) else arr
        return cls(**kwargs)

    def copy(self) -> "EncoderParams":
        kwargs = {name: getattr(self, name).copy() for name in self.TENSOR_FIELDS}
        return EncoderParams(**kwargs, version=self.version)

    def add_(self, other: "EncoderParams") -> None:
        for name in self.TENSOR_FIELDS:
            getattr(self, name).__iadd__(getattr(other, name))

    def add_scaled_(self, other: "EncoderParams", c: float) -> None:
        for name in self.TENSOR_FIELDS:
            getattr(self, name).__iadd__(c * getattr(other, name))

    def scale_(self, c: float) -> None:
        for name in self.TENSOR_FIELDS:
            getattr(self, name).__imul__(c)


@dataclass
class VisualEmbeddings:
    """Per-frame encoder outputs plus their row average."""

    per_frame: np.ndarray  # (M, model_dim)
    mean: np.ndarray       # (model_dim,)

    @classmethod
    def from_frames(cls, per_frame: np.ndarray) -> "VisualEmbeddings":
        return cls(per_frame=per_frame, mean=per_frame.mean(axis=0))


@dataclass
class EncoderCache:
    params: EncoderParams
    version: int
    x: np.ndarray
    mask: tuple[int, ...]
    h_proj: np.ndarray
    h0: np.ndarray
    ln1: tuple
    n1: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    attn: np.ndarray
    ctx: np.ndarray
    h1: np.ndarray
    ln2: tuple
    n2: np.ndarray
    f1_pre: np.ndarray
    gelu_t: np.ndarray
    g1: np.ndarray


def _ln_forward(x, gain, bias):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv)


def _ln_backward(dy, gain, ln_cache):
    xhat, inv = ln_cache
    d_gain = (dy * xhat).sum(axis=0)
    d_bias = dy.sum(axis=0)
    dxhat = dy * gain
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = inv * (dxhat - m1 - xhat * m2)
    return dx, d_gain, d_bias


def _gelu_forward(x):
    t = np.tanh(_GELU_C * (x + _GELU_A * x ** 3))
    return 0.5 * x * (1.0 + t), t


def _gelu_backward(dy, x, t):
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def encode_forward(
    x: np.ndarray,
    params: EncoderParams,
    mask=None,
    mask_embed: np.ndarray | None = None,
) -> tuple[VisualEmbeddings, EncoderCache]:
    """Run the block on one video.

    ``mask`` is an optional set of frame indices; masked frames have their
    projected content replaced by ``mask_embed`` before the positional rows
    are added, so no feature content leaks through. Attention still runs
    over all M positions.
    """
    x = np.asarray(x, dtype=np.float64)
    m_frames, d_in = params.e_pos.shape[0], params.w_in.shape[0]
    if x.shape != (m_frames, d_in):
        raise ShapeError(f"expected features of shape ({m_frames}, {d_in}), got {x.shape}")
    mask = tuple(sorted(set(int(i) for i in mask))) if mask else ()
    if mask:
        if mask_embed is None:
            raise ValueError("mask given but no mask embedding")
        if mask[0] < 0 or mask[-1] >= m_frames:
            raise ShapeError(f"mask indices out of range for M={m_frames}")

    h_proj = x @ params.w_in + params.b_in
    if mask:
        h_proj = h_proj.copy()
        h_proj[list(mask)] = mask_embed
    h0 = h_proj + params.e_pos

    n1, ln1 = _ln_forward(h0, params.ln1_g, params.ln1_b)
    q = n1 @ params.w_q
    k = n1 @ params.w_k
    v = n1 @ params.w_v
    scores = (q @ k.T) / math.sqrt(params.w_q.shape[1])
    scores -= scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    attn = e / e.sum(axis=1, keepdims=True)
    ctx = attn @ v
    h1 = h0 + ctx @ params.w_o + params.b_o

    n2, ln2 = _ln_forward(h1, params.ln2_g, params.ln2_b)
    f1_pre = n2 @ params.w_f1 + params.b_f1
    g1, gelu_t = _gelu_forward(f1_pre)
    out = h1 + g1 @ params.w_f2 + params.b_f2

    cache = EncoderCache(
        params=params, version=params.version, x=x, mask=mask,
        h_proj=h_proj, h0=h0, ln1=ln1, n1=n1, q=q, k=k, v=v,
        attn=attn, ctx=ctx, h1=h1, ln2=ln2, n2=n2,
        f1_pre=f1_pre, gelu_t=gelu_t, g1=g1,
    )
    return VisualEmbeddings.from_frames(out), cache


def encode_backward(grad_out: np.ndarray, cache: EncoderCache):
    """Gradients of a scalar loss w.r.t. params, input, and mask embedding.

    ``grad_out`` is the loss gradient w.r.t. the per-frame outputs (M x
    model_dim); a gradient on the embedding *mean* must be folded in by the
    caller (add grad_mean / M to every row). Returns
    ``(param_grads, grad_x, grad_mask_embed)`` where grad_mask_embed is None
    when the forward ran unmasked.
    """
    p = cache.params
    if cache.version != p.version:
        raise StaleCacheError(
            f"cache from params version {cache.version}, params now at {p.version}"
        )
    g = EncoderParams.zeros(p.config())
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != cache.h0.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != output shape {cache.h0.shape}")

    # out = h1 + g1 @ w_f2 + b_f2
    d_h1 = grad_out.copy()
    g.w_f2 += cache.g1.T @ grad_out
    g.b_f2 += grad_out.sum(axis=0)
    d_g1 = grad_out @ p.w_f2.T
    d_f1 = _gelu_backward(d_g1, cache.f1_pre, cache.gelu_t)
    g.w_f1 += cache.n2.T @ d_f1
    g.b_f1 += d_f1.sum(axis=0)
    d_n2 = d_f1 @ p.w_f1.T
    dx2, d_g2, d_b2 = _ln_backward(d_n2, p.ln2_g, cache.ln2)
    g.ln2_g += d_g2
    g.ln2_b += d_b2
    d_h1 += dx2

    # h1 = h0 + ctx @ w_o + b_o
    d_h0 = d_h1.copy()
    g.w_o += cache.ctx.T @ d_h1
    g.b_o += d_h1.sum(axis=0)
    d_ctx = d_h1 @ p.w_o.T
    d_attn = d_ctx @ cache.v.T
    d_v = cache.attn.T @ d_ctx
    inner = (d_attn * cache.attn).sum(axis=1, keepdims=True)
    d_scores = cache.attn * (d_attn - inner)
    inv_sqrt = 1.0 / math.sqrt(p.w_q.shape[1])
    d_q = (d_scores @ cache.k) * inv_sqrt
    d_k = (d_scores.T @ cache.q) * inv_sqrt
    g.w_q += cache.n1.T @ d_q
    g.w_k += cache.n1.T @ d_k
    g.w_v += cache.n1.T @ d_v
    d_n1 = d_q @ p.w_q.T + d_k @ p.w_k.T + d_v @ p.w_v.T
    dx1, d_g1n, d_b1n = _ln_backward(d_n1, p.ln1_g, cache.ln1)
    g.ln1_g += d_g1n
    g.ln1_b += d_b1n
    d_h0 += dx1

    # h0 = (proj with mask rows replaced) + e_pos
    g.e_pos += d_h0
    d_proj = d_h0
    grad_mask_embed = None
    if cache.mask:
        rows = list(cache.mask)
        grad_mask_embed = d_proj[rows].sum(axis=0)
        d_proj = d_proj.copy()
        d_proj[rows] = 0.0
    g.w_in += cache.x.T @ d_proj
    g.b_in += d_proj.sum(axis=0)
    grad_x = d_proj @ p.w_in.T
    return g, grad_x, grad_mask_embed
