"""Gaussian-adaptive anchor similarity graph over frozen teacher embeddings.

Pipeline: k-means anchors over the N video embeddings, sparse affinity Z
(each video keeps softmax weights over its p nearest centers), streaming
rows of the normalized adjacency A = Z diag(Z^T 1)^-1 Z^T, per-row
mean/std thresholds PT = mu + lambda1*eps and NT = mu - lambda2*eps, and a
signed sparse graph:

    +1  if A_ij >= PT_i
    -1  if NT_i < A_ij < mu_i      (hard negatives: just below the mean)
     0  otherwise

Thresholds are computed over the *nonzero* off-diagonal entries of the row;
with sparse Z most pairs share no anchor and sit at exactly 0, and folding
those zeros in would collapse the mean. Rows with fewer than two nonzero
entries are marked isolated and excluded from pair sampling.

An N x N matrix is never materialized: each row touches only videos that
share an anchor with the query row.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateAnchorError, SamplingError

logger = logging.getLogger(__name__)


@dataclass
class AnchorSet:
    centers: np.ndarray       # (N_c, d)
    assignments: np.ndarray   # (N,) nearest-center index per point
    inertia: float


def kmeans(points: np.ndarray, n_centers: int, seed: int = 0, max_iters: int = 100) -> AnchorSet:
    """Lloyd's algorithm with k-means++ seeding.

    Empty clusters are re-seeded to the point currently farthest from its
    center, which never increases the inertia. Stops at an assignment
    fixpoint or after ``max_iters``.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if n < n_centers:
        raise ValueError(f"need at least {n_centers} points, got {n}")
    rng = np.random.default_rng(seed)

    centers = _kmeans_pp_init(pts, n_centers, rng)
    assignments = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iters):
        d2 = _sq_dists(pts, centers)
        new_assign = d2.argmin(axis=1)
        # re-seed empty clusters from the worst-served points
        victim_order = None
        for c in range(n_centers):
            if not np.any(new_assign == c):
                if victim_order is None:
                    victim_order = np.argsort(-d2[np.arange(n), new_assign], kind="stable")
                for v in victim_order:
                    if np.count_nonzero(new_assign == new_assign[v]) > 1 or new_assign[v] == c:
                        centers[c] = pts[v]
                        new_assign[v] = c
                        break
        if np.array_equal(new_assign, assignments):
            break
        assignments = new_assign
        for c in range(n_centers):
            members = pts[assignments == c]
            if members.size:
                centers[c] = members.mean(axis=0)
    d2 = _sq_dists(pts, centers)
    final_assign = d2.argmin(axis=1)
    inertia = float(d2[np.arange(n), final_assign].sum())
    return AnchorSet(centers=centers, assignments=final_assign, inertia=inertia)


def _kmeans_pp_init(pts: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = pts.shape[0]
    centers = np.empty((k, pts.shape[1]), dtype=np.float64)
    centers[0] = pts[rng.integers(n)]
    d2 = ((pts - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)  # all points coincide with chosen centers
        centers[i] = pts[idx]
        d2 = np.minimum(d2, ((pts - centers[i]) ** 2).sum(axis=1))
    return centers


def _sq_dists(pts: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = pts[:, None, :] - centers[None, :, :]
    return (diff * diff).sum(axis=2)


@dataclass
class SparseAffinity:
    """Per-video affinity to its p nearest anchors; rows sum to 1."""

    center_idx: np.ndarray    # (N, p) selected center per slot
    weights: np.ndarray       # (N, p) softmax weights, nonnegative
    alpha: float
    n_centers: int
    center_mass: np.ndarray = field(init=False)      # (N_c,) column sums of Z
    selectors: list = field(init=False)              # center -> array of video indices

    def __post_init__(self):
        mass = np.zeros(self.n_centers)
        np.add.at(mass, self.center_idx.reshape(-1), self.weights.reshape(-1))
        self.center_mass = mass
        sel = [[] for _ in range(self.n_centers)]
        for vid in range(self.center_idx.shape[0]):
            for k in self.center_idx[vid]:
                sel[k].append(vid)
        self.selectors = [np.array(s, dtype=np.int64) for s in sel]

    @property
    def n(self) -> int:
        return self.center_idx.shape[0]

    @property
    def p(self) -> int:
        return self.center_idx.shape[1]

    def weight_of(self, vid: int, center: int) -> float:
        slot = np.nonzero(self.center_idx[vid] == center)[0]
        return float(self.weights[vid, slot[0]]) if slot.size else 0.0


def default_bandwidth(points: np.ndarray, anchors: AnchorSet, p: int) -> float:
    """Mean distance of each point to its p-th nearest center."""
    d = np.sqrt(_sq_dists(np.asarray(points, dtype=np.float64), anchors.centers))
    d.sort(axis=1)
    return float(d[:, p - 1].mean())


def build_affinity(points: np.ndarray, anchors: AnchorSet, p: int, alpha: float) -> SparseAffinity:
    """Softmax affinity exp(-dist/alpha) over each video's p nearest centers.

    The exponent uses the plain Euclidean distance, not its square. Ties in
    the nearest-center selection break toward the lower center index.
    """
    pts = np.asarray(points, dtype=np.float64)
    n_centers = anchors.centers.shape[0]
    if not 1 <= p <= n_centers:
        raise ValueError(f"p must be in [1, {n_centers}], got {p}")
    if alpha <= 0:
        raise ValueError(f"bandwidth must be positive, got {alpha}")
    dists = np.sqrt(_sq_dists(pts, anchors.centers))
    nearest = np.argsort(dists, axis=1, kind="stable")[:, :p]  # stable = lower index wins ties
    sel = np.take_along_axis(dists, nearest, axis=1)
    logits = -(sel - sel.min(axis=1, keepdims=True)) / alpha
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    return SparseAffinity(center_idx=nearest, weights=w, alpha=alpha, n_centers=n_centers)


def adjacency_row(i: int, z: SparseAffinity) -> tuple[np.ndarray, np.ndarray]:
    """Row i of A = Z Lambda^-1 Z^T without forming the N x N matrix.

    Returns (video indices, values) sorted by index; only videos sharing at
    least one anchor with i appear (others are exactly zero).
    """
    acc: dict[int, float] = {}
    for slot in range(z.p):
        k = int(z.center_idx[i, slot])
        zik = float(z.weights[i, slot])
        if zik == 0.0:
            continue
        mass = float(z.center_mass[k])
        if mass <= 0.0:
            raise DegenerateAnchorError(k)
        for j in z.selectors[k]:
            zjk = z.weight_of(int(j), k)
            if zjk:
                acc[int(j)] = acc.get(int(j), 0.0) + zik * zjk / mass
    idx = np.array(sorted(acc), dtype=np.int64)
    vals = np.array([acc[j] for j in idx], dtype=np.float64)
    return idx, vals


@dataclass
class GaussianThresholds:
    """Per-row positive/negative cutoffs; rows with support < 2 are isolated."""

    mu: float
    eps: float
    pt: float
    nt: float
    support_count: int

    @property
    def isolated(self) -> bool:
        return self.support_count < 2


def row_thresholds(row_idx: np.ndarray, row_vals: np.ndarray, i: int,
                   lambda1: float, lambda2: float) -> GaussianThresholds:
    """Mean/population-std thresholds over the nonzero off-diagonal entries."""
    keep = (row_idx != i) & (row_vals != 0.0)
    vals = row_vals[keep]
    if vals.size < 2:
        return GaussianThresholds(mu=0.0, eps=0.0, pt=0.0, nt=0.0, support_count=int(vals.size))
    mu = float(vals.mean())
    eps = float(vals.std())  # population std
    return GaussianThresholds(mu=mu, eps=eps, pt=mu + lambda1 * eps,
                              nt=mu - lambda2 * eps, support_count=int(vals.size))


def sign_row(row_idx: np.ndarray, row_vals: np.ndarray, i: int,
             th: GaussianThresholds) -> tuple[np.ndarray, np.ndarray]:
    """Label row entries per the threshold rule; the self entry is forced 0.

    Returns (positive indices, negative indices); everything else is
    implicitly 0.
    """
    if th.isolated:
        return np.array([], dtype=np.int64), np.array([], dtype=np.int64)
    keep = row_idx != i
    idx, vals = row_idx[keep], row_vals[keep]
    pos = idx[vals >= th.pt]
    neg = idx[(th.nt < vals) & (vals < th.mu)]
    return pos, neg


@dataclass
class SignedGraph:
    positives: list      # per video: np.ndarray of +1 neighbors
    negatives: list      # per video: np.ndarray of -1 neighbors
    isolated: np.ndarray  # video indices excluded from sampling

    @property
    def n(self) -> int:
        return len(self.positives)


def build_signed_graph(z: SparseAffinity, lambda1: float, lambda2: float) -> SignedGraph:
    positives, negatives, isolated = [], [], []
    for i in range(z.n):
        idx, vals = adjacency_row(i, z)
        th = row_thresholds(idx, vals, i, lambda1, lambda2)
        if th.isolated:
            isolated.append(i)
        pos, neg = sign_row(idx, vals, i, th)
        positives.append(pos)
        negatives.append(neg)
    return SignedGraph(positives=positives, negatives=negatives,
                       isolated=np.array(isolated, dtype=np.int64))


@dataclass
class PairSample:
    i: int
    j: int
    label: int  # +1 or -1


def sample_pairs(g: SignedGraph, batch, count: int, seed) -> list[PairSample]:
    """Draw labeled pairs: fair coin for the label, then a uniform anchor
    video among batch members having edges of that label, then a uniform
    partner from that edge list.

    If one label class is absent across the whole batch, draws fall back to
    the other class (logged once); if both are absent, sampling fails.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    batch = [int(b) for b in batch]
    with_pos = [b for b in batch if g.positives[b].size]
    with_neg = [b for b in batch if g.negatives[b].size]
    if not with_pos and not with_neg:
        raise SamplingError("no positive or negative edges in this batch")

    fallbacks = 0
    out: list[PairSample] = []
    for _ in range(count):
        label = 1 if rng.random() < 0.5 else -1
        candidates = with_pos if label == 1 else with_neg
        if not candidates:
            label = -label
            candidates = with_pos if label == 1 else with_neg
            fallbacks += 1
        i = candidates[rng.integers(len(candidates))]
        edges = g.positives[i] if label == 1 else g.negatives[i]
        j = int(edges[rng.integers(edges.size)])
        out.append(PairSample(i=i, j=j, label=label))
    if fallbacks:
        logger.warning("pair sampler fell back to the other label class %d/%d times",
                       fallbacks, count)
    return out
