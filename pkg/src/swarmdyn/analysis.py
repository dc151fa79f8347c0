"""Model evaluation and motion discrimination.

Residual curves quantify fit per frame; matrix cosine distance plus dynamic
time warping compare transform sequences of different lengths; spectral
clustering and classical MDS operate on the pairwise DTW matrix; the holdout
reconstructor replays the AR model over held-out frames against an
identity-transform baseline.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import ModelParams, SwarmModel
from .dynamics import FeatureMap, subproblem_residuals
from .errors import FaultError
from .neighborhood import NeighborhoodSystem, build_neighborhoods

logger = logging.getLogger(__name__)

_KMEANS_SEED = 12345
_KMEANS_RESTARTS = 20


# ---------------------------------------------------------------------------
# residual curves


@dataclass(frozen=True)
class ResidualReport:
    """Per-frame normalized residuals; index k corresponds to frame k + 1."""

    frames: tuple[int, ...]
    zeta_r: np.ndarray
    zeta_s: np.ndarray
    zeta_t: np.ndarray

    def rows(self) -> list[tuple[int, float, float, float]]:
        return [
            (t, float(self.zeta_r[k]), float(self.zeta_s[k]), float(self.zeta_t[k]))
            for k, t in enumerate(self.frames)
        ]


def residual_metrics(
    model: SwarmModel,
    features: FeatureMap,
    neighborhoods: NeighborhoodSystem | None = None,
) -> ResidualReport:
    """zeta_R, zeta_S, zeta_T per transform frame.

    Each element contributes sqrt(e)/||f|| (reconstruction) or
    sqrt(e)/(|neighbors| * ||A||_F) (stationarity); elements without spatial
    (resp. temporal) neighbors are left out of that metric's average.
    """
    if neighborhoods is None:
        neighborhoods = build_neighborhoods(model.layout, model.params.window)
    transforms = model.transforms
    alpha = model.params.alpha
    frames = sorted({t for (t, _) in transforms})
    zr, zs, zt = [], [], []
    for t in frames:
        ids = sorted(i for (s, i) in transforms if s == t)
        acc_r, acc_s, acc_t = [], [], []
        for i in ids:
            e_r, e_s, e_t = subproblem_residuals(
                t, i, transforms, features, neighborhoods, alpha
            )
            f_norm = float(np.linalg.norm(features[(t, i)]))
            a_norm = float(np.linalg.norm(transforms[(t, i)]))
            if f_norm > 0:
                acc_r.append(np.sqrt(e_r) / f_norm)
            n_s = len(
                [
                    j
                    for j in neighborhoods.gamma_s.get((t, i), ())
                    if (t, j) in transforms
                ]
            )
            n_t = len(
                [key for key in neighborhoods.gamma_t.get((t, i), ()) if key in transforms]
            )
            if n_s > 0 and a_norm > 0:
                acc_s.append(np.sqrt(e_s) / (n_s * a_norm))
            if n_t > 0 and a_norm > 0:
                acc_t.append(np.sqrt(e_t) / (n_t * a_norm))
        zr.append(float(np.mean(acc_r)) if acc_r else 0.0)
        zs.append(float(np.mean(acc_s)) if acc_s else 0.0)
        zt.append(float(np.mean(acc_t)) if acc_t else 0.0)
    return ResidualReport(
        frames=tuple(frames),
        zeta_r=np.array(zr),
        zeta_s=np.array(zs),
        zeta_t=np.array(zt),
    )


# ---------------------------------------------------------------------------
# distances


def transform_distance(x1: np.ndarray, x2: np.ndarray) -> float:
    """Matrix cosine distance 1 - <X1, X2> / (||X1|| ||X2||), in [0, 2]."""
    n1 = float(np.linalg.norm(x1))
    n2 = float(np.linalg.norm(x2))
    if n1 == 0.0 or n2 == 0.0:
        raise FaultError("transform distance of a zero matrix")
    val = 1.0 - float(np.sum(x1 * x2)) / (n1 * n2)
    return float(np.clip(val, 0.0, 2.0))


def dtw_cost(seq1: list[np.ndarray], seq2: list[np.ndarray]) -> float:
    """Boundary-anchored DTW with steps {(1,0), (0,1), (1,1)}.

    Cell cost is the matrix cosine distance; sequences may differ in length.
    """
    if not seq1 or not seq2:
        raise FaultError("DTW needs non-empty sequences")
    n, m = len(seq1), len(seq2)
    cost = np.empty((n, m))
    for a in range(n):
        for b in range(m):
            cost[a, b] = transform_distance(seq1[a], seq2[b])
    acc = np.full((n, m), np.inf)
    acc[0, 0] = cost[0, 0]
    for a in range(n):
        for b in range(m):
            if a == 0 and b == 0:
                continue
            best = np.inf
            if a > 0:
                best = min(best, acc[a - 1, b])
            if b > 0:
                best = min(best, acc[a, b - 1])
            if a > 0 and b > 0:
                best = min(best, acc[a - 1, b - 1])
            acc[a, b] = cost[a, b] + best
    return float(acc[n - 1, m - 1])


@dataclass(frozen=True)
class DistanceMatrix:
    labels: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (len(self.labels), len(self.labels)):
            raise ValueError("distance matrix shape does not match labels")
        if not np.allclose(v, v.T) or (np.diag(v) != 0).any() or (v < 0).any():
            raise ValueError("distance matrix must be symmetric, non-negative, zero-diagonal")
        object.__setattr__(self, "values", v)


def pairwise_dtw_matrix(model: SwarmModel, threads: int = 1) -> DistanceMatrix:
    """DTW cost between every pair of element transform sequences."""
    chains = model.chain_transforms()
    ids = sorted(chains)
    if len(ids) < 2:
        raise FaultError("need at least two chains for a distance matrix")
    n = len(ids)
    values = np.zeros((n, n))
    pairs = [(a, b) for a in range(n) for b in range(a + 1, n)]

    def cell(pair):
        a, b = pair
        return dtw_cost(chains[ids[a]], chains[ids[b]])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(cell, pairs))
    else:
        results = [cell(p) for p in pairs]
    for (a, b), val in zip(pairs, results):
        values[a, b] = values[b, a] = val
    return DistanceMatrix(labels=tuple(str(i) for i in ids), values=values)


# ---------------------------------------------------------------------------
# clustering and embedding


def _kmeans(points: np.ndarray, k: int, rng: np.random.Generator) -> tuple[np.ndarray, float]:
    """One k-means++ initialized Lloyd run; returns (labels, inertia)."""
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    closest = np.full(n, np.inf)
    for c in range(1, k):
        dist = np.sum((points - centers[c - 1]) ** 2, axis=1)
        closest = np.minimum(closest, dist)
        total = closest.sum()
        if total <= 0:
            centers[c:] = points[rng.integers(n, size=k - c)]
            break
        probs = closest / total
        centers[c] = points[rng.choice(n, p=probs)]
    labels = np.full(n, -1, dtype=int)
    for _sweep in range(100):
        dists = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(dists, axis=1)
        if (new_labels == labels).all():
            break
        labels = new_labels
        for c in range(k):
            sel = labels == c
            if sel.any():
                centers[c] = points[sel].mean(axis=0)
    inertia = float(np.sum((points - centers[labels]) ** 2))
    return labels, inertia


def spectral_cluster(dm: DistanceMatrix, k: int) -> np.ndarray:
    """Normalized-Laplacian spectral clustering of a distance matrix.

    Affinity exp(-d^2 / (2 tau^2)) with tau the median off-diagonal distance;
    rows of the bottom-k eigenvector matrix of L_sym are normalized and
    clustered by k-means (fixed-seed restarts, best inertia). Labels are
    meaningful up to permutation.
    """
    n = len(dm.labels)
    if not 2 <= k <= n:
        raise ValueError(f"k must be in 2..{n}")
    d = dm.values
    off = d[~np.eye(n, dtype=bool)]
    tau = float(np.median(off))
    if tau <= 0:
        logger.warning("all pairwise distances are zero; single-cluster result")
        return np.zeros(n, dtype=int)
    affinity = np.exp(-(d**2) / (2.0 * tau**2))
    deg = affinity.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    lap = np.eye(n) - inv_sqrt[:, None] * affinity * inv_sqrt[None, :]
    _, vecs = np.linalg.eigh(lap)
    emb = vecs[:, :k]
    norms = np.linalg.norm(emb, axis=1)
    norms[norms == 0] = 1.0
    emb = emb / norms[:, None]
    rng = np.random.default_rng(_KMEANS_SEED)
    best_labels, best_inertia = None, np.inf
    for _ in range(_KMEANS_RESTARTS):
        labels, inertia = _kmeans(emb, k, rng)
        if inertia < best_inertia:
            best_labels, best_inertia = labels, inertia
    return best_labels


def classical_mds(dm: DistanceMatrix, dim: int) -> np.ndarray:
    """Torgerson MDS: double-center -D^2/2, embed on top non-negative eigenpairs."""
    n = len(dm.labels)
    if dim > n - 1:
        raise ValueError("embedding dimension must be at most n - 1")
    d2 = dm.values**2
    center = np.eye(n) - np.ones((n, n)) / n
    b = -0.5 * center @ d2 @ center
    vals, vecs = np.linalg.eigh(b)
    order = np.argsort(vals)[::-1][:dim]
    vals = np.clip(vals[order], 0.0, None)
    return vecs[:, order] * np.sqrt(vals)[None, :]


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Chance-corrected agreement between two labelings of the same items."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise ValueError("labelings must have equal length")
    n = a.size
    cats_a, inv_a = np.unique(a, return_inverse=True)
    cats_b, inv_b = np.unique(b, return_inverse=True)
    table = np.zeros((cats_a.size, cats_b.size), dtype=np.int64)
    for x, y in zip(inv_a, inv_b):
        table[x, y] += 1

    def comb2(v):
        return v * (v - 1) / 2.0

    sum_cells = comb2(table).sum()
    sum_rows = comb2(table.sum(axis=1)).sum()
    sum_cols = comb2(table.sum(axis=0)).sum()
    expected = sum_rows * sum_cols / comb2(n)
    max_index = (sum_rows + sum_cols) / 2.0
    if max_index == expected:
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))


# ---------------------------------------------------------------------------
# holdout reconstruction


@dataclass(frozen=True)
class HoldoutReport:
    heldout: tuple[int, ...]
    residual_model: float
    residual_identity: float
    ratio: float


def _ar_rollout(
    params: ModelParams,
    history: dict[int, np.ndarray],
    steps: list[int],
    d: int,
) -> dict[int, np.ndarray]:
    """Predict transforms for `steps` (ascending), recursing on predictions."""
    known = dict(history)
    out = {}
    for t in steps:
        pred = np.zeros((d, d))
        used = 0
        for j in range(1, params.window + 1):
            if t - j in known:
                pred += params.alpha[j - 1] * known[t - j]
                used += 1
        if used == 0:
            raise FaultError(f"no transform history available before step {t}")
        out[t] = pred
        known[t] = pred
    return out


def holdout_reconstruct(
    model: SwarmModel,
    features: FeatureMap,
    heldout_frames: list[int],
) -> HoldoutReport:
    """Reconstruct held-out frames by rolling the AR model forward.

    The model must have been trained without the held-out frames. For each
    contiguous span, transforms are AR-predicted (recursively), features
    chain through the predictions, and residuals are averaged over elements
    and frames. The identity baseline repeats the last known feature vector.
    Two essentially-zero residuals report ratio 1 (both predictors perfect).
    """
    heldout = sorted(set(heldout_frames))
    if not heldout:
        raise FaultError("no held-out frames given")
    spans: list[list[int]] = [[heldout[0]]]
    for t in heldout[1:]:
        if t == spans[-1][-1] + 1:
            spans[-1].append(t)
        else:
            spans.append([t])

    chains = model.chain_transforms()
    if not chains:
        raise FaultError("model has no transforms")
    d = next(iter(model.transforms.values())).shape[0]

    res_model, res_identity = [], []
    for span in spans:
        first = span[0]
        base_t = first - 1
        for i in sorted(chains):
            history = {
                t: mat for (t, j), mat in model.transforms.items() if j == i and t < base_t + 1
            }
            if (base_t, i) not in features:
                raise FaultError(
                    f"element {i}: no features at frame {base_t} before the held-out span"
                )
            steps = list(range(base_t, span[-1]))
            try:
                predicted = _ar_rollout(model.params, history, steps, d)
            except FaultError:
                raise FaultError(
                    f"insufficient history before frame {first} (window "
                    f"{model.params.window})"
                )
            f_hat = features[(base_t, i)].copy()
            f_base = features[(base_t, i)]
            for t in span:
                f_hat = predicted[t - 1] @ f_hat
                truth = features.get((t, i))
                if truth is None:
                    continue
                norm = float(np.linalg.norm(truth))
                if norm == 0:
                    continue
                res_model.append(float(np.linalg.norm(f_hat - truth)) / norm)
                res_identity.append(float(np.linalg.norm(f_base - truth)) / norm)

    if not res_model:
        raise FaultError("no held-out features to score against")
    rm = float(np.mean(res_model))
    ri = float(np.mean(res_identity))
    if rm <= 1e-9 and ri <= 1e-9:
        ratio = 1.0
    else:
        ratio = rm / max(ri, 1e-300)
    return HoldoutReport(
        heldout=tuple(heldout), residual_model=rm, residual_identity=ri, ratio=ratio
    )


# ---------------------------------------------------------------------------
# classification


def nn_dtw_classify(
    training: list[tuple[str, list[np.ndarray]]], test_sequence: list[np.ndarray]
) -> str:
    """Label of the DTW-nearest training sequence; first occurrence wins ties."""
    if not training:
        raise FaultError("at least one training sequence is required")
    best_label, best_cost = None, np.inf
    for label, seq in training:
        cost = dtw_cost(seq, test_sequence)
        if cost < best_cost:
            best_label, best_cost = label, cost
    return best_label
