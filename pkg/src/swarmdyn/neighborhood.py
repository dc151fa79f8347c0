"""Spatiotemporal neighborhood system.

Spatial neighbors come from the generalized Voronoi partition of each frame:
every pixel is owned by the element whose matte (as a point set) is nearest
in exact Euclidean distance, ties going to the lower element id. The
"neighborness" weight of an adjacent cell pair is the shared boundary length
(counted in 4-adjacent pixel pairs) divided by the mean distance of the
boundary pixels to the two mattes.

Temporal neighbors follow an element's correspondence chain backward, up to
the AR window length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import ElementMatte, SwarmLayout


def _distance_stack(
    mattes: dict[int, ElementMatte], shape: tuple[int, int]
) -> tuple[list[int], np.ndarray, np.ndarray]:
    """Per-element exact EDT to the matte point set, plus integer squared EDT."""
    ids = sorted(mattes)
    dists = np.empty((len(ids), *shape), dtype=np.float64)
    for k, i in enumerate(ids):
        mask = mattes[i].to_mask(shape)
        if not mask.any():
            raise ValueError(f"element {i} has an empty matte")
        dists[k] = ndimage.distance_transform_edt(~mask)
    # squared distances are integers on a unit grid; exact tie comparisons
    sq = np.rint(dists * dists).astype(np.int64)
    return ids, dists, sq


def voronoi_partition(
    mattes: dict[int, ElementMatte], shape: tuple[int, int]
) -> np.ndarray:
    """Label map assigning every pixel to its nearest matte (lower id wins ties)."""
    ids, _, sq = _distance_stack(mattes, shape)
    owners = np.argmin(sq, axis=0)  # first minimum = lowest id
    labels = np.array(ids, dtype=np.int64)[owners]
    return labels


def neighborness_weights(
    labels: np.ndarray,
    mattes: dict[int, ElementMatte],
    _dists: np.ndarray | None = None,
    _ids: list[int] | None = None,
) -> dict[tuple[int, int], float]:
    """Weights w(i, j) = L / D for Voronoi-adjacent pairs, keyed (i, j) with i < j.

    L counts 4-adjacent pixel pairs labeled (i, j); D is the mean, over the
    distinct pixels of those pairs, of (dist to matte i + dist to matte j) / 2.
    Pairs without shared boundary are simply absent (weight zero).
    """
    if _dists is None or _ids is None:
        _ids, _dists, _ = _distance_stack(mattes, labels.shape)
    index_of = {i: k for k, i in enumerate(_ids)}

    pair_pixels: dict[tuple[int, int], set[tuple[int, int]]] = {}
    pair_counts: dict[tuple[int, int], int] = {}

    def _gather(a_lab, b_lab, a_coords, b_coords):
        diff = a_lab != b_lab
        la, lb = a_lab[diff], b_lab[diff]
        ca = a_coords[0][diff], a_coords[1][diff]
        cb = b_coords[0][diff], b_coords[1][diff]
        for k in range(la.size):
            i, j = int(la[k]), int(lb[k])
            key = (i, j) if i < j else (j, i)
            pair_counts[key] = pair_counts.get(key, 0) + 1
            pixels = pair_pixels.setdefault(key, set())
            pixels.add((int(ca[0][k]), int(ca[1][k])))
            pixels.add((int(cb[0][k]), int(cb[1][k])))

    h, w = labels.shape
    yy, xx = np.mgrid[0:h, 0:w]
    _gather(
        labels[:, :-1], labels[:, 1:], (yy[:, :-1], xx[:, :-1]), (yy[:, 1:], xx[:, 1:])
    )
    _gather(
        labels[:-1, :], labels[1:, :], (yy[:-1, :], xx[:-1, :]), (yy[1:, :], xx[1:, :])
    )

    weights = {}
    for (i, j), count in pair_counts.items():
        pixels = pair_pixels[(i, j)]
        rows = np.array([p[0] for p in sorted(pixels)])
        cols = np.array([p[1] for p in sorted(pixels)])
        di = _dists[index_of[i], rows, cols]
        dj = _dists[index_of[j], rows, cols]
        mean_dist = float(np.mean((di + dj) / 2.0))
        weights[(i, j)] = count / mean_dist
    return weights


@dataclass(frozen=True)
class NeighborhoodSystem:
    """Immutable spatial/temporal neighbor structure for one layout.

    weights[t][(i, j)] with i < j holds the frame-t neighborness of the pair;
    gamma_s[(t, i)] lists i's Voronoi neighbors in frame t; gamma_t[(t, i)]
    lists (s, i) for the window of previous frames reachable along the
    element's chain, newest first.
    """

    window: int
    weights: dict[int, dict[tuple[int, int], float]]
    gamma_s: dict[tuple[int, int], tuple[int, ...]]
    gamma_t: dict[tuple[int, int], tuple[tuple[int, int], ...]]

    def weight(self, t: int, i: int, j: int) -> float:
        key = (i, j) if i < j else (j, i)
        return self.weights.get(t, {}).get(key, 0.0)

    def quadruples(self) -> list[tuple[int, int, int, float]]:
        """Sparse (t, i, j, w) rows, each unordered pair once, sorted."""
        rows = []
        for t in sorted(self.weights):
            for (i, j), w in sorted(self.weights[t].items()):
                rows.append((t, i, j, w))
        return rows


def build_neighborhoods(
    layout: SwarmLayout, window: int, shape: tuple[int, int] | None = None
) -> NeighborhoodSystem:
    """Voronoi adjacency per frame plus chain-truncated temporal windows."""
    if window < 1:
        raise ValueError("temporal window must be at least 1")
    if shape is None:
        h = max(m.max_extent()[0] for m in layout.mattes.values())
        w = max(m.max_extent()[1] for m in layout.mattes.values())
        shape = (h, w)

    weights: dict[int, dict[tuple[int, int], float]] = {}
    gamma_s: dict[tuple[int, int], tuple[int, ...]] = {}
    for t in range(1, layout.frames + 1):
        ids = layout.elements_at(t)
        if not ids:
            weights[t] = {}
            continue
        frame_mattes = {i: layout.mattes[(t, i)] for i in ids}
        if len(ids) == 1:
            weights[t] = {}
            gamma_s[(t, ids[0])] = ()
            continue
        id_list, dists, sq = _distance_stack(frame_mattes, shape)
        owners = np.argmin(sq, axis=0)
        labels = np.array(id_list, dtype=np.int64)[owners]
        wmap = neighborness_weights(labels, frame_mattes, _dists=dists, _ids=id_list)
        weights[t] = wmap
        neighbor_sets: dict[int, set[int]] = {i: set() for i in ids}
        for (i, j) in wmap:
            neighbor_sets[i].add(j)
            neighbor_sets[j].add(i)
        for i in ids:
            gamma_s[(t, i)] = tuple(sorted(neighbor_sets[i]))

    gamma_t: dict[tuple[int, int], tuple[tuple[int, int], ...]] = {}
    links = layout.links
    for (t, i) in layout.mattes:
        past = []
        s = t - 1
        while s >= 1 and t - s <= window and ((s, i), (s + 1, i)) in links:
            past.append((s, i))
            s -= 1
        gamma_t[(t, i)] = tuple(past)

    return NeighborhoodSystem(window=window, weights=weights, gamma_s=gamma_s, gamma_t=gamma_t)
