"""Independent oracle implementations used to pin expected test values.

Everything here is written from the definitions, deliberately avoiding the
library's own code paths: plain loops, exhaustive enumeration, brute-force
scans, and 1-D numerical minimization.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from swarmdyn.core import ModelParams
from swarmdyn.neighborhood import NeighborhoodSystem


# ---------------------------------------------------------------------------
# dynamics: a term-by-term re-summation of the full objective


def objective_oracle(transforms, features, nbhd: NeighborhoodSystem, params: ModelParams):
    """J summed straightforwardly from its definition, term by term."""
    d = None
    for key in transforms:
        d = features[key].shape[0]
        break
    total = 0.0
    # reconstruction + per-frame log terms
    frames = sorted({t for (t, _) in transforms})
    for t in frames:
        ids = [i for (s, i) in transforms if s == t]
        g2 = params.gamma[t - 1] ** 2
        total += d * len(ids) / 2.0 * math.log(g2)
        for i in ids:
            r = features[(t + 1, i)] - transforms[(t, i)] @ features[(t, i)]
            total += float(r @ r) / g2
    # spatial: for every transform slot (t, i), its center-to-neighbor pairs
    c_s = 0.0
    for (t, i) in transforms:
        neighbors = []
        for (a, b), w in nbhd.weights.get(t, {}).items():
            if a == i and (t, b) in transforms:
                neighbors.append((b, w))
            if b == i and (t, a) in transforms:
                neighbors.append((a, w))
        c_s += (d * d / 2.0) * len(neighbors) ** 2
        for j, w in neighbors:
            diff = transforms[(t, i)] - transforms[(t, j)]
            total += w * float(np.sum(diff * diff)) / params.sigma_s**2
    total += c_s * math.log(params.sigma_s**2)
    # temporal
    c_t = 0.0
    for (t, i) in transforms:
        rho = 0
        for (s, j) in nbhd.gamma_t.get((t, i), ()):
            if (s, j) in transforms:
                rho += 1
            else:
                break
        c_t += (d * d / 2.0) * rho * rho
        pred = np.zeros((d, d))
        for j in range(1, rho + 1):
            pred = pred + params.alpha[j - 1] * transforms[(t - j, i)]
        res = transforms[(t, i)] - pred
        total += float(np.sum(res * res)) / params.sigma_t**2
    total += c_t * math.log(params.sigma_t**2)
    return total


def random_dynamics_instance(rng, d=4, frames=5, k=3, window=2, chain_gaps=False):
    """A random consistent (features, transforms, neighborhoods, params) setup."""
    links = []
    for i in range(1, k + 1):
        start = 1
        end = frames - 1
        if chain_gaps and frames > 3:
            start = int(rng.integers(1, 3))
            end = int(rng.integers(frames - 2, frames))
        links.extend((t, i) for t in range(start, end + 1))
    features = {
        (t, i): rng.normal(size=d)
        for t in range(1, frames + 1)
        for i in range(1, k + 1)
    }
    transforms = {key: rng.normal(size=(d, d)) for key in links}
    weights = {}
    gamma_s = {}
    gamma_t = {}
    for t in range(1, frames + 1):
        wmap = {}
        for i in range(1, k + 1):
            for j in range(i + 1, k + 1):
                if rng.random() < 0.7:
                    wmap[(i, j)] = float(rng.uniform(0.2, 3.0))
        weights[t] = wmap
        for i in range(1, k + 1):
            ns = set()
            for (a, b) in wmap:
                if a == i:
                    ns.add(b)
                if b == i:
                    ns.add(a)
            gamma_s[(t, i)] = tuple(sorted(ns))
    link_set = set(links)
    for t in range(1, frames + 1):
        for i in range(1, k + 1):
            past = []
            s = t - 1
            while s >= 1 and t - s <= window and (s, i) in link_set:
                past.append((s, i))
                s -= 1
            gamma_t[(t, i)] = tuple(past)
    nbhd = NeighborhoodSystem(window=window, weights=weights, gamma_s=gamma_s, gamma_t=gamma_t)
    params = ModelParams(
        alpha=rng.normal(scale=0.6, size=window),
        sigma_s=float(rng.uniform(0.5, 2.0)),
        sigma_t=float(rng.uniform(0.5, 2.0)),
        gamma=rng.uniform(0.5, 2.0, size=frames - 1),
        window=window,
    )
    return features, transforms, nbhd, params


def finite_difference_gradient(fun, x, step):
    """Central finite differences of a scalar function of a matrix."""
    g = np.zeros_like(x)
    for a in range(x.shape[0]):
        for b in range(x.shape[1]):
            xp = x.copy()
            xm = x.copy()
            xp[a, b] += step
            xm[a, b] -= step
            g[a, b] = (fun(xp) - fun(xm)) / (2.0 * step)
    return g


def golden_section(fun, lo, hi, tol=1e-12, iters=200):
    """Golden-section minimizer of a unimodal 1-D function on [lo, hi]."""
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        if abs(b - a) < tol * (1.0 + abs(a) + abs(b)):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = fun(d)
    return (a + b) / 2.0


def minimize_scalar_grid(fun, lo, hi, coarse=200):
    """Coarse grid scan then golden-section refinement around the best cell."""
    xs = np.linspace(lo, hi, coarse)
    vals = [fun(x) for x in xs]
    k = int(np.argmin(vals))
    a = xs[max(0, k - 1)]
    b = xs[min(coarse - 1, k + 1)]
    return golden_section(fun, a, b)


# ---------------------------------------------------------------------------
# neighborhoods: brute-force scans


def brute_force_voronoi(masks: dict[int, np.ndarray]) -> np.ndarray:
    """Per-pixel nearest-matte-pixel scan with lower-id tie break."""
    ids = sorted(masks)
    shape = masks[ids[0]].shape
    coords = {
        i: np.argwhere(masks[i]) for i in ids
    }
    labels = np.zeros(shape, dtype=np.int64)
    for y in range(shape[0]):
        for x in range(shape[1]):
            best_id, best_d = None, None
            for i in ids:
                pts = coords[i]
                dd = np.min((pts[:, 0] - y) ** 2 + (pts[:, 1] - x) ** 2)
                if best_d is None or dd < best_d:
                    best_id, best_d = i, dd
            labels[y, x] = best_id
    return labels


def brute_force_matte_distance(mask: np.ndarray, y: int, x: int) -> float:
    pts = np.argwhere(mask)
    return float(np.sqrt(np.min((pts[:, 0] - y) ** 2 + (pts[:, 1] - x) ** 2)))


# ---------------------------------------------------------------------------
# DTW: exhaustive enumeration of monotone warping paths


def dtw_brute_force(cost: np.ndarray) -> float:
    """Minimum path cost over all monotone paths with steps (1,0),(0,1),(1,1)."""
    n, m = cost.shape
    best = [math.inf]

    def walk(a, b, acc):
        acc += cost[a, b]
        if acc >= best[0]:
            return
        if a == n - 1 and b == m - 1:
            best[0] = acc
            return
        if a + 1 < n:
            walk(a + 1, b, acc)
        if b + 1 < m:
            walk(a, b + 1, acc)
        if a + 1 < n and b + 1 < m:
            walk(a + 1, b + 1, acc)

    walk(0, 0, 0.0)
    return best[0]


# ---------------------------------------------------------------------------
# min-cut labeling: exhaustive enumeration


def labeling_energy_brute_force(graph, tau: float, lam: float) -> float:
    """Minimum energy over all 2^n valid/invalid labelings."""
    n = len(graph.nodes)
    best = math.inf
    for bits in itertools.product([False, True], repeat=n):
        energy = 0.0
        for node in graph.nodes:
            energy += (1.0 - node.s1) if bits[node.index] else (node.s1 - tau)
        for a, b, s2 in graph.edges:
            if bits[a] != bits[b]:
                energy += lam * max(0.0, s2)
        best = min(best, energy)
    return best


# ---------------------------------------------------------------------------
# AR coefficients: direct least squares on the stacked linear system


def ar_least_squares(transforms, nbhd: NeighborhoodSystem, window: int) -> np.ndarray:
    """Stack vec(A_{t-j}) as design columns and solve by lstsq directly."""
    rows = []
    targets = []
    for (t, i) in sorted(transforms):
        rho = 0
        for (s, j) in nbhd.gamma_t.get((t, i), ()):
            if (s, j) in transforms:
                rho += 1
            else:
                break
        if rho < 1:
            continue
        d = transforms[(t, i)].shape[0]
        design = np.zeros((d * d, window))
        for j in range(1, rho + 1):
            design[:, j - 1] = transforms[(t - j, i)].ravel()
        rows.append(design)
        targets.append(transforms[(t, i)].ravel())
    design = np.vstack(rows)
    target = np.concatenate(targets)
    return np.linalg.lstsq(design, target, rcond=1e-8)[0]


# ---------------------------------------------------------------------------
# rasterization: supersampled area measurement


def supersampled_pixel_count(inside_fn, bbox, factor=4) -> float:
    """Area in pixel units measured on a factor x factor subgrid."""
    (x0, x1), (y0, y1) = bbox
    xs = np.arange(x0, x1, 1.0 / factor)
    ys = np.arange(y0, y1, 1.0 / factor)
    xx, yy = np.meshgrid(xs, ys)
    return float(inside_fn(xx, yy).sum()) / factor**2
