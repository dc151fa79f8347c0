"""Spatial-layout estimation from low-level segments and current dynamics.

A candidate correspondence pairs a region of frame t (a current element or an
uncovered moving segment) with a region of frame t+1 whose mask it overlaps
after shifting by its mean displacement. Nodes are scored by how well the
region's transform reconstructs the target features (s1); edges between
spatially adjacent nodes carry the cosine agreement of their transforms (s2).
Valid/invalid labeling minimizes

    E = sum_nodes U(label) + lam * sum_edges max(0, s2) * [labels differ],
    U(valid) = 1 - s1,  U(invalid) = s1 - tau

exactly by max-flow/min-cut (the pairwise term only penalizes disagreement,
so the energy is submodular). Valid nodes connected through edges or shared
regions, across space and time, merge into one element chain each.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import networkx as nx
import numpy as np
from scipy import ndimage

from .core import ElementMatte, SwarmLayout
from .core.bundle import SegmentInput
from .errors import FaultError
from .features import BinSpec, extract_features

logger = logging.getLogger(__name__)

RegionKey = tuple[str, int, int]  # (kind, frame, ref)

_FOUR_CONN = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True)
class Region:
    """One candidate region: a layout element or an uncovered moving segment."""

    frame: int
    kind: str  # "elem" or "seg"
    ref: int
    mask: np.ndarray
    dx: float = 0.0
    dy: float = 0.0

    @property
    def key(self) -> RegionKey:
        return (self.kind, self.frame, self.ref)

    def matte(self) -> ElementMatte:
        return ElementMatte.from_mask(self.ref, self.frame, self.mask)


@dataclass(frozen=True)
class CorrespondenceNode:
    index: int
    t: int
    source: Region
    target: Region
    transform: np.ndarray
    s1: float


@dataclass(frozen=True)
class CorrespondenceGraph:
    frames: int
    nodes: tuple[CorrespondenceNode, ...]
    edges: tuple[tuple[int, int, float], ...]  # (node a, node b, s2), a < b


def init_layout(segments: SegmentInput, motion_threshold: float = 0.5) -> SwarmLayout:
    """Every segment moving faster than the threshold becomes a singleton element."""
    mattes = {}
    next_id = 1
    for (t, s) in sorted(segments.segments):
        rec = segments.segments[(t, s)]
        if rec.displacement_magnitude > motion_threshold:
            mattes[(t, next_id)] = ElementMatte(
                element_id=next_id, t=t, runs=rec.matte.runs
            )
            next_id += 1
    return SwarmLayout(frames=segments.frames, mattes=mattes, links=frozenset())


def _region_displacement(mask: np.ndarray, segments: SegmentInput, t: int) -> tuple[float, float]:
    """Area-weighted mean displacement of the segments overlapping a region."""
    total = 0
    dx = dy = 0.0
    for rec in segments.segments_at(t):
        overlap = int((rec.matte.to_mask(mask.shape) & mask).sum())
        if overlap:
            total += overlap
            dx += overlap * rec.dx
            dy += overlap * rec.dy
    if total == 0:
        return 0.0, 0.0
    return dx / total, dy / total


def candidate_regions(
    layout: SwarmLayout,
    segments: SegmentInput,
    motion_threshold: float = 0.5,
) -> dict[int, list[Region]]:
    """Per frame: current elements plus moving segments they do not cover."""
    shape = (segments.height, segments.width)
    out: dict[int, list[Region]] = {}
    for t in range(1, segments.frames + 1):
        regions: list[Region] = []
        covered = np.zeros(shape, dtype=bool)
        for i in layout.elements_at(t):
            mask = layout.mattes[(t, i)].to_mask(shape)
            covered |= mask
            dx, dy = _region_displacement(mask, segments, t)
            regions.append(Region(frame=t, kind="elem", ref=i, mask=mask, dx=dx, dy=dy))
        for rec in segments.segments_at(t):
            if rec.displacement_magnitude <= motion_threshold:
                continue
            mask = rec.matte.to_mask(shape)
            overlap = (mask & covered).sum()
            if overlap > 0.5 * mask.sum():
                continue
            regions.append(
                Region(
                    frame=t,
                    kind="seg",
                    ref=rec.segment_id,
                    mask=mask & ~covered,
                    dx=rec.dx,
                    dy=rec.dy,
                )
            )
        out[t] = regions
    return out


def _shift_mask(mask: np.ndarray, dx: int, dy: int) -> np.ndarray:
    out = np.zeros_like(mask)
    h, w = mask.shape
    ys, xs = np.nonzero(mask)
    ys = ys + dy
    xs = xs + dx
    keep = (ys >= 0) & (ys < h) & (xs >= 0) & (xs < w)
    out[ys[keep], xs[keep]] = True
    return out


def _adjacent(a: np.ndarray, b: np.ndarray) -> bool:
    return bool((ndimage.binary_dilation(a, structure=_FOUR_CONN) & b).any())


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise FaultError("cosine similarity of a zero-norm input")
    val = float(np.sum(a * b) / (na * nb))
    assert abs(val) <= 1.0 + 1e-9
    return float(np.clip(val, -1.0, 1.0))


def build_correspondence_graph(
    layout: SwarmLayout,
    segments: SegmentInput,
    transforms: dict[tuple[int, int], np.ndarray],
    features: dict[RegionKey, np.ndarray],
    motion_threshold: float = 0.5,
) -> CorrespondenceGraph:
    """Candidate nodes and adjacency edges for one valid/invalid labeling round.

    `features` must cover every candidate region key; regions whose feature
    vector (or its image under the node transform) has zero norm are dropped
    with a warning.
    """
    regions = candidate_regions(layout, segments, motion_threshold)
    d = None
    for vec in features.values():
        d = vec.shape[0]
        break
    if d is None:
        raise FaultError("no region features supplied")
    identity = np.eye(d)

    nodes: list[CorrespondenceNode] = []
    for t in range(1, segments.frames):
        for src in regions[t]:
            shifted = _shift_mask(src.mask, int(round(src.dx)), int(round(src.dy)))
            if src.kind == "elem" and (t, src.ref) in transforms:
                a_mat = transforms[(t, src.ref)]
            else:
                a_mat = identity
            for tgt in regions[t + 1]:
                if not (shifted & tgt.mask).any():
                    continue
                f_src = features[src.key]
                f_tgt = features[tgt.key]
                pred = a_mat @ f_src
                if np.linalg.norm(pred) == 0.0 or np.linalg.norm(f_tgt) == 0.0:
                    logger.warning(
                        "dropping correspondence %s -> %s: zero-norm features",
                        src.key,
                        tgt.key,
                    )
                    continue
                s1 = _cosine(f_tgt, pred)
                nodes.append(
                    CorrespondenceNode(
                        index=len(nodes), t=t, source=src, target=tgt, transform=a_mat, s1=s1
                    )
                )

    edges: list[tuple[int, int, float]] = []
    by_t: dict[int, list[CorrespondenceNode]] = {}
    for node in nodes:
        by_t.setdefault(node.t, []).append(node)
    for t, group in sorted(by_t.items()):
        for ai in range(len(group)):
            for bi in range(ai + 1, len(group)):
                a, b = group[ai], group[bi]
                touching = (
                    a.source.key == b.source.key
                    or a.target.key == b.target.key
                    or _adjacent(a.source.mask, b.source.mask)
                    or _adjacent(a.target.mask, b.target.mask)
                )
                if touching:
                    s2 = _cosine(a.transform, b.transform)
                    edges.append((a.index, b.index, s2))

    return CorrespondenceGraph(frames=segments.frames, nodes=tuple(nodes), edges=tuple(edges))


def labeling_energy(
    graph: CorrespondenceGraph, valid: np.ndarray, tau: float, lam: float
) -> float:
    energy = 0.0
    for node in graph.nodes:
        energy += (1.0 - node.s1) if valid[node.index] else (node.s1 - tau)
    for a, b, s2 in graph.edges:
        if valid[a] != valid[b]:
            energy += lam * max(0.0, s2)
    return energy


def binary_label_graph(
    graph: CorrespondenceGraph, tau: float = 0.5, lam: float = 0.5
) -> np.ndarray:
    """Exact minimum-energy valid/invalid labels via max-flow/min-cut."""
    n = len(graph.nodes)
    valid = np.zeros(n, dtype=bool)
    if n == 0:
        return valid
    g = nx.DiGraph()
    source, sink = "source", "sink"
    for node in graph.nodes:
        u_valid = 1.0 - node.s1
        u_invalid = node.s1 - tau
        base = min(u_valid, u_invalid)
        g.add_edge(source, node.index, capacity=u_invalid - base)
        g.add_edge(node.index, sink, capacity=u_valid - base)
    for a, b, s2 in graph.edges:
        w = lam * max(0.0, s2)
        if w > 0.0:
            g.add_edge(a, b, capacity=w)
            g.add_edge(b, a, capacity=w)
    _, (source_side, _) = nx.minimum_cut(g, source, sink)
    for idx in source_side:
        if idx != source:
            valid[idx] = True
    return valid


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def connected_components(graph: CorrespondenceGraph, valid: np.ndarray) -> SwarmLayout:
    """Group valid nodes over space and time into element chains.

    Nodes unite when they share a graph edge or a region; each component
    becomes one element whose per-frame matte is the union of its regions.
    Regions of invalid nodes are left unassigned.
    """
    valid_ids = [n.index for n in graph.nodes if valid[n.index]]
    if not valid_ids:
        return SwarmLayout(frames=graph.frames, mattes={}, links=frozenset())
    uf = _UnionFind(len(graph.nodes))
    for a, b, _ in graph.edges:
        if valid[a] and valid[b]:
            uf.union(a, b)
    by_region: dict[RegionKey, int] = {}
    for idx in valid_ids:
        node = graph.nodes[idx]
        for key in (node.source.key, node.target.key):
            if key in by_region:
                uf.union(by_region[key], idx)
            else:
                by_region[key] = idx

    groups: dict[int, list[int]] = {}
    for idx in valid_ids:
        groups.setdefault(uf.find(idx), []).append(idx)

    def group_order(members: list[int]):
        keys = sorted(graph.nodes[m].source.key for m in members)
        return (min(graph.nodes[m].t for m in members), keys[0])

    mattes: dict[tuple[int, int], ElementMatte] = {}
    links: set = set()
    ordered = sorted(groups.values(), key=group_order)
    for eid, members in enumerate(ordered, start=1):
        frame_masks: dict[int, np.ndarray] = {}
        for idx in members:
            node = graph.nodes[idx]
            for frame, mask in ((node.t, node.source.mask), (node.t + 1, node.target.mask)):
                if frame in frame_masks:
                    frame_masks[frame] = frame_masks[frame] | mask
                else:
                    frame_masks[frame] = mask.copy()
        for frame, mask in frame_masks.items():
            mattes[(frame, eid)] = ElementMatte.from_mask(eid, frame, mask)
        present = sorted(frame_masks)
        for a, b in zip(present, present[1:]):
            if b == a + 1:
                links.add(((a, eid), (b, eid)))
    return SwarmLayout(frames=graph.frames, mattes=mattes, links=frozenset(links))


def update_layout(
    layout: SwarmLayout,
    segments: SegmentInput,
    transforms: dict[tuple[int, int], np.ndarray],
    frames,
    bin_spec: BinSpec,
    tau: float = 0.5,
    lam: float = 0.5,
    motion_threshold: float = 0.5,
) -> SwarmLayout:
    """One full layout round: features, graph, min-cut labels, components."""
    by_t = {f.t: f for f in frames}
    regions = candidate_regions(layout, segments, motion_threshold)
    feats: dict[RegionKey, np.ndarray] = {}
    for t, group in regions.items():
        for region in group:
            feats[region.key] = extract_features(
                region.matte(), by_t[t].intensity, bin_spec
            )
    graph = build_correspondence_graph(
        layout, segments, transforms, feats, motion_threshold
    )
    labels = binary_label_graph(graph, tau=tau, lam=lam)
    return connected_components(graph, labels)
