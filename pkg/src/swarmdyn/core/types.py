"""Domain types shared by every other module.

All types are immutable values after construction; mutation means building
a new instance. Numpy payloads are marked read-only so instances can be
shared across parallel workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import rle

CONSTRAINT_TAGS = ("unconstrained", "symmetric", "orthogonal")

ORTHOGONALITY_TOL = 1e-10


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class GridFrame:
    """One luminance frame of the sequence, values in [0, 1]."""

    t: int
    width: int
    height: int
    intensity: np.ndarray

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("frame must have positive area")
        arr = np.asarray(self.intensity, dtype=np.float64)
        if arr.shape != (self.height, self.width):
            raise ValueError(
                f"intensity shape {arr.shape} does not match {self.height}x{self.width}"
            )
        if not np.isfinite(arr).all() or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("intensities must be finite and lie in [0, 1]")
        object.__setattr__(self, "intensity", _freeze(arr))


@dataclass(frozen=True)
class ElementMatte:
    """Binary support of one element in one frame, run-length encoded.

    The centroid is the mean of the mask pixel coordinates, in (row, col)
    grid units. Runs are validated structurally here; bounds against a
    concrete grid are a sequence-level check.
    """

    element_id: int
    t: int
    runs: tuple[rle.Run, ...]
    centroid: tuple[float, float] = field(init=False)
    pixel_count: int = field(init=False)

    def __post_init__(self):
        runs = tuple((int(r), int(s), int(n)) for r, s, n in self.runs)
        rle.validate_runs(runs)
        object.__setattr__(self, "runs", runs)
        object.__setattr__(self, "centroid", rle.runs_centroid(runs))
        object.__setattr__(self, "pixel_count", rle.run_pixel_count(runs))

    @classmethod
    def from_mask(cls, element_id: int, t: int, mask: np.ndarray) -> "ElementMatte":
        return cls(element_id=element_id, t=t, runs=rle.encode_mask(mask))

    def to_mask(self, shape: tuple[int, int]) -> np.ndarray:
        return rle.decode_runs(self.runs, shape)

    def max_extent(self) -> tuple[int, int]:
        """(max_row + 1, max_col + 1) over all runs; minimal containing grid."""
        max_row = max(r for r, _, _ in self.runs)
        max_col = max(s + n for _, s, n in self.runs)
        return max_row + 1, max_col


Link = tuple[tuple[int, int], tuple[int, int]]


@dataclass(frozen=True)
class SwarmLayout:
    """Per-frame element mattes plus identity-preserving correspondences.

    `mattes` maps (t, element_id) to the element's matte in frame t;
    `links` holds ((t, i), (t + 1, i)) pairs marking that element i
    persists from frame t to t + 1. Frames are 1-based.
    """

    frames: int
    mattes: dict[tuple[int, int], ElementMatte]
    links: frozenset[Link] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "mattes", dict(self.mattes))
        object.__setattr__(self, "links", frozenset(self.links))
        for (t, i), matte in self.mattes.items():
            if matte.t != t or matte.element_id != i:
                raise ValueError(f"matte stored under {(t, i)} labels itself {(matte.t, matte.element_id)}")

    def elements_at(self, t: int) -> list[int]:
        return sorted(i for (s, i) in self.mattes if s == t)

    def k(self, t: int) -> int:
        return len(self.elements_at(t))

    def link_starts(self) -> list[tuple[int, int]]:
        """Sorted (t, i) keys that own a transform slot."""
        return sorted(a for a, _ in self.links)

    def chains(self) -> dict[int, list[int]]:
        """Element id -> sorted list of frames where it is present."""
        out: dict[int, list[int]] = {}
        for (t, i) in self.mattes:
            out.setdefault(i, []).append(t)
        for frames in out.values():
            frames.sort()
        return out

    def restrict_to_frames(self, last_frame: int) -> "SwarmLayout":
        """Sub-layout over frames 1..last_frame (used for holdout training)."""
        mattes = {(t, i): m for (t, i), m in self.mattes.items() if t <= last_frame}
        links = {l for l in self.links if l[1][0] <= last_frame}
        return SwarmLayout(frames=last_frame, mattes=mattes, links=links)


@dataclass(frozen=True)
class FeatureVector:
    """d-dimensional appearance descriptor owned by element i in frame t."""

    t: int
    element_id: int
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("feature values must be a vector")
        if not np.isfinite(arr).all():
            raise ValueError("feature values must be finite")
        object.__setattr__(self, "values", _freeze(arr))

    @property
    def d(self) -> int:
        return self.values.shape[0]


def check_constraint(matrix: np.ndarray, constraint: str) -> None:
    """Raise unless `matrix` satisfies the named feasible-set tag."""
    if constraint not in CONSTRAINT_TAGS:
        raise ValueError(f"unknown constraint tag {constraint!r}")
    if constraint == "symmetric":
        if not np.array_equal(matrix, matrix.T):
            raise ValueError("matrix is not exactly symmetric")
    elif constraint == "orthogonal":
        d = matrix.shape[0]
        err = np.abs(matrix.T @ matrix - np.eye(d)).max()
        if err > ORTHOGONALITY_TOL:
            raise ValueError(f"columns not orthonormal (deviation {err:.3e})")


@dataclass(frozen=True)
class Transform:
    """d x d linear map carrying element i's features from frame t to t+1."""

    t: int
    element_id: int
    matrix: np.ndarray
    constraint: str = "unconstrained"

    def __post_init__(self):
        arr = np.asarray(self.matrix, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError("transform matrix must be square")
        if not np.isfinite(arr).all():
            raise ValueError("transform entries must be finite")
        check_constraint(arr, self.constraint)
        object.__setattr__(self, "matrix", _freeze(arr))


@dataclass(frozen=True)
class ModelParams:
    """Noise scales and AR coefficients of a learned model.

    gamma[t - 1] is the reconstruction noise scale of transition t for
    t = 1..F-1. `window` is the AR order; `epsilon` is the weight floor
    of the generative spatial-noise story (never enters the objective).
    """

    alpha: np.ndarray
    sigma_s: float
    sigma_t: float
    gamma: np.ndarray
    window: int
    epsilon: float = 1e-6

    def __post_init__(self):
        alpha = _freeze(np.asarray(self.alpha, dtype=np.float64))
        gamma = _freeze(np.asarray(self.gamma, dtype=np.float64))
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "gamma", gamma)
        if alpha.shape != (self.window,):
            raise ValueError(f"alpha must have length window={self.window}")
        if self.sigma_s <= 0 or self.sigma_t <= 0:
            raise ValueError("sigma_s and sigma_t must be positive")
        if gamma.ndim != 1 or (gamma <= 0).any():
            raise ValueError("all gamma entries must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass(frozen=True)
class IcmDiagnostics:
    """One row of per-iteration convergence bookkeeping."""

    iteration: int
    objective: float
    delta: float
    sigma_s: float
    sigma_t: float


@dataclass(frozen=True)
class SwarmModel:
    """Everything the learner produces: layout, transforms, params, diagnostics."""

    layout: SwarmLayout
    transforms: dict[tuple[int, int], np.ndarray]
    params: ModelParams
    constraint: str = "unconstrained"
    diagnostics: tuple[IcmDiagnostics, ...] = ()

    def __post_init__(self):
        transforms = {
            key: _freeze(np.asarray(m, dtype=np.float64)) for key, m in self.transforms.items()
        }
        object.__setattr__(self, "transforms", transforms)
        object.__setattr__(self, "diagnostics", tuple(self.diagnostics))
        if self.constraint not in CONSTRAINT_TAGS:
            raise ValueError(f"unknown constraint tag {self.constraint!r}")
        missing = [key for key, _ in self.layout.links if key not in transforms]
        if missing:
            raise ValueError(f"correspondence links without transforms: {missing[:5]}")
        for diag in self.diagnostics:
            if not np.isfinite(diag.objective):
                raise ValueError("diagnostics contain a non-finite objective value")

    def chain_transforms(self) -> dict[int, list[np.ndarray]]:
        """Element id -> its transform sequence ordered by frame."""
        chains: dict[int, list[tuple[int, np.ndarray]]] = {}
        for (t, i), mat in self.transforms.items():
            chains.setdefault(i, []).append((t, mat))
        return {i: [m for _, m in sorted(seq, key=lambda p: p[0])] for i, seq in chains.items()}


def layout_from_masks(
    frames_masks: Iterable[tuple[int, int, np.ndarray]],
    links: Iterable[Link],
    frames: int,
) -> SwarmLayout:
    """Convenience constructor from (t, element_id, mask) triples."""
    mattes = {
        (t, i): ElementMatte.from_mask(i, t, mask) for t, i, mask in frames_masks
    }
    return SwarmLayout(frames=frames, mattes=mattes, links=frozenset(links))
