"""Synthetic dynamic-swarm sequences with exported ground truth.

Elements are rotating leaves (polar curve r = R*(0.55 + 0.45*cos(2*phi)),
constant fill) and textured squares (4x4 checkerboard interior rotating with
the shape). Each element rotates in place about its own center; per-frame
rotation increments are Gaussian draws scaled by the element's rotation sign.

Geometry conventions: points are (x, y) with x = column, y = row; pixel
centers sit on integer lattice coordinates; rotation by theta is
counter-clockwise in the (x, y) plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ElementMatte, GridFrame, SwarmLayout, bundle, validate_sequence
from .core.bundle import SegmentInput, SegmentRecord
from .errors import ConfigError, FaultError

SHAPES = ("leaf", "textured-square")

LEAF_FILL = 0.6
SQUARE_LIGHT = 0.85
SQUARE_DARK = 0.35
BACKGROUND = 0.08

PAPER_FRAMES = 25
PAPER_THETA0 = math.pi / 25.0
PAPER_SIGMA_ROT = 1.0 / 50.0


@dataclass(frozen=True)
class ElementSpec:
    shape: str
    size: float
    position: tuple[float, float]  # (x, y)
    orientation: float = 0.0
    rotation_sign: int = 1

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown shape {self.shape!r}; expected one of {SHAPES}")
        if self.size <= 0:
            raise ConfigError("element size must be positive")
        if self.rotation_sign not in (1, -1):
            raise ConfigError("rotation_sign must be +1 or -1")

    @property
    def footprint_radius(self) -> float:
        if self.shape == "leaf":
            return self.size
        return self.size * math.sqrt(2.0) / 2.0


@dataclass(frozen=True)
class SynthConfig:
    frames: int
    width: int
    height: int
    elements: tuple[ElementSpec, ...]
    theta0: float
    sigma_rot: float
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        if self.frames < 2:
            raise ConfigError("a sequence needs at least 2 frames")
        if self.sigma_rot < 0:
            raise ConfigError("sigma_rot must be non-negative")
        if not self.elements:
            raise ConfigError("at least one element is required")
        for spec in self.elements:
            x, y = spec.position
            r = spec.footprint_radius
            if not (r <= x <= self.width - 1 - r and r <= y <= self.height - 1 - r):
                raise ConfigError(
                    f"element at {spec.position} with footprint {r:.1f} leaves the "
                    f"{self.width}x{self.height} grid"
                )


_CONFIG_KEYS = {"frames", "width", "height", "elements", "theta0", "sigma_rot", "seed"}
_ELEMENT_KEYS = {"shape", "size", "position", "orientation", "rotation_sign"}


def config_from_doc(doc: dict) -> SynthConfig:
    """Parse a JSON config document; unknown keys are errors."""
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    missing = _CONFIG_KEYS - set(doc)
    if missing:
        raise ConfigError(f"missing config keys: {sorted(missing)}")
    elements = []
    for idx, e in enumerate(doc["elements"]):
        unknown = set(e) - _ELEMENT_KEYS
        if unknown:
            raise ConfigError(f"element {idx}: unknown keys {sorted(unknown)}")
        elements.append(
            ElementSpec(
                shape=e["shape"],
                size=float(e["size"]),
                position=(float(e["position"][0]), float(e["position"][1])),
                orientation=float(e.get("orientation", 0.0)),
                rotation_sign=int(e.get("rotation_sign", 1)),
            )
        )
    return SynthConfig(
        frames=int(doc["frames"]),
        width=int(doc["width"]),
        height=int(doc["height"]),
        elements=tuple(elements),
        theta0=float(doc["theta0"]),
        sigma_rot=float(doc["sigma_rot"]),
        seed=int(doc["seed"]),
    )


def config_to_doc(config: SynthConfig) -> dict:
    return {
        "frames": config.frames,
        "width": config.width,
        "height": config.height,
        "theta0": config.theta0,
        "sigma_rot": config.sigma_rot,
        "seed": config.seed,
        "elements": [
            {
                "shape": e.shape,
                "size": e.size,
                "position": list(e.position),
                "orientation": e.orientation,
                "rotation_sign": e.rotation_sign,
            }
            for e in config.elements
        ],
    }


def paper_config(opposite: bool = False, seed: int = 20250301) -> SynthConfig:
    """The F=25, K=8 rotating leaf/square setup on a 320x240 grid.

    Grid size and element sizes are artifact defaults (not reported values).
    With `opposite`, squares rotate against the leaves.
    """
    centers = [(40.5 + 80 * c, 60.5 + 120 * r) for r in range(2) for c in range(4)]
    elements = []
    for idx, pos in enumerate(centers):
        leaf = (idx + idx // 4) % 2 == 0  # alternate within and across rows
        if leaf:
            elements.append(ElementSpec("leaf", 18.0, pos, orientation=0.0, rotation_sign=1))
        else:
            sign = -1 if opposite else 1
            elements.append(
                ElementSpec("textured-square", 26.0, pos, orientation=0.0, rotation_sign=sign)
            )
    return SynthConfig(
        frames=PAPER_FRAMES,
        width=320,
        height=240,
        elements=tuple(elements),
        theta0=PAPER_THETA0,
        sigma_rot=PAPER_SIGMA_ROT,
        seed=seed,
    )


def sample_rotation(theta0: float, sigma_rot: float, rng: np.random.Generator) -> float:
    """One Gaussian rotation increment; exactly theta0 when sigma_rot is 0."""
    if sigma_rot < 0:
        raise ConfigError("sigma_rot must be non-negative")
    if sigma_rot == 0:
        return float(theta0)
    return float(rng.normal(theta0, sigma_rot))


def _shape_frame_coords(spec: ElementSpec, pose_xy: tuple[float, float], angle: float, grid_shape):
    """Pixel-center offsets inside the shape bbox, expressed in shape coordinates."""
    h, w = grid_shape
    cx, cy = pose_xy
    r = spec.footprint_radius + 1.0
    x0, x1 = int(math.floor(cx - r)), int(math.ceil(cx + r))
    y0, y1 = int(math.floor(cy - r)), int(math.ceil(cy + r))
    if x0 < 0 or y0 < 0 or x1 > w - 1 or y1 > h - 1:
        raise FaultError(
            f"shape footprint at ({cx:.1f}, {cy:.1f}) leaves the {w}x{h} grid"
        )
    xs = np.arange(x0, x1 + 1, dtype=np.float64)
    ys = np.arange(y0, y1 + 1, dtype=np.float64)
    dx = xs[None, :] - cx
    dy = ys[:, None] - cy
    c, s = math.cos(angle), math.sin(angle)
    # inverse rotation into the shape's own frame
    xp = c * dx + s * dy
    yp = -s * dx + c * dy
    return (y0, x0), xp, yp


def rasterize_element(
    spec: ElementSpec,
    pose_xy: tuple[float, float],
    angle: float,
    grid_shape: tuple[int, int],
) -> tuple[np.ndarray, np.ndarray]:
    """Rasterize at pixel centers; returns full-grid (mask, intensity).

    Intensity is defined on mask pixels and zero elsewhere.
    """
    (y0, x0), xp, yp = _shape_frame_coords(spec, pose_xy, angle, grid_shape)
    if spec.shape == "leaf":
        rad = np.hypot(xp, yp)
        phi = np.arctan2(yp, xp)
        inside = rad <= spec.size * (0.55 + 0.45 * np.cos(2.0 * phi))
        local_intensity = np.where(inside, LEAF_FILL, 0.0)
    else:
        half = spec.size / 2.0
        inside = (np.abs(xp) <= half) & (np.abs(yp) <= half)
        cell = spec.size / 4.0
        cell_x = np.clip(np.floor((xp + half) / cell), 0, 3).astype(int)
        cell_y = np.clip(np.floor((yp + half) / cell), 0, 3).astype(int)
        checker = (cell_x + cell_y) % 2 == 0
        local_intensity = np.where(inside, np.where(checker, SQUARE_LIGHT, SQUARE_DARK), 0.0)
    mask = np.zeros(grid_shape, dtype=bool)
    intensity = np.zeros(grid_shape, dtype=np.float64)
    sl = (slice(y0, y0 + inside.shape[0]), slice(x0, x0 + inside.shape[1]))
    mask[sl] = inside
    intensity[sl] = local_intensity
    if not mask.any():
        raise FaultError("rasterized shape is empty")
    return mask, intensity


def _mean_flow(mask: np.ndarray, center_xy: tuple[float, float], delta: float):
    """Mean displacement vector and mean speed of mask pixels rotating by delta."""
    ys, xs = np.nonzero(mask)
    cx, cy = center_xy
    dx = xs - cx
    dy = ys - cy
    c, s = math.cos(delta), math.sin(delta)
    ux = (c * dx - s * dy) - dx
    uy = (s * dx + c * dy) - dy
    return float(ux.mean()), float(uy.mean()), float(np.hypot(ux, uy).mean())


def generate_sequence(
    config: SynthConfig,
) -> tuple[list[GridFrame], SwarmLayout, dict, SegmentInput]:
    """Generate frames, ground-truth layout, ground-truth record, segment input."""
    rng = np.random.default_rng(config.seed)
    n = len(config.elements)
    f = config.frames
    shape = (config.height, config.width)

    # sample rotation increments in fixed (t, element) order
    angles = {}  # (t, i) -> unsigned draw
    cumulative = {(1, i + 1): config.elements[i].orientation for i in range(n)}
    for t in range(1, f):
        for i, spec in enumerate(config.elements, start=1):
            draw = sample_rotation(config.theta0, config.sigma_rot, rng)
            angles[(t, i)] = draw
            cumulative[(t + 1, i)] = cumulative[(t, i)] + spec.rotation_sign * draw

    frames: list[GridFrame] = []
    mattes: dict[tuple[int, int], ElementMatte] = {}
    masks: dict[tuple[int, int], np.ndarray] = {}
    for t in range(1, f + 1):
        image = np.full(shape, BACKGROUND, dtype=np.float64)
        occupied = np.zeros(shape, dtype=bool)
        for i, spec in enumerate(config.elements, start=1):
            mask, intensity = rasterize_element(
                spec, spec.position, cumulative[(t, i)], shape
            )
            if (occupied & mask).any():
                raise FaultError(f"elements overlap in frame {t}; spread the layout out")
            occupied |= mask
            image[mask] = intensity[mask]
            mattes[(t, i)] = ElementMatte.from_mask(i, t, mask)
            masks[(t, i)] = mask
        frames.append(GridFrame(t=t, width=config.width, height=config.height, intensity=image))

    links = frozenset(((t, i), (t + 1, i)) for t in range(1, f) for i in range(1, n + 1))
    layout = SwarmLayout(frames=f, mattes=mattes, links=links)

    flows = {}
    for t in range(1, f):
        for i, spec in enumerate(config.elements, start=1):
            delta = spec.rotation_sign * angles[(t, i)]
            dx, dy, speed = _mean_flow(masks[(t, i)], spec.position, delta)
            flows[(t, i)] = {"dx": dx, "dy": dy, "speed": speed}

    ground_truth = {
        "theta0": config.theta0,
        "sigma_rot": config.sigma_rot,
        "seed": config.seed,
        "elements": {
            str(i): {
                "shape": spec.shape,
                "size": spec.size,
                "position": list(spec.position),
                "orientation": spec.orientation,
                "rotation_sign": spec.rotation_sign,
            }
            for i, spec in enumerate(config.elements, start=1)
        },
        "angles": {f"{t},{i}": angles[(t, i)] for (t, i) in sorted(angles)},
        "cumulative": {f"{t},{i}": cumulative[(t, i)] for (t, i) in sorted(cumulative)},
        "flows": {f"{t},{i}": flows[(t, i)] for (t, i) in sorted(flows)},
        "links": [[list(a), list(b)] for a, b in sorted(links)],
    }

    # segment input: one segment per element plus a static background segment 0.
    # A segment's motion state at frame t spans its arrival and departure
    # transitions (max of the two mean speeds), so one unusually small
    # rotation draw cannot make a genuinely moving element look static; the
    # displacement vector is the onward transition's (arrival at the last frame).
    segments: dict[tuple[int, int], SegmentRecord] = {}
    for t in range(1, f + 1):
        bg_mask = np.ones(shape, dtype=bool)
        for i in range(1, n + 1):
            bg_mask &= ~masks[(t, i)]
            vec = flows[(min(t, f - 1), i)]
            speed = max(
                flows[(t - 1, i)]["speed"] if t > 1 else 0.0,
                flows[(t, i)]["speed"] if t < f else 0.0,
            )
            segments[(t, i)] = SegmentRecord(
                t=t,
                segment_id=i,
                matte=mattes[(t, i)],
                dx=vec["dx"],
                dy=vec["dy"],
                speed=speed,
            )
        segments[(t, 0)] = SegmentRecord(
            t=t,
            segment_id=0,
            matte=ElementMatte.from_mask(0, t, bg_mask),
            dx=0.0,
            dy=0.0,
            speed=0.0,
        )
    seg_input = SegmentInput(
        frames=f, width=config.width, height=config.height, segments=segments
    )

    problems = validate_sequence(frames, layout)
    if problems:
        raise FaultError(f"generated sequence fails validation: {problems}")
    return frames, layout, ground_truth, seg_input


def generate_to_dir(config: SynthConfig, out_dir) -> None:
    """Generate a sequence and write the bundle, ground truth, and segments."""
    frames, layout, ground_truth, seg_input = generate_sequence(config)
    out_dir = Path(out_dir)
    bundle.save_bundle(out_dir, frames, layout, ground_truth=ground_truth)
    bundle.save_segment_input(out_dir, seg_input)
