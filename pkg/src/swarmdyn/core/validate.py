"""Cross-object validation of a frame sequence plus swarm layout.

Violations are data, not faults: the checker returns a list of human-readable
problems (empty list means OK) instead of raising.
"""

from __future__ import annotations

import numpy as np

from .types import GridFrame, SwarmLayout


def validate_sequence(frames: list[GridFrame], layout: SwarmLayout) -> list[str]:
    violations: list[str] = []

    indices = [f.t for f in frames]
    if sorted(indices) != list(range(1, len(frames) + 1)):
        violations.append(f"frame indices not contiguous 1..F: {sorted(indices)}")
    if layout.frames != len(frames):
        violations.append(
            f"layout declares {layout.frames} frames but {len(frames)} were given"
        )
    if not frames:
        return violations

    shapes = {(f.height, f.width) for f in frames}
    if len(shapes) != 1:
        violations.append(f"frames disagree on grid size: {sorted(shapes)}")
    h, w = frames[0].height, frames[0].width

    # matte bounds and per-frame disjointness
    occupancy: dict[int, np.ndarray] = {}
    for (t, i), matte in sorted(layout.mattes.items()):
        if not 1 <= t <= len(frames):
            violations.append(f"matte ({t},{i}) references a missing frame")
            continue
        mrows, mcols = matte.max_extent()
        if mrows > h or mcols > w:
            violations.append(f"matte ({t},{i}): run out of bounds for {h}x{w} grid")
            continue
        mask = matte.to_mask((h, w))
        occ = occupancy.setdefault(t, np.zeros((h, w), dtype=bool))
        if (occ & mask).any():
            violations.append(f"matte ({t},{i}) overlaps another element in frame {t}")
        occ |= mask

    # correspondence links
    for (a, b) in sorted(layout.links):
        (t1, i1), (t2, i2) = a, b
        if t2 != t1 + 1:
            violations.append(f"non-consecutive link {a}->{b}")
        if i1 != i2:
            violations.append(f"link {a}->{b} changes element identity")
        if a not in layout.mattes or b not in layout.mattes:
            violations.append(f"link {a}->{b} references a missing matte")

    # an element id must occupy one contiguous frame range (a chain)
    for i, chain in sorted(layout.chains().items()):
        if chain != list(range(chain[0], chain[-1] + 1)):
            violations.append(f"element {i} reappears after a gap: frames {chain}")

    return violations
