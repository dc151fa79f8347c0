"""On-disk formats: sequence bundles, model files, feature tables, segment input.

A sequence bundle is a directory:

    manifest.json            F, grid size, matte refs, links, optional ground truth ref
    frames/frame_%04d.pgm    8-bit binary PGM luminance
    mattes/t%04d_e%03d.pbm   binary PBM element mattes

Model, feature, and segment-input files are single JSON documents (mattes of
segment input live in segments/*.pbm next to flows.json). All writes are
atomic (temp file + rename) and byte-deterministic for identical inputs.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import pnm
from .types import (
    ElementMatte,
    GridFrame,
    IcmDiagnostics,
    ModelParams,
    SwarmLayout,
    SwarmModel,
)

BUNDLE_FORMAT = "swarmdyn-bundle-v1"
MODEL_FORMAT = "swarmdyn-model-v1"
FEATURES_FORMAT = "swarmdyn-features-v1"
SEGMENTS_FORMAT = "swarmdyn-segments-v1"


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(doc) -> bytes:
    return (json.dumps(doc, sort_keys=True, indent=1) + "\n").encode()


def atomic_write_json(path: Path, doc) -> None:
    atomic_write_bytes(path, dump_json(doc))


def load_json(path: Path):
    with open(path, "r") as fh:
        return json.load(fh)


def _key(t: int, i: int) -> str:
    return f"{t},{i}"


def _unkey(key: str) -> tuple[int, int]:
    t, i = key.split(",")
    return int(t), int(i)


# ---------------------------------------------------------------------------
# sequence bundles


def save_bundle(
    directory,
    frames: list[GridFrame],
    layout: SwarmLayout,
    ground_truth: dict | None = None,
) -> None:
    directory = Path(directory)
    frame_files = []
    for frame in sorted(frames, key=lambda f: f.t):
        rel = f"frames/frame_{frame.t:04d}.pgm"
        atomic_write_bytes(directory / rel, pnm.write_pgm(None, frame.intensity))
        frame_files.append(rel)
    shape = (frames[0].height, frames[0].width)
    matte_refs = {}
    for (t, i), matte in sorted(layout.mattes.items()):
        rel = f"mattes/t{t:04d}_e{i:03d}.pbm"
        atomic_write_bytes(directory / rel, pnm.write_pbm(None, matte.to_mask(shape)))
        matte_refs[_key(t, i)] = rel
    manifest = {
        "format": BUNDLE_FORMAT,
        "frames": layout.frames,
        "width": frames[0].width,
        "height": frames[0].height,
        "frame_files": frame_files,
        "mattes": matte_refs,
        "links": [[list(a), list(b)] for a, b in sorted(layout.links)],
    }
    if ground_truth is not None:
        manifest["ground_truth"] = "ground_truth.json"
        atomic_write_json(directory / "ground_truth.json", ground_truth)
    atomic_write_json(directory / "manifest.json", manifest)


def load_bundle(directory) -> tuple[list[GridFrame], SwarmLayout, dict | None]:
    directory = Path(directory)
    manifest = load_json(directory / "manifest.json")
    if manifest.get("format") != BUNDLE_FORMAT:
        raise ValueError(f"{directory}: not a {BUNDLE_FORMAT} bundle")
    frames = []
    for t, rel in enumerate(manifest["frame_files"], start=1):
        intensity = pnm.read_pgm(directory / rel)
        frames.append(
            GridFrame(t=t, width=manifest["width"], height=manifest["height"], intensity=intensity)
        )
    mattes = {}
    for key, rel in manifest["mattes"].items():
        t, i = _unkey(key)
        mattes[(t, i)] = ElementMatte.from_mask(i, t, pnm.read_pbm(directory / rel))
    links = frozenset(
        (tuple(map(int, a)), tuple(map(int, b))) for a, b in manifest["links"]
    )
    layout = SwarmLayout(frames=manifest["frames"], mattes=mattes, links=links)
    ground_truth = None
    if "ground_truth" in manifest:
        ground_truth = load_json(directory / manifest["ground_truth"])
    return frames, layout, ground_truth


# ---------------------------------------------------------------------------
# models


def model_to_doc(model: SwarmModel) -> dict:
    d = None
    for mat in model.transforms.values():
        d = mat.shape[0]
        break
    return {
        "format": MODEL_FORMAT,
        "d": d,
        "constraint": model.constraint,
        "alpha": model.params.alpha.tolist(),
        "sigma_s": model.params.sigma_s,
        "sigma_t": model.params.sigma_t,
        "gamma": model.params.gamma.tolist(),
        "window": model.params.window,
        "epsilon": model.params.epsilon,
        "frames": model.layout.frames,
        "layout": {
            "mattes": {
                _key(t, i): [list(run) for run in matte.runs]
                for (t, i), matte in sorted(model.layout.mattes.items())
            },
            "links": [[list(a), list(b)] for a, b in sorted(model.layout.links)],
        },
        "transforms": {
            _key(t, i): mat.tolist() for (t, i), mat in sorted(model.transforms.items())
        },
        "diagnostics": [
            {
                "iteration": diag.iteration,
                "objective": diag.objective,
                "delta": diag.delta,
                "sigma_s": diag.sigma_s,
                "sigma_t": diag.sigma_t,
            }
            for diag in model.diagnostics
        ],
    }


def save_model(path, model: SwarmModel) -> None:
    atomic_write_json(Path(path), model_to_doc(model))


def load_model(path) -> SwarmModel:
    doc = load_json(Path(path))
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path}: not a {MODEL_FORMAT} file")
    mattes = {}
    for key, runs in doc["layout"]["mattes"].items():
        t, i = _unkey(key)
        mattes[(t, i)] = ElementMatte(element_id=i, t=t, runs=tuple(tuple(r) for r in runs))
    links = frozenset(
        (tuple(map(int, a)), tuple(map(int, b))) for a, b in doc["layout"]["links"]
    )
    layout = SwarmLayout(frames=doc["frames"], mattes=mattes, links=links)
    params = ModelParams(
        alpha=np.array(doc["alpha"], dtype=np.float64),
        sigma_s=doc["sigma_s"],
        sigma_t=doc["sigma_t"],
        gamma=np.array(doc["gamma"], dtype=np.float64),
        window=doc["window"],
        epsilon=doc["epsilon"],
    )
    transforms = {
        _unkey(key): np.array(mat, dtype=np.float64) for key, mat in doc["transforms"].items()
    }
    diagnostics = tuple(
        IcmDiagnostics(
            iteration=row["iteration"],
            objective=row["objective"],
            delta=row["delta"],
            sigma_s=row["sigma_s"],
            sigma_t=row["sigma_t"],
        )
        for row in doc["diagnostics"]
    )
    return SwarmModel(
        layout=layout,
        transforms=transforms,
        params=params,
        constraint=doc["constraint"],
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# feature tables


def save_features(path, features: dict[tuple[int, int], np.ndarray], bins: int) -> None:
    d = None
    for vec in features.values():
        d = int(np.asarray(vec).shape[0])
        break
    doc = {
        "format": FEATURES_FORMAT,
        "bins": bins,
        "d": d,
        "features": {
            _key(t, i): np.asarray(vec, dtype=np.float64).tolist()
            for (t, i), vec in sorted(features.items())
        },
    }
    atomic_write_json(Path(path), doc)


def load_features(path) -> tuple[dict[tuple[int, int], np.ndarray], int]:
    doc = load_json(Path(path))
    if doc.get("format") != FEATURES_FORMAT:
        raise ValueError(f"{path}: not a {FEATURES_FORMAT} file")
    features = {
        _unkey(key): np.array(vec, dtype=np.float64) for key, vec in doc["features"].items()
    }
    return features, doc["bins"]


# ---------------------------------------------------------------------------
# segment input (low-level segments + per-segment displacement)


@dataclass(frozen=True)
class SegmentRecord:
    """One low-level segment with its mean displacement to the next frame."""

    t: int
    segment_id: int
    matte: ElementMatte
    dx: float
    dy: float
    speed: float

    @property
    def displacement_magnitude(self) -> float:
        """Scalar motion strength: mean per-pixel speed when available."""
        return max(float(np.hypot(self.dx, self.dy)), self.speed)


@dataclass(frozen=True)
class SegmentInput:
    frames: int
    width: int
    height: int
    segments: dict[tuple[int, int], SegmentRecord]

    def segments_at(self, t: int) -> list[SegmentRecord]:
        return [self.segments[key] for key in sorted(self.segments) if key[0] == t]


def save_segment_input(directory, seg_input: SegmentInput) -> None:
    directory = Path(directory)
    shape = (seg_input.height, seg_input.width)
    seg_docs = {}
    for (t, s), rec in sorted(seg_input.segments.items()):
        rel = f"segments/t{t:04d}_s{s:03d}.pbm"
        atomic_write_bytes(directory / rel, pnm.write_pbm(None, rec.matte.to_mask(shape)))
        seg_docs[_key(t, s)] = {"matte": rel, "dx": rec.dx, "dy": rec.dy, "speed": rec.speed}
    doc = {
        "format": SEGMENTS_FORMAT,
        "frames": seg_input.frames,
        "width": seg_input.width,
        "height": seg_input.height,
        "segments": seg_docs,
    }
    atomic_write_json(directory / "flows.json", doc)


def load_segment_input(directory) -> SegmentInput:
    directory = Path(directory)
    doc = load_json(directory / "flows.json")
    if doc.get("format") != SEGMENTS_FORMAT:
        raise ValueError(f"{directory}: not a {SEGMENTS_FORMAT} input")
    segments = {}
    for key, rec in doc["segments"].items():
        t, s = _unkey(key)
        matte = ElementMatte.from_mask(s, t, pnm.read_pbm(directory / rec["matte"]))
        segments[(t, s)] = SegmentRecord(
            t=t,
            segment_id=s,
            matte=matte,
            dx=float(rec["dx"]),
            dy=float(rec["dy"]),
            speed=float(rec.get("speed", float(np.hypot(rec["dx"], rec["dy"])))),
        )
    return SegmentInput(
        frames=doc["frames"], width=doc["width"], height=doc["height"], segments=segments
    )
