"""Command-line entry point.

Subcommands: gen, features, neighborhoods, learn, residuals, distmat,
cluster, mds, holdout, classify, pipeline. Outputs are written atomically,
CSV is the machine-readable contract (SVG plots are decoration), and every
invocation drops a run.json provenance record next to its primary output.
Exit codes: 0 success, 1 configuration/validation error, 2 runtime fault.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, analysis, dynamics, synthgen
from .core import bundle as bundle_io
from .core.bundle import atomic_write_bytes, atomic_write_json, load_json
from .dynamics import LearnConfig
from .errors import ConfigError, FaultError, SwarmdynError
from .features import BinSpec, extract_layout_features
from .neighborhood import build_neighborhoods

CONSTRAINT_BY_FLAG = {
    "none": "unconstrained",
    "symmetric": "symmetric",
    "orthogonal": "orthogonal",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{message}\n{self.format_usage()}")


def _threads_from(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("SWARMDYN_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"SWARMDYN_THREADS={env!r} is not an integer")
    return 1


def _write_run_record(target: Path, command: str, options: dict) -> None:
    target = Path(target)
    if target.suffix:
        record_path = target.with_name(target.stem + ".run.json")
    else:
        record_path = target / "run.json"
    atomic_write_json(
        record_path,
        {"command": command, "options": options, "version": __version__},
    )


def _csv_bytes(header: list[str], rows: list[list]) -> bytes:
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            cells.append(repr(float(cell)) if isinstance(cell, float) else str(cell))
        lines.append(",".join(cells))
    return ("\n".join(lines) + "\n").encode()


def _require(path: Path, what: str) -> Path:
    if not Path(path).exists():
        raise ConfigError(f"{what} not found: {path}")
    return Path(path)


# ---------------------------------------------------------------------------
# tiny SVG writers (decoration only)


def _svg_line_plot(series: dict[str, np.ndarray], path: Path) -> None:
    w, h, pad = 640, 360, 40
    all_vals = np.concatenate(list(series.values()))
    lo, hi = float(all_vals.min()), float(all_vals.max())
    if hi <= lo:
        hi = lo + 1.0
    n = max(len(v) for v in series.values())
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
    ]
    for idx, (name, vals) in enumerate(series.items()):
        pts = []
        for k, v in enumerate(vals):
            x = pad + (w - 2 * pad) * (k / max(n - 1, 1))
            y = h - pad - (h - 2 * pad) * ((v - lo) / (hi - lo))
            pts.append(f"{x:.1f},{y:.1f}")
        color = colors[idx % len(colors)]
        parts.append(
            f'<polyline fill="none" stroke="{color}" points="{" ".join(pts)}"/>'
        )
        parts.append(
            f'<text x="{pad + 80 * idx}" y="{pad / 2}" fill="{color}">{name}</text>'
        )
    parts.append("</svg>")
    atomic_write_bytes(path, "\n".join(parts).encode())


def _svg_scatter(coords: np.ndarray, labels: list[str], path: Path) -> None:
    w, h, pad = 480, 480, 40
    xy = coords[:, :2] if coords.shape[1] >= 2 else np.c_[coords[:, 0], np.zeros(len(coords))]
    lo = xy.min(axis=0)
    hi = xy.max(axis=0)
    span = np.where(hi - lo <= 0, 1.0, hi - lo)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
    ]
    for k, label in enumerate(labels):
        x = pad + (w - 2 * pad) * (xy[k, 0] - lo[0]) / span[0]
        y = h - pad - (h - 2 * pad) * (xy[k, 1] - lo[1]) / span[1]
        parts.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="5" fill="#1f77b4"/>')
        parts.append(f'<text x="{x + 7:.1f}" y="{y:.1f}" font-size="11">{label}</text>')
    parts.append("</svg>")
    atomic_write_bytes(path, "\n".join(parts).encode())


# ---------------------------------------------------------------------------
# subcommands


def _cmd_gen(args) -> int:
    config_doc = load_json(_require(args.config, "config file"))
    config = synthgen.config_from_doc(config_doc)
    synthgen.generate_to_dir(config, args.out)
    _write_run_record(Path(args.out), "gen", {"config": config_doc, "seed": config.seed})
    return 0


def _cmd_features(args) -> int:
    frames, layout, _ = bundle_io.load_bundle(_require(args.bundle, "bundle"))
    spec = BinSpec(bins=args.bins)
    feats = extract_layout_features(frames, layout, spec)
    bundle_io.save_features(args.out, feats, bins=args.bins)
    _write_run_record(Path(args.out), "features", {"bundle": str(args.bundle), "bins": args.bins})
    return 0


def _cmd_neighborhoods(args) -> int:
    frames, layout, _ = bundle_io.load_bundle(_require(args.bundle, "bundle"))
    nbhd = build_neighborhoods(layout, args.wt, shape=(frames[0].height, frames[0].width))
    doc = {
        "format": "swarmdyn-neighborhoods-v1",
        "window": args.wt,
        "weights": [[t, i, j, w] for (t, i, j, w) in nbhd.quadruples()],
    }
    atomic_write_json(Path(args.out), doc)
    _write_run_record(Path(args.out), "neighborhoods", {"bundle": str(args.bundle), "wt": args.wt})
    return 0


def _learn_config(args) -> LearnConfig:
    return LearnConfig(
        bins=args.bins,
        window=args.wt,
        eps=args.eps,
        k_max=args.kmax,
        j_max=args.jmax,
        constraint=CONSTRAINT_BY_FLAG[args.constraint],
        init_scheme=args.init,
        tau=args.tau,
        lam=getattr(args, "lambda"),
        motion_threshold=args.motion_threshold,
    )


def _write_model_outputs(out: Path, model, command: str, options: dict) -> None:
    bundle_io.save_model(out, model)
    rows = [
        [d.iteration, d.objective, d.delta, d.sigma_s, d.sigma_t] for d in model.diagnostics
    ]
    atomic_write_bytes(
        out.with_name(out.stem + ".diagnostics.csv"),
        _csv_bytes(["iteration", "objective", "delta", "sigma_s", "sigma_t"], rows),
    )
    _write_run_record(out, command, options)


def _cmd_learn(args) -> int:
    frames, layout, _ = bundle_io.load_bundle(_require(args.bundle, "bundle"))
    config = _learn_config(args)
    features_map = None
    if args.features:
        features_map, _ = bundle_io.load_features(_require(args.features, "features file"))
    if args.segments:
        seg_input = bundle_io.load_segment_input(Path(args.bundle))
        model = dynamics.learn(frames, config, segment_input=seg_input)
    else:
        if not layout.links:
            raise ConfigError(
                "bundle layout has no correspondence links; supply --segments input"
            )
        model = dynamics.learn(frames, config, layout=layout, features_map=features_map)
    _write_model_outputs(
        Path(args.out),
        model,
        "learn",
        {
            "bundle": str(args.bundle),
            "bins": args.bins,
            "wt": args.wt,
            "eps": args.eps,
            "kmax": args.kmax,
            "jmax": args.jmax,
            "constraint": args.constraint,
            "init": args.init,
            "segments": bool(args.segments),
        },
    )
    return 0


def _cmd_residuals(args) -> int:
    model = bundle_io.load_model(_require(args.model, "model file"))
    feats, _ = bundle_io.load_features(_require(args.features, "features file"))
    report = analysis.residual_metrics(model, feats)
    rows = [[t, zr, zs, zt] for (t, zr, zs, zt) in report.rows()]
    atomic_write_bytes(
        Path(args.out), _csv_bytes(["t", "zeta_r", "zeta_s", "zeta_t"], rows)
    )
    if args.svg:
        _svg_line_plot(
            {"zeta_r": report.zeta_r, "zeta_s": report.zeta_s, "zeta_t": report.zeta_t},
            Path(args.svg),
        )
    _write_run_record(Path(args.out), "residuals", {"model": str(args.model)})
    return 0


def _cmd_distmat(args) -> int:
    model = bundle_io.load_model(_require(args.model, "model file"))
    dm = analysis.pairwise_dtw_matrix(model, threads=_threads_from(args))
    rows = [[dm.labels[k]] + list(dm.values[k]) for k in range(len(dm.labels))]
    atomic_write_bytes(Path(args.out), _csv_bytes(["label"] + list(dm.labels), rows))
    _write_run_record(Path(args.out), "distmat", {"model": str(args.model)})
    return 0


def _load_distmat(path: Path) -> analysis.DistanceMatrix:
    text = _require(path, "distance matrix").read_text().strip().splitlines()
    labels = text[0].split(",")[1:]
    values = np.array(
        [[float(x) for x in line.split(",")[1:]] for line in text[1:]], dtype=np.float64
    )
    return analysis.DistanceMatrix(labels=tuple(labels), values=values)


def _cmd_cluster(args) -> int:
    dm = _load_distmat(Path(args.distmat))
    labels = analysis.spectral_cluster(dm, args.k)
    rows = [[dm.labels[i], int(labels[i])] for i in range(len(labels))]
    atomic_write_bytes(Path(args.out), _csv_bytes(["label", "cluster"], rows))
    _write_run_record(Path(args.out), "cluster", {"distmat": str(args.distmat), "k": args.k})
    return 0


def _cmd_mds(args) -> int:
    dm = _load_distmat(Path(args.distmat))
    coords = analysis.classical_mds(dm, args.dim)
    rows = [
        [dm.labels[i]] + [float(c) for c in coords[i]] for i in range(len(dm.labels))
    ]
    header = ["label"] + [f"x{k + 1}" for k in range(args.dim)]
    atomic_write_bytes(Path(args.out), _csv_bytes(header, rows))
    if args.svg:
        _svg_scatter(coords, list(dm.labels), Path(args.svg))
    _write_run_record(Path(args.out), "mds", {"distmat": str(args.distmat), "dim": args.dim})
    return 0


def _cmd_holdout(args) -> int:
    frames, layout, _ = bundle_io.load_bundle(_require(args.bundle, "bundle"))
    if args.holdout >= layout.frames - 1:
        raise ConfigError("holdout span leaves no transforms to train on")
    keep = layout.frames - args.holdout
    spec = BinSpec(bins=args.bins)
    feats_all = extract_layout_features(frames, layout, spec)
    train_layout = layout.restrict_to_frames(keep)
    config = LearnConfig(
        bins=args.bins,
        window=args.wt,
        eps=args.eps,
        k_max=args.kmax,
        constraint=CONSTRAINT_BY_FLAG[args.constraint],
    )
    train_feats = {key: feats_all[key] for key in feats_all if key[0] <= keep}
    model = dynamics.learn(
        [f for f in frames if f.t <= keep], config, layout=train_layout, features_map=train_feats
    )
    report = analysis.holdout_reconstruct(
        model, feats_all, list(range(keep + 1, layout.frames + 1))
    )
    atomic_write_json(
        Path(args.out),
        {
            "heldout": list(report.heldout),
            "residual_model": report.residual_model,
            "residual_identity": report.residual_identity,
            "ratio": report.ratio,
        },
    )
    _write_run_record(
        Path(args.out),
        "holdout",
        {"bundle": str(args.bundle), "holdout": args.holdout, "bins": args.bins, "wt": args.wt},
    )
    return 0


def _cmd_classify(args) -> int:
    training = []
    for item in args.train:
        if "=" not in item:
            raise ConfigError(f"--train expects FILE=LABEL, got {item!r}")
        path, label = item.rsplit("=", 1)
        doc = load_json(_require(Path(path), "training sequence"))
        training.append((label, [np.array(m, dtype=np.float64) for m in doc["transforms"]]))
    doc = load_json(_require(Path(args.test), "test sequence"))
    test_seq = [np.array(m, dtype=np.float64) for m in doc["transforms"]]
    label = analysis.nn_dtw_classify(training, test_seq)
    print(label)
    if args.out:
        atomic_write_json(Path(args.out), {"label": label})
        _write_run_record(Path(args.out), "classify", {"test": str(args.test)})
    return 0


# ---------------------------------------------------------------------------
# the one-command synthetic reproduction pipeline


def pipeline_paper_synth(
    out_dir,
    bins: int = 40,
    window: int = 3,
    eps: float = 1e-3,
    k_max: int = 50,
    holdout: int = 5,
    seed: int = 20250301,
    threads: int = 1,
) -> dict:
    """Generate both rotation variants, learn, analyze, and score every check."""
    out_dir = Path(out_dir)
    checks: list[dict] = []

    def check(name: str, passed: bool, value) -> None:
        checks.append({"check": name, "passed": bool(passed), "value": value})

    variants = {}
    for name, opposite in (("same", False), ("opposite", True)):
        bdir = out_dir / name
        config = synthgen.paper_config(opposite=opposite, seed=seed)
        synthgen.generate_to_dir(config, bdir)
        frames, layout, gt = bundle_io.load_bundle(bdir)
        spec = BinSpec(bins=bins)
        feats = extract_layout_features(frames, layout, spec)
        bundle_io.save_features(bdir / "features.json", feats, bins=bins)
        model = dynamics.learn(
            frames,
            LearnConfig(bins=bins, window=window, eps=eps, k_max=k_max),
            layout=layout,
            features_map=feats,
        )
        _write_model_outputs(
            bdir / "model.json", model, "pipeline", {"variant": name, "bins": bins}
        )
        variants[name] = (frames, layout, gt, feats, model)

    # convergence and monotonicity on the same-rotation variant
    frames, layout, gt, feats, model = variants["same"]
    objectives = [d.objective for d in model.diagnostics]
    deltas = [d.delta for d in model.diagnostics]
    check("icm_converged_within_kmax", deltas[-1] < eps and len(objectives) <= k_max,
          {"iterations": len(objectives), "final_delta": deltas[-1]})
    worst_rise = max(
        (objectives[k + 1] - objectives[k] for k in range(len(objectives) - 1)),
        default=0.0,
    )
    check("objective_nonincreasing", worst_rise <= 1e-9, {"worst_rise": worst_rise})

    report = analysis.residual_metrics(model, feats)
    atomic_write_bytes(
        out_dir / "zeta.csv",
        _csv_bytes(["t", "zeta_r", "zeta_s", "zeta_t"],
                   [[t, zr, zs, zt] for (t, zr, zs, zt) in report.rows()]),
    )
    _svg_line_plot(
        {"zeta_r": report.zeta_r, "zeta_s": report.zeta_s, "zeta_t": report.zeta_t},
        out_dir / "zeta.svg",
    )
    ordering = np.mean(
        (report.zeta_s > report.zeta_r) & (report.zeta_t > report.zeta_r)
    )
    check("residual_ordering_90pct", ordering >= 0.9, {"fraction": float(ordering)})
    covs = {}
    for name, curve in (("zeta_r", report.zeta_r), ("zeta_s", report.zeta_s),
                        ("zeta_t", report.zeta_t)):
        covs[name] = float(np.std(curve) / np.mean(curve)) if np.mean(curve) > 0 else math.inf
    check(
        "residual_cov_below_half",
        all(np.isfinite(v) and v < 0.5 for v in covs.values()),
        covs,
    )

    # motion discrimination on the opposite-rotation variant
    frames_o, layout_o, gt_o, feats_o, model_o = variants["opposite"]
    dm = analysis.pairwise_dtw_matrix(model_o, threads=threads)
    atomic_write_bytes(
        out_dir / "distmat.csv",
        _csv_bytes(["label"] + list(dm.labels),
                   [[dm.labels[k]] + list(dm.values[k]) for k in range(len(dm.labels))]),
    )
    truth = [gt_o["elements"][label]["shape"] for label in dm.labels]
    cluster_labels = analysis.spectral_cluster(dm, 2)
    ari = analysis.adjusted_rand_index(cluster_labels, truth)
    atomic_write_bytes(
        out_dir / "clusters.csv",
        _csv_bytes(["label", "cluster"],
                   [[dm.labels[k], int(cluster_labels[k])] for k in range(len(dm.labels))]),
    )
    check("spectral_ari_perfect", ari == 1.0, {"ari": ari})

    coords = analysis.classical_mds(dm, 3)
    atomic_write_bytes(
        out_dir / "mds.csv",
        _csv_bytes(["label", "x1", "x2", "x3"],
                   [[dm.labels[k]] + [float(c) for c in coords[k]]
                    for k in range(len(dm.labels))]),
    )
    _svg_scatter(coords, list(dm.labels), out_dir / "mds.svg")
    groups = {}
    for k, shape_name in enumerate(truth):
        groups.setdefault(shape_name, []).append(coords[k])
    centroids = {g: np.mean(np.stack(v), axis=0) for g, v in groups.items()}
    names = sorted(groups)
    gap = float(np.linalg.norm(centroids[names[0]] - centroids[names[1]]))
    spread = max(
        float(np.linalg.norm(x - centroids[g])) for g in names for x in groups[g]
    )
    check("mds_types_separable", gap > spread, {"gap": gap, "max_spread": spread})

    # leave-five-out reconstruction on the same-rotation variant
    keep = layout.frames - holdout
    train_model = dynamics.learn(
        [f for f in frames if f.t <= keep],
        LearnConfig(bins=bins, window=window, eps=eps, k_max=k_max),
        layout=layout.restrict_to_frames(keep),
        features_map={key: feats[key] for key in feats if key[0] <= keep},
    )
    hold = analysis.holdout_reconstruct(
        train_model, feats, list(range(keep + 1, layout.frames + 1))
    )
    atomic_write_json(
        out_dir / "holdout.json",
        {
            "heldout": list(hold.heldout),
            "residual_model": hold.residual_model,
            "residual_identity": hold.residual_identity,
            "ratio": hold.ratio,
        },
    )
    check("holdout_beats_identity", hold.ratio < 1.0, {"ratio": hold.ratio})

    summary = {
        "bins": bins,
        "window": window,
        "eps": eps,
        "k_max": k_max,
        "seed": seed,
        "checks": checks,
        "all_passed": all(c["passed"] for c in checks),
    }
    atomic_write_json(out_dir / "summary.json", summary)
    return summary


def _cmd_pipeline(args) -> int:
    summary = pipeline_paper_synth(
        args.out,
        bins=args.bins,
        window=args.wt,
        eps=args.eps,
        k_max=args.kmax,
        seed=args.seed,
        threads=_threads_from(args),
    )
    _write_run_record(
        Path(args.out), "pipeline", {"bins": args.bins, "wt": args.wt, "seed": args.seed}
    )
    for chk in summary["checks"]:
        state = "PASS" if chk["passed"] else "FAIL"
        print(f"[{state}] {chk['check']}: {chk['value']}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> _Parser:
    parser = _Parser(prog="swarmdyn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_threads(p):
        p.add_argument("--threads", type=int, default=None, help="worker cap")

    p = sub.add_parser("gen", help="generate a synthetic sequence bundle")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("features", help="extract polar-bin features from a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--bins", type=int, default=40)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("neighborhoods", help="export the spatial weight table")
    p.add_argument("--bundle", required=True)
    p.add_argument("--wt", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_neighborhoods)

    p = sub.add_parser("learn", help="learn swarm dynamics (and layout with --segments)")
    p.add_argument("--bundle", required=True)
    p.add_argument("--features", default=None)
    p.add_argument("--bins", type=int, default=40)
    p.add_argument("--wt", type=int, default=3)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--kmax", type=int, default=50)
    p.add_argument("--jmax", type=int, default=0)
    p.add_argument("--constraint", choices=sorted(CONSTRAINT_BY_FLAG), default="none")
    p.add_argument("--init", choices=["prev", "projected"], default="prev")
    p.add_argument("--segments", action="store_true",
                   help="estimate the layout from segments/ + flows.json")
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--lambda", dest="lambda", type=float, default=0.5)
    p.add_argument("--motion-threshold", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_learn)

    p = sub.add_parser("residuals", help="per-frame residual curves")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--svg", default=None)
    p.set_defaults(func=_cmd_residuals)

    p = sub.add_parser("distmat", help="pairwise DTW distance matrix")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    add_threads(p)
    p.set_defaults(func=_cmd_distmat)

    p = sub.add_parser("cluster", help="spectral clustering of a distance matrix")
    p.add_argument("--distmat", required=True)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_cluster)

    p = sub.add_parser("mds", help="classical MDS embedding of a distance matrix")
    p.add_argument("--distmat", required=True)
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--out", required=True)
    p.add_argument("--svg", default=None)
    p.set_defaults(func=_cmd_mds)

    p = sub.add_parser("holdout", help="leave-k-out AR reconstruction")
    p.add_argument("--bundle", required=True)
    p.add_argument("--holdout", type=int, default=5)
    p.add_argument("--bins", type=int, default=40)
    p.add_argument("--wt", type=int, default=3)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--kmax", type=int, default=50)
    p.add_argument("--constraint", choices=sorted(CONSTRAINT_BY_FLAG), default="none")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_holdout)

    p = sub.add_parser("classify", help="NN-DTW classification of a transform sequence")
    p.add_argument("--test", required=True)
    p.add_argument("--train", nargs="+", required=True, metavar="FILE=LABEL")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("pipeline", help="one-command synthetic reproduction + checks")
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=40)
    p.add_argument("--wt", type=int, default=3)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--kmax", type=int, default=50)
    p.add_argument("--seed", type=int, default=20250301)
    add_threads(p)
    p.set_defaults(func=_cmd_pipeline)

    return parser


def run(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"swarmdyn: error: {exc}", file=sys.stderr)
        return 1
    except (FaultError, SwarmdynError) as exc:
        print(f"swarmdyn: fault: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # anything unexpected is a runtime fault
        print(f"swarmdyn: fault: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
