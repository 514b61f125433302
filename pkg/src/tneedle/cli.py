"""Command-line front end: synth | describe | align | detect | cluster.

Every run with the same arguments and seed writes byte-identical outputs,
no matter how many threads are allowed. Exit codes: 0 success, 2 bad
arguments or unreadable/invalid input, 1 unexpected runtime failure.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _fmt(x) -> str:
    """Shortest round-trip decimal for a float, stable across runs."""
    return repr(float(x))


def _add_needle_args(p):
    p.add_argument("--patch-radius", type=int, default=1)
    p.add_argument("--gamma", type=int, default=3, help="temporal radius per scale, frames")
    p.add_argument("--scales", type=int, default=3)
    p.add_argument("--noise-percentile", type=float, default=0.30)


def _add_codebook_args(p):
    p.add_argument("--codebook-k", type=int, default=300)
    p.add_argument("--quota", type=int, default=2000,
                   help="informative descriptors kept per video")


def _needle_params(args):
    from .needle import NeedleParams
    return NeedleParams(patch_radius=args.patch_radius, gamma=args.gamma,
                        scale_count=args.scales, noise_percentile=args.noise_percentile)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tneedle",
                                 description="temporal-needle video analysis")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic test video")
    p.add_argument("--pattern", required=True,
                   choices=["oscillating-dot", "translating-bar", "two-phase-gesture"])
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--period", type=int, default=16)
    p.add_argument("--amplitude", type=float, default=8.0)
    p.add_argument("--speed-ratio", type=float, default=1.0)
    p.add_argument("--background", default="flat",
                   choices=["flat", "gradient", "textured"])
    p.add_argument("--fg-intensity", type=float, default=1.0)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--fps", type=float, default=25.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="raw-y8 output path")

    p = sub.add_parser("describe", help="compute a descriptor field dump")
    p.add_argument("input", help="raw-y8 file or image directory")
    _add_needle_args(p)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True, help="field dump output path")

    p = sub.add_parser("align", help="temporal (and optional spatial) alignment")
    p.add_argument("--query", required=True)
    p.add_argument("--ref", required=True)
    _add_needle_args(p)
    _add_codebook_args(p)
    p.add_argument("--range", type=int, default=None, metavar="R",
                   help="search integer shifts in [-R, R] (default frames/2)")
    p.add_argument("--no-subframe", action="store_true",
                   help="stop after the integer stage")
    p.add_argument("--spatial", default="none", choices=["none", "affine", "fundamental"])
    p.add_argument("--ransac-iters", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("detect", help="find a short action inside a reference")
    p.add_argument("--query", required=True)
    p.add_argument("--ref", required=True)
    _add_needle_args(p)
    _add_codebook_args(p)
    p.add_argument("--knn", type=int, default=15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("cluster", help="cluster a collection of videos")
    p.add_argument("manifest", help="text file with one video path per line")
    _add_needle_args(p)
    _add_codebook_args(p)
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--iterations", type=int, default=None,
                   help="growing rounds (default ceil(10 log10(M)))")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    return ap


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _cmd_synth(args) -> int:
    from .synthgen import MotionScript, generate
    from .video_io import save_video
    script = MotionScript(pattern=args.pattern, period=args.period,
                          amplitude=args.amplitude, speed_ratio=args.speed_ratio,
                          background=args.background,
                          foreground_intensity=args.fg_intensity,
                          noise_sigma=args.noise_sigma)
    video = generate(script, args.width, args.height, args.frames,
                     seed=args.seed, fps=args.fps)
    save_video(video, args.out)
    print(f"wrote {args.out}: {video.width}x{video.height}x{video.frame_count}")
    return 0


def _cmd_describe(args) -> int:
    from .needle import field_from_video, save_field
    from .video_io import load_video
    video = load_video(args.input)
    fld = field_from_video(video, _needle_params(args))
    save_field(fld, args.out)
    nt, ny, nx = fld.grid_shape
    print(f"wrote {args.out}: {nt}x{ny}x{nx} descriptors of length "
          f"{fld.descriptor_length}, noise floor {_fmt(fld.noise_floor)}")
    return 0


def _load_pair(args):
    from .needle import field_from_video
    from .significance import build_codebook, select_informative
    from .video_io import load_video
    query = load_video(args.query)
    ref = load_video(args.ref)
    params = _needle_params(args)
    q_field = field_from_video(query, params)
    r_field = field_from_video(ref, params)
    codebook = build_codebook([q_field, r_field], k=args.codebook_k, seed=args.seed)
    q_locs = select_informative(q_field, codebook, args.quota)
    r_locs = select_informative(r_field, codebook, args.quota)
    return query, ref, params, q_field, r_field, codebook, q_locs, r_locs


def _cmd_align(args) -> int:
    from .align import (collect_matches, integer_shift, ransac_affine,
                        ransac_fundamental, subframe_shift)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    query, ref, params, q_field, r_field, codebook, q_locs, r_locs = _load_pair(args)
    rate = ref.fps / query.fps
    shift_range = None if args.range is None else (-args.range, args.range)
    base = integer_shift(q_field, r_field, q_locs, r_locs,
                         shift_range=shift_range, rate_ratio=rate,
                         threads=args.threads)

    with open(out / "error_curve.csv", "w") as fh:
        fh.write("shift,error\n")
        for s in sorted(base.error_curve):
            fh.write(f"{s},{_fmt(base.error_curve[s])}\n")

    result = {
        "command": "align",
        "rate_ratio": rate,
        "integer_shift": int(base.shift),
        "integer_error": base.error_curve[int(base.shift)],
        "shift": base.shift,
    }
    model = base
    if not args.no_subframe:
        fine = subframe_shift(query, r_field, codebook, base, params=params,
                              quota=args.quota, threads=args.threads)
        result["shift"] = fine.shift
        result["subframe"] = {
            "alpha": fine.shift - base.shift,
            "curve": {f"{a:.1f}": e for a, e in sorted(fine.error_curve.items())},
        }
        model = fine

    if args.spatial != "none":
        matches = collect_matches(q_field, r_field, q_locs, model, codebook)
        if args.spatial == "affine":
            transform, score = ransac_affine(matches, q_field, r_field,
                                             iterations=args.ransac_iters,
                                             seed=args.seed, threads=args.threads)
            result["spatial"] = {"model": "affine",
                                 "matrix": transform.matrix.tolist(),
                                 "score": score}
        else:
            p1 = np.array([m.query[:2] for m in matches], dtype=np.float64)
            p2 = np.array([m.match[:2] for m in matches], dtype=np.float64)
            fmat, score = ransac_fundamental(p1, p2, iterations=args.ransac_iters,
                                             seed=args.seed, threads=args.threads)
            result["spatial"] = {"model": "fundamental",
                                 "matrix": fmat.matrix.tolist(),
                                 "score": score}
        result["match_count"] = len(matches)

    _write_json(out / "result.json", result)
    print(f"shift {result['shift']} (integer stage {result['integer_shift']})")
    return 0


def _cmd_detect(args) -> int:
    from .detect import find_detections, vote_centers
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    query, ref, params, q_field, r_field, codebook, q_locs, _ = _load_pair(args)
    q_center = query.frame_count // 2
    curve = vote_centers(q_field, q_center, r_field, q_locs,
                         neighbor_count=args.knn)
    hits = find_detections(curve)

    with open(out / "score_curve.csv", "w") as fh:
        fh.write("frame,votes,smoothed\n")
        for f in range(len(curve.votes)):
            fh.write(f"{f},{_fmt(curve.votes[f])},{_fmt(curve.smoothed[f])}\n")

    _write_json(out / "result.json", {
        "command": "detect",
        "query_center": q_center,
        "mean_score": float(curve.smoothed.mean()),
        "detections": [{"frame": f, "score": s} for f, s in hits],
    })
    print(f"{len(hits)} detection(s): {[f for f, _ in hits]}")
    return 0


def _cmd_cluster(args) -> int:
    from .cluster import cluster_collection
    from .video_io import load_video
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = Path(args.manifest)
    if not manifest.exists():
        raise ValueError(f"{manifest}: no such manifest")
    paths = [ln.strip() for ln in manifest.read_text().splitlines()
             if ln.strip() and not ln.strip().startswith("#")]
    if not paths:
        raise ValueError(f"{manifest}: no video paths listed")
    videos = [load_video(manifest.parent / p if not Path(p).is_absolute() else p)
              for p in paths]
    result = cluster_collection(videos, args.clusters, seed=args.seed,
                                params=_needle_params(args),
                                iterations=args.iterations,
                                codebook_k=args.codebook_k,
                                threads=args.threads)

    with open(out / "affinity.csv", "w") as fh:
        for row in result.affinity:
            fh.write(",".join(_fmt(v) for v in row) + "\n")

    _write_json(out / "result.json", {
        "command": "cluster",
        "videos": paths,
        "labels": [int(l) for l in result.labels],
        "rounds": result.rounds,
    })
    print("labels:", " ".join(str(int(l)) for l in result.labels))
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "describe": _cmd_describe,
    "align": _cmd_align,
    "detect": _cmd_detect,
    "cluster": _cmd_cluster,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, FileNotFoundError, NotADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # pragma: no cover - defensive
        print(f"runtime error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
