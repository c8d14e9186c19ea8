"""Command-line entry point: one subcommand per pipeline stage plus ``pipeline`` and ``fixture``.

Exit codes: 0 success, 2 input rejected by a filter, 3 leak-audit failure,
4 IO or schema error, 1 anything else.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import audio as audio_mod
from .bundle import Track, load_track, load_utterance, save_track, save_utterance
from .chunking import chunk_track
from .config import load_config, make_config
from .core import AudioClip, Utterance, to_gray
from .errors import BundleError, LipdubError, StageError
from .metrics import embed_frames, frechet_distance, psnr, ssim, stats_from_embeddings
from .pipeline import (
    EXIT_IO,
    EXIT_LEAK,
    EXIT_OK,
    EXIT_REJECTED,
    assess,
    canonicalize_track,
    json_safe,
    prepare_track,
    run_pipeline,
    synthesize_utterance,
    write_report,
)
from .quality import variance_of_laplacian
from .references import select_references
from .rendering import paste_back

log = logging.getLogger("lipdub")


def _emit(record: dict, args) -> None:
    print(json.dumps(json_safe(record), sort_keys=True))
    if args.report:
        write_report(record, args.report)


def _config(args) -> dict:
    cfg = load_config(args.config) if args.config else make_config()
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.jobs is not None:
        cfg["jobs"] = args.jobs
    if args.synth is not None:
        cfg["synthesizer"] = args.synth
    return cfg


def _read_manifest_kind(path) -> str:
    try:
        return json.loads((Path(path) / "manifest.json").read_text()).get("kind", "")
    except (OSError, ValueError, AttributeError) as exc:
        raise BundleError(f"cannot read manifest in {path}: {exc}") from None


# ---------------------------------------------------------------- subcommands


def cmd_fixture(args, cfg) -> int:
    from .fixture import generate_fixture

    track = generate_fixture(cfg["seed"], args.frames, args.out)
    _emit({"out": str(args.out), "frames": len(track), "fps": track.fps, "seed": cfg["seed"]}, args)
    return EXIT_OK


def cmd_canonicalize(args, cfg) -> int:
    track, verdict = prepare_track(load_track(args.input), cfg)
    if verdict is not None:
        _emit({"verdict": "reject", "reason": verdict.reason}, args)
        return EXIT_REJECTED
    crops = canonicalize_track(track, cfg, cfg["jobs"])
    u = Utterance(
        frames=tuple(c.image for c in crops),
        audio=track.audio,
        fps=track.fps,
        per_frame_landmarks=tuple(c.landmarks for c in crops),
        per_frame_transform=tuple(c.transform for c in crops),
        language=track.language,
        source_frame_indices=tuple(range(len(track))),
        source_sample_range=(0, len(track.audio)),
    )
    save_utterance(u, args.out)
    _emit({"out": str(args.out), "frames": len(u), "alignment_landmarks": list(crops[0].trace)}, args)
    return EXIT_OK


def cmd_filter(args, cfg) -> int:
    track, verdict = prepare_track(load_track(args.input), cfg)
    if verdict is not None:
        _emit({"verdict": "reject", "reason": verdict.reason}, args)
        return EXIT_REJECTED
    report = assess(track, canonicalize_track(track, cfg, cfg["jobs"]), cfg)
    _emit(report.to_record(), args)
    return EXIT_OK if report.verdict else EXIT_REJECTED


def cmd_chunk(args, cfg) -> int:
    n = len(load_track(args.input)) if args.frames is None else args.frames
    chunks = chunk_track(n, cfg["chunking"]["max_chunk"], cfg["chunking"]["buffer"])
    _emit(
        {
            "n_frames": n,
            "chunks": [
                {"core": list(c.core_range), "buffer_pre": c.buffer_pre, "buffer_post": c.buffer_post,
                 "pad_audio_pre": c.pad_audio_pre, "pad_audio_post": c.pad_audio_post}
                for c in chunks
            ],
        },
        args,
    )
    return EXIT_OK


def _load_audio(path) -> AudioClip:
    kind = _read_manifest_kind(path)
    return load_utterance(path).audio if kind == "utterance" else load_track(path).audio


def cmd_features(args, cfg) -> int:
    fm = audio_mod.extract(_load_audio(args.input), cfg["audio"]["feature_kind"], cfg["audio"]["n_mfcc"])
    audio_mod.save_features(fm, args.out)
    _emit({"out": str(args.out), "kind": fm.kind, "shape": list(fm.shape), "rate": fm.rate}, args)
    return EXIT_OK


def cmd_refs(args, cfg) -> int:
    u = load_utterance(args.input)
    k = cfg["references"]["k"] if args.k is None else args.k
    strategy = cfg["references"]["strategy"] if args.strategy is None else args.strategy
    sel = select_references(u.per_frame_landmarks, k, strategy, cfg["seed"], exclude=args.exclude or ())
    _emit({"indices": list(sel.indices), "strategy": sel.strategy, "k": k, "excluded": sorted(sel.excluded)}, args)
    return EXIT_OK


def cmd_synth(args, cfg) -> int:
    u = load_utterance(args.input)
    out, plans = synthesize_utterance(u, cfg, cfg["synthesizer"], cfg["seed"], cfg["jobs"])
    audits = [{"frames": list(p.frames), "passed": p.audit.passed, "channels": p.audit.to_record()} for p in plans]
    if out is None:
        _emit({"status": "leak", "leak_audits": audits}, args)
        return EXIT_LEAK
    save_utterance(out, args.out)
    _emit({"status": "ok", "out": str(args.out), "leak_audits": audits}, args)
    return EXIT_OK


def cmd_render(args, cfg) -> int:
    track = load_track(args.track)
    u = load_utterance(args.utterance)
    frames = list(track.frames)
    for crop, t, lm, f in zip(u.frames, u.per_frame_transform, u.per_frame_landmarks, u.source_frame_indices):
        if not 0 <= f < len(frames):
            raise BundleError(f"utterance frame index {f} outside track of {len(frames)} frames")
        frames[f] = paste_back(frames[f], crop, t, lm, cfg["mask"]["feather_sigma"], chin_shift=cfg["mask"]["render_chin_shift"])
    out = Track(tuple(frames), track.audio, track.fps, track.landmarks, track.language, cfg["seed"])
    save_track(out, args.out)
    _emit({"out": str(args.out), "frames_replaced": len(u)}, args)
    return EXIT_OK


def cmd_metrics(args, cfg) -> int:
    a, b = load_track(args.output), load_track(args.reference)
    if len(a) != len(b):
        raise BundleError(f"frame counts differ: {len(a)} vs {len(b)}")
    psnrs = [psnr(x, y) for x, y in zip(a.frames, b.frames)]
    finite = [p for p in psnrs if np.isfinite(p)]
    record = {
        "psnr_mean": float(np.mean(finite)) if finite else float("inf"),
        "ssim_mean": float(np.mean([ssim(x, y) for x, y in zip(a.frames, b.frames)])),
        "vlap_mean": float(np.mean([variance_of_laplacian(to_gray(x)) for x in a.frames])),
        "frechet": frechet_distance(
            stats_from_embeddings(embed_frames(a.frames)), stats_from_embeddings(embed_frames(b.frames))
        ),
    }
    _emit(record, args)
    return EXIT_OK


def cmd_pipeline(args, cfg) -> int:
    if args.input:
        cfg["input"] = str(args.input)
    if args.output:
        cfg["output"] = str(args.output)
    result = run_pipeline(cfg, report=args.report)
    summary = {k: result.report.get(k) for k in ("status", "exit_code", "metrics", "quality", "error")}
    print(json.dumps(json_safe(summary), sort_keys=True))
    return result.exit_code


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config merged over the shipped defaults")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--synth", help="synthesizer name (baseline, oracle, passthrough)")
    common.add_argument("--report", type=Path, help="write the JSON result here as well")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lipdub", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fixture", parents=[common], help="render a synthetic talking-face track")
    s.add_argument("--frames", type=int, default=100)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_fixture)

    s = sub.add_parser("canonicalize", parents=[common], help="track bundle -> canonical-crop utterance bundle")
    s.add_argument("input", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_canonicalize)

    s = sub.add_parser("filter", parents=[common], help="run the quality filters on a track bundle")
    s.add_argument("input", type=Path)
    s.set_defaults(func=cmd_filter)

    s = sub.add_parser("chunk", parents=[common], help="print chunk ranges and buffers")
    s.add_argument("input", type=Path, nargs="?")
    s.add_argument("--frames", type=int, help="chunk this many frames instead of reading a bundle")
    s.set_defaults(func=cmd_chunk)

    s = sub.add_parser("features", parents=[common], help="audio features of a bundle")
    s.add_argument("input", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_features)

    s = sub.add_parser("refs", parents=[common], help="select reference frames of an utterance bundle")
    s.add_argument("input", type=Path)
    s.add_argument("--k", type=int)
    s.add_argument("--strategy", choices=["kmeans", "first", "uniform", "random"])
    s.add_argument("--exclude", type=int, nargs="*")
    s.set_defaults(func=cmd_refs)

    s = sub.add_parser("synth", parents=[common], help="synthesize the mouth region of an utterance bundle")
    s.add_argument("input", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("render", parents=[common], help="paste utterance crops back into a track bundle")
    s.add_argument("track", type=Path)
    s.add_argument("utterance", type=Path)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("metrics", parents=[common], help="compare a rendered track against a reference track")
    s.add_argument("output", type=Path)
    s.add_argument("reference", type=Path)
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("pipeline", parents=[common], help="run every stage end to end")
    s.add_argument("--input", type=Path)
    s.add_argument("--output", type=Path)
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return args.func(args, cfg)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO if isinstance(exc.cause, OSError) else 1
    except (BundleError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except LipdubError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
