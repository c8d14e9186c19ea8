"""End-to-end dubbing run: filter, canonicalize, chunk, features, references, synthesize, render.

Every stage is a plain function over in-memory values so the CLI can expose
them one by one. Parallel work goes through a bounded thread pool whose
results are merged in index order, so the output never depends on ``jobs``.
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import audio as audio_mod
from .bundle import Track, load_track, save_track
from .chunking import chunk_audio, chunk_track
from .config import load_config, make_config
from .core import AudioClip, LandmarkSet, Utterance, UtteranceChunk, frame_sample_bounds
from .errors import BundleError, LipdubError, StageError, ValidationError
from .geometry import CropResult, canonicalize_crop, smooth_landmarks
from .masking import RectMask
from .metrics import embed_frames, frechet_distance, psnr, ssim, stats_from_embeddings
from .quality import TrackQualityReport, Verdict, assess_track, normalize_fps
from .references import select_references
from .rendering import render_mask, render_video
from .synthesis import LeakAuditReport, SynthesisRequest, build_request, create, leak_audit, synthesize

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_REJECTED = 2
EXIT_LEAK = 3
EXIT_IO = 4


def parallel_map(fn: Callable, items: Sequence, jobs: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally on a thread pool; order is always preserved."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


@contextmanager
def stage(name: str, timings: dict, index=None):
    t0 = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except (LipdubError, ValueError, KeyError, OSError) as exc:
        raise StageError(name, exc, index) from exc
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0


# ---------------------------------------------------------------- stages


def prepare_track(track: Track, cfg: dict) -> tuple[Track, Verdict | None]:
    """Bring fps into range (or reject) and smooth the landmark trajectories."""
    if not track.landmarks:
        raise ValidationError("input track carries no landmarks")
    normalized = normalize_fps(list(range(len(track))), track.fps)
    if isinstance(normalized, Verdict):
        return track, normalized
    kept, fps = normalized
    lms = [track.landmarks[i] for i in kept]
    sigma = cfg["geometry"]["landmark_smoothing_sigma"]
    if sigma > 0:
        lms = smooth_landmarks(lms, sigma)
    out = Track(
        frames=tuple(track.frames[i] for i in kept),
        audio=track.audio,
        fps=fps,
        landmarks=tuple(lms),
        language=track.language,
        seed=track.seed,
    )
    return out, None


def canonicalize_track(track: Track, cfg: dict, jobs: int = 1) -> list[CropResult]:
    names = tuple(cfg["geometry"]["alignment_landmarks"])
    return parallel_map(lambda i: canonicalize_crop(track.frames[i], track.landmarks[i], names=names), range(len(track)), jobs)


def assess(track: Track, crops: Sequence[CropResult], cfg: dict) -> TrackQualityReport:
    q = cfg["quality"]
    return assess_track(
        [c.image for c in crops],
        track.landmarks,
        track.audio,
        track.fps,
        min_eye_distance=q["min_eye_distance"],
        min_vlap=q["min_vlap"],
        sync_threshold=q["sync_threshold"],
        require_sync=q["require_sync"],
    )


def chunk_utterance(chunk: UtteranceChunk, track: Track, crops: Sequence[CropResult]) -> Utterance:
    """The canonical-crop utterance covering a chunk's span (buffers included)."""
    lo, hi = chunk.span
    sr = track.audio.sample_rate
    a = frame_sample_bounds(lo, track.fps, sr)[0]
    b = min(frame_sample_bounds(hi - 1, track.fps, sr)[1], len(track.audio))
    return Utterance(
        frames=tuple(c.image for c in crops[lo:hi]),
        audio=AudioClip(track.audio.samples[a:b], sr),
        fps=track.fps,
        per_frame_landmarks=tuple(c.landmarks for c in crops[lo:hi]),
        per_frame_transform=tuple(c.transform for c in crops[lo:hi]),
        language=track.language,
        source_frame_indices=tuple(range(lo, hi)),
        source_sample_range=(a, b),
    )


def audio_windows(chunk: UtteranceChunk, track: Track, cfg: dict) -> dict[int, np.ndarray]:
    """Feature window for every span frame of the chunk, keyed by track frame index."""
    a = cfg["audio"]
    fm = audio_mod.extract(chunk_audio(chunk, track.audio, track.fps), a["feature_kind"], a["n_mfcc"])
    lo, hi = chunk.span
    return {
        f: audio_mod.window_for_frame(fm, f - chunk.start + chunk.buffer, track.fps, a["window_frames"])
        for f in range(lo, hi)
    }


def block_ranges(lo: int, hi: int, block: int) -> list[tuple[int, int]]:
    return [(s, min(s + block, hi)) for s in range(lo, hi, block)]


def request_block(n_frames: int, cfg: dict) -> int:
    """Block length, shortened on short tracks so ``k`` frames outside each block remain as references."""
    return max(1, min(cfg["chunking"]["request_block"], n_frames - cfg["references"]["k"]))


@dataclass
class BlockPlan:
    chunk_index: int
    frames: tuple[int, int]
    request: SynthesisRequest
    audit: LeakAuditReport


def plan_chunk(ci: int, chunk: UtteranceChunk, track: Track, crops: Sequence[CropResult], cfg: dict, seed: int) -> list[BlockPlan]:
    """Build and audit one synthesis request per block of the chunk span.

    References are drawn from the whole track minus the block's own frames.
    """
    rect = RectMask(*cfg["mask"]["rect"])
    windows = audio_windows(chunk, track, cfg)
    utt = chunk_utterance(chunk, track, crops)
    crop_images = [c.image for c in crops]
    crop_lms = [c.landmarks for c in crops]
    trace = crops[chunk.span[0]].trace
    ref_cfg = cfg["references"]
    plans = []
    for lo, hi in block_ranges(*chunk.span, request_block(len(track), cfg)):
        frames = list(range(lo, hi))
        refs = select_references(crop_lms, ref_cfg["k"], ref_cfg["strategy"], seed, exclude=frames)
        req = build_request(crop_images, frames, refs.indices, [windows[f] for f in frames], rect, track.fps)
        # The audit indexes the chunk utterance, so shift indices to its local frame numbers.
        shift = chunk.span[0]
        local = replace(
            req,
            frame_indices=tuple(i - shift for i in req.frame_indices),
            reference_indices=tuple(i - shift for i in req.reference_indices),
        )
        audit = leak_audit(utt, local, trace, min_mask_fraction=cfg["mask"]["min_mask_fraction"])
        plans.append(BlockPlan(ci, (lo, hi), req, audit))
    return plans


def _interior_psnr(out_frames, gt_frames, crops, frame_ids, cfg) -> float:
    sq, count = 0.0, 0
    for f in frame_ids:
        m = render_mask(gt_frames[f].shape, crops[f].transform, crops[f].landmarks, cfg["mask"]["feather_sigma"], cfg["mask"]["render_chin_shift"])
        sel = m >= 1.0 - 1e-9
        d = np.asarray(out_frames[f])[sel] - np.asarray(gt_frames[f])[sel]
        sq += float(np.sum(d * d))
        count += d.size
    if count == 0:
        return float("nan")
    mse = sq / count
    return float("inf") if mse == 0 else float(10.0 * np.log10(1.0 / mse))


def metric_table(out_frames, gt_frames, crops, synth_crops: dict, frame_ids, cfg) -> dict:
    """Rendered video vs ground truth on the synthesized frames."""
    if not frame_ids:
        return {}
    true_crops = [crops[f].image for f in frame_ids]
    fake_crops = [synth_crops[f] for f in frame_ids]
    ssims = [float(ssim(a, b)) for a, b in zip(fake_crops, true_crops)]
    fd = frechet_distance(stats_from_embeddings(embed_frames(fake_crops)), stats_from_embeddings(embed_frames(true_crops)))
    frame_psnr = [psnr(out_frames[f], gt_frames[f]) for f in frame_ids]
    return {
        "interior_psnr": _interior_psnr(out_frames, gt_frames, crops, frame_ids, cfg),
        "frame_psnr_mean": float(np.mean([p for p in frame_psnr if np.isfinite(p)])) if any(np.isfinite(frame_psnr)) else float("inf"),
        "crop_ssim_mean": float(np.mean(ssims)),
        "crop_frechet": float(fd),
    }


# ---------------------------------------------------------------- orchestration


@dataclass
class PipelineResult:
    status: str
    exit_code: int
    report: dict
    output: Track | None = None
    chunks: list = field(default_factory=list)


def json_safe(v):
    if isinstance(v, float) and not np.isfinite(v):
        return None if np.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, dict):
        return {str(k): json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [json_safe(x) for x in v]
    if isinstance(v, np.generic):
        return json_safe(v.item())
    return v


def write_report(report: dict, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(json_safe(report), indent=1, sort_keys=True))


def run_pipeline(
    config=None,
    *,
    seed: int | None = None,
    jobs: int | None = None,
    synth: str | None = None,
    report: str | Path | None = None,
    track: Track | None = None,
    ground_truth: Track | None = None,
) -> PipelineResult:
    """Run every stage on the configured input bundle and write the rendered bundle.

    ``config`` is a path, an override dict, or ``None`` for the defaults.
    Keyword arguments override the matching config keys. ``track`` bypasses
    reading ``config["input"]``.
    """
    cfg = load_config(config) if isinstance(config, (str, Path)) else make_config(config)
    seed = cfg["seed"] if seed is None else seed
    jobs = cfg["jobs"] if jobs is None else jobs
    synth_name = cfg["synthesizer"] if synth is None else synth
    report_path = cfg["report"] if report is None else report
    timings: dict[str, float] = {}
    rep: dict = {"seed": seed, "jobs": jobs, "synthesizer": synth_name, "timings": timings}

    def finish(status, code, output=None, chunks=()):
        rep["status"], rep["exit_code"] = status, code
        if report_path is not None:
            write_report(rep, report_path)
        return PipelineResult(status, code, rep, output, list(chunks))

    try:
        with stage("load", timings):
            if track is None:
                if cfg["input"] is None:
                    raise ValidationError("config names no input bundle")
                track = load_track(cfg["input"])
            if ground_truth is None and cfg.get("ground_truth"):
                ground_truth = load_track(cfg["ground_truth"])
        rep["n_frames_in"], rep["fps_in"] = len(track), track.fps

        with stage("filter", timings):
            prepared, verdict = prepare_track(track, cfg)
        if verdict is not None:
            rep["quality"] = {"verdict": "reject", "reason": verdict.reason}
            return finish("rejected", EXIT_REJECTED)

        with stage("canonicalize", timings):
            crops = canonicalize_track(prepared, cfg, jobs)
        with stage("filter", timings):
            quality = assess(prepared, crops, cfg)
        rep["quality"] = quality.to_record()
        if not quality.verdict:
            log.info("track rejected: %s", quality.verdict.reason)
            return finish("rejected", EXIT_REJECTED)

        with stage("chunk", timings):
            ch = cfg["chunking"]
            chunks = chunk_track(len(prepared), ch["max_chunk"], ch["buffer"])
        rep["chunks"] = [
            {"core": list(c.core_range), "buffer_pre": c.buffer_pre, "buffer_post": c.buffer_post} for c in chunks
        ]

        plans: list[BlockPlan] = []
        with stage("plan", timings):
            for ci, per_chunk in enumerate(
                parallel_map(lambda item: plan_chunk(item[0], item[1], prepared, crops, cfg, seed), list(enumerate(chunks)), jobs)
            ):
                plans.extend(per_chunk)
        rep["leak_audits"] = [
            {
                "chunk": p.chunk_index,
                "frames": list(p.frames),
                "references": list(p.request.reference_indices),
                "passed": p.audit.passed,
                "channels": p.audit.to_record(),
            }
            for p in plans
        ]
        if not all(p.audit.passed for p in plans):
            return finish("leak", EXIT_LEAK)

        with stage("synthesize", timings):
            gt_crops = [c.image for c in crops]
            synthesizer = create(synth_name, crops=gt_crops, flip_sign=cfg["attention"]["flip_sign"])
            results = parallel_map(lambda p: synthesize(p.request, synthesizer), plans, jobs)

        with stage("render", timings):
            by_chunk: dict[int, dict[int, np.ndarray]] = {}
            for p, res in zip(plans, results):
                by_chunk.setdefault(p.chunk_index, {}).update(zip(p.request.frame_indices, res.frames))
            if synthesizer.identity:
                rendered = list(prepared.frames)
            else:
                pairs = [(c, [by_chunk[i][f] for f in range(*c.span)]) for i, c in enumerate(chunks)]
                rendered = render_video(
                    prepared.frames,
                    pairs,
                    [c.transform for c in crops],
                    [c.landmarks for c in crops],
                    cfg["mask"]["feather_sigma"],
                    chin_shift=cfg["mask"]["render_chin_shift"],
                    jobs=jobs,
                )
            output = Track(
                frames=tuple(rendered),
                audio=prepared.audio,
                fps=prepared.fps,
                landmarks=tuple(track.landmarks[i] for i in _kept_indices(track, prepared)),
                language=prepared.language,
                seed=seed,
            )

        with stage("metrics", timings):
            gt = prepared if ground_truth is None else ground_truth
            if len(gt) != len(output):
                raise ValidationError(f"ground truth has {len(gt)} frames, output {len(output)}")
            synth_crops = {}
            for i, c in enumerate(chunks):
                for f in range(*c.core_range):
                    synth_crops[f] = by_chunk[i][f]
            rep["metrics"] = metric_table(output.frames, gt.frames, crops, synth_crops, sorted(synth_crops), cfg)

        if cfg["output"] is not None:
            with stage("save", timings):
                save_track(output, cfg["output"])
        return finish("ok", EXIT_OK, output, chunks)
    except StageError as exc:
        rep["error"] = {"stage": exc.stage, "index": exc.index, "message": str(exc.cause)}
        if isinstance(exc.cause, (BundleError, OSError)) or exc.stage == "load":
            log.error("%s", exc)
            return finish("io_error", EXIT_IO)
        raise


def _kept_indices(original: Track, prepared: Track) -> range:
    step = round(original.fps / prepared.fps)
    return range(0, len(original), step)


# ---------------------------------------------------------------- utterance-level stages (CLI)


def plan_utterance(u: Utterance, cfg: dict, seed: int, trace: Sequence[str] | None = None) -> list[BlockPlan]:
    """Requests and leak audits for every frame of a stored utterance, block by block."""
    a = cfg["audio"]
    fm = audio_mod.extract(u.audio, a["feature_kind"], a["n_mfcc"])
    rect = RectMask(*cfg["mask"]["rect"])
    trace = tuple(cfg["geometry"]["alignment_landmarks"]) if trace is None else tuple(trace)
    frames = list(u.frames)
    plans = []
    for lo, hi in block_ranges(0, len(u), request_block(len(u), cfg)):
        idx = list(range(lo, hi))
        refs = select_references(u.per_frame_landmarks, cfg["references"]["k"], cfg["references"]["strategy"], seed, exclude=idx)
        windows = [audio_mod.window_for_frame(fm, f, u.fps, a["window_frames"]) for f in idx]
        req = build_request(frames, idx, refs.indices, windows, rect, u.fps)
        audit = leak_audit(u, req, trace, min_mask_fraction=cfg["mask"]["min_mask_fraction"])
        plans.append(BlockPlan(0, (lo, hi), req, audit))
    return plans


def synthesize_utterance(u: Utterance, cfg: dict, synth_name: str, seed: int, jobs: int = 1) -> tuple[Utterance | None, list[BlockPlan]]:
    """Synthesized copy of ``u`` (``None`` when an audit fails) plus the audited plans."""
    plans = plan_utterance(u, cfg, seed)
    if not all(p.audit.passed for p in plans):
        return None, plans
    synthesizer = create(synth_name, crops=list(u.frames), flip_sign=cfg["attention"]["flip_sign"])
    results = parallel_map(lambda p: synthesize(p.request, synthesizer), plans, jobs)
    frames = [f for res in results for f in res.frames]
    return replace(u, frames=tuple(frames)), plans
