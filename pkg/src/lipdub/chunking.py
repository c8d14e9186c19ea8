"""Split long face tracks into near-equal chunks with context buffers."""
from __future__ import annotations

import math
from dataclasses import replace
from typing import Sequence

import numpy as np

from .core import AudioClip, UtteranceChunk, frame_sample_bounds
from .errors import ValidationError

MAX_CHUNK = 240
BUFFER = 10


def split_track(n_frames: int, max_len: int = MAX_CHUNK) -> list[tuple[int, int]]:
    """``ceil(N / M)`` half-open ranges covering ``[0, N)``; lengths differ by at most one, longer ones first."""
    if n_frames < 1 or max_len < 1:
        raise ValidationError(f"need n_frames >= 1 and max_len >= 1, got {n_frames}, {max_len}")
    count = math.ceil(n_frames / max_len)
    base, extra = divmod(n_frames, count)
    ranges, start = [], 0
    for i in range(count):
        end = start + base + (1 if i < extra else 0)
        ranges.append((start, end))
        start = end
    return ranges


def attach_buffers(
    ranges: Sequence[tuple[int, int]], n_frames: int, buffer: int = BUFFER, max_len: int | None = None
) -> list[UtteranceChunk]:
    """Chunk skeletons with up to ``buffer`` context frames per side, clamped at the track ends."""
    if max_len is None:
        max_len = max((e - s for s, e in ranges), default=1)
    chunks = []
    for start, end in ranges:
        if not (0 <= start < end <= n_frames):
            raise ValidationError(f"range ({start}, {end}) outside track of {n_frames} frames")
        chunks.append(
            UtteranceChunk(
                core_range=(start, end),
                buffer_pre=min(buffer, start),
                buffer_post=min(buffer, n_frames - end),
                max_len=max_len,
                buffer=buffer,
            )
        )
    return chunks


def chunk_track(n_frames: int, max_len: int = MAX_CHUNK, buffer: int = BUFFER) -> list[UtteranceChunk]:
    return attach_buffers(split_track(n_frames, max_len), n_frames, buffer, max_len)


def chunk_audio(chunk: UtteranceChunk, audio: AudioClip, fps: float) -> AudioClip:
    """Audio for the chunk span, silence-padded to a full ``buffer`` of frames on each side.

    Frame ``f`` of the track then starts at local frame ``f - start + buffer``
    of the returned clip.
    """
    lo, hi = chunk.span
    sr = audio.sample_rate
    a = frame_sample_bounds(lo, fps, sr)[0]
    b = frame_sample_bounds(hi - 1, fps, sr)[1]
    body = audio.samples[a:b]
    if len(body) < b - a:
        body = np.concatenate([body, np.zeros(b - a - len(body))])
    pre = frame_sample_bounds(chunk.start - chunk.buffer, fps, sr)[0] - frame_sample_bounds(lo, fps, sr)[0]
    post = frame_sample_bounds(chunk.end + chunk.buffer - 1, fps, sr)[1] - b
    return AudioClip(np.concatenate([np.zeros(-pre), body, np.zeros(post)]), sr)


def materialize(chunk: UtteranceChunk, frames: Sequence, audio: AudioClip, fps: float) -> UtteranceChunk:
    lo, hi = chunk.span
    return replace(chunk, frames=tuple(frames[lo:hi]), audio_window=chunk_audio(chunk, audio, fps))


def core_frames(chunk: UtteranceChunk, outputs: Sequence) -> list:
    """Drop the buffer frames from per-span outputs."""
    span = chunk.span[1] - chunk.span[0]
    if len(outputs) != span:
        raise ValidationError(f"expected {span} outputs for chunk span, got {len(outputs)}")
    return list(outputs[chunk.buffer_pre : len(outputs) - chunk.buffer_post])
