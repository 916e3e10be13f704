"""Synthetic multi-modal gesture clips.

Each class is a blob ("hand") moving in one of eight directions at one of two
speeds. The blob passes through a jittered point near the image centre at the
middle frame, so a single still frame carries no class information; only the
motion does. Every clip is rendered as

* ``rgb``: the blob over a static smooth colour texture, plus per-frame noise,
* ``depth``: inverse-coded distance (``1 - distance``), blob nearer than a
  slanted background,
* ``saliency``: the clean blob support mask.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ParameterError
from .dataset import DatasetManifest, FrameSequence, VideoSample, write_sequence

_S = np.sqrt(0.5)
DIRECTIONS = (
    ("right", (1.0, 0.0)), ("left", (-1.0, 0.0)), ("up", (0.0, -1.0)), ("down", (0.0, 1.0)),
    ("up_right", (_S, -_S)), ("down_left", (-_S, _S)), ("up_left", (-_S, -_S)),
    ("down_right", (_S, _S)),
)
# total path length as a fraction of the short image side
SPAN_SINGLE = 0.4
SPAN_SLOW, SPAN_FAST = 0.3, 0.6


@dataclass(frozen=True)
class MotionClass:
    name: str
    direction: tuple[float, float]  # (dx, dy), image coordinates
    span: float


def class_table(num_classes: int) -> list[MotionClass]:
    """Classes 0..7 are the eight directions; 8..15 their fast variants."""
    if not 2 <= num_classes <= 16:
        raise ParameterError(f"synthetic data supports 2..16 classes, got {num_classes}")
    if num_classes <= 8:
        return [MotionClass(n, d, SPAN_SINGLE) for n, d in DIRECTIONS[:num_classes]]
    slow = [MotionClass(f"{n}_slow", d, SPAN_SLOW) for n, d in DIRECTIONS]
    fast = [MotionClass(f"{n}_fast", d, SPAN_FAST) for n, d in DIRECTIONS[:num_classes - 8]]
    return slow + fast


def _texture(rng, h, w, channels, octaves=4):
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    out = np.zeros((channels, h, w))
    for c in range(channels):
        for _ in range(octaves):
            fy, fx = rng.uniform(0.5, 4.0, 2) * 2 * np.pi / np.array([h, w])
            out[c] += rng.uniform(0.5, 1.0) * np.sin(fx * x + fy * y + rng.uniform(0, 2 * np.pi))
        out[c] -= out[c].min()
        out[c] /= max(out[c].max(), 1e-12)
    return out


def render_clip(motion: MotionClass, rng: np.random.Generator, frames: int = 32,
                size: int | tuple[int, int] = 64, rgb_noise: float = 0.02,
                depth_noise: float = 0.005) -> dict[str, np.ndarray]:
    """Render one clip; returns modality -> ``[T, C, H, W]`` arrays in [0, 1]."""
    if frames < 8:
        raise ParameterError(f"clips need at least 8 frames, got {frames}")
    h, w = (size, size) if np.isscalar(size) else size
    short = min(h, w)
    radius = short / 10 * rng.uniform(0.9, 1.1)
    centre = np.array([w / 2, h / 2]) + rng.uniform(-short / 12, short / 12, 2)
    step = np.array(motion.direction) * motion.span * short / (frames - 1)
    times = np.arange(frames) - (frames - 1) / 2

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    background = 0.15 + 0.4 * _texture(rng, h, w, 3)
    colour = rng.uniform(0.8, 1.0, 3)
    floor = 0.75 + 0.15 * (yy / max(h - 1, 1)) + depth_noise * rng.standard_normal((h, w))
    hand = rng.uniform(0.3, 0.4)

    rgb = np.empty((frames, 3, h, w))
    depth = np.empty((frames, 1, h, w))
    sal = np.empty((frames, 1, h, w))
    for t in range(frames):
        cx, cy = centre + times[t] * step
        a = np.clip(1.0 - ((xx - cx) ** 2 + (yy - cy) ** 2) / radius ** 2, 0.0, 1.0)
        frame = background * (1 - a) + colour[:, None, None] * a
        if rgb_noise:
            frame = frame + rgb_noise * rng.standard_normal(frame.shape)
        rgb[t] = np.clip(frame, 0, 1)
        dist = floor * (1 - a) + hand * a
        depth[t, 0] = np.clip(1.0 - dist, 0, 1)
        sal[t, 0] = (a > 0).astype(np.float64)
    return {"rgb": rgb, "depth": depth, "saliency": sal}


def _split_code(split: str) -> int:
    return zlib.crc32(split.encode())


def make_samples(num_classes: int, per_class: int, frames: int = 32, size=64, seed: int = 0,
                 split: str = "train", **render_kw) -> list[VideoSample]:
    """In-memory clips, labels cycling through the classes."""
    table = class_table(num_classes)
    if per_class < 1:
        raise ParameterError("need at least one sample per class")
    samples = []
    for i in range(num_classes * per_class):
        label = i % num_classes
        rng = np.random.default_rng([seed, _split_code(split), i])
        clip = render_clip(table[label], rng, frames, size, **render_kw)
        seqs = {m: FrameSequence(m, v) for m, v in clip.items()}
        samples.append(VideoSample(f"{split}_{i:05d}", seqs, label))
    return samples


def gen_synthetic(root: str | Path, num_classes: int, per_class: int, frames: int = 32,
                  size=64, seed: int = 0, split: str = "train",
                  **render_kw) -> DatasetManifest:
    """Render clips and write them under ``root/split`` with a manifest."""
    samples = make_samples(num_classes, per_class, frames, size, seed, split, **render_kw)
    manifest = DatasetManifest(Path(root), split, [(s.sample_id, s.label) for s in samples],
                               num_classes)
    for s in samples:
        sample_dir = manifest.split_dir / s.sample_id
        for seq in s.modalities.values():
            write_sequence(sample_dir, seq)
    manifest.save()
    return manifest
