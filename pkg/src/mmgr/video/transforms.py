"""Temporal resampling, 32-frame volumes and geometric augmentation.

Frame stacks are ``[T, C, H, W]``; single frames ``[C, H, W]`` are accepted
wherever only the spatial axes are touched.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import ParameterError
from .dataset import FrameSequence, VideoSample

VOLUME_FRAMES = 32
VOLUME_BEFORE = 15  # frames t-15 .. t+16 around the centre t


def resample_indices(t_in: int, t_out: int = VOLUME_FRAMES) -> np.ndarray:
    """Centre-aligned nearest-neighbour source index for each output frame."""
    if t_in < 1 or t_out < 1:
        raise ParameterError("frame counts must be >= 1")
    j = np.arange(t_out)
    return ((2 * j + 1) * t_in) // (2 * t_out)


def resample_to(seq: FrameSequence, t_out: int = VOLUME_FRAMES) -> FrameSequence:
    """Drop or repeat frames so the sequence has exactly ``t_out`` frames."""
    if len(seq) == t_out:
        return seq
    return seq.replace(seq.frames[resample_indices(len(seq), t_out)])


def resample_sample(sample: VideoSample, t_out: int = VOLUME_FRAMES) -> VideoSample:
    return VideoSample(sample.sample_id,
                       {m: resample_to(s, t_out) for m, s in sample.modalities.items()},
                       sample.label)


def volume_indices(t: int, frames: int = VOLUME_FRAMES) -> np.ndarray:
    if not 0 <= t < frames:
        raise ParameterError(f"volume centre {t} outside [0, {frames})")
    return np.clip(np.arange(t - VOLUME_BEFORE, t - VOLUME_BEFORE + frames), 0, frames - 1)


def build_volume(seq: FrameSequence | np.ndarray, t: int = VOLUME_BEFORE) -> np.ndarray:
    """``[C, 32, H, W]`` stack of frames t-15..t+16, clamped to the sequence ends."""
    frames = seq.frames if isinstance(seq, FrameSequence) else np.asarray(seq)
    if len(frames) != VOLUME_FRAMES:
        raise ParameterError(f"volumes need a {VOLUME_FRAMES}-frame sequence, got {len(frames)}")
    return np.ascontiguousarray(frames[volume_indices(t)].swapaxes(0, 1))


# ---------------------------------------------------------------------------
# spatial transforms
# ---------------------------------------------------------------------------

def hflip(frames: np.ndarray, modality: str = "rgb") -> np.ndarray:
    """Mirror the width axis; the horizontal flow component changes sign."""
    out = np.array(frames[..., ::-1])
    if modality == "flow":
        out[..., 0, :, :] *= -1
    return out


def crop(frames: np.ndarray, top: int, left: int, height: int, width: int) -> np.ndarray:
    return frames[..., top:top + height, left:left + width]


def _axis_weights(n_in: int, n_out: int):
    # pixel-centre aligned sample positions, edge-clamped
    pos = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    pos = np.clip(pos, 0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, (pos - lo)


def resize(frames: np.ndarray, size: Sequence[int], modality: str = "rgb") -> np.ndarray:
    """Bilinear resize of the last two axes to ``size = (h, w)``.

    Flow displacements are rescaled with the image so they stay in pixels.
    """
    h_out, w_out = size
    h_in, w_in = frames.shape[-2:]
    if (h_in, w_in) == (h_out, w_out):
        return np.array(frames)
    lo, hi, f = _axis_weights(h_in, h_out)
    rows = frames[..., lo, :] * (1 - f)[:, None] + frames[..., hi, :] * f[:, None]
    lo, hi, f = _axis_weights(w_in, w_out)
    out = rows[..., lo] * (1 - f) + rows[..., hi] * f
    out = out.astype(frames.dtype, copy=False)
    if modality == "flow":
        out[..., 0, :, :] *= w_out / w_in
        out[..., 1, :, :] *= h_out / h_in
    return out


@dataclass
class AugmentParams:
    """One draw of augmentation parameters, applied identically to every frame."""

    box: tuple[int, int, int, int] | None = None  # top, left, height, width
    flip: bool = False
    out_size: tuple[int, int] | None = None


def draw_augment(rng: np.random.Generator, frame_hw: Sequence[int], *, hflip_prob: float = 0.0,
                 crop_size: int | Sequence[int] | None = None,
                 scales: Sequence[float] | None = None, ratios: Sequence[float] = (1.0,),
                 out_size: int | Sequence[int] | None = None) -> AugmentParams:
    """Draw crop window and flip.

    ``scales`` enables scale-jittered cropping: a scale ``s`` and aspect ratio
    ``r`` are drawn and the window is ``(s*b/sqrt(r), s*b*sqrt(r))`` with ``b``
    the short side. Otherwise ``crop_size`` gives a fixed window at a uniform
    position.
    """
    H, W = frame_hw
    box = None
    if scales is not None:
        s = float(scales[rng.integers(len(scales))])
        r = float(ratios[rng.integers(len(ratios))])
        if s <= 0 or r <= 0:
            raise ParameterError("scales and ratios must be positive")
        base = min(H, W)
        # windows stretched past the frame by the aspect ratio are clamped to it
        ch = min(H, max(1, int(round(base * s / np.sqrt(r)))))
        cw = min(W, max(1, int(round(base * s * np.sqrt(r)))))
        box = (int(rng.integers(H - ch + 1)), int(rng.integers(W - cw + 1)), ch, cw)
    elif crop_size is not None:
        ch, cw = (crop_size, crop_size) if np.isscalar(crop_size) else tuple(crop_size)
        if ch > H or cw > W:
            raise ParameterError(f"crop {ch}x{cw} larger than frame {H}x{W}")
        box = (int(rng.integers(H - ch + 1)), int(rng.integers(W - cw + 1)), ch, cw)
    flip = bool(hflip_prob > 0 and rng.random() < hflip_prob)
    if out_size is not None and np.isscalar(out_size):
        out_size = (int(out_size), int(out_size))
    return AugmentParams(box, flip, tuple(out_size) if out_size is not None else None)


def apply_augment(frames: np.ndarray, params: AugmentParams, modality: str = "rgb") -> np.ndarray:
    out = frames
    if params.box is not None:
        out = crop(out, *params.box)
    if params.out_size is not None:
        out = resize(out, params.out_size, modality)
    if params.flip:
        out = hflip(out, modality)
    return np.array(out) if out is frames else out


def augment(frames: np.ndarray, rng: np.random.Generator, modality: str = "rgb", **ops) -> np.ndarray:
    """Draw augmentation parameters from ``rng`` and apply them to ``frames``.

    Keyword options are those of :func:`draw_augment`.
    """
    return apply_augment(frames, draw_augment(rng, frames.shape[-2:], **ops), modality)


def random_crop(frames, size, rng, out_size=None, modality="rgb"):
    """Uniformly placed ``size`` window, resized to ``out_size`` (default: frame size)."""
    out_size = out_size or frames.shape[-2:]
    return augment(frames, rng, modality, crop_size=size, out_size=out_size)


def scale_jitter_crop(frames, rng, scales=(1.0, 0.875, 0.75, 0.66), ratios=(0.75, 1.0, 4 / 3),
                      out_size=None, modality="rgb"):
    out_size = out_size or frames.shape[-2:]
    return augment(frames, rng, modality, scales=scales, ratios=ratios, out_size=out_size)


def augment_sample(sample: VideoSample, rng: np.random.Generator, **ops) -> VideoSample:
    """Apply one parameter draw to every modality of ``sample``."""
    first = next(iter(sample.modalities.values()))
    params = draw_augment(rng, first.frames.shape[-2:], **ops)
    return VideoSample(sample.sample_id,
                       {m: s.replace(apply_augment(s.frames, params, m))
                        for m, s in sample.modalities.items()},
                       sample.label)
