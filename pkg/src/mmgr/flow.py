"""Horn-Schunck optical flow and stacked-flow snippets for the temporal stream."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .video.dataset import FrameSequence

DEFAULT_ALPHA = 1.0
DEFAULT_ITERATIONS = 200
DEFAULT_STACK = 5

_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class FlowField:
    u: np.ndarray  # horizontal displacement, pixels/frame
    v: np.ndarray  # vertical displacement

    def as_array(self) -> np.ndarray:
        return np.stack([self.u, self.v])


def to_gray(frame: np.ndarray) -> np.ndarray:
    """``[3,H,W]`` or ``[1,H,W]`` or ``[H,W]`` to an ``[H,W]`` luminance image."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        return frame
    if frame.shape[0] == 3:
        return np.tensordot(_LUMA, frame, axes=1)
    if frame.shape[0] == 1:
        return frame[0]
    raise ShapeError(f"cannot convert {frame.shape} to grey")


def _neighbour_mean(f: np.ndarray) -> np.ndarray:
    # 1/6 edge neighbours, 1/12 corners; replicated borders keep it mirror-symmetric
    p = np.pad(f, 1, mode="edge")
    edges = p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]
    corners = p[:-2, :-2] + p[:-2, 2:] + p[2:, :-2] + p[2:, 2:]
    return edges / 6.0 + corners / 12.0


def _central_diff(f: np.ndarray):
    p = np.pad(f, 1, mode="edge")
    return 0.5 * (p[1:-1, 2:] - p[1:-1, :-2]), 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])


def compute_flow(frame_a: np.ndarray, frame_b: np.ndarray, alpha: float = DEFAULT_ALPHA,
                 iterations: int = DEFAULT_ITERATIONS) -> FlowField:
    """Horn-Schunck flow from ``frame_a`` to ``frame_b`` (grey or RGB, values in [0, 1]).

    Spatial derivatives are central differences averaged over both frames;
    the Jacobi iteration starts from zero flow and runs a fixed number of
    sweeps, so the result is deterministic.
    """
    a, b = to_gray(frame_a), to_gray(frame_b)
    if a.shape != b.shape:
        raise ShapeError(f"frames differ in shape: {a.shape} vs {b.shape}")
    if alpha <= 0 or iterations < 0:
        raise ParameterError("alpha must be positive and iterations non-negative")
    ax, ay = _central_diff(a)
    bx, by = _central_diff(b)
    ix, iy = 0.5 * (ax + bx), 0.5 * (ay + by)
    it = b - a
    denom = alpha ** 2 + ix ** 2 + iy ** 2
    u = np.zeros_like(a)
    v = np.zeros_like(a)
    for _ in range(iterations):
        ub, vb = _neighbour_mean(u), _neighbour_mean(v)
        common = (ix * ub + iy * vb + it) / denom
        u = ub - ix * common
        v = vb - iy * common
    return FlowField(u, v)


def sequence_flow(seq: FrameSequence, alpha: float = DEFAULT_ALPHA,
                  iterations: int = DEFAULT_ITERATIONS) -> FrameSequence:
    """Flow between consecutive frames as a ``flow`` sequence of the same length.

    Entry ``t`` is the flow from frame ``t`` to ``t + 1``; the last entry
    repeats the final pair so the timeline lines up with the source frames.
    """
    if len(seq) < 2:
        raise ParameterError("flow needs at least two frames")
    fields = [compute_flow(seq.frames[t], seq.frames[t + 1], alpha, iterations).as_array()
              for t in range(len(seq) - 1)]
    fields.append(fields[-1])
    return FrameSequence("flow", np.stack(fields).astype(seq.frames.dtype))


def stack_flow(seq: FrameSequence, L: int = DEFAULT_STACK, t: int = 0,
               alpha: float = DEFAULT_ALPHA, iterations: int = DEFAULT_ITERATIONS) -> np.ndarray:
    """``[2L, H, W]`` stack ``u_t, v_t, ..., u_{t+L-1}, v_{t+L-1}``, each plane mean-centred.

    ``seq`` is either a precomputed ``flow`` sequence or image frames, in which
    case only the needed pairs are computed. Indices past the end clamp to the
    last available field.
    """
    if L < 1:
        raise ParameterError(f"stack depth must be >= 1, got {L}")
    n = len(seq)
    if not 0 <= t < n:
        raise ParameterError(f"anchor {t} outside [0, {n})")
    planes = []
    for k in range(L):
        if seq.modality == "flow":
            field = seq.frames[min(t + k, n - 1)]
        else:
            if n < 2:
                raise ParameterError("flow needs at least two frames")
            i = min(t + k, n - 2)
            field = compute_flow(seq.frames[i], seq.frames[i + 1], alpha, iterations).as_array()
        planes.append(field - field.mean(axis=(1, 2), keepdims=True))
    return np.concatenate(planes).astype(seq.frames.dtype)
