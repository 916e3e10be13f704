"""Consensus voting over snippets sampled from video segments.

A video is cut into ``K`` equal segments, snippets are drawn uniformly inside
each, every snippet (and optionally its mirrored counterpart) is classified,
and the per-snippet probability columns are reduced by an aggregation
function (max or mean) into one video-level score.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ParameterError, ShapeError
from .flow import DEFAULT_STACK, stack_flow
from .layers import Network, _softmax_rows
from .optim import SGD, cross_entropy_batch
from .video.dataset import FrameSequence, VideoSample
from .video.transforms import AugmentParams, crop, draw_augment, resize

AGGREGATIONS = ("max", "mean")
VOTE_SPACES = ("probability", "logit")


@dataclass
class Snippet:
    modality: str
    payload: np.ndarray  # [3,H,W] rgb or [2L,H,W] stacked flow
    frame_index: int
    augmentation: str = "none"


@dataclass
class ScoreMatrix:
    """``[l, T]`` class probabilities, one column per snippet."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2 or self.values.shape[1] < 1:
            raise ShapeError(f"score matrix must be [l, T>=1], got {self.values.shape}")
        if np.any(self.values < 0) or np.any(np.abs(self.values.sum(axis=0) - 1) > 1e-4):
            raise ParameterError("every score-matrix column must be a probability vector")

    @property
    def num_classes(self) -> int:
        return self.values.shape[0]

    @property
    def num_snippets(self) -> int:
        return self.values.shape[1]


def segment_bounds(num_frames: int, K: int) -> list[tuple[int, int]]:
    """``[floor(j*T/K), floor((j+1)*T/K))`` for each segment ``j``."""
    if K < 1:
        raise ParameterError(f"need at least one segment, got {K}")
    if num_frames < K:
        raise ParameterError(f"{num_frames} frames cannot fill {K} segments")
    return [(j * num_frames // K, (j + 1) * num_frames // K) for j in range(K)]


def sample_indices(num_frames: int, K: int, per_segment: int,
                   rng: np.random.Generator | None) -> list[int]:
    """Uniform frame indices per segment; ``rng=None`` takes each segment's centre."""
    if per_segment < 1:
        raise ParameterError("need at least one snippet per segment")
    out = []
    for lo, hi in segment_bounds(num_frames, K):
        if rng is None:
            out += [(lo + hi - 1) // 2] * per_segment
        else:
            out += [int(i) for i in rng.integers(lo, hi, per_segment)]
    return out


def flip_payload(payload: np.ndarray, modality: str) -> np.ndarray:
    """Mirror a snippet; horizontal components of (stacked) flow change sign."""
    out = np.array(payload[..., ::-1])
    if modality == "flow":
        out[0::2] *= -1
    return out


def snippet_payload(seq: FrameSequence, t: int, modality: str, L: int = DEFAULT_STACK,
                    flow_params: dict | None = None) -> np.ndarray:
    if modality == "flow":
        return stack_flow(seq, L, t, **(flow_params or {}))
    return np.array(seq.frames[t])


def _source(sample: VideoSample, modality: str) -> FrameSequence:
    if modality in sample.modalities:
        return sample[modality]
    if modality == "flow" and "rgb" in sample.modalities:
        return sample["rgb"]
    raise ParameterError(f"sample {sample.sample_id} has no {modality!r} data")


def sample_snippets(sample: VideoSample, modality: str, K: int = 5, per_segment: int = 1,
                    rng: np.random.Generator | None = None, L: int = DEFAULT_STACK,
                    hflip: bool = False, out_size: Sequence[int] | None = None,
                    augment: dict | None = None, flow_params: dict | None = None) -> list[Snippet]:
    """Segment-based snippets of one modality.

    ``hflip`` appends a mirrored copy of every snippet (test-time augmented
    counterparts). ``augment`` holds :func:`draw_augment` options applied
    independently per snippet (training-time jitter). ``out_size`` resizes
    payloads to the network input.
    """
    seq = _source(sample, modality)
    idx = sample_indices(len(seq), K, per_segment, rng)
    snippets = []
    for t in idx:
        payload = snippet_payload(seq, t, modality, L, flow_params)
        tag = "none"
        if augment:
            if rng is None:
                raise ParameterError("augmentation needs an rng")
            params = draw_augment(rng, payload.shape[-2:],
                                  **{"out_size": out_size, **augment})
            payload = _augment_payload(payload, params, modality)
            tag = "jitter"
        elif out_size is not None and tuple(payload.shape[-2:]) != tuple(out_size):
            payload = _resize_payload(payload, out_size, modality)
        snippets.append(Snippet(modality, payload, t, tag))
    if hflip:
        snippets += [Snippet(modality, flip_payload(s.payload, modality), s.frame_index, "hflip")
                     for s in list(snippets)]
    return snippets


def _resize_payload(payload, out_size, modality):
    out = resize(payload, out_size)
    if modality == "flow":
        out[0::2] *= out_size[1] / payload.shape[-1]
        out[1::2] *= out_size[0] / payload.shape[-2]
    return out


def _augment_payload(payload, params: AugmentParams, modality):
    out = payload
    if params.box is not None:
        out = crop(out, *params.box)
    if params.out_size is not None:
        out = _resize_payload(out, params.out_size, modality)
    if params.flip:
        out = flip_payload(out, modality)
    return np.array(out)


def snippet_batch(snippets: Sequence[Snippet]) -> np.ndarray:
    return np.stack([s.payload for s in snippets])


def score_snippets(net: Network, snippets: Sequence[Snippet],
                   space: str = "probability") -> ScoreMatrix | np.ndarray:
    """Eval-mode scores of every snippet, one column each.

    ``space="probability"`` gives a :class:`ScoreMatrix` of softmax columns;
    ``space="logit"`` gives the raw ``[l, T]`` logits for logit-space voting.
    """
    if space not in VOTE_SPACES:
        raise ParameterError(f"vote space must be one of {VOTE_SPACES}, got {space!r}")
    if not snippets:
        raise ParameterError("no snippets to score")
    logits = net.forward(snippet_batch(snippets), train=False).astype(np.float64)
    if space == "logit":
        return logits.T
    return ScoreMatrix(_softmax_rows(logits).T)


def aggregate(m: ScoreMatrix | np.ndarray, h: str = "max") -> np.ndarray:
    """Reduce an ``[l, T]`` score matrix across snippets with max or mean."""
    values = m.values if isinstance(m, ScoreMatrix) else np.asarray(m)
    if values.ndim != 2 or values.shape[1] < 1:
        raise ShapeError(f"expected [l, T>=1] scores, got {values.shape}")
    if h == "max":
        return values.max(axis=1)
    if h == "mean":
        return values.mean(axis=1)
    raise ParameterError(f"aggregation must be one of {AGGREGATIONS}, got {h!r}")


def predict_label(scores: np.ndarray) -> int:
    """Arg-max class; ties go to the lowest index."""
    scores = np.asarray(scores)
    if scores.size < 1:
        raise ParameterError("empty score vector")
    return int(np.argmax(scores))


def consensus_loss(net: Network, groups: np.ndarray, labels: Sequence[int]) -> tuple[float, np.ndarray]:
    """Video-level cross-entropy for ``groups`` of shape ``[B, K, *input]``.

    Snippet logits are averaged per video before the softmax; gradients are
    accumulated into ``net`` (mean over videos). Returns the loss and the
    video-level logits.
    """
    groups = np.asarray(groups)
    B, K = groups.shape[:2]
    logits = net.forward(groups.reshape((B * K,) + groups.shape[2:]), train=True)
    video_logits = logits.reshape(B, K, -1).mean(axis=1)
    loss, grad = cross_entropy_batch(video_logits, labels)
    snippet_grad = np.repeat(grad[:, None, :] / K, K, axis=1).reshape(B * K, -1)
    net.backward(snippet_grad, input_grad=False)
    return loss, video_logits


def consensus_train_batch(net: Network, groups: np.ndarray, labels: Sequence[int],
                          optimizer: SGD) -> tuple[float, int]:
    """One optimizer step on a batch of videos; returns (loss, correct count)."""
    net.zero_grad()
    loss, video_logits = consensus_loss(net, groups, labels)
    optimizer.step()
    return loss, int(np.sum(video_logits.argmax(axis=1) == np.asarray(labels)))


def consensus_train_step(net: Network, sample: VideoSample, K: int, rng: np.random.Generator,
                         optimizer: SGD, modality: str = "rgb", **snippet_kw) -> float:
    """Sample ``K`` snippets of one video and take one optimizer step on its consensus loss."""
    snippets = sample_snippets(sample, modality, K, 1, rng, **snippet_kw)
    loss, _ = consensus_train_batch(net, snippet_batch(snippets)[None], [sample.label], optimizer)
    return loss
