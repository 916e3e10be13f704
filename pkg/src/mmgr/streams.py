"""Per-modality stream models.

``rgb`` and ``flow`` are consensus-voting 2D streams: they see snippets and
emit aggregated snippet probabilities. ``depth`` and ``saliency`` are 3D
streams: they see one 32-frame volume per clip and emit raw classifier
outputs (no softmax), which fusion may or may not normalise.
"""
from __future__ import annotations

import dataclasses
import logging
import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .consensus import (VOTE_SPACES, aggregate, consensus_train_batch, flip_payload,
                        sample_snippets, score_snippets, snippet_batch)
from .errors import ConfigError, ParameterError
from .flow import DEFAULT_ALPHA, DEFAULT_ITERATIONS, sequence_flow
from .layers import Network, NetworkConfig, stream2d_config, stream3d_config
from .optim import SGD, EpochStats, LOSSES, format_log_line, train_batch
from .video.dataset import CHANNELS, VideoSample
from .video.transforms import VOLUME_BEFORE, VOLUME_FRAMES, build_volume, resample_sample, resize

log = logging.getLogger(__name__)

STREAM_KIND = {"rgb": "2d", "flow": "2d", "depth": "3d", "saliency": "3d"}


@dataclass
class StreamConfig:
    """Everything needed to build, train and score one stream."""

    modality: str = "rgb"
    num_classes: int = 8
    input_size: int = 64
    frames: int = VOLUME_FRAMES
    widths: tuple[int, ...] = ()
    hidden: int = -1
    keep_prob: float = 1.0
    batch_norm: bool = False
    # consensus voting (2D streams)
    segments: int = 5
    per_segment: int = 1
    stack: int = 5
    agg: str = "max"
    sampling: str = "uniform"  # "uniform" draws per segment, "centre" takes segment centres
    vote_space: str = "probability"  # or "logit": aggregate raw snippet logits
    hflip_votes: bool = True
    # 3D streams
    volume_centre: int = VOLUME_BEFORE
    # training
    hflip_train: bool = False
    lr: float = -1.0
    momentum: float = 0.9
    weight_decay: float = 0.0005
    clip: float = 10.0
    lr_step: int = -1
    lr_decay: float = 0.1
    epochs: int = 20
    batch_size: int = 8
    seed: int = 0
    flow_alpha: float = DEFAULT_ALPHA
    flow_iters: int = DEFAULT_ITERATIONS

    def __post_init__(self):
        if self.modality not in STREAM_KIND:
            raise ConfigError(f"unknown stream modality {self.modality!r}")
        self.widths = tuple(int(w) for w in self.widths)
        three_d = self.kind == "3d"
        # -1 / () mean "use the stream default"
        if not self.widths:
            self.widths = (8, 8, 16, 16, 32, 32, 32, 32) if three_d else (8, 16, 32)
        if self.hidden < 0:
            self.hidden = 64 if three_d else 0
        if self.lr < 0:
            self.lr = 0.0001 if three_d else 0.1
        if self.lr_step < 0:
            self.lr_step = 5000 if three_d else 1500
        if self.agg not in ("max", "mean"):
            raise ConfigError(f"agg must be max or mean, got {self.agg!r}")
        if self.sampling not in ("uniform", "centre"):
            raise ConfigError(f"sampling must be uniform or centre, got {self.sampling!r}")
        if self.vote_space not in VOTE_SPACES:
            raise ConfigError(f"vote_space must be probability or logit, got {self.vote_space!r}")

    @property
    def kind(self) -> str:
        return STREAM_KIND[self.modality]

    @property
    def in_channels(self) -> int:
        return 2 * self.stack if self.modality == "flow" else CHANNELS[self.modality]

    def network_config(self) -> NetworkConfig:
        if self.kind == "3d":
            return stream3d_config(self.in_channels, self.frames, self.input_size,
                                   self.num_classes, self.widths, self.hidden,
                                   self.keep_prob, self.batch_norm)
        return stream2d_config(self.in_channels, self.input_size, self.num_classes,
                               self.widths, self.hidden, self.keep_prob, self.batch_norm)

    @classmethod
    def from_mapping(cls, values: dict[str, str], modality: str | None = None) -> "StreamConfig":
        """Build from flat ``key -> text`` pairs; ``<modality>.<key>`` entries override."""
        merged = {k: v for k, v in values.items() if "." not in k}
        modality = modality or merged.get("modality", "rgb")
        prefix = f"{modality}."
        merged.update({k[len(prefix):]: v for k, v in values.items() if k.startswith(prefix)})
        merged["modality"] = modality
        kwargs = {}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for key, text in merged.items():
            if key not in types:
                continue
            kwargs[key] = _coerce(key, types[key], text)
        return cls(**kwargs)


def _coerce(key, type_name, text):
    if not isinstance(text, str):
        return text
    try:
        if type_name == "int":
            return int(text)
        if type_name == "float":
            return float(text)
        if type_name == "bool":
            return parse_bool(text)
        if type_name.startswith("tuple"):
            return tuple(int(t) for t in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None
    return text


def parse_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


class StreamModel:
    """A network plus the input pipeline of one modality."""

    def __init__(self, config: StreamConfig, net: Network | None = None):
        self.config = config
        self.net = net or Network(config.network_config(), seed=config.seed)
        c = config
        self.optimizer = SGD(self.net.parameters(), lr=c.lr, momentum=c.momentum,
                             weight_decay=c.weight_decay, clip=c.clip, step_interval=c.lr_step,
                             decay_factor=c.lr_decay)
        self._prepared: dict[str, VideoSample] = {}

    @property
    def modality(self) -> str:
        return self.config.modality

    @property
    def out_size(self) -> tuple[int, int]:
        return (self.config.input_size, self.config.input_size)

    # -- input preparation -------------------------------------------------

    def prepare(self, sample: VideoSample) -> VideoSample:
        """Resample to the common timeline and derive flow if needed (memoised by id)."""
        cached = self._prepared.get(sample.sample_id)
        if cached is not None:
            return cached
        c = self.config
        needed = "rgb" if c.modality == "flow" else c.modality
        if c.modality == "flow" and "flow" in sample.modalities:
            needed = "flow"
        if needed not in sample.modalities:
            raise ConfigError(f"sample {sample.sample_id} lacks the {needed!r} modality")
        sub = VideoSample(sample.sample_id, {needed: sample[needed]}, sample.label)
        sub = resample_sample(sub, c.frames)
        if c.modality == "flow" and needed == "rgb":
            flow = sequence_flow(sub["rgb"], c.flow_alpha, c.flow_iters)
            sub = VideoSample(sample.sample_id, {"flow": flow}, sample.label)
        self._prepared[sample.sample_id] = sub
        return sub

    def _snippets(self, sample, rng, hflip):
        c = self.config
        return sample_snippets(self.prepare(sample), c.modality, c.segments, c.per_segment,
                               rng if c.sampling == "uniform" else None, c.stack, hflip,
                               self.out_size)

    def volume(self, sample: VideoSample, t: int | None = None) -> np.ndarray:
        seq = self.prepare(sample)[self.config.modality]
        vol = build_volume(seq, self.config.volume_centre if t is None else t)
        if vol.shape[-2:] != self.out_size:
            vol = resize(vol, self.out_size)
        return vol

    # -- training ------------------------------------------------------------

    def train_epoch(self, samples: Sequence[VideoSample], rng: np.random.Generator) -> EpochStats:
        c = self.config
        order = rng.permutation(len(samples))
        total, correct = 0.0, 0
        for start in range(0, len(samples), c.batch_size):
            batch = [samples[i] for i in order[start:start + c.batch_size]]
            labels = np.array([s.label for s in batch])
            if c.kind == "2d":
                groups = np.stack([snippet_batch(self._snippets(s, rng, False)) for s in batch])
                if c.hflip_train:
                    flips = rng.random(len(batch)) < 0.5
                    for i in np.flatnonzero(flips):
                        groups[i] = np.stack([flip_payload(g, c.modality) for g in groups[i]])
                loss, ok = consensus_train_batch(self.net, groups, labels, self.optimizer)
            else:
                x = np.stack([self.volume(s) for s in batch])
                if c.hflip_train:
                    flips = rng.random(len(batch)) < 0.5
                    x[flips] = x[flips][..., ::-1]
                loss, ok = train_batch(self.net, x, labels, self.optimizer, LOSSES["nll"])
            total += loss * len(batch)
            correct += ok
        return EpochStats(total / len(samples), correct / len(samples), self.optimizer.state.lr,
                          -(-len(samples) // c.batch_size))

    def fit(self, samples: Sequence[VideoSample], epochs: int | None = None,
            on_epoch: Callable[[int, EpochStats], None] | None = None,
            stop: Callable[[int, EpochStats], bool] | None = None) -> list[EpochStats]:
        """Train for ``epochs`` epochs (config default); ``stop`` may end early."""
        if not samples:
            raise ParameterError("no training samples")
        rng = np.random.default_rng([self.config.seed, 1])
        history = []
        for epoch in range(1, (epochs or self.config.epochs) + 1):
            stats = self.train_epoch(samples, rng)
            history.append(stats)
            log.info("%s %s", self.modality, format_log_line(epoch, stats))
            if on_epoch:
                on_epoch(epoch, stats)
            if stop and stop(epoch, stats):
                break
        return history

    # -- scoring -------------------------------------------------------------

    def score(self, sample: VideoSample, h: str | None = None) -> np.ndarray:
        """Video-level score vector.

        2D streams: aggregated snippet probabilities (or logits, per
        ``vote_space``). 3D streams: raw logits of
        the centre volume, averaged with its mirror when ``hflip_votes`` is on.
        """
        c = self.config
        if c.kind == "2d":
            rng = None
            if c.sampling == "uniform":
                # per-sample stream so scores do not depend on visiting order
                rng = np.random.default_rng([c.seed, 2, zlib.crc32(sample.sample_id.encode())])
            m = score_snippets(self.net, self._snippets(sample, rng, c.hflip_votes), c.vote_space)
            return aggregate(m, h or c.agg)
        vol = self.volume(sample)
        x = np.stack([vol, vol[..., ::-1]]) if c.hflip_votes else vol[None]
        return self.net.forward(x, train=False).astype(np.float64).mean(axis=0)

    def score_many(self, samples: Sequence[VideoSample], h: str | None = None) -> np.ndarray:
        return np.stack([self.score(s, h) for s in samples])

    @property
    def emits_probabilities(self) -> bool:
        return self.config.kind == "2d" and self.config.vote_space == "probability"

    def accuracy(self, samples: Sequence[VideoSample], h: str | None = None) -> float:
        scores = self.score_many(samples, h)
        labels = np.array([s.label for s in samples])
        return float(np.mean(scores.argmax(axis=1) == labels))
