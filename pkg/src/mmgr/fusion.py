"""Late score fusion across streams, and the end-to-end test pipeline.

Score files are CSV with header ``id,c0,...,c{l-1}``; prediction files are
``id,label``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .consensus import predict_label
from .errors import AlignmentError, ConfigError, FormatError, ParameterError, ShapeError
from .layers import _softmax_rows

COMPONENTS = {"2scvn": ("rgb", "flow"), "3ddsn": ("depth", "saliency")}


@dataclass
class StreamScore:
    """Per-sample score vectors of one stream."""

    tag: str
    ids: list[str]
    scores: np.ndarray  # [N, l]
    normalized: bool = False

    def __post_init__(self):
        self.scores = np.atleast_2d(np.asarray(self.scores, dtype=np.float64))
        self.ids = list(self.ids)
        if self.scores.shape[0] != len(self.ids):
            raise ShapeError(f"{self.tag}: {len(self.ids)} ids for {self.scores.shape[0]} rows")
        if len(set(self.ids)) != len(self.ids):
            raise AlignmentError(f"{self.tag}: duplicate sample ids")

    @property
    def num_classes(self) -> int:
        return self.scores.shape[1]

    def row(self, sample_id: str) -> np.ndarray:
        return self.scores[self.ids.index(sample_id)]

    def aligned_to(self, ids: Sequence[str]) -> np.ndarray:
        where = {sid: i for i, sid in enumerate(self.ids)}
        missing = [sid for sid in ids if sid not in where]
        if missing:
            raise AlignmentError(f"stream {self.tag!r} has no score for sample {missing[0]!r}")
        if len(ids) != len(self.ids):
            extra = sorted(set(self.ids) - set(ids))
            raise AlignmentError(f"stream {self.tag!r} has extra sample {extra[0]!r}")
        return self.scores[[where[sid] for sid in ids]]

    def predictions(self) -> list[int]:
        return [predict_label(r) for r in self.scores]


@dataclass
class FusionSpec:
    streams: list[str]
    weights: list[float]
    normalize: bool = False

    def __post_init__(self):
        self.weights = [float(w) for w in self.weights]
        if len(self.weights) != len(self.streams):
            raise ParameterError(f"{len(self.weights)} weights for {len(self.streams)} streams")
        if any(w < 0 for w in self.weights) or not any(w > 0 for w in self.weights):
            raise ParameterError("weights must be non-negative and not all zero")


def normalize_scores(s: StreamScore, apply: bool) -> StreamScore:
    """Softmax every vector when ``apply`` is set and the stream is not yet normalised.

    The ``normalized`` flag makes the operation happen at most once per stream.
    """
    if not apply or s.normalized:
        return s
    return StreamScore(s.tag, s.ids, _softmax_rows(s.scores), normalized=True)


def fuse_scores(streams: Sequence[StreamScore], spec: FusionSpec, tag: str = "fused") -> StreamScore:
    """Weighted mean ``sum(w_i * s_i) / sum(w_i)`` per sample, aligned on the first stream's ids."""
    if not streams:
        raise ParameterError("nothing to fuse")
    by_tag = {s.tag: s for s in streams}
    if len(by_tag) != len(streams):
        raise ParameterError("stream tags must be unique")
    missing = [t for t in spec.streams if t not in by_tag]
    if missing:
        raise ConfigError(f"fusion spec names absent stream {missing[0]!r}")
    chosen = [normalize_scores(by_tag[t], spec.normalize) for t in spec.streams]
    ids = chosen[0].ids
    l = chosen[0].num_classes
    total = np.zeros((len(ids), l))
    for s, w in zip(chosen, spec.weights):
        if s.num_classes != l:
            raise ShapeError(f"stream {s.tag!r} has {s.num_classes} classes, expected {l}")
        total += w * s.aligned_to(ids)
    fused = total / sum(spec.weights)
    return StreamScore(tag, ids, fused, normalized=all(s.normalized for s in chosen))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def write_scores(path: str | Path, s: StreamScore) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"c{i}" for i in range(s.num_classes)])
        for sid, row in zip(s.ids, s.scores):
            w.writerow([sid] + [repr(float(v)) for v in row])


def read_scores(path: str | Path, tag: str | None = None, normalized: bool = False) -> StreamScore:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"score file not found: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or rows[0][0] != "id" or rows[0][1:] != [f"c{i}" for i in range(len(rows[0]) - 1)]:
        raise FormatError(f"{path}: header must be id,c0,...,c<l-1>")
    try:
        scores = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    if scores.size and scores.shape[1] != len(rows[0]) - 1:
        raise FormatError(f"{path}: ragged rows")
    return StreamScore(tag or path.stem, [r[0] for r in rows[1:]],
                       scores.reshape(len(rows) - 1, len(rows[0]) - 1), normalized)


def write_predictions(path: str | Path, ids: Sequence[str], labels: Sequence[int]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"])
        w.writerows(zip(ids, (int(v) for v in labels)))


def read_labels(path: str | Path) -> dict[str, int]:
    """``id,label`` file (predictions, truth or a manifest), or the argmax of a score file."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"label file not found: {path}")
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
    if header and len(header) > 1 and header[1] == "c0":
        s = read_scores(path)
        return dict(zip(s.ids, s.predictions()))
    if header != ["id", "label"]:
        raise FormatError(f"{path}: header must be 'id,label' or a score header")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r][1:]
    try:
        out = {r[0]: int(r[1]) for r in rows}
    except (IndexError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from None
    if len(out) != len(rows):
        raise FormatError(f"{path}: duplicate ids")
    return out


# ---------------------------------------------------------------------------
# end-to-end pipeline
# ---------------------------------------------------------------------------

@dataclass
class PipelineConfig:
    """Stream and component weights of the two-level fusion.

    Within 2SCVN the spatial (rgb) and temporal (flow) votes are fused; within
    3DDSN depth and saliency scores; the two component results are then fused.
    """

    weights: dict[str, float] = field(default_factory=lambda: {
        "rgb": 1.0, "flow": 1.0, "depth": 2.0, "saliency": 1.0})
    component_weights: dict[str, float] = field(default_factory=lambda: {
        "2scvn": 1.0, "3ddsn": 1.0})
    normalize: bool = False
    agg: str | None = None

    @classmethod
    def from_mapping(cls, values: Mapping[str, str]) -> "PipelineConfig":
        from .streams import parse_bool
        cfg = cls()
        for tag in cfg.weights:
            if f"w_{tag}" in values:
                cfg.weights[tag] = float(values[f"w_{tag}"])
        for comp in cfg.component_weights:
            if f"w_{comp}" in values:
                cfg.component_weights[comp] = float(values[f"w_{comp}"])
        if "normalize" in values:
            cfg.normalize = parse_bool(values["normalize"])
        if "agg" in values:
            cfg.agg = values["agg"]
        return cfg


@dataclass
class PipelineResult:
    label: int
    fused: np.ndarray
    streams: dict[str, np.ndarray]
    components: dict[str, np.ndarray]


def fuse_components(stream_scores: Mapping[str, StreamScore], config: PipelineConfig
                    ) -> tuple[StreamScore, dict[str, StreamScore]]:
    """Two-level fusion of per-stream scores; returns the final and per-component scores."""
    comps = {}
    for comp, tags in COMPONENTS.items():
        present = [t for t in tags if t in stream_scores]
        if not present:
            continue
        spec = FusionSpec(present, [config.weights[t] for t in present], config.normalize)
        comps[comp] = fuse_scores([stream_scores[t] for t in present], spec, tag=comp)
    if not comps:
        raise ConfigError("no streams to fuse")
    names = list(comps)
    top = FusionSpec(names, [config.component_weights[c] for c in names], normalize=False)
    return fuse_scores([comps[c] for c in names], top), comps


def pipeline_predict(sample, models: Mapping[str, "object"], config: PipelineConfig | None = None
                     ) -> PipelineResult:
    """Score ``sample`` with every stream model and fuse.

    ``models`` maps stream tags (rgb, flow, depth, saliency) to objects with a
    ``score(sample, h)`` method and an ``emits_probabilities`` attribute, such
    as :class:`mmgr.streams.StreamModel`.
    """
    config = config or PipelineConfig()
    for tag, model in models.items():
        if tag not in config.weights:
            raise ConfigError(f"unknown stream {tag!r}")
        source = "rgb" if tag == "flow" else tag
        if tag not in sample.modalities and source not in sample.modalities:
            raise ConfigError(f"sample {sample.sample_id} lacks the {tag!r} modality")
    per_stream = {}
    scores = {}
    for tag, model in models.items():
        vec = np.asarray(model.score(sample, config.agg), dtype=np.float64)
        per_stream[tag] = vec
        scores[tag] = StreamScore(tag, [sample.sample_id], vec[None],
                                  normalized=bool(model.emits_probabilities))
    fused, comps = fuse_components(scores, config)
    return PipelineResult(predict_label(fused.scores[0]), fused.scores[0], per_stream,
                          {k: v.scores[0] for k, v in comps.items()})
