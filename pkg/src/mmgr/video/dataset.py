"""Samples, manifests and on-disk layout.

Layout::

    <root>/<split>/manifest.csv                 header ``id,label``
    <root>/<split>/<sample_id>/<modality>/<frame:05d>.{ppm|pgm|flo}
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import FormatError, ParameterError
from ..tensor import get_dtype
from .imageio import read_flo, read_pnm, write_flo, write_pnm

MODALITIES = ("rgb", "depth", "saliency", "flow")
CHANNELS = {"rgb": 3, "depth": 1, "saliency": 1, "flow": 2}
EXTENSIONS = {"rgb": ".ppm", "depth": ".pgm", "saliency": ".pgm", "flow": ".flo"}


@dataclass
class FrameSequence:
    """Frames of one modality, each ``[C, H, W]``."""

    modality: str
    frames: np.ndarray  # [T, C, H, W]

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ParameterError(f"unknown modality {self.modality!r}")
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 4 or len(self.frames) < 1:
            raise FormatError(f"{self.modality}: frames must be [T>=1, C, H, W], got {self.frames.shape}")
        if self.frames.shape[1] != CHANNELS[self.modality]:
            raise FormatError(
                f"{self.modality}: expected {CHANNELS[self.modality]} channels, got {self.frames.shape[1]}")

    def __len__(self) -> int:
        return len(self.frames)

    def replace(self, frames) -> "FrameSequence":
        return FrameSequence(self.modality, frames)


@dataclass
class VideoSample:
    sample_id: str
    modalities: dict[str, FrameSequence]
    label: int

    def __post_init__(self):
        if not self.modalities:
            raise FormatError(f"{self.sample_id}: no modality present")
        lengths = {m: len(s) for m, s in self.modalities.items()}
        if len(set(lengths.values())) > 1:
            raise FormatError(f"{self.sample_id}: inconsistent frame counts {lengths}")

    @property
    def num_frames(self) -> int:
        return len(next(iter(self.modalities.values())))

    def __getitem__(self, modality: str) -> FrameSequence:
        return self.modalities[modality]


@dataclass
class DatasetManifest:
    root: Path
    split: str
    entries: list[tuple[str, int]]
    num_classes: int

    def __post_init__(self):
        self.root = Path(self.root)
        ids = [e[0] for e in self.entries]
        if len(set(ids)) != len(ids):
            raise FormatError("manifest sample ids are not unique")
        for sid, label in self.entries:
            if not 0 <= label < self.num_classes:
                raise FormatError(f"{sid}: label {label} outside [0, {self.num_classes})")

    @property
    def split_dir(self) -> Path:
        return self.root / self.split

    @property
    def ids(self) -> list[str]:
        return [e[0] for e in self.entries]

    def label_of(self, sample_id: str) -> int:
        for sid, label in self.entries:
            if sid == sample_id:
                return label
        raise KeyError(sample_id)

    def __len__(self) -> int:
        return len(self.entries)

    def save(self) -> Path:
        path = self.split_dir / "manifest.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["id", "label"])
            writer.writerows(self.entries)
        return path

    @classmethod
    def load(cls, root, split: str, num_classes: int | None = None) -> "DatasetManifest":
        path = Path(root) / split / "manifest.csv"
        if not path.is_file():
            raise FileNotFoundError(f"manifest not found: {path}")
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != ["id", "label"]:
            raise FormatError(f"{path}: header must be 'id,label'")
        try:
            entries = [(r[0], int(r[1])) for r in rows[1:] if r]
        except (IndexError, ValueError) as exc:
            raise FormatError(f"{path}: bad row ({exc})") from None
        if num_classes is None:
            num_classes = max((e[1] for e in entries), default=-1) + 1
        return cls(Path(root), split, entries, num_classes)


def frame_path(sample_dir: Path, modality: str, index: int) -> Path:
    return sample_dir / modality / f"{index:05d}{EXTENSIONS[modality]}"


def write_sequence(sample_dir: Path, seq: FrameSequence) -> None:
    out = sample_dir / seq.modality
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames):
        path = frame_path(sample_dir, seq.modality, i)
        if seq.modality == "flow":
            write_flo(path, frame)
        else:
            write_pnm(path, frame)


def read_sequence(sample_dir: Path, modality: str) -> FrameSequence:
    mdir = sample_dir / modality
    files = sorted(mdir.glob(f"*{EXTENSIONS[modality]}"))
    if not files:
        raise FormatError(f"{mdir}: no {EXTENSIONS[modality]} frames")
    expected = [f"{i:05d}{EXTENSIONS[modality]}" for i in range(len(files))]
    if [f.name for f in files] != expected:
        raise FormatError(f"{mdir}: frame files are not numbered 00000..{len(files) - 1:05d}")
    reader = read_flo if modality == "flow" else read_pnm
    frames = []
    for f in files:
        try:
            frames.append(reader(f))
        except FormatError as exc:
            raise FormatError(f"{f}: {exc}") from None
    shapes = {fr.shape for fr in frames}
    if len(shapes) != 1:
        raise FormatError(f"{mdir}: frames differ in shape {sorted(shapes)}")
    return FrameSequence(modality, np.stack(frames).astype(get_dtype()))


def load_sample(manifest: DatasetManifest, sample_id: str,
                modalities: tuple[str, ...] | None = None) -> VideoSample:
    """Read one sample's frames from disk; pixel values end up in [0, 1].

    Without ``modalities`` every modality directory present is loaded. A
    cached ``flow`` sequence lives on the resampled timeline; when it is
    loaded alongside image modalities of another length those are resampled
    onto it after their own counts have been checked.
    """
    sample_dir = manifest.split_dir / sample_id
    if not sample_dir.is_dir():
        raise FileNotFoundError(f"sample directory not found: {sample_dir}")
    label = manifest.label_of(sample_id)
    wanted = modalities or tuple(m for m in MODALITIES if (sample_dir / m).is_dir())
    if not wanted:
        raise FormatError(f"{sample_dir}: no modality subdirectory")
    seqs: dict[str, FrameSequence] = {}
    for m in wanted:
        if not (sample_dir / m).is_dir():
            raise FileNotFoundError(f"{sample_dir}: modality {m!r} missing")
        seqs[m] = read_sequence(sample_dir, m)
    images = {m: s for m, s in seqs.items() if m != "flow"}
    lengths = {m: len(s) for m, s in images.items()}
    if len(set(lengths.values())) > 1:
        raise FormatError(f"{sample_id}: inconsistent frame counts {lengths}")
    if "flow" in seqs and images:
        n_flow = len(seqs["flow"])
        if next(iter(lengths.values())) != n_flow:
            from .transforms import resample_to
            for m in images:
                seqs[m] = resample_to(seqs[m], n_flow)
    return VideoSample(sample_id, seqs, label)
