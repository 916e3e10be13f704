"""Multi-modal clip I/O, resampling, volumes, augmentation and synthetic data."""
from .dataset import (CHANNELS, MODALITIES, DatasetManifest, FrameSequence, VideoSample,
                      load_sample, read_sequence, write_sequence)
from .imageio import read_flo, read_pnm, write_flo, write_pnm
from .synthetic import class_table, gen_synthetic, make_samples, render_clip
from .transforms import (AugmentParams, apply_augment, augment, augment_sample, build_volume,
                         draw_augment, hflip, random_crop, resample_indices, resample_sample,
                         resample_to, resize, scale_jitter_crop)

__all__ = [
    "CHANNELS", "MODALITIES", "DatasetManifest", "FrameSequence", "VideoSample", "load_sample",
    "read_sequence", "write_sequence", "read_flo", "read_pnm", "write_flo", "write_pnm",
    "class_table", "gen_synthetic", "make_samples", "render_clip", "AugmentParams",
    "apply_augment", "augment", "augment_sample", "build_volume", "draw_augment", "hflip",
    "random_crop", "resample_indices", "resample_sample", "resample_to", "resize",
    "scale_jitter_crop",
]
