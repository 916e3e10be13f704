"""Multi-modal gesture recognition from RGB-D clips.

Two components are fused at the score level: consensus-voting 2D streams over
RGB frames and stacked optical flow, and 3D convolutional streams over depth
and saliency volumes.
"""
__version__ = "0.1.0"
