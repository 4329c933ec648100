"""Multiscale CNN-CRF segmentation pipeline.

Pixel-level segmentation by compact encoder-decoder networks with
dense-CRF cleanup, an 8x8 patch-level classification pass, and
dilation-buffer fusion of the two; plus dataset tooling, training,
evaluation metrics, and a CLI.
"""

__version__ = "0.1.0"
