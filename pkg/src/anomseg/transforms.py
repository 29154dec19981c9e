"""Sample-level transforms: joint horizontal flip and channel normalization."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .datagen import Sample

# Fixed constants for the synthetic images (not ImageNet statistics).
IMAGE_MEAN = (0.5, 0.5, 0.5)
IMAGE_STD = (0.25, 0.25, 0.25)


def hflip(sample: Sample) -> Sample:
    """Flip every plane of ``sample`` left-right, labels included."""
    return replace(
        sample,
        image=sample.image[:, ::-1].copy(),
        semantic_map=sample.semantic_map[:, ::-1].copy(),
        recon_image=sample.recon_image[:, ::-1].copy(),
        uncertainty_map=sample.uncertainty_map[:, ::-1].copy(),
        gt_map=sample.gt_map[:, ::-1].copy(),
    )


def normalize_image(img: np.ndarray) -> np.ndarray:
    return (img - np.asarray(IMAGE_MEAN)) / np.asarray(IMAGE_STD)


def normalize(sample: Sample) -> Sample:
    return replace(sample, image=normalize_image(sample.image), recon_image=normalize_image(sample.recon_image))


def augment(sample: Sample, rng: np.random.Generator | None = None, flip: bool | None = None,
            normalize_channels: bool = True) -> Sample:
    """Random joint horizontal flip (p=0.5) followed by channel normalization.

    ``flip`` forces the flip decision; when it is None a draw from ``rng``
    decides.
    """
    if flip is None:
        if rng is None:
            raise ValueError("augment needs an rng when flip is not forced")
        flip = bool(rng.random() < 0.5)
    out = hflip(sample) if flip else sample
    return normalize(out) if normalize_channels else out
