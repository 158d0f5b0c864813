"""Black-block occlusion: one third of the image hidden from one side or the center."""
from __future__ import annotations

import numpy as np
import torch

DIRECTIONS = ("bottom", "center", "left", "right", "top")


def occlusion_block(height: int, width: int, direction: str):
    """(row slice, column slice) of the block; sides are floor(dim / 3) pixels."""
    h, w = height // 3, width // 3
    if direction == "top":
        return slice(0, h), slice(0, width)
    if direction == "bottom":
        return slice(height - h, height), slice(0, width)
    if direction == "left":
        return slice(0, height), slice(0, w)
    if direction == "right":
        return slice(0, height), slice(width - w, width)
    if direction == "center":
        r, c = (height - h) // 2, (width - w) // 2
        return slice(r, r + h), slice(c, c + w)
    raise ValueError(f"unknown occlusion direction {direction!r}; choose from {DIRECTIONS}")


def occlude(image, direction: str):
    """Copy of `image` with the block zeroed.

    numpy images are (H, W) or (H, W, C); torch tensors are (..., H, W).
    """
    if isinstance(image, torch.Tensor):
        out = image.clone()
        rows, cols = occlusion_block(out.shape[-2], out.shape[-1], direction)
        out[..., rows, cols] = 0
        return out
    out = np.array(image, copy=True)
    rows, cols = occlusion_block(out.shape[0], out.shape[1], direction)
    out[rows, cols] = 0
    return out
