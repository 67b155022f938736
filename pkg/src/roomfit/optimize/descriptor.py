"""Size-independent texture descriptor: Gram matrices of rectified responses
to a fixed 16-filter bank over a 5-scale pyramid (1280 dims total)."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import CropTooSmall
from ..imaging import ImageF

SCALES = 5
N_FILTERS = 16
MIN_CROP = 16
_LUMA = np.array([0.2126, 0.7152, 0.0722])


def _filter_bank() -> torch.Tensor:
    """(16, 3, 3, 3) deterministic kernels: oriented derivatives, Laplacian,
    then seeded random 3x3s (zero-mean, unit L2)."""
    sobel_x = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64) / 4.0
    sobel_y = sobel_x.T
    diag_a = np.array([[0, 1, 2], [-1, 0, 1], [-2, -1, 0]], dtype=np.float64) / 4.0
    diag_b = diag_a[::-1].copy()
    laplace = np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=np.float64) / 4.0
    mean3 = np.full((3, 3), 1.0 / 9.0)
    structured = [sobel_x, sobel_y, diag_a, diag_b, laplace, mean3]
    kernels = []
    for k in structured:
        kernels.append(k[None, :, :] * _LUMA[:, None, None])
    rng = np.random.default_rng(0x524F4F46)  # fixed constant, part of the format
    while len(kernels) < N_FILTERS:
        k = rng.normal(size=(3, 3, 3))
        k -= k.mean()
        k /= np.linalg.norm(k)
        kernels.append(k)
    return torch.from_numpy(np.stack(kernels))


_BANK = _filter_bank()


def descriptor_torch(img: torch.Tensor) -> torch.Tensor:
    """Descriptor of an (h, w, 3) tensor; differentiable w.r.t. the pixels."""
    h, w = img.shape[0], img.shape[1]
    if h < MIN_CROP or w < MIN_CROP:
        raise CropTooSmall(f"{w}x{h} below {MIN_CROP}x{MIN_CROP}")
    x = img.permute(2, 0, 1).unsqueeze(0)
    grams = []
    for _ in range(SCALES):
        padded = F.pad(x, (1, 1, 1, 1), mode="replicate")
        resp = F.relu(F.conv2d(padded, _BANK))
        flat = resp.reshape(N_FILTERS, -1)
        gram = (flat @ flat.T) / flat.shape[1]
        grams.append(gram.reshape(-1))
        if min(x.shape[2], x.shape[3]) >= 2:
            x = F.avg_pool2d(x, 2, ceil_mode=True)
    return torch.cat(grams)


def gram_descriptor(crop: ImageF) -> np.ndarray:
    """Descriptor of a linear RGB crop; length 1280 for any crop >= 16x16."""
    if crop.channels != 3:
        raise ValueError("descriptor needs a 3-channel crop")
    with torch.no_grad():
        return descriptor_torch(torch.from_numpy(crop.data)).numpy()


def descriptor_distance(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.abs(a - b).mean())
