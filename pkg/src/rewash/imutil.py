"""Image/tensor conversion helpers shared by the neural modules.

Images are HxWxC float arrays in [0, 1]; tensors are CxHxW float32.
"""

from __future__ import annotations

import numpy as np
import torch


def to_tensor(img: np.ndarray) -> torch.Tensor:
    """HxWxC [0,1] array -> CxHxW float32 tensor (HxW becomes 1xHxW)."""
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))


def to_image(t: torch.Tensor) -> np.ndarray:
    """CxHxW tensor -> HxWxC float32 array clipped to [0, 1]."""
    arr = t.detach().cpu().numpy()
    if arr.ndim != 3:
        raise ValueError(f"expected CxHxW tensor, got shape {tuple(t.shape)}")
    return np.clip(arr.transpose(1, 2, 0), 0.0, 1.0).astype(np.float32)


def stack_images(images) -> torch.Tensor:
    """Sequence of HxWxC arrays -> BxCxHxW float32 batch."""
    return torch.stack([to_tensor(im) for im in images], dim=0)


def unstack_images(batch: torch.Tensor) -> list[np.ndarray]:
    return [to_image(batch[i]) for i in range(batch.shape[0])]
