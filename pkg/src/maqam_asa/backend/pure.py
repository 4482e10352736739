"""Pure-numpy implementations of the hot kernels.

Contracts match ``backend._ckernels`` exactly; see backend/__init__.py for
the selection rule. All kernels assume float32 or float64 C-contiguous input.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col3(x: np.ndarray) -> np.ndarray:
    """Gather 3x3/pad-1/stride-1 patches of (B, C, H, W) into (B, H*W, C*9).

    Column layout is c*9 + di*3 + dj so that a (K, C*9) weight matrix
    multiplies patches directly.
    """
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (B, C, H, W, 3, 3)
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b, h * w, c * 9)


def col2im3(cols: np.ndarray, h: int, w: int) -> np.ndarray:
    """Scatter-add inverse of im2col3; returns (B, C, H, W)."""
    b = cols.shape[0]
    c = cols.shape[2] // 9
    patches = cols.reshape(b, h, w, c, 3, 3).transpose(0, 3, 4, 5, 1, 2)
    buf = np.zeros((b, c, h + 2, w + 2), dtype=cols.dtype)
    for di in range(3):
        for dj in range(3):
            buf[:, :, di : di + h, dj : dj + w] += patches[:, :, di, dj]
    return buf[:, :, 1 : h + 1, 1 : w + 1]


def maxpool2(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2/stride-2 max pooling with argmax positions.

    Odd trailing rows/columns are dropped (floor semantics). Returns
    (out (B,C,H//2,W//2), idx uint8 in {0..3} = di*2+dj, first max wins).
    """
    b, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    q = x[:, :, : h2 * 2, : w2 * 2].reshape(b, c, h2, 2, w2, 2)
    q = q.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h2, w2, 4)
    idx = q.argmax(axis=-1).astype(np.uint8)
    out = np.take_along_axis(q, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool2_backward(grad: np.ndarray, idx: np.ndarray, h: int, w: int) -> np.ndarray:
    """Route pooled gradients back to the argmax inputs of shape (B,C,H,W)."""
    b, c, h2, w2 = grad.shape
    q = np.zeros((b, c, h2, w2, 4), dtype=grad.dtype)
    np.put_along_axis(q, idx[..., None].astype(np.intp), grad[..., None], axis=-1)
    out = np.zeros((b, c, h, w), dtype=grad.dtype)
    out[:, :, : h2 * 2, : w2 * 2] = (
        q.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h2 * 2, w2 * 2)
    )
    return out
