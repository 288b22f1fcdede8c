"""Pure-numpy im2col / col2im, used when the compiled extension is unavailable."""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def im2col(x: np.ndarray, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    x = np.ascontiguousarray(x)
    n, c = x.shape[:2]
    s0, s1, s2, s3 = x.strides
    view = as_strided(
        x,
        shape=(n, c, k, k, oh, ow),
        strides=(s0, s1, s2, s3, s2 * stride, s3 * stride),
        writeable=False,
    )
    cols = view.reshape(n, c * k * k, oh * ow)
    # reshape hands back the read-only view itself when no copy is needed (k=1, stride=1)
    return cols if cols.flags.writeable else cols.copy()


def col2im(cols: np.ndarray, shape: tuple, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, c = shape[:2]
    out = np.zeros(shape, dtype=cols.dtype)
    blocks = cols.reshape(n, c, k, k, oh, ow)
    # same (ki, kj) accumulation order as the compiled kernel
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += blocks[:, :, ki, kj]
    return out
