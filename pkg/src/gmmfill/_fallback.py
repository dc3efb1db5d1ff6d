"""Pure-numpy versions of the convolution kernels.

These are the reference implementations; the compiled module in
``_ckernels.pyx`` must agree with them bit-for-bit.
"""

import numpy as np


def im2col(x, kh, kw, stride, pad, oh, ow):
    """Unfold a batch ``(N, C, H, W)``, zero-padded by ``pad``, into ``(C*kh*kw, N*oh*ow)``.

    Row ``(c, i, j)`` holds input channel ``c`` shifted by kernel offset ``(i, j)``.
    """
    n, c = x.shape[:2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    # (N, C, oh, ow, kh, kw) -> (C, kh, kw, N, oh, ow)
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(c * kh * kw, n * oh * ow)


def col2im(cols, n, c, h, w, kh, kw, stride, pad, oh, ow):
    """Adjoint of :func:`im2col`: scatter-add rows back into an ``(N, C, H, W)`` batch.

    Contributions to each cell are added in kernel-offset order ``(i, j)``,
    starting from zero; those landing in the padding are dropped.
    """
    out = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    blocks = cols.reshape(c, kh, kw, n, oh, ow).transpose(3, 0, 1, 2, 4, 5)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += blocks[:, :, i, j]
    return out[:, :, pad : pad + h, pad : pad + w] if pad else out
