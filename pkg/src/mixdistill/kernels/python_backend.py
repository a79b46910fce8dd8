"""Pure-numpy reference implementations of the hot kernels.

Convolution is valid-mode, stride 1, NHWC, weights (KH, KW, Cin, Cout).
Max-pooling is 2x2 non-overlapping with first-index tie breaking, so both
backends scatter gradients to the same element on ties.
"""

import numpy as np


def _im2col(x, kh, kw):
    # (B, OH, OW, Cin, KH, KW) -> (B, OH, OW, KH, KW, Cin)
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3))


def conv2d_forward(x, w, b):
    B, H, W, Cin = x.shape
    kh, kw, _, Cout = w.shape
    oh, ow = H - kh + 1, W - kw + 1
    cols = _im2col(x, kh, kw).reshape(B * oh * ow, kh * kw * Cin)
    y = cols @ w.reshape(-1, Cout) + b
    return y.reshape(B, oh, ow, Cout)


def conv2d_backward(x, w, dy):
    B, H, W, Cin = x.shape
    kh, kw, _, Cout = w.shape
    oh, ow = dy.shape[1], dy.shape[2]

    dy_mat = dy.reshape(B * oh * ow, Cout)
    cols = _im2col(x, kh, kw).reshape(B * oh * ow, kh * kw * Cin)
    dw = (cols.T @ dy_mat).reshape(kh, kw, Cin, Cout)
    db = dy_mat.sum(axis=0)

    # dx is the full correlation of dy with the flipped kernel.
    dy_pad = np.pad(dy, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0)))
    w_rot = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2))
    dx = conv2d_forward(dy_pad, w_rot, np.zeros(Cin))
    return dx, dw, db


def maxpool2_forward(x):
    B, H, W, C = x.shape
    x_ = x.reshape(B, H // 2, 2, W // 2, 2, C)
    flat = x_.transpose(0, 1, 3, 2, 4, 5).reshape(B, H // 2, W // 2, 4, C)
    arg = flat.argmax(axis=3).astype(np.int8)
    y = np.take_along_axis(flat, arg[:, :, :, None, :].astype(np.intp), axis=3)
    return y[:, :, :, 0, :], arg


def maxpool2_backward(arg, dy, in_shape):
    B, H, W, C = in_shape
    dx_flat = np.zeros((B, H // 2, W // 2, 4, C), dtype=dy.dtype)
    np.put_along_axis(dx_flat, arg[:, :, :, None, :].astype(np.intp), dy[:, :, :, None, :], axis=3)
    dx = dx_flat.reshape(B, H // 2, W // 2, 2, 2, C).transpose(0, 1, 3, 2, 4, 5)
    return dx.reshape(B, H, W, C)
