"""Convolution primitives (cross-correlation semantics, channels-last).

Shape arithmetic for ``conv3d``:

    out = floor((in + 2*pad - k) / stride) + 1

per spatial axis. Each primitive is a single tape node with a hand-written
backward pass: the forward/backward loops run over kernel offsets (k^3
vectorized slice operations) instead of materializing im2col buffers.
"""
from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import Tensor


def _triple(v):
    if isinstance(v, int):
        return (v, v, v)
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise ShapeError(f"expected int or length-3 tuple, got {v}")
    return t


def conv3d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride=1, padding=0) -> Tensor:
    """3-D convolution of a (H, W, D, Cin) volume with a (k0,k1,k2,Cin,Cout) kernel."""
    stride = _triple(stride)
    padding = _triple(padding)
    if x.ndim != 4 or w.ndim != 5:
        raise ShapeError(f"conv3d expects x rank 4 and w rank 5, got {x.shape}, {w.shape}")
    if x.shape[3] != w.shape[3]:
        raise ShapeError(f"channel mismatch: input {x.shape} vs kernel {w.shape}")
    k = w.shape[:3]
    out_sp = []
    for ax in range(3):
        padded = x.shape[ax] + 2 * padding[ax]
        if k[ax] > padded:
            raise ShapeError(
                f"kernel {k} larger than padded input "
                f"{tuple(x.shape[a] + 2 * padding[a] for a in range(3))}"
            )
        out_sp.append((padded - k[ax]) // stride[ax] + 1)
    cout = w.shape[4]

    xp = np.pad(x.data, [(padding[0],) * 2, (padding[1],) * 2, (padding[2],) * 2, (0, 0)])
    out = np.zeros((*out_sp, cout), dtype=x.dtype)
    for a in range(k[0]):
        for bb in range(k[1]):
            for c in range(k[2]):
                slab = xp[a: a + stride[0] * (out_sp[0] - 1) + 1: stride[0],
                          bb: bb + stride[1] * (out_sp[1] - 1) + 1: stride[1],
                          c: c + stride[2] * (out_sp[2] - 1) + 1: stride[2]]
                out += np.tensordot(slab, w.data[a, bb, c], axes=([3], [0]))
    if b is not None:
        out += b.data

    children = (x, w) if b is None else (x, w, b)

    def backward(g):
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for a in range(k[0]):
                for bb in range(k[1]):
                    for c in range(k[2]):
                        dxp[a: a + stride[0] * (out_sp[0] - 1) + 1: stride[0],
                            bb: bb + stride[1] * (out_sp[1] - 1) + 1: stride[1],
                            c: c + stride[2] * (out_sp[2] - 1) + 1: stride[2]] += \
                            np.tensordot(g, w.data[a, bb, c], axes=([3], [1]))
            x._accum(dxp[padding[0]: xp.shape[0] - padding[0],
                         padding[1]: xp.shape[1] - padding[1],
                         padding[2]: xp.shape[2] - padding[2]])
        if w.requires_grad:
            dw = np.zeros_like(w.data)
            for a in range(k[0]):
                for bb in range(k[1]):
                    for c in range(k[2]):
                        slab = xp[a: a + stride[0] * (out_sp[0] - 1) + 1: stride[0],
                                  bb: bb + stride[1] * (out_sp[1] - 1) + 1: stride[1],
                                  c: c + stride[2] * (out_sp[2] - 1) + 1: stride[2]]
                        dw[a, bb, c] = np.tensordot(slab, g, axes=([0, 1, 2], [0, 1, 2]))
            w._accum(dw)
        if b is not None and b.requires_grad:
            b._accum(g.sum(axis=(0, 1, 2)))

    return Tensor._from_op(out, children, backward, "conv3d")


def conv_transpose3d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=2) -> Tensor:
    """Transposed 3-D convolution with kernel extent equal to the stride.

    Used for decoder upsampling: every input voxel paints a disjoint
    stride^3 output block, so no overlap handling is needed.
    """
    stride = _triple(stride)
    if x.ndim != 4 or w.ndim != 5:
        raise ShapeError(f"conv_transpose3d expects x rank 4 and w rank 5, got {x.shape}, {w.shape}")
    if w.shape[:3] != stride:
        raise ShapeError(f"kernel extent {w.shape[:3]} must equal stride {stride}")
    if x.shape[3] != w.shape[3]:
        raise ShapeError(f"channel mismatch: input {x.shape} vs kernel {w.shape}")
    cout = w.shape[4]
    out_sp = tuple(x.shape[ax] * stride[ax] for ax in range(3))
    out = np.empty((*out_sp, cout), dtype=x.dtype)
    for a in range(stride[0]):
        for bb in range(stride[1]):
            for c in range(stride[2]):
                out[a:: stride[0], bb:: stride[1], c:: stride[2]] = \
                    np.tensordot(x.data, w.data[a, bb, c], axes=([3], [0]))
    if b is not None:
        out += b.data

    children = (x, w) if b is None else (x, w, b)

    def backward(g):
        if x.requires_grad:
            dx = np.zeros_like(x.data)
            for a in range(stride[0]):
                for bb in range(stride[1]):
                    for c in range(stride[2]):
                        dx += np.tensordot(g[a:: stride[0], bb:: stride[1], c:: stride[2]],
                                           w.data[a, bb, c], axes=([3], [1]))
            x._accum(dx)
        if w.requires_grad:
            dw = np.zeros_like(w.data)
            for a in range(stride[0]):
                for bb in range(stride[1]):
                    for c in range(stride[2]):
                        dw[a, bb, c] = np.tensordot(
                            x.data, g[a:: stride[0], bb:: stride[1], c:: stride[2]],
                            axes=([0, 1, 2], [0, 1, 2]))
            w._accum(dw)
        if b is not None and b.requires_grad:
            b._accum(g.sum(axis=(0, 1, 2)))

    return Tensor._from_op(out, children, backward, "conv_transpose3d")


def conv1d_depthwise_causal(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Per-channel causal 1-D convolution over a (L, C) sequence.

    The input is left-padded by width-1 zeros, so output position t depends
    only on inputs at positions <= t. Kernel layout is (K, C); tap K-1
    multiplies the current token.
    """
    if x.ndim != 2 or w.ndim != 2:
        raise ShapeError(f"expected (L,C) input and (K,C) kernel, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"channel mismatch: input {x.shape} vs kernel {w.shape}")
    L = x.shape[0]
    K = w.shape[0]
    xp = np.concatenate([np.zeros((K - 1, x.shape[1]), dtype=x.dtype), x.data], axis=0)
    out = np.zeros_like(x.data)
    for kk in range(K):
        out += w.data[kk] * xp[kk: kk + L]
    if b is not None:
        out += b.data

    children = (x, w) if b is None else (x, w, b)

    def backward(g):
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for kk in range(K):
                dxp[kk: kk + L] += w.data[kk] * g
            x._accum(dxp[K - 1:])
        if w.requires_grad:
            dw = np.empty_like(w.data)
            for kk in range(K):
                dw[kk] = (xp[kk: kk + L] * g).sum(axis=0)
            w._accum(dw)
        if b is not None and b.requires_grad:
            b._accum(g.sum(axis=0))

    return Tensor._from_op(out, children, backward, "conv1d_depthwise_causal")
