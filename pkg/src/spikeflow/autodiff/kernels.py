"""Compiled inner loops for the depthwise convolutions.

All kernels are single-threaded and accumulate in program order, so results
are bit-reproducible for identical inputs. Each JIT function specializes per
dtype (float32/float64) on first call; compilation results are cached on disk.

Inputs arrive spatially pre-padded; the temporal axis is never padded, so the
output temporal extent is T - kt + 1. 2D convolutions reuse the 3D kernels
with a singleton temporal axis.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def dw3d_forward(xp, w, out):
    # xp: (C, T, Hp, Wp) padded; w: (C, kt, kh, kw); out: (C, To, H, W) zeroed
    C, To, H, W = out.shape
    kt, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    for c in range(C):
        for t in range(To):
            for i in range(kt):
                for j in range(kh):
                    for y in range(H):
                        xrow = xp[c, t + i, y + j]
                        orow = out[c, t, y]
                        for k in range(kw):
                            wv = w[c, i, j, k]
                            for x in range(W):
                                orow[x] += wv * xrow[x + k]


@njit(cache=True)
def dw3d_forward_strided(xp, w, out, stride):
    # Spatial stride > 1 (strided-conv downsampling); temporal stride stays 1.
    C, To, H, W = out.shape
    kt, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    for c in range(C):
        for t in range(To):
            for i in range(kt):
                for j in range(kh):
                    for y in range(H):
                        xrow = xp[c, t + i, y * stride + j]
                        orow = out[c, t, y]
                        for k in range(kw):
                            wv = w[c, i, j, k]
                            for x in range(W):
                                orow[x] += wv * xrow[x * stride + k]


@njit(cache=True)
def dw3d_backward_input(go, w, gxp):
    # go: (C, To, H, W); gxp: (C, T, Hp, Wp) zeroed, padded like the input
    C, To, H, W = go.shape
    kt, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    for c in range(C):
        for t in range(To):
            for i in range(kt):
                for j in range(kh):
                    for y in range(H):
                        gxrow = gxp[c, t + i, y + j]
                        gorow = go[c, t, y]
                        for k in range(kw):
                            wv = w[c, i, j, k]
                            for x in range(W):
                                gxrow[x + k] += wv * gorow[x]


@njit(cache=True)
def dw3d_backward_input_strided(go, w, gxp, stride):
    C, To, H, W = go.shape
    kt, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    for c in range(C):
        for t in range(To):
            for i in range(kt):
                for j in range(kh):
                    for y in range(H):
                        gxrow = gxp[c, t + i, y * stride + j]
                        gorow = go[c, t, y]
                        for k in range(kw):
                            wv = w[c, i, j, k]
                            for x in range(W):
                                gxrow[x * stride + k] += wv * gorow[x]


@njit(cache=True, fastmath=True)
def dw3d_backward_weight(xp, go, gw):
    # gw: (C, kt, kh, kw) zeroed; taps innermost so each go row streams once
    # per (i, j) while the x rows stay cache-resident. fastmath lets LLVM
    # vectorize the row dot products; the reassociation is fixed at compile
    # time, so results stay run-to-run deterministic.
    C, To, H, W = go.shape
    kt, kh, kw = gw.shape[1], gw.shape[2], gw.shape[3]
    for c in range(C):
        for t in range(To):
            for y in range(H):
                gorow = go[c, t, y]
                for i in range(kt):
                    for j in range(kh):
                        xrow = xp[c, t + i, y + j]
                        for k in range(kw):
                            acc = 0.0
                            for x in range(W):
                                acc += gorow[x] * xrow[x + k]
                            gw[c, i, j, k] += acc


@njit(cache=True, fastmath=True)
def dw3d_backward_weight_strided(xp, go, gw, stride):
    C, To, H, W = go.shape
    kt, kh, kw = gw.shape[1], gw.shape[2], gw.shape[3]
    for c in range(C):
        for t in range(To):
            for y in range(H):
                gorow = go[c, t, y]
                for i in range(kt):
                    for j in range(kh):
                        xrow = xp[c, t + i, y * stride + j]
                        for k in range(kw):
                            acc = 0.0
                            for x in range(W):
                                acc += gorow[x] * xrow[x * stride + k]
                            gw[c, i, j, k] += acc
