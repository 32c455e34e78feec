"""Mamba building blocks over sequences and 3-D volumes.

Volume layout is channels-last (H, W, D, C). A DirectionalLayout turns a
volume into a token sequence: permute the spatial axes, flatten row-major
(the permutation's last axis is the contiguous/fastest one), optionally
reverse. unflatten is the exact inverse.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .conv import conv1d_depthwise_causal
from .errors import ConfigError, ContractError
from .ssm import S6Weights, init_s6, s6_forward, state_size_for
from .tensor import Tensor, layer_norm

SPATIAL_PERMS = tuple(permutations((0, 1, 2)))

# the four permutations kept by the multi-directional module
DEFAULT_DIRECTION_SET = ((0, 1, 2), (0, 2, 1), (1, 0, 2), (2, 1, 0))


@dataclass(frozen=True)
class DirectionalLayout:
    """One voxel-to-sequence ordering: spatial axis permutation + direction."""

    perm: tuple = (0, 1, 2)
    reversed: bool = False

    def __post_init__(self):
        if tuple(sorted(self.perm)) != (0, 1, 2):
            raise ConfigError(f"perm must permute (0,1,2), got {self.perm}")


ALL_LAYOUTS = tuple(DirectionalLayout(p, r) for p in SPATIAL_PERMS for r in (False, True))


def flatten_volume(v: Tensor, layout: DirectionalLayout) -> Tensor:
    """(H, W, D, C) volume -> (L, C) sequence under the given layout."""
    if v.ndim != 4:
        raise ContractError(f"expected a (H,W,D,C) volume, got shape {v.shape}")
    s = v.permute_axes((*layout.perm, 3))
    L = s.shape[0] * s.shape[1] * s.shape[2]
    s = s.reshape((L, v.shape[3]))
    if layout.reversed:
        s = s.flip(0)
    return s


def unflatten_volume(s: Tensor, dims: tuple, layout: DirectionalLayout) -> Tensor:
    """Exact inverse of flatten_volume; dims is the original (H, W, D)."""
    if s.ndim != 2:
        raise ContractError(f"expected a (L,C) sequence, got shape {s.shape}")
    L = dims[0] * dims[1] * dims[2]
    if s.shape[0] != L:
        raise ContractError(f"sequence length {s.shape[0]} does not match dims {dims}")
    if layout.reversed:
        s = s.flip(0)
    pdims = tuple(dims[p] for p in layout.perm)
    v = s.reshape((*pdims, s.shape[1]))
    inv = tuple(int(i) for i in np.argsort(layout.perm))
    return v.permute_axes((*inv, 3))


# ---------------------------------------------------------------------------
# weights
# ---------------------------------------------------------------------------


def _linear_init(rng, fan_in, fan_out, dtype, scale=1.0):
    s = scale / np.sqrt(fan_in)
    return rng.uniform(-s, s, size=(fan_in, fan_out)).astype(dtype)


@dataclass
class MambaBlockWeights:
    """Expansion projection, depthwise causal conv, S6, gate, out-projection."""

    in_proj: Tensor    # (D, E)
    gate_proj: Tensor  # (D, E)
    conv_w: Tensor     # (K, E) depthwise causal
    conv_b: Tensor     # (E,)
    s6: S6Weights
    out_proj: Tensor   # (E, D), scaled by the residual factor at init
    out_bias: Tensor   # (D,)

    def parameters(self):
        return [self.in_proj, self.gate_proj, self.conv_w, self.conv_b,
                *self.s6.parameters(), self.out_proj, self.out_bias]


@dataclass
class MambaLayerWeights:
    """Pre-norm Mamba block plus a normalized MLP head, each residual."""

    ln1_g: Tensor
    ln1_b: Tensor
    block: MambaBlockWeights
    ln2_g: Tensor
    ln2_b: Tensor
    mlp_w1: Tensor     # (D, H)
    mlp_b1: Tensor
    mlp_w2: Tensor     # (H, D), scaled by the residual factor at init
    mlp_b2: Tensor

    def parameters(self):
        return [self.ln1_g, self.ln1_b, *self.block.parameters(),
                self.ln2_g, self.ln2_b,
                self.mlp_w1, self.mlp_b1, self.mlp_w2, self.mlp_b2]

    def zero_residual_branches(self):
        """Zero both branch output projections; the layer becomes an identity."""
        self.block.out_proj.data[:] = 0
        self.block.out_bias.data[:] = 0
        self.mlp_w2.data[:] = 0
        self.mlp_b2.data[:] = 0


@dataclass
class BidirWeights:
    """Two independent Mamba Layers (forward / backward) plus the post-sum norm."""

    fwd: MambaLayerWeights
    bwd: MambaLayerWeights
    ln_g: Tensor
    ln_b: Tensor

    def parameters(self):
        return [*self.fwd.parameters(), *self.bwd.parameters(), self.ln_g, self.ln_b]


@dataclass
class MultiDirWeights:
    """One bidirectional layer per spatial layout; outputs are averaged."""

    branches: list            # list[BidirWeights]
    layouts: tuple = field(default_factory=lambda: tuple(
        DirectionalLayout(p) for p in DEFAULT_DIRECTION_SET))

    def __post_init__(self):
        perms = [l.perm for l in self.layouts]
        if len(set(perms)) != len(perms):
            raise ConfigError(f"duplicate layouts in direction set: {perms}")
        if len(self.branches) != len(self.layouts):
            raise ConfigError("one weight branch required per layout")

    def parameters(self):
        return [p for b in self.branches for p in b.parameters()]


def init_mamba_block(d_model: int, rng: np.random.Generator, *, expand: int = 2,
                     conv_width: int = 4, n_state: int | None = None,
                     res_scale: float = 1.0, dtype=np.float32) -> MambaBlockWeights:
    e = expand * d_model
    n = state_size_for(d_model) if n_state is None else n_state
    conv_w = rng.uniform(-1, 1, size=(conv_width, e)).astype(dtype) / np.sqrt(conv_width)
    return MambaBlockWeights(
        in_proj=Tensor(_linear_init(rng, d_model, e, dtype), requires_grad=True),
        gate_proj=Tensor(_linear_init(rng, d_model, e, dtype), requires_grad=True),
        conv_w=Tensor(conv_w, requires_grad=True),
        conv_b=Tensor(np.zeros(e, dtype=dtype), requires_grad=True),
        s6=init_s6(e, n, rng, dtype=dtype),
        out_proj=Tensor(_linear_init(rng, e, d_model, dtype, scale=res_scale),
                        requires_grad=True),
        out_bias=Tensor(np.zeros(d_model, dtype=dtype), requires_grad=True),
    )


def init_mamba_layer(d_model: int, rng: np.random.Generator, *, expand: int = 2,
                     conv_width: int = 4, n_state: int | None = None,
                     n_residual: int = 1, mlp_ratio: int = 4,
                     dtype=np.float32) -> MambaLayerWeights:
    """n_residual is the total residual-layer count of the enclosing network;
    branch output weights are scaled by 1/sqrt(n_residual) at init."""
    res_scale = 1.0 / np.sqrt(n_residual)
    h = mlp_ratio * d_model
    ones = np.ones(d_model, dtype=dtype)
    zeros = np.zeros(d_model, dtype=dtype)
    return MambaLayerWeights(
        ln1_g=Tensor(ones.copy(), requires_grad=True),
        ln1_b=Tensor(zeros.copy(), requires_grad=True),
        block=init_mamba_block(d_model, rng, expand=expand, conv_width=conv_width,
                               n_state=n_state, res_scale=res_scale, dtype=dtype),
        ln2_g=Tensor(ones.copy(), requires_grad=True),
        ln2_b=Tensor(zeros.copy(), requires_grad=True),
        mlp_w1=Tensor(_linear_init(rng, d_model, h, dtype), requires_grad=True),
        mlp_b1=Tensor(np.zeros(h, dtype=dtype), requires_grad=True),
        mlp_w2=Tensor(_linear_init(rng, h, d_model, dtype, scale=res_scale),
                      requires_grad=True),
        mlp_b2=Tensor(zeros.copy(), requires_grad=True),
    )


def init_bidir(d_model: int, rng: np.random.Generator, *, n_residual: int = 2,
               dtype=np.float32, **kw) -> BidirWeights:
    return BidirWeights(
        fwd=init_mamba_layer(d_model, rng, n_residual=n_residual, dtype=dtype, **kw),
        bwd=init_mamba_layer(d_model, rng, n_residual=n_residual, dtype=dtype, **kw),
        ln_g=Tensor(np.ones(d_model, dtype=dtype), requires_grad=True),
        ln_b=Tensor(np.zeros(d_model, dtype=dtype), requires_grad=True),
    )


def init_multidir(d_model: int, rng: np.random.Generator, *,
                  direction_set=DEFAULT_DIRECTION_SET, n_residual: int = 8,
                  dtype=np.float32, **kw) -> MultiDirWeights:
    layouts = tuple(DirectionalLayout(p) for p in direction_set)
    branches = [init_bidir(d_model, rng, n_residual=n_residual, dtype=dtype, **kw)
                for _ in layouts]
    return MultiDirWeights(branches=branches, layouts=layouts)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------


def _mamba_branch(x: Tensor, w: MambaBlockWeights, chunk: int) -> Tensor:
    """OutProj( SiLU(gate) * S6( SiLU(causal_conv(InProj(x))) ) ), no skip."""
    u = x @ w.in_proj
    u = conv1d_depthwise_causal(u, w.conv_w, w.conv_b).silu()
    y = s6_forward(u, w.s6, chunk=chunk)
    gate = (x @ w.gate_proj).silu()
    return (y * gate) @ w.out_proj + w.out_bias


def mamba_block(x: Tensor, w: MambaBlockWeights, chunk: int = 64) -> Tensor:
    """x + OutProj( SiLU(gate) * S6( SiLU(causal_conv(InProj(x))) ) )."""
    return x + _mamba_branch(x, w, chunk)


def mamba_layer(x: Tensor, w: MambaLayerWeights, chunk: int = 64) -> Tensor:
    """Pre-norm residual wrapper: block branch then MLP head, ViT style.

    The block's skip connection serves as the layer residual around the
    LayerNorm, so zeroed branch output weights make the layer an exact
    identity.
    """
    u = x + _mamba_branch(layer_norm(x, w.ln1_g, w.ln1_b), w.block, chunk)
    v = layer_norm(u, w.ln2_g, w.ln2_b)
    mlp = (v @ w.mlp_w1 + w.mlp_b1).silu() @ w.mlp_w2 + w.mlp_b2
    return u + mlp


def bidir_mamba_3d(v: Tensor, w: BidirWeights,
                   layout: DirectionalLayout = DirectionalLayout(),
                   chunk: int = 64) -> Tensor:
    """Forward and reversed sequences through independent layers, summed
    token by token, normalized, and reshaped back to the volume."""
    dims = v.shape[:3]
    s = flatten_volume(v, DirectionalLayout(layout.perm, False))
    out_f = mamba_layer(s, w.fwd, chunk=chunk)
    out_b = mamba_layer(s.flip(0), w.bwd, chunk=chunk).flip(0)
    summed = layer_norm(out_f + out_b, w.ln_g, w.ln_b)
    return unflatten_volume(summed, dims, DirectionalLayout(layout.perm, False))


def multidir_mamba_3d(v: Tensor, w: MultiDirWeights, chunk: int = 64) -> Tensor:
    """Run one bidirectional layer per layout and average element-wise."""
    outs = [bidir_mamba_3d(v, b, layout, chunk=chunk)
            for b, layout in zip(w.branches, w.layouts)]
    acc = outs[0]
    for o in outs[1:]:
        acc = acc + o
    return acc * (1.0 / len(outs))
