"""Compact 3-D encoder-decoder U-Net and the four Mamba placement variants.

Variants:

* ``baseline``       plain convolutional U-Net, zero Mamba parameters.
* ``segmamba``       one unidirectional Mamba Layer preceding each pooling
                     convolution plus one at the bottleneck (S modules).
* ``segmamba-skip``  one bidirectional 3D Mamba Layer per skip connection,
                     applied to the skip tensor before concatenation (S-1).
* ``pansegmamba``    bidirectional 3D Mamba Layer at the segmamba positions (S).
* ``multisegmamba``  multi-directional module at the same positions (S).

Every level runs two conv3d(3^3) + LayerNorm(channels) + SiLU blocks;
downsampling is a strided 2^3 conv, upsampling a transposed 2^3 conv, and the
decoder concatenates the (possibly Mamba-filtered) encoder skip of equal
resolution. Volumes are channels-last (H, W, D, C).
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .conv import conv3d, conv_transpose3d
from .errors import ConfigError, ShapeError
from .layers import (DEFAULT_DIRECTION_SET, BidirWeights, DirectionalLayout,
                     MambaLayerWeights, MultiDirWeights, bidir_mamba_3d,
                     flatten_volume, init_bidir, init_mamba_layer,
                     init_multidir, mamba_layer, multidir_mamba_3d,
                     unflatten_volume)
from .ssm import state_size_for
from .tensor import Tensor, concat, layer_norm

VARIANTS = ("baseline", "segmamba", "segmamba-skip", "pansegmamba", "multisegmamba")


@dataclass
class VariantConfig:
    """Declarative description of one U-Net variant."""

    variant: str = "baseline"
    stages: int = 4
    widths: tuple = (16, 32, 64, 128)
    crop: tuple = (32, 32, 32)
    classes: int = 2
    in_channels: int = 1
    direction_set: tuple = DEFAULT_DIRECTION_SET
    expand: int = 2
    conv_width: int = 4
    scan_chunk: int = 64

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant '{self.variant}'; choose from {VARIANTS}")
        if self.stages < 2:
            raise ConfigError(f"stages must be >= 2, got {self.stages}")
        if len(self.widths) != self.stages:
            raise ConfigError(
                f"widths {self.widths} must have one entry per stage ({self.stages})")
        if any(b <= a for a, b in zip(self.widths, self.widths[1:])):
            raise ConfigError(f"widths must be strictly increasing, got {self.widths}")
        if len(self.crop) != 3:
            raise ConfigError(f"crop must be (H, W, D), got {self.crop}")
        div = 2 ** (self.stages - 1)
        for ax in self.crop:
            if ax % div != 0:
                raise ConfigError(
                    f"crop {self.crop} not divisible by 2^(stages-1) = {div}")
        if self.classes < 2:
            raise ConfigError(f"classes must be >= 2, got {self.classes}")
        perms = tuple(tuple(p) for p in self.direction_set)
        if len(set(perms)) != len(perms):
            raise ConfigError(f"duplicate layouts in direction_set: {perms}")

    def to_dict(self) -> dict:
        return {
            "variant": self.variant, "stages": self.stages,
            "widths": list(self.widths), "crop": list(self.crop),
            "classes": self.classes, "in_channels": self.in_channels,
            "direction_set": [list(p) for p in self.direction_set],
            "expand": self.expand, "conv_width": self.conv_width,
            "scan_chunk": self.scan_chunk,
        }

    @staticmethod
    def from_dict(d: dict) -> "VariantConfig":
        cfg = VariantConfig(
            variant=d["variant"], stages=int(d["stages"]),
            widths=tuple(d["widths"]), crop=tuple(d["crop"]),
            classes=int(d["classes"]), in_channels=int(d.get("in_channels", 1)),
            direction_set=tuple(tuple(p) for p in
                                d.get("direction_set", DEFAULT_DIRECTION_SET)),
            expand=int(d.get("expand", 2)), conv_width=int(d.get("conv_width", 4)),
            scan_chunk=int(d.get("scan_chunk", 64)),
        )
        cfg.validate()
        return cfg


def _rng(seed: int, name: str) -> np.random.Generator:
    """Deterministic per-component stream; adding components elsewhere does
    not shift the draws of existing ones."""
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


@dataclass
class ConvBlock:
    w: Tensor
    b: Tensor
    ln_g: Tensor
    ln_b: Tensor

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(conv3d(x, self.w, self.b, stride=1, padding=1),
                          self.ln_g, self.ln_b).silu()

    def parameters(self):
        return [self.w, self.b, self.ln_g, self.ln_b]


def _init_conv_block(cin, cout, rng, dtype) -> ConvBlock:
    s = 1.0 / np.sqrt(cin * 27)
    return ConvBlock(
        w=Tensor(rng.uniform(-s, s, size=(3, 3, 3, cin, cout)).astype(dtype),
                 requires_grad=True),
        b=Tensor(np.zeros(cout, dtype=dtype), requires_grad=True),
        ln_g=Tensor(np.ones(cout, dtype=dtype), requires_grad=True),
        ln_b=Tensor(np.zeros(cout, dtype=dtype), requires_grad=True),
    )


def _init_plain_conv(k, cin, cout, rng, dtype):
    s = 1.0 / np.sqrt(cin * k ** 3)
    w = Tensor(rng.uniform(-s, s, size=(k, k, k, cin, cout)).astype(dtype),
               requires_grad=True)
    b = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
    return w, b


@dataclass
class SegModel:
    cfg: VariantConfig
    enc: list = field(default_factory=list)       # per level: (block1, block2)
    down: list = field(default_factory=list)      # per level: (w, b)
    up: list = field(default_factory=list)        # per decoder level: (w, b)
    dec: list = field(default_factory=list)       # per decoder level: (block1, block2)
    head: tuple = ()                              # (w, b)
    mamba: dict = field(default_factory=dict)     # placement name -> weights
    _names: dict = field(default_factory=dict)

    # -- parameter bookkeeping ---------------------------------------------

    def named_parameters(self) -> dict:
        out = {}
        for lvl, (b1, b2) in enumerate(self.enc):
            for j, blk in enumerate((b1, b2)):
                for pname, t in zip(("w", "b", "ln_g", "ln_b"), blk.parameters()):
                    out[f"enc{lvl}.{j}.{pname}"] = t
        for lvl, (w, b) in enumerate(self.down):
            out[f"down{lvl}.w"] = w
            out[f"down{lvl}.b"] = b
        for lvl, (w, b) in enumerate(self.up):
            out[f"up{lvl}.w"] = w
            out[f"up{lvl}.b"] = b
        for lvl, (b1, b2) in enumerate(self.dec):
            for j, blk in enumerate((b1, b2)):
                for pname, t in zip(("w", "b", "ln_g", "ln_b"), blk.parameters()):
                    out[f"dec{lvl}.{j}.{pname}"] = t
        out["head.w"], out["head.b"] = self.head
        for key, module in self.mamba.items():
            for i, t in enumerate(module.parameters()):
                out[f"mamba.{key}.{i}"] = t
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def num_params(self) -> int:
        return sum(t.size for t in self.parameters())

    def mamba_module_count(self) -> int:
        return len(self.mamba)

    def load_state(self, state: dict) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise ConfigError(
                f"checkpoint does not match model: missing={sorted(missing)[:5]} "
                f"extra={sorted(extra)[:5]}")
        for name, t in params.items():
            arr = np.asarray(state[name])
            if arr.shape != t.data.shape:
                raise ConfigError(
                    f"shape mismatch for '{name}': checkpoint {arr.shape} "
                    f"vs model {t.data.shape}")
            t.data = arr.astype(t.data.dtype, copy=True)

    # -- forward --------------------------------------------------------------

    def _apply_mamba(self, key: str, x: Tensor) -> Tensor:
        module = self.mamba[key]
        chunk = self.cfg.scan_chunk
        if isinstance(module, MambaLayerWeights):
            dims = x.shape[:3]
            s = flatten_volume(x, DirectionalLayout())
            s = mamba_layer(s, module, chunk=chunk)
            return unflatten_volume(s, dims, DirectionalLayout())
        if isinstance(module, BidirWeights):
            return bidir_mamba_3d(x, module, chunk=chunk)
        if isinstance(module, MultiDirWeights):
            return multidir_mamba_3d(x, module, chunk=chunk)
        raise ConfigError(f"unknown mamba module type for '{key}'")

    def forward(self, volume: Tensor) -> Tensor:
        cfg = self.cfg
        expect = (*cfg.crop, cfg.in_channels)
        if volume.shape != expect:
            raise ShapeError(f"expected volume shape {expect}, got {volume.shape}")
        pre_pool = cfg.variant in ("segmamba", "pansegmamba", "multisegmamba")
        skips = []
        x = volume
        for lvl in range(cfg.stages):
            b1, b2 = self.enc[lvl]
            x = b2(b1(x))
            if lvl < cfg.stages - 1:
                if pre_pool:
                    x = self._apply_mamba(f"enc{lvl}", x)
                skips.append(x)
                w, b = self.down[lvl]
                x = conv3d(x, w, b, stride=2, padding=0)
            else:
                if pre_pool:
                    x = self._apply_mamba("bottleneck", x)
        for i, lvl in enumerate(range(cfg.stages - 2, -1, -1)):
            w, b = self.up[i]
            x = conv_transpose3d(x, w, b, stride=2)
            skip = skips[lvl]
            if cfg.variant == "segmamba-skip":
                skip = self._apply_mamba(f"skip{lvl}", skip)
            x = concat([skip, x], axis=3)
            b1, b2 = self.dec[i]
            x = b2(b1(x))
        w, b = self.head
        return conv3d(x, w, b, stride=1, padding=0)

    __call__ = forward


def _residual_layer_count(cfg: VariantConfig) -> int:
    """Total residual branches across all Mamba Layers in the network
    (two per layer: block branch and MLP head)."""
    per_site = {"segmamba": 1, "pansegmamba": 2,
                "multisegmamba": 2 * len(cfg.direction_set)}
    if cfg.variant == "baseline":
        return 0
    if cfg.variant == "segmamba-skip":
        return 2 * 2 * (cfg.stages - 1)
    return 2 * per_site[cfg.variant] * cfg.stages


def build_variant(cfg: VariantConfig, seed: int, dtype=np.float32) -> SegModel:
    """Instantiate a variant with deterministic per-component initialization."""
    cfg.validate()
    model = SegModel(cfg=cfg)
    widths = cfg.widths
    for lvl in range(cfg.stages):
        cin = cfg.in_channels if lvl == 0 else widths[lvl]
        model.enc.append((
            _init_conv_block(cin, widths[lvl], _rng(seed, f"enc{lvl}.0"), dtype),
            _init_conv_block(widths[lvl], widths[lvl], _rng(seed, f"enc{lvl}.1"), dtype),
        ))
    for lvl in range(cfg.stages - 1):
        model.down.append(_init_plain_conv(
            2, widths[lvl], widths[lvl + 1], _rng(seed, f"down{lvl}"), dtype))
    for i, lvl in enumerate(range(cfg.stages - 2, -1, -1)):
        model.up.append(_init_plain_conv(
            2, widths[lvl + 1], widths[lvl], _rng(seed, f"up{i}"), dtype))
        model.dec.append((
            _init_conv_block(2 * widths[lvl], widths[lvl], _rng(seed, f"dec{i}.0"), dtype),
            _init_conv_block(widths[lvl], widths[lvl], _rng(seed, f"dec{i}.1"), dtype),
        ))
    model.head = _init_plain_conv(1, widths[0], cfg.classes, _rng(seed, "head"), dtype)

    n_res = max(_residual_layer_count(cfg), 1)
    kw = dict(expand=cfg.expand, conv_width=cfg.conv_width, dtype=dtype)
    if cfg.variant in ("segmamba", "pansegmamba", "multisegmamba"):
        sites = [(f"enc{lvl}", widths[lvl]) for lvl in range(cfg.stages - 1)]
        sites.append(("bottleneck", widths[-1]))
        for key, c in sites:
            n_state = state_size_for(c)
            r = _rng(seed, f"mamba.{key}")
            if cfg.variant == "segmamba":
                model.mamba[key] = init_mamba_layer(
                    c, r, n_state=n_state, n_residual=n_res, **kw)
            elif cfg.variant == "pansegmamba":
                model.mamba[key] = init_bidir(
                    c, r, n_state=n_state, n_residual=n_res, **kw)
            else:
                model.mamba[key] = init_multidir(
                    c, r, direction_set=cfg.direction_set,
                    n_state=n_state, n_residual=n_res, **kw)
    elif cfg.variant == "segmamba-skip":
        for lvl in range(cfg.stages - 1):
            c = widths[lvl]
            model.mamba[f"skip{lvl}"] = init_bidir(
                c, _rng(seed, f"mamba.skip{lvl}"),
                n_state=state_size_for(c), n_residual=n_res, **kw)
    return model
