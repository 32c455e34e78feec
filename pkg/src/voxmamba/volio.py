"""Binary volume format and synthetic 3-D segmentation tasks.

File format (little-endian throughout)::

    offset  size  field
    0       4     magic "VXM1"
    4       2     version (u16), currently 1
    6       1     dtype tag (u8): 0 = f32, 1 = u8
    7       1     flags (u8): bit 0 set when spacing is present
    8       4     rank (u32)
    12      4*r   dims (u32 each)
    ...     24    spacing (3 x f64), only when flag bit 0 is set
    ...     rest  raw contiguous payload, last axis fastest

Write-then-read round-trips bit-exactly for both dtypes.

Task kinds:

* ``blobs``             smooth bumps thresholded into labels; solvable from
                        local intensity alone.
* ``directional-pair``  the class assignment of a target box depends on the
                        sign of a marker far away along the first spatial
                        axis (distance > half the axis length), placed after
                        every target voxel in the row-major forward ordering.
* ``gallbladder-like``  one small, position-jittered structure adjacent to a
                        large stable one.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, FormatError

MAGIC = b"VXM1"
VERSION = 1
_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_TAG_FOR = {np.dtype("<f4"): 0, np.dtype("u1"): 1}

TASK_KINDS = ("blobs", "directional-pair", "gallbladder-like")


def write_volume(path, arr: np.ndarray, spacing=None) -> None:
    arr = np.ascontiguousarray(arr)
    if arr.dtype == np.float64 or arr.dtype == np.float32:
        arr = arr.astype("<f4", copy=False)
    elif arr.dtype != np.uint8:
        raise FormatError(f"unsupported dtype {arr.dtype}; use f32 or u8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        flags = 1 if spacing is not None else 0
        f.write(struct.pack("<HBB", VERSION, _TAG_FOR[arr.dtype], flags))
        f.write(struct.pack("<I", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        if spacing is not None:
            if len(spacing) != 3:
                raise FormatError(f"spacing must have 3 entries, got {spacing}")
            f.write(struct.pack("<3d", *spacing))
        f.write(arr.tobytes())


def read_volume(path):
    """Returns (array, spacing or None). Raises FormatError with byte offsets."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise FormatError(f"bad magic at offset 0: {raw[:4]!r} (expected {MAGIC!r})")
    if len(raw) < 12:
        raise FormatError(f"truncated header: {len(raw)} bytes, need at least 12")
    version, tag, flags = struct.unpack_from("<HBB", raw, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version} at offset 4")
    if tag not in _DTYPE_TAGS:
        raise FormatError(f"unknown dtype tag {tag} at offset 6")
    dtype = _DTYPE_TAGS[tag]
    (rank,) = struct.unpack_from("<I", raw, 8)
    off = 12
    if len(raw) < off + 4 * rank:
        raise FormatError(f"truncated dims at offset {off}")
    dims = struct.unpack_from(f"<{rank}I", raw, off)
    off += 4 * rank
    spacing = None
    if flags & 1:
        if len(raw) < off + 24:
            raise FormatError(f"truncated spacing at offset {off}")
        spacing = struct.unpack_from("<3d", raw, off)
        off += 24
    expected = int(np.prod(dims)) * dtype.itemsize
    actual = len(raw) - off
    if actual != expected:
        raise FormatError(
            f"payload at offset {off}: expected {expected} bytes, got {actual}")
    arr = np.frombuffer(raw[off:], dtype=dtype).reshape(dims)
    return arr.copy(), spacing


# ---------------------------------------------------------------------------
# synthetic tasks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthTaskSpec:
    kind: str = "blobs"
    dims: tuple = (32, 32, 32)
    classes: int = 2
    noise: float = 0.1
    seed: int = 0

    def validate(self) -> None:
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"unknown task '{self.kind}'; choose from {TASK_KINDS}")
        if len(self.dims) != 3 or any(d < 8 for d in self.dims):
            raise ConfigError(f"dims must be 3 axes of at least 8, got {self.dims}")
        if self.classes < 2:
            raise ConfigError(f"classes must be >= 2, got {self.classes}")
        if self.kind == "directional-pair" and self.classes != 3:
            raise ConfigError("directional-pair is a 3-class task (bg + 2)")
        if self.kind == "gallbladder-like" and self.classes != 3:
            raise ConfigError("gallbladder-like is a 3-class task (bg + 2)")
        if self.noise < 0:
            raise ConfigError(f"noise must be >= 0, got {self.noise}")


MIN_CLASS_FRACTION = 0.01


def _grid(dims):
    return np.meshgrid(*[np.arange(d, dtype=np.float64) for d in dims], indexing="ij")


def _balanced(labels: np.ndarray, classes: int) -> bool:
    total = labels.size
    counts = np.bincount(labels.reshape(-1), minlength=classes)
    return bool((counts >= MIN_CLASS_FRACTION * total).all())


def _gen_blobs(spec: SynthTaskSpec, geom: np.random.Generator):
    H, W, D = spec.dims
    gx, gy, gz = _grid(spec.dims)
    mind = min(spec.dims)
    field = np.zeros(spec.dims)
    labels = np.zeros(spec.dims, dtype=np.uint8)
    for c in range(1, spec.classes):
        for _ in range(100):
            sigma = geom.uniform(0.14, 0.26) * mind
            center = [geom.uniform(1.2 * sigma, d - 1.2 * sigma) for d in spec.dims]
            bump = np.exp(-((gx - center[0]) ** 2 + (gy - center[1]) ** 2
                            + (gz - center[2]) ** 2) / (2 * sigma ** 2))
            mask = bump > 0.5
            if mask.sum() >= MIN_CLASS_FRACTION * labels.size * 1.2 \
                    and not (mask & (labels > 0)).any():
                labels[mask] = c
                field = np.maximum(field, bump)
                break
        else:
            raise ConfigError("could not place a balanced blob; enlarge dims")
    return field, labels


def _gen_directional_pair(spec: SynthTaskSpec, geom: np.random.Generator):
    """Target box split into two halves along the second axis; which half is
    class 1 vs class 2 is decided by the sign of a marker slab filling the
    last quarter of the first axis, more than half the axis away from every
    labeled voxel and after every box voxel in forward row-major order."""
    H, W, D = spec.dims
    # thick, strong marker: it survives repeated downsampling as a full
    # plane instead of a sub-voxel sliver
    thick = max(2, H // 4)
    m0 = H - thick
    # box pinned to the low end of the first axis so the marker stays more
    # than half the axis away from every labeled voxel
    bh = max(2, min((3 * H) // 16, m0 - H // 2 - 2))
    bw = max(2, (W // 3) & ~1)
    bd = max(2, D // 3)
    # grow the box until each half is a comfortable fraction of the volume --
    # sparse targets push small models into the all-background local optimum.
    # Only the second and third axes grow: the first-axis extent is capped by
    # the distance requirement above.
    while bh * (bw // 2) * bd < 5.0 * MIN_CLASS_FRACTION * H * W * D:
        if bd < (2 * D) // 3:
            bd += 1
        elif bw < W - 2:
            bw += 2
        else:
            break
    # The box position only jitters by a voxel: the marker bit, not the
    # geometry, is what a model has to work for on this task
    h0 = int(geom.integers(0, 2))
    w0 = (W - bw) // 2 + int(geom.integers(-1, 2))
    d0 = (D - bd) // 2 + int(geom.integers(-1, 2))
    bit = bool(geom.integers(0, 2))

    field = np.zeros(spec.dims)
    labels = np.zeros(spec.dims, dtype=np.uint8)
    field[h0:h0 + bh, w0:w0 + bw, d0:d0 + bd] = 1.0
    lo_class = 1 if bit else 2
    labels[h0:h0 + bh, w0:w0 + bw // 2, d0:d0 + bd] = lo_class
    labels[h0:h0 + bh, w0 + bw // 2:w0 + bw, d0:d0 + bd] = 3 - lo_class

    # full-slab marker: every scan along the first axis crosses it
    field[m0:H, :, :] = 3.0 if bit else -3.0
    return field, labels


def _gen_gallbladder_like(spec: SynthTaskSpec, geom: np.random.Generator):
    H, W, D = spec.dims
    gx, gy, gz = _grid(spec.dims)
    mind = min(spec.dims)
    for _ in range(100):
        big_r = np.array([0.30 * H, 0.27 * W, 0.27 * D])
        big_c = np.array([H / 2, W / 2, D / 2]) + geom.uniform(-0.05, 0.05, 3) * mind
        big = (((gx - big_c[0]) / big_r[0]) ** 2 + ((gy - big_c[1]) / big_r[1]) ** 2
               + ((gz - big_c[2]) / big_r[2]) ** 2) <= 1.0
        small_r = 0.16 * mind
        direction = geom.normal(size=3)
        direction /= np.linalg.norm(direction)
        small_c = big_c + direction * (big_r * 0.95 + small_r * 0.6) \
            + geom.uniform(-1.5, 1.5, 3)
        small_c = np.clip(small_c, small_r + 1, np.array(spec.dims) - small_r - 2)
        small = ((gx - small_c[0]) ** 2 + (gy - small_c[1]) ** 2
                 + (gz - small_c[2]) ** 2) <= small_r ** 2
        labels = np.zeros(spec.dims, dtype=np.uint8)
        labels[big] = 1
        labels[small] = 2
        if _balanced(labels, 3):
            field = np.zeros(spec.dims)
            field[big] = 1.0
            field[small] = 1.6
            return field, labels
    raise ConfigError("could not place a balanced structure pair; enlarge dims")


_GENERATORS = {
    "blobs": _gen_blobs,
    "directional-pair": _gen_directional_pair,
    "gallbladder-like": _gen_gallbladder_like,
}


def generate_sample(spec: SynthTaskSpec, index: int):
    """One (image, labels) pair; fully determined by (spec.seed, index).

    The image is (H, W, D, 1) float32, the labels (H, W, D) uint8. Labels are
    a function of the geometry stream only; observation noise comes from a
    separate stream, so the noise level never changes the labels.
    """
    spec.validate()
    geom = np.random.default_rng([spec.seed, index, 0])
    noise_rng = np.random.default_rng([spec.seed, index, 1])
    for attempt in range(50):
        field, labels = _GENERATORS[spec.kind](spec, geom)
        if _balanced(labels, spec.classes):
            break
    else:
        raise ConfigError(f"task '{spec.kind}' failed the class-balance check")
    img = field + spec.noise * noise_rng.normal(size=spec.dims)
    return img.astype(np.float32)[..., None], labels


def generate(spec: SynthTaskSpec, n: int):
    """n deterministic (image, labels) pairs."""
    return [generate_sample(spec, i) for i in range(n)]
