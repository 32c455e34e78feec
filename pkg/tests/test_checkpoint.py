import numpy as np
import pytest

from voxmamba.checkpoint import load_checkpoint, save_checkpoint
from voxmamba.errors import FormatError


def test_roundtrip(tmp_path):
    rng = np.random.default_rng(70)
    arrays = {
        "layer.w": rng.standard_normal((3, 4)).astype(np.float32),
        "layer.b": rng.standard_normal(4).astype(np.float64),
        "scalarish": np.float32(2.5) * np.ones((), dtype=np.float32),
    }
    config = {"variant": "baseline", "widths": [4, 8]}
    meta = {"epoch": 7, "val_dsc": 0.91}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, config, arrays, meta)
    c2, a2, m2 = load_checkpoint(path)
    assert c2 == config
    assert m2 == meta
    assert set(a2) == set(arrays)
    for k in arrays:
        assert np.array_equal(np.asarray(a2[k]), np.asarray(arrays[k]))
        assert a2[k].dtype == arrays[k].dtype


def test_bad_magic(tmp_path):
    p = tmp_path / "m.ckpt"
    p.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(FormatError):
        load_checkpoint(p)


def test_truncated_blob_reports_name_and_bytes(tmp_path):
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, {}, {"weights": np.zeros((8, 8), np.float32)})
    data = p.read_bytes()
    p.write_bytes(data[:-16])
    with pytest.raises(FormatError) as e:
        load_checkpoint(p)
    assert "weights" in str(e.value)


def test_corrupt_header(tmp_path):
    p = tmp_path / "m.ckpt"
    save_checkpoint(p, {"a": 1}, {})
    data = bytearray(p.read_bytes())
    data[14] ^= 0xFF  # flip a byte inside the JSON header
    p.write_bytes(bytes(data))
    with pytest.raises(FormatError):
        load_checkpoint(p)
