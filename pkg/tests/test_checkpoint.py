import zipfile

import numpy as np
import pytest

from dogclr import checkpoint


def test_roundtrip_keeps_dtype_and_bits(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {
        "w": rng.standard_normal((3, 4)).astype(np.float32),
        "bank": rng.standard_normal((5, 2)),
        "step": np.array([7], dtype=np.int64),
        "empty": np.zeros((0, 3)),
    }
    path = checkpoint.save(tmp_path / "a.ckpt", arrays, {"step": 7})
    out, manifest = checkpoint.load(path)
    assert manifest["step"] == 7 and manifest["format"] == checkpoint.FORMAT
    for k, v in arrays.items():
        assert out[k].dtype == v.dtype and np.array_equal(out[k], v)


def test_byte_stable(tmp_path):
    arrays = {"x": np.arange(6, dtype=np.float64).reshape(2, 3)}
    a = checkpoint.save(tmp_path / "a.ckpt", arrays, {"k": 1}).read_bytes()
    b = checkpoint.save(tmp_path / "b.ckpt", arrays, {"k": 1}).read_bytes()
    assert a == b


def test_big_endian_input_is_normalized(tmp_path):
    x = np.arange(4, dtype=">f8")
    out, manifest = checkpoint.load(checkpoint.save(tmp_path / "a.ckpt", {"x": x}, {}))
    assert manifest["blobs"][0]["dtype"] == "<f8"
    assert np.array_equal(out["x"], x)


def test_rejects_foreign_zip(tmp_path):
    p = tmp_path / "other.zip"
    with zipfile.ZipFile(p, "w") as zf:
        zf.writestr("manifest.json", '{"format": "something"}')
    with pytest.raises(ValueError):
        checkpoint.load(p)
