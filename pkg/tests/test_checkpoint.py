"""Binary checkpoint round trips and corruption handling."""

import struct

import numpy as np
import pytest

from gpldla import checkpoint as ckpt
from gpldla.errors import ParseError
from gpldla.rng import Rng


def _sample_tensors():
    rng = Rng(0)
    return {
        "backbone/w0": rng.normal((4, 3)),
        "backbone/b0": rng.normal((3,)),
        "prior/log_weight_scale": np.asarray(0.37),   # rank 0
    }


def test_round_trip_is_exact(tmp_path):
    path = str(tmp_path / "state.bin")
    tensors = _sample_tensors()
    ckpt.save_checkpoint(path, tensors)
    loaded = ckpt.load_checkpoint(path)
    assert sorted(loaded) == sorted(tensors)
    for name, arr in tensors.items():
        assert loaded[name].shape == np.asarray(arr).shape
        assert np.array_equal(loaded[name], arr)
    assert loaded["prior/log_weight_scale"].ndim == 0


def test_bytes_are_deterministic_and_order_insensitive(tmp_path):
    tensors = _sample_tensors()
    flipped = dict(reversed(list(tensors.items())))
    a, b = str(tmp_path / "a.bin"), str(tmp_path / "b.bin")
    ckpt.save_checkpoint(a, tensors)
    ckpt.save_checkpoint(b, flipped)
    assert open(a, "rb").read() == open(b, "rb").read()


def test_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPE" + struct.pack("<I", 1))
    with pytest.raises(ParseError, match="bad magic"):
        ckpt.load_checkpoint(str(path))


def test_bad_version(tmp_path):
    path = tmp_path / "v9.bin"
    path.write_bytes(ckpt.MAGIC + struct.pack("<I", 9))
    with pytest.raises(ParseError, match="version 9"):
        ckpt.load_checkpoint(str(path))


def test_truncation_points_at_field(tmp_path):
    full = str(tmp_path / "full.bin")
    ckpt.save_checkpoint(full, {"w": np.ones((2, 2))})
    blob = open(full, "rb").read()
    # layout: 8B header | 4B name len | 1B name "w" | 4B rank | 16B extents | payload
    for cut, what in ((4, "header"), (10, "name length"), (12, "tensor name"),
                      (15, "rank of"), (20, "extents of"),
                      (len(blob) - 1, "payload")):
        path = tmp_path / f"cut{cut}.bin"
        path.write_bytes(blob[:cut])
        with pytest.raises(ParseError, match=what):
            ckpt.load_checkpoint(str(path))


def test_duplicate_names_rejected(tmp_path):
    single = str(tmp_path / "one.bin")
    ckpt.save_checkpoint(single, {"w": np.asarray(1.0)})
    blob = open(single, "rb").read()
    doubled = tmp_path / "two.bin"
    doubled.write_bytes(blob + blob[8:])   # replay the record after the header
    with pytest.raises(ParseError, match="duplicate"):
        ckpt.load_checkpoint(str(doubled))


def test_pack_unpack_run_state():
    params = {"w0": np.ones((2, 2)), "b0": np.zeros(2)}
    prior = {"log_weight_scale": np.asarray(0.1)}
    packed = ckpt.pack_run_state(params, prior)
    assert sorted(packed) == ["backbone/b0", "backbone/w0",
                              "prior/log_weight_scale"]
    p2, r2 = ckpt.unpack_run_state(packed)
    assert sorted(p2) == ["b0", "w0"] and sorted(r2) == ["log_weight_scale"]
    assert np.array_equal(p2["w0"], params["w0"])
    with pytest.raises(ParseError, match="unexpected tensor name"):
        ckpt.unpack_run_state({"optimizer/m": np.zeros(1)})


def test_empty_checkpoint_round_trips(tmp_path):
    path = str(tmp_path / "empty.bin")
    ckpt.save_checkpoint(path, {})
    assert ckpt.load_checkpoint(path) == {}
