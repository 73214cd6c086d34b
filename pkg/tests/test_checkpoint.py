"""Tests for the checkpoint container."""

import json
import struct

import numpy as np
import pytest

from checkpoint import (
    MAGIC,
    capture,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    restore,
    save_checkpoint,
)
from errors import DataError
from optim import AdamState


@pytest.fixture
def state(tiny_model):
    s = AdamState.for_params(tiny_model.parameters())
    rng = np.random.default_rng(5)
    for name in s.m:
        s.m[name] += rng.normal(size=s.m[name].shape)
        s.v[name] += rng.uniform(size=s.v[name].shape)
    s.t = 7
    return s


class TestRoundTrip:

    def test_save_load_save_is_byte_identical(self, tmp_path, tiny_model, state):
        rng = np.random.default_rng(11)
        first = save_checkpoint(tmp_path / "a.ckpt", capture(tiny_model, state, rng, phase=2, dataset="mnist"))
        second = save_checkpoint(tmp_path / "b.ckpt", load_checkpoint(first))
        assert first.read_bytes() == second.read_bytes()
        assert first.read_bytes()[:8] == MAGIC

    def test_restore_model_and_optimizer(self, tiny_model, state):
        model, restored = restore(decode_checkpoint(encode_checkpoint(capture(tiny_model, state))))
        for name, p in tiny_model.parameters().items():
            np.testing.assert_array_equal(model.parameters()[name].data, p.data)
            np.testing.assert_array_equal(restored.m[name], state.m[name])
            np.testing.assert_array_equal(restored.v[name], state.v[name])
        assert restored.t == 7

    def test_rng_state_resumes_stream(self, tiny_model):
        rng = np.random.default_rng(3)
        rng.uniform(size=5)
        ckpt = decode_checkpoint(encode_checkpoint(capture(tiny_model, rng=rng)))
        resumed = np.random.default_rng()
        resumed.bit_generator.state = ckpt.rng_state
        np.testing.assert_array_equal(resumed.uniform(size=4), rng.uniform(size=4))

    def test_meta(self, tiny_model):
        ckpt = decode_checkpoint(encode_checkpoint(capture(tiny_model, phase=3, dataset="kmnist", seed=1)))
        assert ckpt.meta == {"phase": 3, "dataset": "kmnist", "seed": 1}
        assert ckpt.adam_m == {}


class TestErrors:

    def test_missing(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_checkpoint(tmp_path / "absent.ckpt")

    def test_bad_magic(self):
        with pytest.raises(DataError, match="magic"):
            decode_checkpoint(b"NOTACKPT" + bytes(8))

    def test_truncated_payload(self, tiny_model):
        raw = encode_checkpoint(capture(tiny_model))
        with pytest.raises(DataError, match="truncated"):
            decode_checkpoint(raw[:-8])

    @pytest.mark.parametrize("field,value", [
        ("name", "weights/conv1_kernel"),
        ("shape", [7, 7]),
        ("dtype", "not-a-dtype"),
    ])
    def test_malformed_entry(self, tiny_model, field, value):
        raw = encode_checkpoint(capture(tiny_model))
        (length,) = struct.unpack("<Q", raw[8:16])
        header = json.loads(raw[16:16 + length])
        header["arrays"][0][field] = value
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        rebuilt = MAGIC + struct.pack("<Q", len(blob)) + blob + raw[16 + length:]
        with pytest.raises(DataError):
            decode_checkpoint(rebuilt)
