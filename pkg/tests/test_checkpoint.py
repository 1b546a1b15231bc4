import json
import struct

import numpy as np
import pytest

from deepseqcoco.checkpoint import checkpoint_bytes, load_checkpoint, read_header, save_checkpoint
from deepseqcoco.errors import CheckpointError
from deepseqcoco.nn import build_network, preset
from deepseqcoco.tensor import Tensor, no_tape


@pytest.fixture
def trained_like():
    network, store = build_network(preset("desk"), 5)
    rng = np.random.default_rng(0)
    for _, entry in store.entries():
        entry.tensor.data[...] += rng.normal(0, 0.01, size=entry.tensor.shape).astype(entry.tensor.dtype)
    return network, store


def test_forward_bit_identical_after_round_trip(tmp_path, trained_like):
    network, store = trained_like
    path = save_checkpoint(tmp_path / "m.dsqc", network, {"class_names": list("abcde")})
    loaded, loaded_store, meta = load_checkpoint(path)
    assert meta == {"class_names": list("abcde")}
    rng = np.random.default_rng(1)
    with no_tape():
        for _ in range(10):
            x = Tensor(rng.uniform(size=(2, 64, 64, 3)))
            assert network.forward(x).data.tobytes() == loaded.forward(x).data.tobytes()
    for name, entry in store.entries():
        assert entry.tensor.data.tobytes() == loaded_store[name].data.tobytes()
    assert [(n, e.trainable, e.buffer) for n, e in store.entries()] == \
        [(n, e.trainable, e.buffer) for n, e in loaded_store.entries()]


def test_layout(trained_like):
    network, store = trained_like
    raw = checkpoint_bytes(network, {"k": 1})
    magic, version, head_len = struct.unpack_from("<4sII", raw)
    assert (magic, version) == (b"DSQC", 1)
    header = json.loads(raw[12:12 + head_len])
    assert header["metadata"] == {"k": 1}
    payload = raw[12 + head_len:]
    assert len(payload) == 4 * sum(e.tensor.size for _, e in store.entries())
    first = header["params"][0]
    arr = np.frombuffer(payload, "<f4", count=int(np.prod(first["shape"])), offset=first["offset"])
    np.testing.assert_array_equal(arr, store[first["name"]].data.reshape(-1))


def test_bytes_deterministic(trained_like):
    network, _ = trained_like
    assert checkpoint_bytes(network, {"a": 1, "b": [2]}) == checkpoint_bytes(network, {"b": [2], "a": 1})


def test_fidelity_round_trip_keeps_frozen_flags(tmp_path):
    network, store = build_network(preset("fidelity-b3"), 0)
    _, loaded_store, _ = load_checkpoint(save_checkpoint(tmp_path / "f.dsqc", network))
    assert len(loaded_store.optimizable()) == 2
    assert sum(t.size for t in loaded_store.optimizable()) == 7685


class TestCorruption:
    def write(self, tmp_path, raw):
        p = tmp_path / "bad.dsqc"
        p.write_bytes(raw)
        return p

    def test_magic(self, tmp_path, trained_like):
        raw = checkpoint_bytes(trained_like[0])
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(self.write(tmp_path, b"XXXX" + raw[4:]))

    def test_version(self, tmp_path, trained_like):
        raw = checkpoint_bytes(trained_like[0])
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(self.write(tmp_path, raw[:4] + struct.pack("<I", 9) + raw[8:]))

    def test_truncated(self, tmp_path, trained_like):
        raw = checkpoint_bytes(trained_like[0])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(self.write(tmp_path, raw[:-8]))
        with pytest.raises(CheckpointError):
            load_checkpoint(self.write(tmp_path, raw[:6]))

    def test_corrupt_header(self, tmp_path, trained_like):
        raw = bytearray(checkpoint_bytes(trained_like[0]))
        raw[12] = ord("!")
        with pytest.raises(CheckpointError):
            load_checkpoint(self.write(tmp_path, bytes(raw)))

    def test_shape_mismatch(self, tmp_path, trained_like):
        raw = checkpoint_bytes(trained_like[0])
        header, start = read_header(raw)
        header["params"][0]["shape"] = [1, 1, 1, 1]
        head = json.dumps(header, sort_keys=True).encode()
        with pytest.raises(CheckpointError, match="shape"):
            load_checkpoint(self.write(tmp_path, struct.pack("<4sII", b"DSQC", 1, len(head)) + head + raw[start:]))

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "none.dsqc")

    def test_missing_index(self, tmp_path, trained_like):
        raw = checkpoint_bytes(trained_like[0])
        header, start = read_header(raw)
        del header["params"]
        head = json.dumps(header, sort_keys=True).encode()
        with pytest.raises(CheckpointError, match="index"):
            load_checkpoint(self.write(tmp_path, struct.pack("<4sII", b"DSQC", 1, len(head)) + head + raw[start:]))
