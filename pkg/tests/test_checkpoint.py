import io
import struct

import numpy as np
import pytest

from bbsc import checkpoint, nn
from conftest import small_net


class TestNetworkFormat:
    def test_magic_and_version_at_front(self, rng):
        net = small_net(rng)
        raw = checkpoint.network_bytes(net)
        assert raw[:4] == b"BBPC"
        assert struct.unpack("<I", raw[4:8])[0] == 1
        assert struct.unpack("<I", raw[8:12])[0] == len(net.layers)

    def test_layer_table_little_endian(self, rng):
        net = small_net(rng, k=4, hidden=(6,), out=5)
        raw = checkpoint.network_bytes(net)
        out0, in0, act0 = struct.unpack("<III", raw[12:24])
        assert (out0, in0) == (6, 4)
        assert act0 == int(nn.Activation.RELU)

    def test_parameter_block_is_raw_f64_in_declaration_order(self, rng):
        net = small_net(rng, k=3, hidden=(), out=2)
        raw = checkpoint.network_bytes(net)
        # header: 4 magic + 4 version + 4 count + 12 layer table
        block = np.frombuffer(raw[24:24 + 8 * 6], dtype="<f8").reshape(2, 3)
        np.testing.assert_array_equal(block, net.layers[0].weight)

    def test_roundtrip_without_adam(self, rng):
        net = small_net(rng, k=5, hidden=(7, 6), out=4)
        back, adam = checkpoint.network_from_bytes(checkpoint.network_bytes(net))
        assert adam is None
        assert len(back.layers) == 3
        for a, b in zip(net.layers, back.layers):
            np.testing.assert_array_equal(a.weight, b.weight)
            np.testing.assert_array_equal(a.bias, b.bias)
            assert a.activation == b.activation

    def test_roundtrip_with_adam_is_bit_exact(self, rng):
        net = small_net(rng)
        state = nn.AdamState.for_params(net.params(), rho=0.01)
        for _ in range(3):
            g = nn.GradientBuffer([rng.normal(size=p.shape) for p in net.params()])
            nn.adam_step(net.params(), g, state)
        raw = checkpoint.network_bytes(net, state)
        back_net, back_state = checkpoint.network_from_bytes(raw)
        assert back_state.t == state.t
        assert back_state.rho == state.rho
        for a, b in zip(net.params(), back_net.params()):
            assert a.tobytes() == b.tobytes()
        for a, b in zip(state.m + state.v, back_state.m + back_state.v):
            assert a.tobytes() == b.tobytes()

    def test_bad_magic_rejected(self):
        with pytest.raises(ValueError, match="magic"):
            checkpoint.read_network(io.BytesIO(b"XXXX" + bytes(32)))

    def test_truncated_rejected(self, rng):
        net = small_net(rng)
        raw = checkpoint.network_bytes(net)
        with pytest.raises(ValueError, match="truncated"):
            checkpoint.network_from_bytes(raw[: len(raw) // 2])


class TestManifestContainer:
    def test_roundtrip(self, tmp_path):
        path = str(tmp_path / "state.bbpc")
        sections = [("alpha", b"12345"), ("beta", b"\x00" * 16)]
        checkpoint.write_manifest_file(path, {"kind": "test", "n": 3}, sections)
        manifest, back = checkpoint.read_manifest_file(path)
        assert manifest["kind"] == "test"
        assert back["alpha"] == b"12345"
        assert back["beta"] == b"\x00" * 16

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOPE" + bytes(64))
        with pytest.raises(ValueError, match="magic"):
            checkpoint.read_manifest_file(str(path))

    def test_truncated_section(self, tmp_path):
        path = str(tmp_path / "state.bbpc")
        checkpoint.write_manifest_file(path, {}, [("x", b"abcdef")])
        raw = open(path, "rb").read()
        with open(path, "wb") as fh:
            fh.write(raw[:-3])
        with pytest.raises(ValueError, match="truncated"):
            checkpoint.read_manifest_file(path)
