import struct
from collections import OrderedDict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.extra import numpy as hnp

from cwat.checkpoint import MAGIC, CheckpointError, decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint
from cwat.errors import DataError
from cwat.model import CwaT, preset


def sample_sections():
    return OrderedDict([
        ("cae", OrderedDict([("enc.0.kernel", np.arange(6.0).reshape(2, 1, 3)), ("scalar", np.array(2.5))])),
        ("adam", OrderedDict([("step", np.array([3.0]))])),
    ])


class TestLayout:
    def test_bytes_by_hand(self):
        data = encode_checkpoint("a=1\n", {"s": {"t": np.array([1.0, -2.0])}})
        expected = (
            b"CWCK" + struct.pack("<H", 1) + struct.pack("<I", 4) + b"a=1\n" + struct.pack("<H", 1)
            + struct.pack("<H", 1) + b"s" + struct.pack("<I", 1)
            + struct.pack("<H", 1) + b"t" + struct.pack("<B", 1) + struct.pack("<I", 2)
            + struct.pack("<2d", 1.0, -2.0)
        )
        assert data == expected

    def test_round_trip(self):
        text, sections = decode_checkpoint(encode_checkpoint("x=y\n", sample_sections()))
        assert text == "x=y\n"
        assert list(sections) == ["cae", "adam"]
        assert list(sections["cae"]) == ["enc.0.kernel", "scalar"]
        np.testing.assert_array_equal(sections["cae"]["enc.0.kernel"], np.arange(6.0).reshape(2, 1, 3))
        assert sections["cae"]["scalar"].shape == ()

    @settings(max_examples=50, deadline=None)
    @given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=0, max_dims=3, max_side=4)))
    def test_arrays_bitwise(self, arr):
        _, sections = decode_checkpoint(encode_checkpoint("", {"s": {"a": arr}}))
        back = sections["s"]["a"]
        assert back.shape == arr.shape
        assert back.tobytes() == arr.astype("<f8").tobytes()

    def test_model_sections(self, tmp_path):
        model = CwaT(preset("toy"), seed=3)
        path = tmp_path / "m.ck"
        write_checkpoint(path, "k=v\n", model.sections())
        _, sections = read_checkpoint(path)
        for name, params in model.sections().items():
            for key, p in params.items():
                assert np.array_equal(sections[name][key], p.data)


class TestCorruption:
    def test_bad_magic(self):
        data = b"XXXX" + encode_checkpoint("", sample_sections())[4:]
        with pytest.raises(CheckpointError, match="magic"):
            decode_checkpoint(data)

    def test_bad_version(self):
        data = bytearray(encode_checkpoint("", sample_sections()))
        data[4:6] = struct.pack("<H", 9)
        with pytest.raises(CheckpointError, match="version"):
            decode_checkpoint(bytes(data))

    def test_every_truncation(self):
        data = encode_checkpoint("c=1\n", sample_sections())
        for n in range(len(data)):
            with pytest.raises(CheckpointError):
                decode_checkpoint(data[:n])

    def test_trailing_bytes(self):
        with pytest.raises(CheckpointError, match="trailing"):
            decode_checkpoint(encode_checkpoint("", sample_sections()) + b"\0")

    def test_missing_file_is_data_error(self, tmp_path):
        with pytest.raises(DataError):
            read_checkpoint(tmp_path / "missing.ck")

    def test_magic_constant(self):
        assert MAGIC == b"CWCK"
