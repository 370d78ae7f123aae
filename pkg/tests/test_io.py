import struct

import numpy as np
import pytest

from eet import io
from eet.errors import FormatError
from eet.linalg import Rng
from eet.retrieval import BinaryCodeSet
from eet.vit import init_weights


class TestWeightsFile:
    def test_round_trip(self, tmp_path, micro_cfg):
        w = init_weights(micro_cfg, 2)
        io.save_weights(tmp_path / "w.eetw", w)
        back = io.load_weights(tmp_path / "w.eetw", micro_cfg)
        for name in w.tensors:
            np.testing.assert_array_equal(back[name], w[name].astype(np.float32))

    def test_layout(self, tmp_path):
        io.write_tensors(tmp_path / "t.eetw", {"layer.3.attn.wq": np.array([[1.0, 2.0]])})
        raw = (tmp_path / "t.eetw").read_bytes()
        name = b"layer.3.attn.wq"
        expected = (
            b"EETW" + struct.pack("<IIH", 1, 1, len(name)) + name + struct.pack("<BII", 2, 1, 2)
            + struct.pack("<2f", 1.0, 2.0)
        )
        assert raw == expected

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.eetw").write_bytes(b"NOPE" + bytes(8))
        with pytest.raises(FormatError):
            io.read_tensors(tmp_path / "x.eetw")

    def test_truncated(self, tmp_path):
        io.write_tensors(tmp_path / "t.eetw", {"a": np.ones(4)})
        data = (tmp_path / "t.eetw").read_bytes()
        (tmp_path / "t.eetw").write_bytes(data[:-3])
        with pytest.raises(FormatError):
            io.read_tensors(tmp_path / "t.eetw")


class TestCodesFile:
    @pytest.mark.parametrize("k", [1, 8, 12, 16, 48])
    def test_round_trip(self, tmp_path, k):
        codes = BinaryCodeSet.from_real(Rng(k).normal((9, k)), np.arange(9) % 3)
        io.write_codes(tmp_path / "c.eetb", codes)
        back = io.read_codes(tmp_path / "c.eetb")
        assert back.k == k
        np.testing.assert_array_equal(back.bits, codes.bits)
        np.testing.assert_array_equal(back.labels, codes.labels)

    def test_layout(self, tmp_path):
        codes = BinaryCodeSet.from_real(np.array([[1.0, -1.0, 1.0]]), [5])
        io.write_codes(tmp_path / "c.eetb", codes)
        assert (tmp_path / "c.eetb").read_bytes() == b"EETB" + struct.pack("<IIQBI", 1, 3, 1, 0b101, 5)

    def test_empty(self, tmp_path):
        codes = BinaryCodeSet(16, np.zeros((0, 2), np.uint8), np.zeros(0))
        io.write_codes(tmp_path / "c.eetb", codes)
        assert io.read_codes(tmp_path / "c.eetb").n == 0

    def test_trailing_bytes(self, tmp_path):
        io.write_codes(tmp_path / "c.eetb", BinaryCodeSet.from_real(np.ones((2, 8)), [0, 1]))
        with open(tmp_path / "c.eetb", "ab") as fh:
            fh.write(b"\0")
        with pytest.raises(FormatError):
            io.read_codes(tmp_path / "c.eetb")


class TestMatrixFile:
    def test_round_trip(self, tmp_path):
        m = Rng(1).normal((4, 7))
        io.write_matrix(tmp_path / "m.eetc", m)
        np.testing.assert_array_equal(io.read_matrix(tmp_path / "m.eetc"), m.astype(np.float32))

    def test_header(self, tmp_path):
        io.write_matrix(tmp_path / "m.eetc", np.zeros((3, 5)))
        assert (tmp_path / "m.eetc").read_bytes()[:12] == b"EETC" + struct.pack("<II", 5, 3)


class TestImages:
    def test_ppm_round_trip(self, tmp_path):
        px = (Rng(2).uniform((8, 8, 3)) * 255).astype(np.uint8)
        io.write_ppm(tmp_path / "a.ppm", px)
        assert (tmp_path / "a.ppm").read_bytes()[:2] == b"P6"
        np.testing.assert_array_equal(io.load_pixels(tmp_path / "a.ppm"), px / 255.0)

    def test_normalization(self, tmp_path):
        io.write_ppm(tmp_path / "a.ppm", np.array([[[0, 255, 51]]], np.uint8))
        np.testing.assert_allclose(io.load_image(tmp_path / "a.ppm"), [[[-1.0, 1.0, -0.6]]])

    def test_f32(self, tmp_path):
        px = Rng(3).uniform((4, 4, 3))
        io.write_f32_image(tmp_path / "a.f32", px)
        np.testing.assert_allclose(io.load_pixels(tmp_path / "a.f32"), px, atol=1e-7)

    def test_not_an_image(self, tmp_path):
        (tmp_path / "a.ppm").write_bytes(b"garbage")
        with pytest.raises(Exception):
            io.load_pixels(tmp_path / "a.ppm")


class TestManifest:
    def test_round_trip(self, tmp_path):
        io.write_manifest(tmp_path / "m.csv", [("a.ppm", 0), ("sub/b.ppm", 1)])
        m = io.read_manifest(tmp_path / "m.csv")
        assert len(m) == 2
        assert m.path(1) == tmp_path / "sub" / "b.ppm"
        np.testing.assert_array_equal(m.labels, [0, 1])

    @pytest.mark.parametrize(
        "text", ["a.ppm,0,extra\n", "/abs.ppm,0\n", "../up.ppm,0\n", "a.ppm,x\n", "a.ppm,0\nb.ppm,2\n"]
    )
    def test_invalid(self, tmp_path, text):
        (tmp_path / "m.csv").write_text(text)
        with pytest.raises(FormatError):
            io.read_manifest(tmp_path / "m.csv")

    def test_empty(self, tmp_path):
        (tmp_path / "m.csv").write_text("")
        assert len(io.read_manifest(tmp_path / "m.csv")) == 0
