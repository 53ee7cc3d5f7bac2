import numpy as np
import pytest

from imexreg import serialize
from imexreg.nets import ContinualModel, ModelConfig


class TestContainer:
    def test_roundtrip_preserves_bytes(self, tmp_path):
        rng = np.random.default_rng(0)
        tensors = {
            "f.0.W": rng.normal(size=(4, 7)),
            "g_lin.b": rng.normal(size=(1, 3)),
            "scalar": np.asarray(3.25),
            "vector": rng.normal(size=9),
        }
        digest = serialize.config_hash({"a": 1})
        path = tmp_path / "snap.bin"
        serialize.save_tensors(path, tensors, digest)
        loaded, loaded_digest = serialize.load_tensors(path)
        assert loaded_digest == digest
        assert set(loaded) == set(tensors)
        for name in tensors:
            assert loaded[name].shape == tensors[name].shape
            assert loaded[name].tobytes() == tensors[name].tobytes()

    def test_float32_roundtrip(self, tmp_path):
        tensors = {"w": np.ones((2, 2), dtype=np.float32)}
        path = tmp_path / "snap32.bin"
        serialize.save_tensors(path, tensors)
        loaded, _ = serialize.load_tensors(path)
        assert loaded["w"].dtype == np.float32

    def test_mixed_precision_rejected(self):
        with pytest.raises(ValueError, match="one precision"):
            serialize.pack_tensors({"a": np.ones(2), "b": np.ones(2, dtype=np.float32)})

    def test_bad_magic_rejected(self):
        with pytest.raises(ValueError, match="magic"):
            serialize.unpack_tensors(b"NOPE" + b"\0" * 64)

    def test_layout_is_documented_format(self):
        # header: magic, precision byte, count, 32-byte hash
        blob = serialize.pack_tensors({"ab": np.zeros((2, 3))}, b"\x11" * 32)
        assert blob[:4] == b"IXT1"
        assert blob[4] == 8  # float64
        assert int.from_bytes(blob[5:9], "little") == 1
        assert blob[9:41] == b"\x11" * 32
        assert int.from_bytes(blob[41:43], "little") == 2  # name length
        assert blob[43:45] == b"ab"
        assert blob[45] == 2  # rank
        assert int.from_bytes(blob[46:50], "little") == 2
        assert int.from_bytes(blob[50:54], "little") == 3
        assert len(blob) == 54 + 6 * 8

    def test_trailer_roundtrip(self):
        tensors = {"x": np.arange(4.0)}
        meta = {"cursor": [1, 2], "note": "hello"}
        blob = serialize.pack_with_trailer(tensors, meta)
        loaded, _, got_meta = serialize.unpack_with_trailer(blob)
        assert got_meta == meta
        np.testing.assert_array_equal(loaded["x"], tensors["x"])

    def test_config_hash_is_canonical(self):
        a = serialize.config_hash({"x": 1, "y": 2})
        b = serialize.config_hash({"y": 2, "x": 1})
        c = serialize.config_hash({"x": 1, "y": 3})
        assert a == b and a != c


class TestModelSnapshot:
    def test_model_params_roundtrip(self, tmp_path):
        cfg = ModelConfig(input_dim=4, num_classes=3, encoder_widths=(6,),
                          proj_head_widths=(5, 5, 4), clf_proj_widths=(3, 2))
        model = ContinualModel.build(cfg, np.random.default_rng(1))
        digest = serialize.config_hash(cfg)
        path = tmp_path / "model.bin"
        serialize.save_tensors(path, {n: p.data for n, p in model.params.items()}, digest)
        loaded, loaded_digest = serialize.load_tensors(path)
        assert loaded_digest == serialize.config_hash(cfg)
        for name, p in model.params.items():
            assert loaded[name].tobytes() == p.data.tobytes()
