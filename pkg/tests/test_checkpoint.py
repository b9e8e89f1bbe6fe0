import numpy as np
import pytest

from pvfault.errors import (
    ArchMismatchError,
    CheckpointChecksumError,
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from pvfault.models import CHECKPOINT_MAGIC, build_model, load_checkpoint, save_checkpoint


@pytest.fixture
def trained_like_model():
    """A model with non-default stats so round-trips exercise every tensor."""
    model = build_model("proposed-3conv", 4, (3, 32, 32), seed=21)
    rng = np.random.default_rng(22)
    model.forward(rng.random((4, 3, 32, 32), dtype=np.float32), train=True)  # move BN buffers
    model.norm_mean[...] = rng.random(3, dtype=np.float32)
    model.norm_std[...] = rng.random(3, dtype=np.float32) + 0.5
    return model


class TestRoundTrip:
    def test_every_tensor_bitwise_identical(self, trained_like_model, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(trained_like_model, path)
        loaded = load_checkpoint(path)
        assert loaded.arch == trained_like_model.arch
        assert loaded.num_classes == trained_like_model.num_classes
        assert loaded.input_shape == trained_like_model.input_shape
        originals = dict(
            trained_like_model.param_items() + trained_like_model.buffer_items()
        )
        for name, arr in loaded.param_items() + loaded.buffer_items():
            assert np.array_equal(arr, originals[name]), name

    def test_forward_bitwise_identical_after_round_trip(self, trained_like_model, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(trained_like_model, path)
        loaded = load_checkpoint(path)
        x = np.random.default_rng(23).random((2, 3, 32, 32), dtype=np.float32)
        before = trained_like_model.forward(x, train=False)
        after = loaded.forward(x, train=False)
        assert np.array_equal(before, after)

    def test_save_then_save_is_byte_identical(self, trained_like_model, tmp_path):
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(trained_like_model, p1)
        save_checkpoint(trained_like_model, p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestFailureModes:
    def test_corrupted_data_byte_fails_checksum(self, trained_like_model, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(trained_like_model, path)
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF  # flip a byte in the tensor data region
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointChecksumError):
            load_checkpoint(path)

    def test_truncated_file(self, trained_like_model, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(trained_like_model, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 100])
        with pytest.raises(CheckpointTruncatedError):
            load_checkpoint(path)

    def test_version_mismatch(self, trained_like_model, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(trained_like_model, path)
        blob = bytearray(path.read_bytes())
        blob[len(CHECKPOINT_MAGIC)] = 99  # version field follows the magic
        path.write_bytes(bytes(blob))
        with pytest.raises(CheckpointVersionError):
            load_checkpoint(path)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "noise.bin"
        path.write_bytes(b"definitely not a checkpoint, but long enough to parse")
        with pytest.raises(CheckpointFormatError, match="magic"):
            load_checkpoint(path)

    def test_arch_mismatch_on_expected_arch(self, tmp_path):
        model = build_model("espinosa-binary", 2, (3, 32, 32), seed=24)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        with pytest.raises(ArchMismatchError, match="espinosa-binary"):
            load_checkpoint(path, expect_arch="proposed-3conv")
        loaded = load_checkpoint(path, expect_arch="espinosa-binary")
        assert loaded.arch == "espinosa-binary"

    def test_trailing_garbage_rejected(self, trained_like_model, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(trained_like_model, path)
        path.write_bytes(path.read_bytes() + b"extra")
        with pytest.raises(CheckpointFormatError, match="trailing"):
            load_checkpoint(path)
