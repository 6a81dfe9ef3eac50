"""
Tests for the model checkpoint format.
"""
import struct

import numpy as np
import pytest

from posr.binary import BadMagicError, BinaryReader, FormatError, TruncatedFileError, UnsupportedVersionError
from posr.checkpoint import CHECKPOINT_MAGIC, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from posr.encoder import build_model, forward
from posr.models import HeadConfig, LossConfig, LossKind


@pytest.fixture
def model(small_backbone):
    built = build_model(
        small_backbone,
        HeadConfig.for_loss(LossKind.RPL, 2),
        HeadConfig.for_loss(LossKind.ARPL, 3),
        seed=3,
        loss_config=LossConfig(clf_kind=LossKind.RPL, ossr_kind=LossKind.ARPL),
        source_subjects=[0, 4, 9],
    )
    # Non-default radii so the round trip covers every parameter kind
    built.semantic_head.prototypes.radii.values[...] = [0.25, 1.75]
    return built


class TestCheckpointRoundTrip:
    def test_parameters_bit_exact(self, tmp_path, model):
        # Act
        restored = load_checkpoint(save_checkpoint(model, tmp_path / "ckpt" / "fold0.posr"))

        # Assert
        before, after = model.state(), restored.state()
        assert before.keys() == after.keys()
        for name in before:
            np.testing.assert_array_equal(before[name], after[name])

    def test_restored_model_predicts_identically(self, tmp_path, model, small_backbone):
        trials = np.random.default_rng(1).normal(size=(4, small_backbone.n_channels, small_backbone.n_samples))
        restored = decode_checkpoint(encode_checkpoint(model))
        for original, copy in zip(forward(model, trials), forward(restored, trials)):
            np.testing.assert_array_equal(original.values, copy.values)

    def test_architecture_survives(self, model):
        restored = decode_checkpoint(encode_checkpoint(model))
        assert restored.spec == model.spec

    def test_starts_with_magic(self, model):
        assert encode_checkpoint(model)[:4] == CHECKPOINT_MAGIC


class TestCheckpointErrors:
    def test_bad_magic(self, model):
        with pytest.raises(BadMagicError):
            decode_checkpoint(b"EEGB" + encode_checkpoint(model)[4:])

    def test_unsupported_version(self, model):
        raw = bytearray(encode_checkpoint(model))
        raw[4:6] = (7).to_bytes(2, "little")
        with pytest.raises(UnsupportedVersionError):
            decode_checkpoint(bytes(raw))

    def test_truncated(self, model):
        with pytest.raises(TruncatedFileError):
            decode_checkpoint(encode_checkpoint(model)[:-3])

    def test_trailing_bytes(self, model):
        with pytest.raises(FormatError):
            decode_checkpoint(encode_checkpoint(model) + b"\x00\x00")

    def test_corrupt_description(self, model):
        raw = bytearray(encode_checkpoint(model))
        raw[10] = ord("#")
        with pytest.raises(FormatError):
            decode_checkpoint(bytes(raw))

    @pytest.mark.parametrize("extents", [(0xFFFFFFFF,) * 4, (0x80000000, 0x80000000)])
    def test_oversized_parameter_extents(self, model, extents):
        # Arrange: keep the description, replace the parameter table with one huge entry
        raw = encode_checkpoint(model)
        (spec_len,) = struct.unpack_from("<I", raw, 6)
        table = struct.pack("<IH", 1, 1) + b"w" + struct.pack(f"<B{len(extents)}I", len(extents), *extents)

        # Act / Assert
        with pytest.raises(TruncatedFileError):
            decode_checkpoint(raw[:10 + spec_len] + table + b"\x00" * 64)


class TestBinaryReader:
    def test_negative_lengths_rejected(self):
        reader = BinaryReader(b"\x00" * 8)
        with pytest.raises(FormatError):
            reader.take(-1)
        with pytest.raises(FormatError):
            reader.array("<f8", -2)
        assert reader.remaining == 8

    def test_oversized_count_is_truncation(self):
        with pytest.raises(TruncatedFileError):
            BinaryReader(b"\x00" * 8).array("<f8", 2**40)
