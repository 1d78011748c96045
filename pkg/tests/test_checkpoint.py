"""Binary checkpoint format: round trips, corruption, versioning."""

import struct

import numpy as np
import pytest

from mstune.backbone import Backbone, BackboneConfig, backbone_from_arrays
from mstune.checkpoint import (
    MAGIC,
    CheckpointError,
    VersionError,
    load_checkpoint,
    save_checkpoint,
    state_from_checkpoint,
)
from mstune.rng import Rng

CFG = BackboneConfig(1, 8, 2, 4, ffn_mult=2)


def make_state(seed=0):
    bb = Backbone(CFG)
    bb.init_state(Rng(seed))
    return bb.state


def test_round_trip_f8_bit_exact(tmp_path):
    state = make_state()
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, state, CFG, {"mode": "pretrained"}, dtype="f8")
    ckpt = load_checkpoint(path)
    assert ckpt.mode_flags == {"mode": "pretrained"}
    for name, p in state.params.items():
        assert ckpt.arrays[name].tobytes() == p.data.tobytes(), name


def test_round_trip_f4_quantizes_once(tmp_path):
    state = make_state(1)
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, state, CFG, dtype="f4")
    ckpt = load_checkpoint(path)
    for name, p in state.params.items():
        expect = p.data.astype("<f4").astype(np.float64)
        assert np.array_equal(ckpt.arrays[name], expect), name


def test_file_level_round_trip_stable(tmp_path):
    state = make_state(2)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, state, CFG, {"mode": "pretrained"}, dtype="f4")
    loaded = load_checkpoint(p1)
    clone = state_from_checkpoint(loaded)
    save_checkpoint(p2, clone, loaded.config, loaded.mode_flags, dtype="f4")
    assert p1.read_bytes() == p2.read_bytes()


def test_frozen_partition_round_trip(tmp_path):
    state = make_state(3)
    state.set_trainable(["out_proj.w", "out_proj.b"])
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, state, CFG, dtype="f8")
    clone = state_from_checkpoint(load_checkpoint(path))
    assert clone.frozen == state.frozen
    assert clone.trainable_names() == state.trainable_names()


def test_truncated_rejected(tmp_path):
    state = make_state(4)
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, state, CFG)
    blob = path.read_bytes()
    for cut in (4, 12, len(blob) // 2, len(blob) - 1):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(blob[:cut])
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)


def test_corrupted_byte_fails_crc(tmp_path):
    state = make_state(5)
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, state, CFG)
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="CRC"):
        load_checkpoint(bad)


def test_newer_version_rejected_naming_both(tmp_path):
    state = make_state(6)
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, state, CFG)
    blob = bytearray(path.read_bytes())
    blob[8:10] = struct.pack("<H", 2)
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(bytes(blob))
    with pytest.raises(VersionError, match="2.*1"):
        load_checkpoint(bad)


def test_wrong_magic_rejected(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(bad)
    assert MAGIC == b"MSFTCKPT"


def test_load_into_mismatched_config_rejected(tmp_path):
    state = make_state(7)
    path = tmp_path / "a.ckpt"
    save_checkpoint(path, state, CFG, dtype="f8")
    ckpt = load_checkpoint(path)
    other = BackboneConfig(2, 8, 2, 4, ffn_mult=2)
    with pytest.raises(ValueError, match="missing"):
        backbone_from_arrays(other, ckpt.arrays)
