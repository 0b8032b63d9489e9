import json
import struct
import zlib

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from checkpoint import MAGIC, Checkpoint, from_bytes, load_checkpoint, save_checkpoint, to_bytes
from errors import (
    CheckpointChecksumError,
    CheckpointError,
    CheckpointFormatError,
    CheckpointIOError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from model import init_model_params


@pytest.fixture
def checkpoint(tiny_model_config, job_table, resume_table):
    params = init_model_params(tiny_model_config, job_table.dim, resume_table.dim, seed=4)
    params.buffers["job.bn1.running_mean"] = np.arange(5, dtype=np.float32)
    return Checkpoint(config={"seed": 4, "train": {"lambda": 0.001}}, job_table=job_table, resume_table=resume_table, params=params)


def _reseal(body: bytes) -> bytes:
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def _with_header(data: bytes, edit) -> bytes:
    (n,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + n])
    edit(header)
    new = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _reseal(MAGIC + struct.pack("<Q", len(new)) + new + data[16 + n:-4])


def test_round_trip_field_for_field(checkpoint):
    again = from_bytes(to_bytes(checkpoint))
    assert again.config == checkpoint.config
    assert again.format_version == 1
    assert again.job_table.vocab.id_to_token == checkpoint.job_table.vocab.id_to_token
    assert_array_equal(again.job_table.vectors, checkpoint.job_table.vectors)
    assert_array_equal(again.resume_table.vectors, checkpoint.resume_table.vectors)
    assert again.params.config == checkpoint.params.config
    for name, arr in checkpoint.params.weights.items():
        assert_array_equal(again.params.weights[name], arr)
    for name, arr in checkpoint.params.buffers.items():
        assert_array_equal(again.params.buffers[name], arr)


def test_round_trip_byte_exact(checkpoint, tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(checkpoint, str(path))
    first = path.read_bytes()
    save_checkpoint(load_checkpoint(str(path)), str(path))
    assert path.read_bytes() == first
    assert first.startswith(MAGIC)


def test_embeddings_only_checkpoint(job_table, resume_table):
    cp = from_bytes(to_bytes(Checkpoint(config={}, job_table=job_table, resume_table=resume_table)))
    assert not cp.has_model
    with pytest.raises(CheckpointError):
        cp.model()


def test_loaded_model_scores_like_original(checkpoint, make_doc):
    job = make_doc("j", "job", [6, 9], seed=1)
    resume = make_doc("r", "resume", [7], seed=2)
    again = from_bytes(to_bytes(checkpoint))
    assert again.model().score(job, resume) == checkpoint.model().score(job, resume)


def test_corrupted_magic(checkpoint):
    data = bytearray(to_bytes(checkpoint))
    data[0:8] = b"NOTACKPT"
    with pytest.raises(CheckpointFormatError):
        from_bytes(bytes(data))


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointIOError):
        load_checkpoint(str(tmp_path / "absent.ckpt"))


@pytest.mark.parametrize("cut", [3, 12, 40, -5, -1])
def test_truncated(checkpoint, cut):
    data = to_bytes(checkpoint)
    with pytest.raises(CheckpointTruncatedError):
        from_bytes(data[:cut])


def test_checksum_mismatch(checkpoint):
    data = bytearray(to_bytes(checkpoint))
    data[-10] ^= 0xFF
    with pytest.raises(CheckpointChecksumError):
        from_bytes(bytes(data))


def test_corrupted_header_byte(checkpoint):
    data = bytearray(to_bytes(checkpoint))
    data[20] = 0xFF
    with pytest.raises(CheckpointChecksumError):
        from_bytes(bytes(data))


def test_version_mismatch(checkpoint):
    def bump(header):
        header["format_version"] = 99
    with pytest.raises(CheckpointVersionError):
        from_bytes(_with_header(to_bytes(checkpoint), bump))


def test_inconsistent_directory(checkpoint):
    def shrink(header):
        header["tensors"][0]["shape"] = [1, 1]
    with pytest.raises(CheckpointFormatError):
        from_bytes(_with_header(to_bytes(checkpoint), shrink))


def test_trailing_bytes(checkpoint):
    data = to_bytes(checkpoint)
    with pytest.raises(CheckpointFormatError):
        from_bytes(_reseal(data[:-4] + b"\x00\x00\x00\x00"))


@pytest.mark.parametrize("seed", range(20))
def test_random_corruption_never_crashes(checkpoint, seed):
    rng = np.random.default_rng(seed)
    data = bytearray(to_bytes(checkpoint))
    for pos in rng.integers(len(data), size=3):
        data[int(pos)] = int(rng.integers(256))
    try:
        from_bytes(bytes(data))
    except CheckpointError:
        pass
