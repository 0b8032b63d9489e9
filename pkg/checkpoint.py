"""
检查点读写

文件布局（全部小端）：
  8 字节魔数 b"PJFNNCKP"
  uint64 头部长度
  UTF-8 JSON 头部（键排序、紧凑分隔符）：format_version / config / vocabularies / model / tensors
  张量数据：float32 行优先依次拼接，tensors 目录记录 name / shape / offset / nbytes（offset 相对数据区起点）
  uint32 CRC-32（覆盖之前的全部字节）

只含词向量、不含网络参数的检查点（embed 子命令产出）头部 model 为 null。
"""
import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from config import ModelConfig, build_config, logger
from embedding import EmbeddingTable, Vocabulary
from errors import (
    CheckpointChecksumError,
    CheckpointError,
    CheckpointFormatError,
    CheckpointIOError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigError,
)
from model import PJFNN, ModelParams

MAGIC = b"PJFNNCKP"
FORMAT_VERSION = 1
_HEADER_LEN = struct.Struct("<Q")
_CRC = struct.Struct("<I")
_PREFIX = len(MAGIC) + _HEADER_LEN.size


@dataclass
class Checkpoint:
    config: dict
    job_table: EmbeddingTable
    resume_table: EmbeddingTable
    params: Optional[ModelParams] = None
    format_version: int = field(default=FORMAT_VERSION)

    @property
    def has_model(self) -> bool:
        return self.params is not None

    def model(self) -> PJFNN:
        if self.params is None:
            raise CheckpointError("检查点只包含词向量，没有网络参数，请先执行 train")
        return PJFNN(self.params)

    def table(self, side: str) -> EmbeddingTable:
        return self.job_table if side == "job" else self.resume_table


# ==================== 编码 ====================
def _tensors(cp: Checkpoint) -> List[Tuple[str, np.ndarray]]:
    tensors = [("embedding.job", cp.job_table.vectors), ("embedding.resume", cp.resume_table.vectors)]
    if cp.params is not None:
        tensors += [(f"weights.{k}", v) for k, v in sorted(cp.params.weights.items())]
        tensors += [(f"buffers.{k}", v) for k, v in sorted(cp.params.buffers.items())]
    return tensors


def to_bytes(cp: Checkpoint) -> bytes:
    directory, payloads, offset = [], [], 0
    for name, arr in _tensors(cp):
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        directory.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        payloads.append(raw)
        offset += len(raw)

    model = None
    if cp.params is not None:
        model = {
            "config": cp.params.config.model_dump(mode="json"),
            "job_dim": cp.params.job_dim,
            "resume_dim": cp.params.resume_dim,
        }
    header = {
        "format_version": cp.format_version,
        "config": cp.config,
        "vocabularies": {"job": cp.job_table.vocab.to_dict(), "resume": cp.resume_table.vocab.to_dict()},
        "model": model,
        "tensors": directory,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    body = MAGIC + _HEADER_LEN.pack(len(header_bytes)) + header_bytes + b"".join(payloads)
    return body + _CRC.pack(zlib.crc32(body) & 0xFFFFFFFF)


# ==================== 解码 ====================
def _checksum_ok(data: bytes) -> bool:
    return len(data) >= 4 and zlib.crc32(data[:-4]) & 0xFFFFFFFF == _CRC.unpack(data[-4:])[0]


def _parse_header(data: bytes, source: str) -> Tuple[dict, int]:
    if len(data) < len(MAGIC):
        if MAGIC.startswith(data):
            raise CheckpointTruncatedError(f"{source}: 文件只有 {len(data)} 字节，魔数不完整")
        raise CheckpointFormatError(f"{source}: 不是 PJFNN 检查点（魔数不符）")
    if data[:len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(f"{source}: 不是 PJFNN 检查点（魔数不符）")
    if len(data) < _PREFIX:
        raise CheckpointTruncatedError(f"{source}: 头部长度字段不完整")
    (header_len,) = _HEADER_LEN.unpack(data[len(MAGIC):_PREFIX])
    if _PREFIX + header_len + _CRC.size > len(data):
        raise CheckpointTruncatedError(f"{source}: 声明的头部长度 {header_len} 超出文件大小 {len(data)}")
    try:
        header = json.loads(data[_PREFIX:_PREFIX + header_len].decode("utf-8"))
        if not isinstance(header, dict):
            raise ValueError("头部不是 JSON 对象")
    except (UnicodeDecodeError, ValueError, RecursionError) as e:
        if not _checksum_ok(data):
            raise CheckpointChecksumError(f"{source}: CRC 校验失败（头部已损坏）") from e
        raise CheckpointFormatError(f"{source}: 头部解析失败: {e}") from e
    return header, _PREFIX + header_len


def _read_directory(header: dict, source: str) -> List[dict]:
    entries = header.get("tensors")
    if not isinstance(entries, list):
        raise CheckpointFormatError(f"{source}: 头部缺少张量目录")
    expected = 0
    for entry in entries:
        try:
            shape = [int(x) for x in entry["shape"]]
            offset, nbytes, name = int(entry["offset"]), int(entry["nbytes"]), str(entry["name"])
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointFormatError(f"{source}: 张量目录条目非法: {entry}") from e
        if offset != expected or nbytes != int(np.prod(shape, dtype=np.int64)) * 4 or any(s < 0 for s in shape):
            raise CheckpointFormatError(f"{source}: 张量 {name} 的偏移 / 大小与形状不一致")
        expected += nbytes
    return entries


def from_bytes(data: bytes, source: str = "<bytes>") -> Checkpoint:
    header, payload_start = _parse_header(data, source)
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{source}: 不支持的检查点版本 {version}（当前支持 {FORMAT_VERSION}）")
    entries = _read_directory(header, source)
    payload_size = sum(int(e["nbytes"]) for e in entries)
    expected_total = payload_start + payload_size + _CRC.size
    if len(data) < expected_total:
        raise CheckpointTruncatedError(f"{source}: 文件长度 {len(data)} 小于声明的 {expected_total} 字节")
    if len(data) > expected_total:
        raise CheckpointFormatError(f"{source}: 文件末尾有 {len(data) - expected_total} 字节多余数据")
    if not _checksum_ok(data):
        raise CheckpointChecksumError(f"{source}: CRC 校验失败")

    arrays: Dict[str, np.ndarray] = {}
    for e in entries:
        start = payload_start + int(e["offset"])
        arr = np.frombuffer(data, dtype="<f4", count=int(e["nbytes"]) // 4, offset=start)
        arrays[e["name"]] = arr.reshape([int(x) for x in e["shape"]]).astype(np.float32)

    try:
        vocabs = header["vocabularies"]
        job_table = EmbeddingTable("job", arrays["embedding.job"], Vocabulary.from_dict(vocabs["job"]))
        resume_table = EmbeddingTable("resume", arrays["embedding.resume"], Vocabulary.from_dict(vocabs["resume"]))
        params = None
        if header.get("model") is not None:
            m = header["model"]
            params = ModelParams(
                config=build_config(ModelConfig, m["config"]),
                job_dim=int(m["job_dim"]),
                resume_dim=int(m["resume_dim"]),
                weights={k[len("weights."):]: v for k, v in arrays.items() if k.startswith("weights.")},
                buffers={k[len("buffers."):]: v for k, v in arrays.items() if k.startswith("buffers.")},
            )
        config = header.get("config") or {}
    except (KeyError, TypeError, ValueError, ConfigError) as e:
        raise CheckpointFormatError(f"{source}: 头部字段不完整或非法: {e}") from e
    return Checkpoint(config=config, job_table=job_table, resume_table=resume_table, params=params, format_version=version)


# ==================== 文件 ====================
def save_checkpoint(cp: Checkpoint, path: str) -> None:
    data = to_bytes(cp)
    tmp = f"{path}.tmp"
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(tmp, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except OSError as e:
        raise CheckpointIOError(f"无法写入检查点 {path}: {e}") from e
    logger.info(f"检查点已保存: {path}（{len(data)} 字节，含网络参数={cp.has_model}）")


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CheckpointIOError(f"无法读取检查点 {path}: {e}") from e
    return from_bytes(data, source=path)
