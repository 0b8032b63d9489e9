"""
网络层：一维卷积、批归一化、ReLU、跨步最大池化、全局最大池化、条目集合聚合、参数初始化

所有层接受 [N, C, L] 的批张量（也接受单个 [C, L]）。变长条目右侧补零后组成一批，
lengths 记录每个条目的有效长度：批归一化只用有效位置统计，全局池化只在有效位置取最大。
卷积与跨步池化的有效输出只依赖有效输入，因此无需额外掩码。
"""
from dataclasses import dataclass
from typing import Dict, Iterable, Literal, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from errors import DegenerateBatchError, DimensionError, EmptyDocumentError, SequenceTooShortError
from tensor_core import Tensor, as_tensor, make_node, reshape

Mode = Literal["train", "eval"]


@dataclass
class Conv1dParams:
    kernels: Tensor  # [C_out, C_in, k]
    bias: Tensor     # [C_out]

    @property
    def k(self) -> int:
        return self.kernels.shape[2]


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.9


def _batched(x) -> Tuple[Tensor, bool]:
    x = as_tensor(x)
    if x.ndim == 2:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 3:
        raise DimensionError(f"层输入必须是 [C, L] 或 [N, C, L]，实际 {x.shape}")
    return x, False


def _unbatched(out: Tensor, squeeze: bool) -> Tensor:
    return reshape(out, out.shape[1:]) if squeeze else out


def _lengths_or_full(lengths: Optional[Iterable[int]], n: int, length: int) -> np.ndarray:
    if lengths is None:
        return np.full(n, length, dtype=np.int64)
    return np.asarray(lengths, dtype=np.int64)


# ==================== 卷积 ====================
def conv_lengths(lengths: np.ndarray, k: int) -> np.ndarray:
    return np.asarray(lengths) - k + 1


def conv1d(x, p: Conv1dParams, lengths: Optional[Iterable[int]] = None) -> Tensor:
    """无填充一维互相关：out[o][i] = bias[o] + Σ_c Σ_j kernels[o][c][j]·x[c][i+j]"""
    x, squeeze = _batched(x)
    w, b = p.kernels, p.bias
    n, c_in, length = x.shape
    c_out, w_in, k = w.shape
    if w_in != c_in:
        raise DimensionError(f"conv1d 输入通道 {c_in} 与卷积核 {w.shape} 不匹配")
    valid = _lengths_or_full(lengths, n, length)
    short = np.flatnonzero(valid < k)
    if length < k or short.size:
        item = int(short[0]) if short.size else 0
        raise SequenceTooShortError(f"第 {item} 个条目长度 {int(valid[item]) if short.size else length} 小于卷积核宽度 {k}")

    out_len = length - k + 1
    cols = sliding_window_view(x.data, k, axis=2).transpose(0, 2, 1, 3).reshape(n * out_len, c_in * k)
    w2 = w.data.reshape(c_out, c_in * k)
    out = (cols @ w2.T + b.data).reshape(n, out_len, c_out).transpose(0, 2, 1)

    def _backward(g):
        g2 = g.transpose(0, 2, 1).reshape(n * out_len, c_out)
        d_w = (g2.T @ cols).reshape(c_out, c_in, k)
        d_b = g2.sum(axis=0)
        d_cols = (g2 @ w2).reshape(n, out_len, c_in, k)
        d_x = np.zeros_like(x.data)
        for j in range(k):
            d_x[:, :, j:j + out_len] += d_cols[:, :, :, j].transpose(0, 2, 1)
        return d_x, d_w, d_b

    result = make_node(np.ascontiguousarray(out), (x, w, b), _backward)
    return _unbatched(result, squeeze)


# ==================== 批归一化 ====================
def batchnorm(x, p: BatchNormParams, mode: Mode = "train", lengths: Optional[Iterable[int]] = None) -> Tensor:
    """
    按通道归一化。train 模式用（批 × 有效位置）统计量，并以 momentum 做指数滑动平均更新
    running 统计：running = momentum·running + (1-momentum)·batch；eval 模式直接用 running 统计
    """
    x, squeeze = _batched(x)
    n, channels, length = x.shape
    valid = _lengths_or_full(lengths, n, length)
    mask = (np.arange(length)[None, :] < valid[:, None]).astype(x.data.dtype)[:, None, :]
    gamma = p.gamma.data[None, :, None]
    beta = p.beta.data[None, :, None]

    if mode == "train":
        count = float(mask.sum())
        if count < 2:
            raise DegenerateBatchError(f"train 模式下每个通道至少需要 2 个位置，实际 {int(count)}")
        mean = (x.data * mask).sum(axis=(0, 2)) / count
        centered = x.data - mean[None, :, None]
        var = (centered * centered * mask).sum(axis=(0, 2)) / count
        inv_std = 1.0 / np.sqrt(var + p.epsilon)
        x_hat = centered * inv_std[None, :, None]
        p.running_mean = (p.momentum * p.running_mean + (1.0 - p.momentum) * mean).astype(p.running_mean.dtype)
        p.running_var = (p.momentum * p.running_var + (1.0 - p.momentum) * var).astype(p.running_var.dtype)

        def _backward(g):
            g = g * mask
            d_gamma = (g * x_hat).sum(axis=(0, 2))
            d_beta = g.sum(axis=(0, 2))
            d_hat = g * gamma
            sum_d = d_hat.sum(axis=(0, 2))[None, :, None]
            sum_dx = (d_hat * x_hat).sum(axis=(0, 2))[None, :, None]
            d_x = (inv_std[None, :, None] / count) * (count * d_hat - sum_d - x_hat * sum_dx)
            return d_x * mask, d_gamma, d_beta
    elif mode == "eval":
        inv_std = 1.0 / np.sqrt(p.running_var + p.epsilon)
        x_hat = (x.data - p.running_mean[None, :, None]) * inv_std[None, :, None]

        def _backward(g):
            g = g * mask
            return g * gamma * inv_std[None, :, None], (g * x_hat).sum(axis=(0, 2)), g.sum(axis=(0, 2))
    else:
        raise ValueError(f"未知模式: {mode}")

    out = (gamma * x_hat + beta) * mask
    result = make_node(out, (x, p.gamma, p.beta), _backward)
    return _unbatched(result, squeeze)


# ==================== 激活 / 池化 ====================
def relu(x) -> Tensor:
    x = as_tensor(x)

    def _backward(g):
        return (g * (x.data > 0),)

    return make_node(np.maximum(x.data, 0), (x,), _backward)


def pool_lengths(lengths: np.ndarray, size: int, stride: int) -> np.ndarray:
    return (np.asarray(lengths) - size) // stride + 1


def maxpool1d(x, size: int, stride: int, lengths: Optional[Iterable[int]] = None) -> Tensor:
    """窗口内按通道取最大；末尾凑不满一个窗口的位置丢弃；并列取下标最小者"""
    if size < 1 or stride < 1:
        raise ValueError(f"池化窗口与步长必须 ≥ 1: size={size}, stride={stride}")
    x, squeeze = _batched(x)
    n, channels, length = x.shape
    valid = _lengths_or_full(lengths, n, length)
    short = np.flatnonzero(valid < size)
    if length < size or short.size:
        item = int(short[0]) if short.size else 0
        raise SequenceTooShortError(f"第 {item} 个条目长度小于池化窗口 {size}")

    out_len = (length - size) // stride + 1
    windows = sliding_window_view(x.data, size, axis=2)[:, :, ::stride][:, :, :out_len]
    arg = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    positions = np.arange(out_len)[None, None, :] * stride + arg
    batch_idx = np.arange(n)[:, None, None]
    chan_idx = np.arange(channels)[None, :, None]

    def _backward(g):
        d_x = np.zeros_like(x.data)
        np.add.at(d_x, (batch_idx, chan_idx, positions), g)
        return (d_x,)

    result = make_node(np.ascontiguousarray(out), (x,), _backward)
    return _unbatched(result, squeeze)


def global_maxpool(x, lengths: Optional[Iterable[int]] = None) -> Tensor:
    """窗口等于整条输入的最大池化：[N, C, L] -> [N, C]，输出长度与 L 无关"""
    x, squeeze = _batched(x)
    n, channels, length = x.shape
    valid = _lengths_or_full(lengths, n, length)
    if length < 1 or np.any(valid < 1):
        raise SequenceTooShortError("全局池化的输入长度必须 ≥ 1")
    masked = np.where(np.arange(length)[None, None, :] < valid[:, None, None], x.data, -np.inf)
    arg = masked.argmax(axis=2)
    out = np.take_along_axis(x.data, arg[..., None], axis=2)[..., 0]

    def _backward(g):
        d_x = np.zeros_like(x.data)
        np.put_along_axis(d_x, arg[..., None], g[..., None], axis=2)
        return (d_x,)

    result = make_node(out, (x,), _backward)
    return reshape(result, (channels,)) if squeeze else result


# ==================== 条目 -> 文档聚合 ====================
def _segment_rows(segments: Sequence[int], n_segments: int) -> list:
    segments = np.asarray(segments, dtype=np.int64)
    rows = [np.flatnonzero(segments == s) for s in range(n_segments)]
    for s, r in enumerate(rows):
        if r.size == 0:
            raise EmptyDocumentError(f"第 {s} 个文档没有任何条目")
    return rows


def segment_max(x, segments: Sequence[int], n_segments: int) -> Tensor:
    """岗位侧：同一文档的条目向量逐维取最大，并列取最靠前的条目"""
    x = as_tensor(x)
    rows = _segment_rows(segments, n_segments)
    width = x.shape[1]
    cols = np.arange(width)
    out = np.empty((n_segments, width), dtype=x.data.dtype)
    source = np.empty((n_segments, width), dtype=np.int64)
    for s, r in enumerate(rows):
        block = x.data[r]
        arg = block.argmax(axis=0)
        out[s] = block[arg, cols]
        source[s] = r[arg]

    def _backward(g):
        d_x = np.zeros_like(x.data)
        np.add.at(d_x, (source, np.broadcast_to(cols, source.shape)), g)
        return (d_x,)

    return make_node(out, (x,), _backward)


def segment_mean(x, segments: Sequence[int], n_segments: int) -> Tensor:
    """简历侧：同一文档的条目向量求算术平均；先逐列排序再求和，结果与条目顺序无关"""
    x = as_tensor(x)
    rows = _segment_rows(segments, n_segments)
    counts = np.array([r.size for r in rows], dtype=x.data.dtype)
    out = np.stack([np.sort(x.data[r], axis=0).sum(axis=0) for r in rows]) / counts[:, None]
    owner = np.asarray(segments, dtype=np.int64)

    def _backward(g):
        return (g[owner] / counts[owner][:, None],)

    return make_node(out.astype(x.data.dtype), (x,), _backward)


# ==================== 参数初始化 ====================
@dataclass(frozen=True)
class LayerSpec:
    kind: Literal["conv1d", "batchnorm"]
    c_in: int = 0
    c_out: int = 0
    k: int = 1


def init_params(specs: Dict[str, LayerSpec], seed: int) -> Dict[str, np.ndarray]:
    """
    卷积核 Glorot 均匀分布 U(-√(6/(fan_in+fan_out)), +√(6/(fan_in+fan_out)))，偏置 / beta 为 0，gamma 为 1
    按层名排序依次抽样，同一 seed 结果逐位一致
    """
    rng = np.random.default_rng(seed)
    params: Dict[str, np.ndarray] = {}
    for name in sorted(specs):
        spec = specs[name]
        if spec.kind == "conv1d":
            if spec.k < 1 or spec.c_in < 1 or spec.c_out < 1:
                raise ValueError(f"卷积层 {name} 形状非法: {spec}")
            fan_in, fan_out = spec.c_in * spec.k, spec.c_out * spec.k
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            params[f"{name}.kernels"] = rng.uniform(-limit, limit, size=(spec.c_out, spec.c_in, spec.k)).astype(np.float32)
            params[f"{name}.bias"] = np.zeros(spec.c_out, dtype=np.float32)
        elif spec.kind == "batchnorm":
            params[f"{name}.gamma"] = np.ones(spec.c_out, dtype=np.float32)
            params[f"{name}.beta"] = np.zeros(spec.c_out, dtype=np.float32)
        else:
            raise ValueError(f"未知层类型: {spec.kind}")
    return params


# ==================== 短条目补齐 ====================
def min_input_length(k1: int, k2: int, pool_size: int, pool_stride: int, min_positions: int = 1) -> int:
    """conv(k1) → maxpool(size, stride) → conv(k2) 能产生至少 min_positions 个输出位置所需的最短输入"""
    return (k1 - 1) + pool_size + (k2 - 2 + min_positions) * pool_stride


def pad_item(matrix: np.ndarray, min_length: int) -> np.ndarray:
    """右侧补零列到 min_length；已足够长的条目原样返回"""
    length = matrix.shape[1]
    if length >= min_length:
        return matrix
    return np.pad(matrix, ((0, 0), (0, min_length - length)))
