"""
稠密张量 + 反向模式自动求导（GradTape）

- 默认 float32；梯度校验时可用 default_dtype(np.float64) 临时切换
- 在 GradTape 上下文中，凡是输入需要梯度的运算都会按创建顺序记录到磁带，
  backward 逆序遍历一次即可得到拓扑序
- 磁带与张量只属于一个线程；不同线程各自持有自己的磁带
"""
import threading
from contextlib import contextmanager
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import ContractError, DimensionError

_state = threading.local()

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]


def get_default_dtype():
    return getattr(_state, "dtype", np.float32)


@contextmanager
def default_dtype(dtype):
    previous = get_default_dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = previous


def _tape_stack() -> list:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def current_tape() -> Optional["GradTape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """行优先浮点数组；_parents / _backward 仅在磁带记录时设置"""

    __slots__ = ("data", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=get_default_dtype())
        self.requires_grad = requires_grad
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    # ---------- 基本属性 ----------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # ---------- 运算符 ----------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None):
        return tmax(self, axis=axis)

    def sqrt(self):
        return tsqrt(self)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(data: np.ndarray, parents: Tuple[Tensor, ...], backward) -> Tensor:
    """创建运算结果；有需要梯度的输入且磁带激活时记录到磁带"""
    needs = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape = current_tape()
        if tape is not None:
            out._parents = parents
            out._backward = backward
            tape.record(out)
    return out


class GradTape:
    """
    梯度磁带：记录运算图，backward 时为每个被 watch 的参数累积梯度
    用法：
        with GradTape() as tape:
            w = tape.watch(Tensor(arr), "w")
            loss = (w * w).sum()
        grads = backward(loss, tape)
    """

    def __init__(self):
        self.nodes: List[Tensor] = []
        self.watched: Dict[str, Tensor] = {}
        self.grads: Dict[str, np.ndarray] = {}

    def watch(self, tensor: Tensor, name: Optional[str] = None) -> Tensor:
        key = name or tensor.name or f"param{len(self.watched)}"
        tensor.requires_grad = True
        tensor.name = key
        self.watched[key] = tensor
        return tensor

    def record(self, node: Tensor) -> None:
        self.nodes.append(node)

    def __enter__(self) -> "GradTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()


def backward(loss: Tensor, tape: GradTape) -> Dict[str, np.ndarray]:
    """反向传播；未参与损失的参数梯度为全零"""
    if not isinstance(loss, Tensor) or loss.size != 1:
        shape = getattr(loss, "shape", None)
        raise ContractError(f"backward 需要标量损失，实际形状 {shape}")
    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    out = {}
    for name, tensor in tape.watched.items():
        g = grads.get(id(tensor))
        out[name] = np.zeros_like(tensor.data) if g is None else np.asarray(g, dtype=tensor.data.dtype).reshape(tensor.shape)
    tape.grads = out
    return out


# ==================== 逐元素运算 ====================
def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(a.data + b.data, (a, b), _backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_node(a.data - b.data, (a, b), _backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_node(a.data * b.data, (a, b), _backward)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_node(a.data / b.data, (a, b), _backward)


def power(a: ArrayLike, exponent: float) -> Tensor:
    a = as_tensor(a)

    def _backward(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return make_node(a.data ** exponent, (a,), _backward)


def tsqrt(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def _backward(g):
        return (g * 0.5 / out_data,)

    return make_node(out_data, (a,), _backward)


# ==================== 矩阵运算 ====================
def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul 维度不匹配: {a.shape} × {b.shape}")

    def _backward(g):
        return g @ b.data.T, a.data.T @ g

    return make_node(a.data @ b.data, (a, b), _backward)


# ==================== 归约 ====================
def tsum(a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), _backward)


def tmean(a: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / float(count))


def tmax(a: ArrayLike, axis: Optional[int] = None) -> Tensor:
    """最大值归约；并列时取下标最小者（argmax 的约定）"""
    a = as_tensor(a)
    if axis is None:
        flat_idx = int(np.argmax(a.data))

        def _backward_all(g):
            grad = np.zeros(a.size, dtype=a.data.dtype)
            grad[flat_idx] = g.reshape(-1)[0]
            return (grad.reshape(a.shape),)

        return make_node(np.asarray(a.data.reshape(-1)[flat_idx]), (a,), _backward_all)

    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis)

    def _backward(g):
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, idx, np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return make_node(np.squeeze(out, axis=axis), (a,), _backward)


# ==================== 形状 / 索引 ====================
def reshape(a: ArrayLike, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)

    def _backward(g):
        return (g.reshape(a.shape),)

    return make_node(a.data.reshape(shape), (a,), _backward)


def take(a: ArrayLike, indices: Iterable[int]) -> Tensor:
    """按第 0 维取行（可重复），反向时累加回原行"""
    a = as_tensor(a)
    idx = np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices, dtype=np.int64)

    def _backward(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, idx, g)
        return (grad,)

    return make_node(a.data[idx], (a,), _backward)


# ==================== 梯度校验 ====================
def gradient_check(
    loss_fn: Callable[[Dict[str, Tensor]], Tensor],
    params: Dict[str, np.ndarray],
    eps: float = 1e-3,
    rtol: float = 1e-3,
    atol: float = 1e-6,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> Dict[str, float]:
    """
    用中心差分校验磁带梯度
    :param loss_fn: 输入参数张量字典，返回标量损失
    :param params: 参数数组（原地扰动后恢复）
    :param max_entries: 每个参数最多抽查的元素数，None 表示全部
    :return: 每个参数的最大相对误差 |a-n| / max(|a|, |n|, atol/rtol)，≤ rtol 即通过
    """
    tape = GradTape()
    with tape:
        tensors = {name: tape.watch(Tensor(arr), name) for name, arr in params.items()}
        loss = loss_fn(tensors)
    analytic = backward(loss, tape)

    rng = np.random.default_rng(seed)
    report: Dict[str, float] = {}
    floor = atol / rtol
    for name, arr in params.items():
        flat = arr.reshape(-1)
        if not np.shares_memory(flat, arr):
            raise ContractError(f"参数 {name} 不是连续数组，无法原地扰动")
        if max_entries is None or flat.size <= max_entries:
            picks = np.arange(flat.size)
        else:
            picks = np.sort(rng.choice(flat.size, max_entries, replace=False))
        worst = 0.0
        for i in picks:
            original = flat[i]
            flat[i] = original + eps
            plus = loss_fn({n: Tensor(a) for n, a in params.items()}).item()
            flat[i] = original - eps
            minus = loss_fn({n: Tensor(a) for n, a in params.items()}).item()
            flat[i] = original
            numeric = (plus - minus) / (2.0 * eps)
            exact = float(analytic[name].reshape(-1)[i])
            worst = max(worst, abs(numeric - exact) / max(abs(numeric), abs(exact), floor))
        report[name] = worst
    return report
