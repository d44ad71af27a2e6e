"""A small reverse-mode gradient engine over dense 2-D float64 arrays.

Only the primitives a GIN node classifier needs are provided. Every op records
its parents and a closure that pushes the output gradient back to them; calling
:meth:`Tensor.backward` on a scalar runs those closures in reverse topological
order.
"""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp


class NonFiniteError(ArithmeticError):
    """Raised when a forward or backward pass produces NaN or Inf."""


def _check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values in {what}")
    return arr


_grad_enabled = True


@contextmanager
def no_grad():
    """Run forward passes without recording backward closures."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple["Tensor", ...] = (),
        backward: Optional[Callable[[np.ndarray], None]] = None,
        name: str = "",
    ):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = _check_finite(arr, name or "tensor")
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward
        self.name = name

    @classmethod
    def _result(cls, data: np.ndarray, parents, backward, what: str) -> "Tensor":
        # intermediate values are not checked here: NaN/Inf propagate to the
        # loss and to leaf gradients, which are checked
        t = cls.__new__(cls)
        t.data = data
        t.grad = None
        t.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
        t._parents = tuple(parents) if t.requires_grad else ()
        t._backward = backward if t.requires_grad else None
        t.name = what
        return t

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError("item() needs a single-element tensor")
        return float(self.data[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        self.grad = g.copy() if self.grad is None else self.grad + g

    def backward(self) -> None:
        """Back-propagate from this scalar; gradients accumulate into ``.grad``."""
        if self.data.size != 1:
            raise ValueError("backward() starts from a scalar")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        _check_finite(self.data, self.name or "output")
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(_check_finite(g, f"gradient of {node.name or 'tensor'}"))
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(id(parent))
                grads[id(parent)] = pg if prev is None else prev + pg

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def parameter(data, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def _colsum(a: np.ndarray) -> np.ndarray:
    # BLAS reduction, much faster than a.sum(axis=0) on tall arrays
    return (np.ones(a.shape[0]) @ a)[None, :]


def _coldot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.einsum("ij,ij->j", a, b)[None, :]


def affine(X: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """``X @ W + b`` with ``b`` broadcast over rows."""
    if X.shape[1] != W.shape[0] or b.shape != (1, W.shape[1]):
        raise ValueError(f"shape mismatch in affine: {X.shape} @ {W.shape} + {b.shape}")
    x, w = X.data, W.data
    need_x = X.requires_grad

    def back(g):
        return (g @ w.T if need_x else None), x.T @ g, _colsum(g)

    out = x @ w
    out += b.data
    return Tensor._result(out, (X, W, b), back, "affine")


def mul(A: Tensor, B: Tensor) -> Tensor:
    """Elementwise product of equal-shape tensors."""
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch in mul: {A.shape} vs {B.shape}")
    a, b = A.data, B.data
    return Tensor._result(a * b, (A, B), lambda g: (g * b, g * a), "mul")


def total(X: Tensor) -> Tensor:
    """Sum of all entries as a 1x1 tensor."""
    shape = X.shape
    return Tensor._result(np.array([[X.data.sum()]]), (X,), lambda g: (np.full(shape, g[0, 0]),), "sum")


def relu(X: Tensor) -> Tensor:
    out = np.maximum(X.data, 0.0)
    # out > 0 exactly where x > 0, so the gradient is 0 at the kink
    return Tensor._result(out, (X,), lambda g: (np.multiply(g, out > 0, dtype=np.float64),), "relu")


def neighbor_sum(H: Tensor, adjacency: sp.spmatrix, eps_gin: float = 0.0) -> Tensor:
    """GIN aggregation: row v becomes ``(1 + eps) * H[v] + sum of H[u] over neighbors u``.

    ``adjacency`` is the symmetric 0/1 sparse adjacency matrix, so the backward
    pass is the same aggregation applied to the incoming gradient.
    """
    n = H.shape[0]
    if adjacency.shape != (n, n):
        raise ValueError(f"adjacency shape {adjacency.shape} does not match {n} rows")
    scale = 1.0 + eps_gin
    h = H.data

    def aggregate(a):
        out = adjacency @ a
        out += a if scale == 1.0 else scale * a
        return out

    return Tensor._result(aggregate(h), (H,), lambda g: (aggregate(g),), "neighbor_sum")


@dataclass
class BatchNormState:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    epsilon: float = 1e-5

    @classmethod
    def create(cls, dim: int, momentum: float = 0.1, epsilon: float = 1e-5, name: str = "bn") -> "BatchNormState":
        return cls(
            gamma=parameter(np.ones((1, dim)), f"{name}.gamma"),
            beta=parameter(np.zeros((1, dim)), f"{name}.beta"),
            running_mean=np.zeros(dim),
            running_var=np.ones(dim),
            momentum=momentum,
            epsilon=epsilon,
        )


def batchnorm(X: Tensor, state: BatchNormState, training: bool) -> Tensor:
    """Per-column batch normalization.

    Training mode normalizes with the biased batch variance and folds the batch
    statistics into the running estimates (unbiased variance, as the common
    toolkits do). Eval mode normalizes with the running estimates.
    """
    x = X.data
    gamma, beta = state.gamma.data, state.beta.data
    n = x.shape[0]
    if not training:
        inv = 1.0 / np.sqrt(state.running_var + state.epsilon)
        rm = state.running_mean
        scale = gamma * inv
        out = x * scale
        out += beta - rm * scale

        def back_eval(g):
            xhat = (x - rm) * inv
            return g * scale, _coldot(g, xhat), _colsum(g)

        return Tensor._result(out, (X, state.gamma, state.beta), back_eval, "batchnorm")

    if n < 2:
        raise ValueError("batch normalization in training mode needs at least 2 rows")
    mu = _colsum(x)[0] / n
    xhat = x - mu
    var = _coldot(xhat, xhat)[0] / n
    inv = 1.0 / np.sqrt(var + state.epsilon)
    xhat *= inv
    m = state.momentum
    state.running_mean = (1 - m) * state.running_mean + m * mu
    state.running_var = (1 - m) * state.running_var + m * var * (n / (n - 1))

    def back(g):
        gsum = _colsum(g)
        gxsum = _coldot(g, xhat)
        # mean and variance paths included
        dx = g - gsum / n
        dx -= xhat * (gxsum / n)
        dx *= gamma * inv
        return dx, gxsum, gsum

    out = xhat * gamma
    out += beta
    return Tensor._result(out, (X, state.gamma, state.beta), back, "batchnorm")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(
    logits: Tensor, targets: Sequence[int] | np.ndarray, mask: Optional[Sequence[int] | np.ndarray] = None
) -> Tensor:
    """Mean negative log-likelihood over the rows listed in ``mask`` (all rows if None)."""
    n, c = logits.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (n,):
        raise ValueError(f"expected {n} targets, got {targets.shape}")
    rows = np.arange(n) if mask is None else np.asarray(mask, dtype=np.int64)
    if rows.size == 0:
        raise ValueError("loss mask is empty")
    t = targets[rows]
    if t.min() < 0 or t.max() >= c:
        raise ValueError("target class out of range")
    z = logits.data[rows]
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(len(rows)), t]))

    def back(g):
        full = np.zeros((n, c))
        p = softmax(logits.data[rows])
        p[np.arange(len(rows)), t] -= 1.0
        np.add.at(full, rows, p / len(rows))
        return (full * g[0, 0],)

    return Tensor._result(np.array([[loss]]), (logits,), back, "cross_entropy")


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> list[np.ndarray]:
    """One Adam update with L2 weight decay folded into the gradient.

    Moment buffers in ``state`` are created on the first call and updated in
    place; the new parameter arrays are returned.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ValueError("optimizer state does not match the parameter set")
    state.step_count += 1
    t = state.step_count
    bc1 = 1 - state.beta1**t
    bc2 = 1 - state.beta2**t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.m[i].shape:
            raise ValueError(f"shape mismatch for parameter {i}: {p.shape} vs {g.shape}")
        if state.weight_decay:
            g = g + state.weight_decay * p
        state.m[i] = state.beta1 * state.m[i] + (1 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1 - state.beta2) * g * g
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        out.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon))
    return out


class Adam:
    """Adam over a fixed list of parameter tensors."""

    def __init__(self, params: Iterable[Tensor], lr: float = 0.01, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], epsilon=eps, weight_decay=weight_decay)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        for p, new in zip(self.params, adam_step([p.data for p in self.params], grads, self.state)):
            p.data = _check_finite(new, p.name or "parameter")


def gradient_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    floor: float = 1e-6,
) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` rebuilds the scalar from the current contents of ``params``. The
    relative error of one entry is ``|a - n| / max(|a|, |n|, floor)``.
    """
    for p in params:
        p.grad = None
    out = f()
    out.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = f().item()
            flat[i] = orig - step
            down = f().item()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteError("non-finite value during finite differencing")
            num = (up - down) / (2 * step)
            ana = a.reshape(-1)[i]
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            worst = max(worst, err)
    return worst


def save_checkpoint(named: Mapping[str, np.ndarray], path: str | Path) -> None:
    """Write named float64 arrays to an uncompressed ``.npz`` archive."""
    np.savez(Path(path), **{k: np.asarray(v, dtype=np.float64) for k, v in named.items()})


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    with np.load(Path(path)) as z:
        return {k: z[k].copy() for k in z.files}
