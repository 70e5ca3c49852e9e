"""
Minimal reverse-mode differentiation over numpy arrays.

Only the operations the MLP and the 1x1-convolution CNN need are provided.
Every op returns a new Tensor recording its parents and a backward closure;
Tensor.backward() runs the closures in reverse topological order.
"""
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "name")

    def __init__(
        self,
        data: np.ndarray,
        parents: Tuple["Tensor", ...] = (),
        backward_fn: Optional[BackwardFn] = None,
        name: str = "",
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(name={self.name!r}, shape={self.shape})"

    def _topological(self) -> List["Tensor"]:
        order: List[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node.parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's .grad (self must be scalar)."""
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar output")
        self.grad = np.ones_like(self.data)
        for node in reversed(self._topological()):
            if node.backward_fn is None or node.grad is None:
                continue
            for parent, grad in zip(node.parents, node.backward_fn(node.grad)):
                if grad is None:
                    continue
                parent.grad = grad if parent.grad is None else parent.grad + grad


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
    )


def add(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def relu(a: Tensor) -> Tensor:
    active = a.data > 0
    return Tensor(np.where(active, a.data, 0.0), (a,), lambda g: (g * active,))


def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return Tensor(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def scale(a: Tensor, factor: np.ndarray) -> Tensor:
    """Elementwise product with a constant (dropout masks)."""
    return Tensor(a.data * factor, (a,), lambda g: (g * factor,))


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean cross-entropy of integer labels under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    log_p = log_softmax(logits.data)
    loss = -log_p[np.arange(n), labels].mean()

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        grad = np.exp(log_p)
        grad[np.arange(n), labels] -= 1.0
        return (g * grad / n,)

    return Tensor(np.array(loss), (logits,), backward)
