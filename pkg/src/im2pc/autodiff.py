"""Minimal dense tensor with reverse-mode differentiation.

float64 throughout (gradient-check fidelity beats speed at this scale).
A graph may be traversed exactly once: backward() frees the tape and a
second call raises GraphConsumed.
"""

from __future__ import annotations

import numpy as np

from .errors import GraphConsumed, NotScalar, ShapeMismatch

DTYPE = np.float64


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_spent")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._spent = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _make(data, parents, backward):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def _accum(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    # -- elementwise --------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out_data = self.data + other.data

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g, other.shape))

        return Tensor._make(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            self._accum(-g)

        return Tensor._make(-self.data, (self,), backward)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        out_data = self.data * other.data

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.data, other.shape))

        return Tensor._make(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        out_data = self.data / other.data

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(-g * self.data / other.data**2, other.shape))

        return Tensor._make(out_data, (self, other), backward)

    def exp(self):
        out_data = np.exp(self.data)

        def backward(g):
            self._accum(g * out_data)

        return Tensor._make(out_data, (self,), backward)

    def log(self):
        def backward(g):
            self._accum(g / self.data)

        return Tensor._make(np.log(self.data), (self,), backward)

    def sqrt(self):
        out_data = np.sqrt(self.data)

        def backward(g):
            self._accum(g * 0.5 / out_data)

        return Tensor._make(out_data, (self,), backward)

    def abs(self):
        def backward(g):
            self._accum(g * np.sign(self.data))

        return Tensor._make(np.abs(self.data), (self,), backward)

    def clip_min(self, floor: float):
        """max(x, floor); gradient passes only where x > floor."""
        keep = self.data > floor

        def backward(g):
            self._accum(g * keep)

        return Tensor._make(np.maximum(self.data, floor), (self,), backward)

    def leaky_relu(self, slope=0.1):
        pos = self.data > 0
        scale = np.where(pos, 1.0, slope)

        def backward(g):
            self._accum(g * scale)

        return Tensor._make(self.data * scale, (self,), backward)

    def relu(self):
        return self.leaky_relu(slope=0.0)

    # -- shape --------------------------------------------------------------

    def reshape(self, *shape):
        old = self.shape

        def backward(g):
            self._accum(g.reshape(old))

        return Tensor._make(self.data.reshape(*shape), (self,), backward)

    def broadcast_to(self, shape):
        old = self.shape

        def backward(g):
            self._accum(_unbroadcast(g, old))

        return Tensor._make(np.broadcast_to(self.data, shape), (self,), backward)

    def __getitem__(self, key):
        def backward(g):
            if self.grad is None:
                self.grad = np.zeros_like(self.data)
            np.add.at(self.grad, key, g)

        return Tensor._make(self.data[key], (self,), backward)

    def transpose(self, *axes):
        axes = axes or None
        inv = np.argsort(axes) if axes else None

        def backward(g):
            self._accum(g.transpose(inv) if inv is not None else g.transpose())

        return Tensor._make(self.data.transpose(axes), (self,), backward)

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        def backward(g):
            if axis is None:
                self._accum(np.broadcast_to(g, self.shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                self._accum(np.broadcast_to(gg, self.shape).copy())

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims=False):
        n = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    def max(self, axis):
        """Reduce-max along `axis`; ties route gradient to the lowest index."""
        idx = np.argmax(self.data, axis=axis)  # argmax picks the first maximum
        out_data = np.take_along_axis(self.data, np.expand_dims(idx, axis), axis).squeeze(axis)

        def backward(g):
            if self.grad is None:
                self.grad = np.zeros_like(self.data)
            gexp = np.zeros_like(self.data)
            np.put_along_axis(gexp, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
            self.grad += gexp

        return Tensor._make(out_data, (self,), backward)

    def norm_l1(self):
        return self.abs().sum()

    def norm_l2(self):
        return (self * self).sum().sqrt()

    def softmax(self, axis):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out_data = e / e.sum(axis=axis, keepdims=True)

        def backward(g):
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            self._accum(out_data * (g - dot))

        return Tensor._make(out_data, (self,), backward)

    # -- linear algebra -----------------------------------------------------

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.data.ndim == 1:  # vector @ matrix
            return (self.reshape(1, -1) @ other).reshape(-1)
        if other.data.ndim == 1:  # matrix @ vector
            return (self @ other.reshape(-1, 1)).reshape(self.shape[:-1])
        if self.shape[-1] != other.shape[-2]:
            raise ShapeMismatch(self.shape, other.shape, "matmul operands")
        out_data = self.data @ other.data

        def backward(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g @ np.swapaxes(other.data, -1, -2), self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(np.swapaxes(self.data, -1, -2) @ g, other.shape))

        return Tensor._make(out_data, (self, other), backward)

    # -- gather / scatter ---------------------------------------------------

    def gather(self, indices):
        """Take rows along axis 0; indices may be any integer-array shape."""
        indices = np.asarray(indices)

        def backward(g):
            if self.grad is None:
                self.grad = np.zeros_like(self.data)
            np.add.at(self.grad, indices, g)

        return Tensor._make(self.data[indices], (self,), backward)

    def scatter_add(self, indices, out_len: int):
        """Rows summed into a (out_len, ...) tensor at `indices` (axis 0).

        `indices` may be any integer-array shape; it addresses the leading
        axes of this tensor and the remaining axes carry over to the output.
        """
        indices = np.asarray(indices)
        if indices.shape != self.shape[: indices.ndim]:
            raise ShapeMismatch(indices.shape, self.shape, "scatter_add indices")
        out_data = np.zeros((out_len,) + self.shape[indices.ndim:], dtype=DTYPE)
        np.add.at(out_data, indices, self.data)

        def backward(g):
            self._accum(g[indices])

        return Tensor._make(out_data, (self,), backward)

    # -- backward -----------------------------------------------------------

    def backward(self):
        if self.size != 1:
            raise NotScalar(f"backward needs a scalar, got shape {self.shape}")
        if self._spent:
            raise GraphConsumed("this graph was already traversed")
        topo, visited = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad if node.grad is not None else np.zeros_like(node.data))
            node._spent = True
            node._parents = ()
            node._backward = None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accum(piece)

    return Tensor._make(out_data, tuple(tensors), backward)


def stack(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accum(np.take(g, i, axis=axis))

    return Tensor._make(out_data, tuple(tensors), backward)


def conv2d_3x3(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """3x3 'same' convolution on an (H, W, Cin) tensor; w is (3, 3, Cin, Cout)."""
    H, W, Cin = x.shape
    if w.shape[:3] != (3, 3, Cin):
        raise ShapeMismatch(w.shape, (3, 3, Cin, -1), "conv weight")
    Cout = w.shape[3]
    xp = np.pad(x.data, ((1, 1), (1, 1), (0, 0)))
    cols = np.empty((H, W, 3, 3, Cin), dtype=DTYPE)
    for i in range(3):
        for j in range(3):
            cols[:, :, i, j, :] = xp[i : i + H, j : j + W, :]
    out_data = cols.reshape(H * W, 9 * Cin) @ w.data.reshape(9 * Cin, Cout)
    out_data = out_data.reshape(H, W, Cout) + b.data

    def backward(g):
        gm = g.reshape(H * W, Cout)
        if w.requires_grad:
            w._accum((cols.reshape(H * W, 9 * Cin).T @ gm).reshape(3, 3, Cin, Cout))
        if b.requires_grad:
            b._accum(gm.sum(axis=0))
        if x.requires_grad:
            gcols = (gm @ w.data.reshape(9 * Cin, Cout).T).reshape(H, W, 3, 3, Cin)
            gxp = np.zeros_like(xp)
            for i in range(3):
                for j in range(3):
                    gxp[i : i + H, j : j + W, :] += gcols[:, :, i, j, :]
            x._accum(gxp[1 : 1 + H, 1 : 1 + W, :])

    return Tensor._make(out_data, (x, w, b), backward)


def maxpool2d(x: Tensor, stride: tuple) -> Tensor:
    """Non-overlapping max pool with kernel == stride on (H, W, C)."""
    sh, sw = stride
    if sh == 1 and sw == 1:
        return x
    H, W, C = x.shape
    if H % sh or W % sw:
        raise ShapeMismatch((H, W), (sh, sw), "pool stride must divide spatial dims")
    Ho, Wo = H // sh, W // sw
    blocks = x.data.reshape(Ho, sh, Wo, sw, C).transpose(0, 2, 1, 3, 4).reshape(Ho, Wo, sh * sw, C)
    idx = np.argmax(blocks, axis=2)
    out_data = np.take_along_axis(blocks, idx[:, :, None, :], axis=2).squeeze(2)

    def backward(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, idx[:, :, None, :], g[:, :, None, :], axis=2)
        gx = gb.reshape(Ho, Wo, sh, sw, C).transpose(0, 2, 1, 3, 4).reshape(H, W, C)
        x._accum(gx)

    return Tensor._make(out_data, (x,), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: scales kept units by 1/(1-p) at train time."""
    mask = (rng.random(x.shape) >= p) / (1.0 - p)

    def backward(g):
        x._accum(g * mask)

    return Tensor._make(x.data * mask, (x,), backward)
