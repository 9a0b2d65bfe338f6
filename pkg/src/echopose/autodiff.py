"""Minimal reverse-mode differentiation over numpy arrays.

A dynamic tape built from backward closures: each op returns a Tensor that
remembers its parents and how to push gradients to them. The op set is
exactly what the pose model needs (2D/1D convolution via im2col, dense
layers, activations, reductions) plus Adam and a finite-difference checker.
Training runs the graph in float32; grad_check runs the identical graph in
float64 by feeding float64 parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class Tensor:
    """Array node on the tape. Gradients accumulate (+=) into .grad."""

    __slots__ = ("data", "requires_grad", "grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad = None
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse sweep from a scalar output; frees the tape afterwards."""
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar output")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
        for node in topo:
            if node._backward is not None:  # interior node: free tape + grad
                node._backward = None
                node._parents = ()
                node.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _node(data, parents, backward) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _acc(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


# ---------------------------------------------------------------------------
# elementwise / arithmetic
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError("add: shape mismatch")
    return _node(a.data + b.data, (a, b), lambda g: (_acc(a, g), _acc(b, g)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError("sub: shape mismatch")
    return _node(a.data - b.data, (a, b), lambda g: (_acc(a, g), _acc(b, -g)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError("mul: shape mismatch")
    return _node(a.data * b.data, (a, b), lambda g: (_acc(a, g * b.data), _acc(b, g * a.data)))


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.data * c, (a,), lambda g: _acc(a, g * c))


def square(a: Tensor) -> Tensor:
    return _node(a.data * a.data, (a,), lambda g: _acc(a, 2.0 * g * a.data))


def sqrt(a: Tensor) -> Tensor:
    root = np.sqrt(a.data)

    def backward(g):
        _acc(a, g * 0.5 / np.maximum(root, np.finfo(root.dtype).tiny))

    return _node(root, (a,), backward)


def log_clamped(a: Tensor, floor: float = 1e-12) -> Tensor:
    """log(max(a, floor)); gradient is 1/max(a, floor)."""
    clamped = np.maximum(a.data, floor)
    return _node(np.log(clamped), (a,), lambda g: _acc(a, g / clamped))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0), (a,), lambda g: _acc(a, g * mask))


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    mask = a.data > 0
    out = np.where(mask, a.data, slope * a.data)
    return _node(out, (a,), lambda g: _acc(a, g * np.where(mask, 1.0, slope)))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = np.sum(g * y, axis=axis, keepdims=True)
        _acc(a, (g - dot) * y)

    return _node(y, (a,), backward)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return _node(a.data.reshape(shape), (a,), lambda g: _acc(a, g.reshape(old)))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _node(np.transpose(a.data, axes), (a,), lambda g: _acc(a, np.transpose(g, inv)))


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along `axis`."""
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _acc(a, full)

    return _node(a.data[idx], (a,), backward)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def sum_axis(a: Tensor, axis=None) -> Tensor:
    def backward(g):
        if axis is None:
            _acc(a, np.broadcast_to(g, a.data.shape).copy())
        else:
            _acc(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy())

    return _node(a.data.sum(axis=axis), (a,), backward)


def mean(a: Tensor, axis=None) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.data.shape[ax] for ax in np.atleast_1d(axis)])

    def backward(g):
        if axis is None:
            _acc(a, np.broadcast_to(g, a.data.shape) / count)
        else:
            _acc(a, np.broadcast_to(np.expand_dims(g, axis), a.data.shape) / count)

    return _node(a.data.mean(axis=axis), (a,), backward)


# Variance floor keeps the backward finite at zero spread while perturbing the
# std value by < 1e-7, far inside every stated tolerance.
STD_VAR_FLOOR = 1e-16


def std_reduce(a: Tensor, axis: int = -1) -> Tensor:
    """Population standard deviation along `axis`."""
    mu = a.data.mean(axis=axis, keepdims=True)
    centered = a.data - mu
    var = np.mean(centered**2, axis=axis)
    std = np.sqrt(var + STD_VAR_FLOOR)
    n = a.data.shape[axis]

    def backward(g):
        _acc(a, np.expand_dims(g / (n * std), axis) * centered)

    return _node(std, (a,), backward)


# ---------------------------------------------------------------------------
# dense / convolution kernels
# ---------------------------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x (N, D) @ weight (D, E) + bias (E,)."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.data.shape[1] != weight.data.shape[0]:
        raise ValueError("linear: shape mismatch")
    if bias.data.shape != (weight.data.shape[1],):
        raise ValueError("linear: bias shape mismatch")
    out = x.data @ weight.data + bias.data

    def backward(g):
        _acc(x, g @ weight.data.T)
        _acc(weight, x.data.T @ g)
        _acc(bias, g.sum(axis=0))

    return _node(out, (x, weight, bias), backward)


def _out_len(size: int, k: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - k
    if span < 0 or span % stride != 0:
        raise ValueError(f"non-integral output size: input {size}, kernel {k}, stride {stride}, pad {pad}")
    return span // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x (N,C,H,W) with weight (K,C,kh,kw) plus bias (K,)."""
    n, c, h, w = x.data.shape
    k, c2, kh, kw = weight.data.shape
    if c != c2:
        raise ValueError("conv2d: channel mismatch")
    if bias.data.shape != (k,):
        raise ValueError("conv2d: bias shape mismatch")
    oh = _out_len(h, kh, stride, padding)
    ow = _out_len(w, kw, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = view.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, oh * ow)
    wm = weight.data.reshape(k, c * kh * kw)
    out = (wm @ cols + bias.data.reshape(1, k, 1)).reshape(n, k, oh, ow)

    def backward(g):
        gm = g.reshape(n, k, oh * ow)
        _acc(bias, gm.sum(axis=(0, 2)))
        _acc(weight, np.tensordot(gm, cols, axes=([0, 2], [0, 2])).reshape(weight.data.shape))
        if x.requires_grad:
            dcols = (wm.T @ gm).reshape(n, c, kh, kw, oh, ow)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride] += dcols[:, :, i, j]
            _acc(x, dxp[:, :, padding : padding + h, padding : padding + w])

    return _node(out, (x, weight, bias), backward)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of x (N,C,L) with weight (K,C,kl) plus bias (K,)."""
    n, c, length = x.data.shape
    k, c2, kl = weight.data.shape
    if c != c2:
        raise ValueError("conv1d: channel mismatch")
    if bias.data.shape != (k,):
        raise ValueError("conv1d: bias shape mismatch")
    ol = _out_len(length, kl, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding)))
    view = np.lib.stride_tricks.sliding_window_view(xp, kl, axis=2)[:, :, ::stride]
    cols = view.transpose(0, 1, 3, 2).reshape(n, c * kl, ol)
    wm = weight.data.reshape(k, c * kl)
    out = wm @ cols + bias.data.reshape(1, k, 1)

    def backward(g):
        _acc(bias, g.sum(axis=(0, 2)))
        _acc(weight, np.tensordot(g, cols, axes=([0, 2], [0, 2])).reshape(weight.data.shape))
        if x.requires_grad:
            dcols = (wm.T @ g).reshape(n, c, kl, ol)
            dxp = np.zeros_like(xp)
            for i in range(kl):
                dxp[:, :, i : i + ol * stride : stride] += dcols[:, :, i]
            _acc(x, dxp[:, :, padding : padding + length])

    return _node(out, (x, weight, bias), backward)


def avgpool_last(a: Tensor, k: int = 2) -> Tensor:
    """Average-pool non-overlapping groups of `k` along the last axis."""
    shape = a.data.shape
    if shape[-1] % k != 0:
        raise ValueError("last axis not divisible by pool size")
    pooled = a.data.reshape(*shape[:-1], shape[-1] // k, k).mean(axis=-1)

    def backward(g):
        _acc(a, np.repeat(g, k, axis=-1) / k)

    return _node(pooled, (a,), backward)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Adam moments for a named parameter set."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params: dict[str, Tensor], lr: float) -> AdamState:
    state = AdamState(lr=lr)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adam_step(params: dict[str, Tensor], state: AdamState, grads: dict[str, np.ndarray] | None = None) -> None:
    """One Adam update with bias correction, in place. Missing grads count as zero."""
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = grads.get(name) if grads is not None else p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"adam_step: gradient shape mismatch for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= factor
    return norm


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


# ---------------------------------------------------------------------------
# verification harness
# ---------------------------------------------------------------------------


def grad_check(fn, params: dict[str, Tensor], h: float = 1e-5, limit: int = 10_000, seed: int = 0) -> float:
    """Max relative error between reverse-mode and central differences.

    `fn` maps the parameter dict to a scalar Tensor and is re-run per probe.
    Parameter sets above `limit` entries are probed on a seeded subsample.
    Relative error is measured against each entry's magnitude, floored at
    1e-3 of the largest analytic gradient entry so that entries sitting at
    the finite-difference noise floor do not register as disagreement. Run
    with float64 parameters.
    """
    zero_grads(params)
    fn(params).backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in params.items()}
    g_scale = max(1e-6, 1e-3 * max(float(np.max(np.abs(g))) for g in analytic.values()))
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        size = p.data.size
        idxs = np.arange(size) if size <= limit else rng.choice(size, size=limit, replace=False)
        flat = p.data.reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn(params).data)
            flat[i] = orig - h
            fm = float(fn(params).data)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = analytic[name].reshape(-1)[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), g_scale)
            worst = max(worst, rel)
    return worst
