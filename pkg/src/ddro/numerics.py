"""Minimal reverse-mode autodiff over numpy arrays, plus seeded randomness.

The differentiable primitive set is deliberately closed and small: affine
maps, tanh, squared norms, sums/means, sigmoid, log, and max-with-constant.
Every training loss in this package is expressed in these primitives, which
keeps the gradient engine fully checkable against central finite differences.

Randomness uses numpy's Philox bit generator (counter-based), so identical
seeds produce bit-identical streams across platforms.
"""

from __future__ import annotations

import numpy as np


class NumericOverflowError(ArithmeticError):
    """A primitive produced a non-finite value; carries the primitive name."""

    def __init__(self, op: str):
        super().__init__(f"non-finite value produced by primitive '{op}'")
        self.op = op


def _check_finite(value, op: str):
    if not np.all(np.isfinite(value)):
        raise NumericOverflowError(op)


class Var:
    """A node in the reverse-mode tape.

    ``value`` is a numpy array or python float. ``parents`` are the input
    Vars and ``_backward`` accumulates the adjoint into them.
    """

    __slots__ = ("value", "parents", "_backward", "grad", "op")

    def __init__(self, value, parents=(), backward=None, op="leaf"):
        self.value = value
        self.parents = parents
        self._backward = backward
        self.grad = None
        self.op = op
        if op != "leaf":
            _check_finite(value, op)

    def __repr__(self):
        return f"Var(op={self.op}, value={self.value!r})"


def is_var(x) -> bool:
    return isinstance(x, Var)


def value_of(x):
    """Unwrap a Var (or return a plain array/float unchanged)."""
    return x.value if isinstance(x, Var) else x


def _accum(node: Var, g):
    if node.grad is None:
        node.grad = np.array(g, dtype=float) if np.ndim(g) else float(g)
    else:
        node.grad = node.grad + g


# ---------------------------------------------------------------------------
# Primitives. Each accepts Var or plain numpy/float inputs and returns a Var
# only when at least one input is a Var, so the same forward code serves both
# the fast evaluation path and the traced gradient path.
# ---------------------------------------------------------------------------


def add(a, b):
    if not (is_var(a) or is_var(b)):
        return np.add(a, b)
    av, bv = value_of(a), value_of(b)
    out = Var(av + bv, (a, b), None, "add")

    def backward(g):
        if is_var(a):
            _accum(a, g)
        if is_var(b):
            _accum(b, g)

    out._backward = backward
    return out


def sub(a, b):
    if not (is_var(a) or is_var(b)):
        return np.subtract(a, b)
    av, bv = value_of(a), value_of(b)
    out = Var(av - bv, (a, b), None, "sub")

    def backward(g):
        if is_var(a):
            _accum(a, g)
        if is_var(b):
            _accum(b, -g)

    out._backward = backward
    return out


def mul(a, b):
    """Elementwise (or scalar) product."""
    if not (is_var(a) or is_var(b)):
        return np.multiply(a, b)
    av, bv = value_of(a), value_of(b)
    out = Var(av * bv, (a, b), None, "mul")

    def backward(g):
        if is_var(a):
            ga = g * bv
            _accum(a, np.sum(ga) if np.ndim(av) == 0 else ga)
        if is_var(b):
            gb = g * av
            _accum(b, np.sum(gb) if np.ndim(bv) == 0 else gb)

    out._backward = backward
    return out


def scale(c: float, a):
    """Product with a python constant; never differentiates through ``c``."""
    if not is_var(a):
        return c * a
    out = Var(c * a.value, (a,), None, "scale")

    def backward(g):
        _accum(a, c * g)

    out._backward = backward
    return out


def matvec(w, x):
    """Matrix-vector product ``w @ x``."""
    if not (is_var(w) or is_var(x)):
        return w @ x
    wv, xv = value_of(w), value_of(x)
    out = Var(wv @ xv, (w, x), None, "matvec")

    def backward(g):
        if is_var(w):
            _accum(w, np.outer(g, xv))
        if is_var(x):
            _accum(x, wv.T @ g)

    out._backward = backward
    return out


def tanh(a):
    if not is_var(a):
        return np.tanh(a)
    tv = np.tanh(a.value)
    out = Var(tv, (a,), None, "tanh")

    def backward(g):
        _accum(a, g * (1.0 - tv * tv))

    out._backward = backward
    return out


def sigmoid(a):
    def _sig(x):
        return np.where(x >= 0, 1.0 / (1.0 + np.exp(-x)), np.exp(x) / (1.0 + np.exp(x)))

    if not is_var(a):
        return _sig(np.asarray(a, dtype=float)) if np.ndim(a) else float(_sig(np.float64(a)))
    sv = _sig(np.asarray(a.value, dtype=float)) if np.ndim(a.value) else float(_sig(np.float64(a.value)))
    out = Var(sv, (a,), None, "sigmoid")

    def backward(g):
        _accum(a, g * sv * (1.0 - sv))

    out._backward = backward
    return out


def log(a):
    with np.errstate(invalid="ignore", divide="ignore"):
        if not is_var(a):
            return np.log(a)
        out = Var(np.log(a.value), (a,), None, "log")

    def backward(g):
        _accum(a, g / a.value)

    out._backward = backward
    return out


def ssum(a):
    """Sum of all entries, returning a scalar."""
    if not is_var(a):
        return float(np.sum(a))
    out = Var(float(np.sum(a.value)), (a,), None, "sum")

    def backward(g):
        _accum(a, g * np.ones_like(a.value))

    out._backward = backward
    return out


def sq_norm(a):
    """Squared Euclidean norm of a vector (or abs-square of a scalar)."""
    if not is_var(a):
        av = np.asarray(a, dtype=float)
        return float(np.dot(av.ravel(), av.ravel()))
    av = np.asarray(a.value, dtype=float)
    out = Var(float(np.dot(av.ravel(), av.ravel())), (a,), None, "sq_norm")

    def backward(g):
        _accum(a, (2.0 * g) * av)

    out._backward = backward
    return out


def maximum_const(m: float, a):
    """max(m, a) for scalar ``a`` and constant ``m``.

    Subgradient convention: ties at ``a == m`` take the non-constant branch,
    so the gradient keeps flowing exactly at the clip boundary.
    """
    if not is_var(a):
        return max(float(m), float(a))
    active = float(a.value) >= float(m)
    out = Var(max(float(m), float(a.value)), (a,), None, "maximum_const")

    def backward(g):
        _accum(a, g if active else 0.0)

    out._backward = backward
    return out


def concat(parts):
    """Concatenate 1-D vectors."""
    if not any(is_var(p) for p in parts):
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])
    values = [np.asarray(value_of(p), dtype=float) for p in parts]
    out = Var(np.concatenate(values), tuple(p for p in parts if is_var(p)), None, "concat")
    sizes = [v.size for v in values]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if is_var(p):
                _accum(p, g[lo:hi])

    out._backward = backward
    return out


def row(table, i: int):
    """Row lookup ``table[i]``; the backward pass scatters into that row."""
    if not is_var(table):
        return table[i]
    out = Var(table.value[i], (table,), None, "row")

    def backward(g):
        full = np.zeros_like(table.value)
        full[i] = g
        _accum(table, full)

    out._backward = backward
    return out


def mean_of(items):
    """Mean of a list of scalars (Vars or floats)."""
    if not items:
        raise ValueError("mean_of: empty list")
    total = items[0]
    for item in items[1:]:
        total = add(total, item)
    return scale(1.0 / len(items), total)


# ---------------------------------------------------------------------------
# Gradient driver
# ---------------------------------------------------------------------------


def _topo_order(root: Var):
    order, seen, stack = [], set(), [(root, False)]
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
            if is_var(parent) and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Var):
    """Accumulate gradients of a scalar ``root`` into every reachable leaf."""
    if np.ndim(root.value) != 0:
        raise ValueError("backward expects a scalar loss")
    root.grad = 1.0
    for node in reversed(_topo_order(root)):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def grad(loss_fn, params: dict):
    """Evaluate ``loss_fn`` on Var-wrapped ``params`` and backpropagate.

    ``params`` maps names to numpy arrays; ``loss_fn`` receives a dict with
    the same keys whose leaves are Vars and must return a scalar. Returns
    the loss value and a dict of gradients shape-congruent with ``params``.
    """
    wrapped = {k: Var(np.asarray(v, dtype=float)) for k, v in params.items()}
    loss = loss_fn(wrapped)
    if not is_var(loss):
        # Loss did not touch any parameter: gradient is identically zero.
        return float(loss), {k: np.zeros_like(np.asarray(v, dtype=float)) for k, v in params.items()}
    backward(loss)
    grads = {}
    for k, v in wrapped.items():
        grads[k] = v.grad if v.grad is not None else np.zeros_like(v.value)
    return float(loss.value), grads


def grad_check(loss_fn, params: dict, step: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central finite differences."""
    if step <= 0:
        raise ValueError("step must be positive")
    _, analytic = grad(loss_fn, params)

    def eval_loss(p):
        out = loss_fn({k: Var(v) for k, v in p.items()})
        return float(value_of(out))

    worst = 0.0
    for key, arr in params.items():
        arr = np.asarray(arr, dtype=float)
        flat = arr.ravel()
        g_flat = np.asarray(analytic[key], dtype=float).ravel()
        for i in range(flat.size):
            bump = np.array(arr, copy=True)
            bump.ravel()[i] = flat[i] + step
            hi = eval_loss({**params, key: bump})
            bump.ravel()[i] = flat[i] - step
            lo = eval_loss({**params, key: bump})
            fd = (hi - lo) / (2.0 * step)
            denom = max(1.0, abs(g_flat[i]), abs(fd))
            worst = max(worst, abs(g_flat[i] - fd) / denom)
    return worst


# ---------------------------------------------------------------------------
# Seeded randomness
# ---------------------------------------------------------------------------


def make_rng(seed: int) -> np.random.Generator:
    """Philox-backed generator: counter-based and reproducible per seed."""
    return np.random.Generator(np.random.Philox(seed))


def seeded_gaussian(seed: int, shape) -> np.ndarray:
    """Standard-normal draw; same (seed, shape) gives bit-identical output."""
    return make_rng(seed).standard_normal(shape)


def spawn_seed(rng: np.random.Generator) -> int:
    """Draw a fresh child seed from a parent generator."""
    return int(rng.integers(0, 2**63 - 1))
