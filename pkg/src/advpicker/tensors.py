"""Dense 1-D/2-D float64 tensors with reverse-mode gradient accumulation.

Every forward op records a closure that maps the output gradient to
gradient contributions for its inputs; ``backward`` walks the recorded
graph in reverse topological order and accumulates into the ``grad``
slot of every reachable tensor with ``requires_grad``. The graph is
rebuilt on each forward pass, so alternating objectives can share
parameters without state leaking between steps.

Also home to ``ParamStore`` (named parameter groups with a seeded
initializer and an exact-round-trip checkpoint format) and the
decoupled-weight-decay Adam step used by all training loops.
"""

from __future__ import annotations

from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import MissingGrad, NonScalarLoss, ShapeError

_BCE_EPS = 1e-12
_LOG_FLOOR = 1e-300


class Tensor:
    """A dense float64 array plus an optional same-shape gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim > 2:
            raise ShapeError(f"tensors are scalar, 1-D or 2-D; got shape {self.data.shape}")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], list[tuple["Tensor", np.ndarray]]] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def _tracked(self) -> bool:
        return self.requires_grad or bool(self._parents)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _result(value: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(value)
    if any(p._tracked() for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: {a.data.shape} @ {b.data.shape}")

    def backward(g):
        return [(a, g @ b.data.T), (b, a.data.T @ g)]

    return _result(a.data @ b.data, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: {a.data.shape} vs {b.data.shape}")

    def backward(g):
        return [(a, g), (b, g)]

    return _result(a.data + b.data, (a, b), backward)


def add_bias(m: Tensor, bias: Tensor) -> Tensor:
    """Add a length-k bias row to every row of an (n, k) matrix."""
    if m.data.ndim != 2 or bias.data.ndim != 1 or m.data.shape[1] != bias.data.shape[0]:
        raise ShapeError(f"add_bias: {m.data.shape} + {bias.data.shape}")

    def backward(g):
        return [(m, g), (bias, g.sum(axis=0))]

    return _result(m.data + bias.data, (m, bias), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0

    def backward(g):
        return [(x, g * mask)]

    return _result(np.where(mask, x.data, 0.0), (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        return [(x, g * s * (1.0 - s))]

    return _result(s, (x,), backward)


def softmax(m: Tensor) -> Tensor:
    """Row-wise softmax of an (n, k) matrix; rows sum to 1."""
    if m.data.ndim != 2:
        raise ShapeError(f"softmax expects a 2-D tensor, got {m.data.shape}")
    z = m.data - m.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        return [(m, s * (g - dot))]

    return _result(s, (m,), backward)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        return [(x, g * c)]

    return _result(x.data * c, (x,), backward)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack (n_i, k) matrices vertically into a (sum n_i, k) matrix."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_rows of zero tensors")
    cols = {p.data.shape[1] if p.data.ndim == 2 else None for p in parts}
    if None in cols or len(cols) != 1:
        raise ShapeError(f"concat_rows: shapes {[p.data.shape for p in parts]}")
    offsets = np.cumsum([0] + [p.data.shape[0] for p in parts])

    def backward(g):
        return [(p, g[offsets[i]:offsets[i + 1]]) for i, p in enumerate(parts)]

    return _result(np.concatenate([p.data for p in parts], axis=0), parts, backward)


def embed(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows ``ids`` of an embedding table; grads scatter-add back."""
    ids = np.asarray(ids, dtype=np.intp)
    if table.data.ndim != 2 or ids.ndim != 1:
        raise ShapeError(f"embed: table {table.data.shape}, ids {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError(f"embed: id out of range for table of {table.data.shape[0]} rows")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return [(table, gt)]

    return _result(table.data[ids], (table,), backward)


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Squared error summed per row, averaged over rows (scalar).

    For a 1-D tensor each element counts as its own row, so this is the
    plain mean squared error.
    """
    if a.data.shape != b.data.shape or a.data.ndim < 1:
        raise ShapeError(f"mse: {a.data.shape} vs {b.data.shape}")
    n = a.data.shape[0]
    diff = a.data - b.data

    def backward(g):
        ga = (2.0 / n) * diff * g
        return [(a, ga), (b, -ga)]

    return _result(np.asarray((diff * diff).sum() / n), (a, b), backward)


def nll(p: Tensor, classes: np.ndarray) -> Tensor:
    """Mean negative log-probability of the indexed class per row (scalar)."""
    classes = np.asarray(classes, dtype=np.intp)
    if p.data.ndim != 2 or classes.ndim != 1 or classes.shape[0] != p.data.shape[0]:
        raise ShapeError(f"nll: probs {p.data.shape}, classes {classes.shape}")
    n = p.data.shape[0]
    rows = np.arange(n)
    picked = np.maximum(p.data[rows, classes], _LOG_FLOOR)

    def backward(g):
        gp = np.zeros_like(p.data)
        gp[rows, classes] = -g / (n * picked)
        return [(p, gp)]

    return _result(np.asarray(-np.log(picked).sum() / n), (p,), backward)


def bce(p: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of probabilities ``p`` toward 0/1 targets."""
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != p.data.shape:
        y = y.reshape(p.data.shape)  # tolerate (n,) targets for (n, 1) probs
    n = p.data.size
    q = np.clip(p.data, _BCE_EPS, 1.0 - _BCE_EPS)

    def backward(g):
        return [(p, g * (q - y) / (q * (1.0 - q) * n))]

    value = -(y * np.log(q) + (1.0 - y) * np.log(1.0 - q)).sum() / n
    return _result(np.asarray(value), (p,), backward)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` of every reachable requires-grad tensor with d(loss)/d(tensor).

    Gradients accumulate: calling backward on two losses equals one call
    on their sum. Tensors the loss does not depend on are untouched.
    """
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss has shape {loss.data.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and parent._tracked():
                stack.append((parent, False))

    flowing: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = flowing.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
        if node._backward is None:
            continue
        for parent, pg in node._backward(g):
            if not parent._tracked():
                continue
            key = id(parent)
            if key in flowing:
                flowing[key] = flowing[key] + pg
            else:
                flowing[key] = pg


class ParamStore:
    """Named parameter tensors grouped by component.

    Weights initialize uniform(-0.1, 0.1) from a seeded generator, biases
    to zero; all parameters carry ``requires_grad``. Optimizer moments are
    kept per (component-filter, parameter) so that objectives updating
    overlapping parameter sets do not share momentum.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._rng = np.random.default_rng(self.seed)
        self._groups: dict[str, dict[str, Tensor]] = {}
        self._moments: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}

    def add_weight(self, component: str, name: str, shape: tuple[int, ...]) -> Tensor:
        return self._add(component, name, self._rng.uniform(-0.1, 0.1, size=shape))

    def add_bias(self, component: str, name: str, length: int) -> Tensor:
        return self._add(component, name, np.zeros(length))

    def _add(self, component: str, name: str, data: np.ndarray) -> Tensor:
        group = self._groups.setdefault(component, {})
        if name in group:
            raise ValueError(f"duplicate parameter {component}/{name}")
        t = Tensor(data, requires_grad=True)
        group[name] = t
        return t

    def get(self, component: str, name: str) -> Tensor:
        return self._groups[component][name]

    def components(self) -> list[str]:
        return sorted(self._groups)

    def named(self, components: Iterable[str] | None = None) -> Iterator[tuple[str, str, Tensor]]:
        for component in sorted(components) if components is not None else self.components():
            for name in sorted(self._groups[component]):
                yield component, name, self._groups[component][name]

    def zero_grads(self, components: Iterable[str] | None = None) -> None:
        for _, _, t in self.named(components):
            t.grad = None

    def snapshot(self, components: Iterable[str] | None = None) -> dict[tuple[str, str], bytes]:
        """Raw parameter bytes, for purity assertions and cheap equality checks."""
        return {(c, n): t.data.tobytes() for c, n, t in self.named(components)}

    def export_arrays(self, components: Iterable[str] | None = None) -> dict[tuple[str, str], np.ndarray]:
        return {(c, n): t.data.copy() for c, n, t in self.named(components)}

    def import_arrays(self, arrays: dict[tuple[str, str], np.ndarray]) -> None:
        for (component, name), data in arrays.items():
            t = self._groups[component][name]
            if t.data.shape != data.shape:
                raise ShapeError(f"import {component}/{name}: {data.shape} into {t.data.shape}")
            t.data = data.copy()

    # Checkpoint container: versioned header plus row-major float64
    # payloads; round-trips bit-exactly.

    _MAGIC = b"APSTORE1\n"

    def save(self, path) -> None:
        entries = list(self.named())
        with open(path, "wb") as fh:
            fh.write(self._MAGIC)
            fh.write(f"seed {self.seed}\n".encode())
            fh.write(f"count {len(entries)}\n".encode())
            for component, name, t in entries:
                dims = " ".join(str(d) for d in t.data.shape)
                fh.write(f"tensor {component} {name} {t.data.ndim} {dims}".rstrip().encode() + b"\n")
                fh.write(np.ascontiguousarray(t.data).tobytes())

    @classmethod
    def load(cls, path) -> "ParamStore":
        with open(path, "rb") as fh:
            if fh.readline() != cls._MAGIC:
                raise ValueError(f"{path}: not a parameter checkpoint")
            seed = int(fh.readline().split()[1])
            count = int(fh.readline().split()[1])
            store = cls(seed)
            for _ in range(count):
                fields = fh.readline().split()
                component, name = fields[1].decode(), fields[2].decode()
                ndim = int(fields[3])
                shape = tuple(int(d) for d in fields[4:4 + ndim])
                size = int(np.prod(shape)) if shape else 1
                data = np.frombuffer(fh.read(8 * size), dtype=np.float64).reshape(shape)
                store._add(component, name, data.copy())
        return store


def adamw_step(
    store: ParamStore,
    components: Iterable[str],
    lr: float,
    t: int,
    weight_decay: float = 0.01,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> None:
    """One decoupled-weight-decay Adam update over the filtered components.

    ``t`` is the 1-based step count for bias correction. Gradients of the
    filtered components are cleared afterwards; moments live per
    component-filter so disjoint objectives keep independent state.
    """
    if t < 1:
        raise ValueError(f"step count must be >= 1, got {t}")
    group_key = tuple(sorted(components))
    beta1, beta2 = betas
    for component, name, p in store.named(group_key):
        if p.grad is None:
            raise MissingGrad(f"{component}/{name} has no gradient")
        key = (group_key, component, name)
        m, v = store._moments.get(key, (np.zeros_like(p.data), np.zeros_like(p.data)))
        m = beta1 * m + (1.0 - beta1) * p.grad
        v = beta2 * v + (1.0 - beta2) * p.grad * p.grad
        store._moments[key] = (m, v)
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        p.data = p.data - lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p.data)
    store.zero_grads(group_key)
