"""Small reverse-mode differentiation engine over float64 numpy arrays.

A :class:`Graph` is an eager tape: every ``apply`` call computes its output
immediately and appends a node.  ``backward`` walks the tape in reverse.
Parameters are :class:`Tensor` objects that live outside any graph and are
registered per graph with :meth:`Graph.leaf`; their ``grad`` slot
accumulates across backward passes until ``zero_grad`` is called.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite value in tensor {name or ''}".rstrip())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the data."""
        return self.data.reshape(-1)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(name={self.name!r}, shape={self.shape})"


# ---------------------------------------------------------------------------
# op kernels: forward(values, attrs) -> array ; backward(g, values, out, attrs)
# -> tuple of input grads (None where no gradient flows)
# ---------------------------------------------------------------------------


def _shape_fail(kind, *arrays, why=""):
    shapes = ", ".join(str(a.shape) for a in arrays)
    raise ShapeError(f"{kind}: incompatible shapes {shapes}{': ' + why if why else ''}")


def _embed_fwd(vals, attrs):
    (table,) = vals
    idx = attrs["indices"]
    if table.ndim != 2:
        _shape_fail("embed_lookup", table, why="table must be 2-D")
    bad = idx[(idx < 0) | (idx >= table.shape[0])]
    if bad.size:
        raise IndexError(f"embed_lookup: index {int(bad[0])} outside vocabulary of size {table.shape[0]}")
    return table[idx]


def _embed_bwd(g, vals, out, attrs):
    grad = np.zeros_like(vals[0])
    np.add.at(grad, attrs["indices"], g)
    return (grad,)


def _linear_fwd(vals, attrs):
    x, w = vals[0], vals[1]
    if w.ndim != 2 or x.ndim not in (1, 2) or x.shape[-1] != w.shape[0]:
        _shape_fail("linear", *vals)
    out = x @ w
    if len(vals) == 3:
        if vals[2].shape != (w.shape[1],):
            _shape_fail("linear", *vals, why="bias must match output width")
        out = out + vals[2]
    return out


def _linear_bwd(g, vals, out, attrs):
    x, w = vals[0], vals[1]
    if x.ndim == 1:
        gw = np.outer(x, g)
    else:
        gw = x.T @ g
    grads = [g @ w.T, gw]
    if len(vals) == 3:
        grads.append(g if g.ndim == 1 else g.sum(axis=0))
    return tuple(grads)


def _matmul_fwd(vals, attrs):
    a, b = vals
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        _shape_fail("matmul", a, b)
    return a @ b


def _matmul_bwd(g, vals, out, attrs):
    a, b = vals
    if b.ndim == 1:
        return np.outer(g, b), a.T @ g
    return g @ b.T, a.T @ g


def _transpose_fwd(vals, attrs):
    (a,) = vals
    if a.ndim != 2:
        _shape_fail("transpose", a)
    return a.T.copy()


def _softmax_rows(s):
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def _attention_fwd(vals, attrs):
    x, wq, wk, wv, wo = vals
    d = x.shape[1] if x.ndim == 2 else -1
    if x.ndim != 2 or any(w.shape != (d, d) for w in (wq, wk, wv, wo)):
        _shape_fail("self_attention_1head", *vals)
    q, k, v = x @ wq, x @ wk, x @ wv
    a = _softmax_rows((q @ k.T) / np.sqrt(d))
    return (a @ v) @ wo


def _attention_bwd(g, vals, out, attrs):
    x, wq, wk, wv, wo = vals
    d = x.shape[1]
    scale = 1.0 / np.sqrt(d)
    q, k, v = x @ wq, x @ wk, x @ wv
    a = _softmax_rows((q @ k.T) * scale)
    z = a @ v
    gwo = z.T @ g
    gz = g @ wo.T
    ga = gz @ v.T
    gv = a.T @ gz
    gs = a * (ga - (ga * a).sum(axis=1, keepdims=True)) * scale
    gq = gs @ k
    gk = gs.T @ q
    gx = gq @ wq.T + gk @ wk.T + gv @ wv.T
    return gx, x.T @ gq, x.T @ gk, x.T @ gv, gwo


def _mean_fwd(vals, attrs):
    (x,) = vals
    if x.ndim not in (1, 2) or x.shape[0] == 0:
        _shape_fail("mean_pool", x)
    return x.mean(axis=0)


def _mean_bwd(g, vals, out, attrs):
    x = vals[0]
    return (np.broadcast_to(g / x.shape[0], x.shape).copy(),)


def _add_fwd(vals, attrs):
    a, b = vals
    if a.shape == b.shape or b.ndim == 0 or (a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]):
        return a + b
    _shape_fail("add", a, b)


def _add_bwd(g, vals, out, attrs):
    a, b = vals
    if b.shape == a.shape:
        gb = g
    elif b.ndim == 0:
        gb = np.asarray(g.sum())
    else:
        gb = g.sum(axis=0)
    return g, gb


def _dot_fwd(vals, attrs):
    a, b = vals
    if a.ndim != 1 or a.shape != b.shape:
        _shape_fail("dot", a, b)
    return np.asarray(a @ b)


def _stack_fwd(vals, attrs):
    first = vals[0].shape
    if len(first) > 1 or any(v.shape != first for v in vals):
        _shape_fail("stack", *vals)
    return np.stack(vals)


def _concat_rows_fwd(vals, attrs):
    width = vals[0].shape[1] if vals[0].ndim == 2 else -1
    if any(v.ndim != 2 or v.shape[1] != width for v in vals):
        _shape_fail("concat_rows", *vals)
    return np.concatenate(vals, axis=0)


def _concat_rows_bwd(g, vals, out, attrs):
    bounds = np.cumsum([v.shape[0] for v in vals])[:-1]
    return tuple(np.split(g, bounds, axis=0))


def _lexical_fwd(vals, attrs):
    (m,) = vals
    mask, seg, n_seg = attrs["mask"], attrs["segments"], attrs["n_segments"]
    if m.shape != mask.shape or m.ndim != 2 or seg.shape != (m.shape[1],):
        _shape_fail("lexical_match", m, mask, seg)
    out = np.zeros(n_seg)
    if attrs["mode"] == "all_pairs_sum":
        # per-column masked sums, then fold columns into their segment
        np.add.at(out, seg, np.where(mask, m, 0.0).sum(axis=0))
        return out
    for s in range(n_seg):
        cols = seg == s
        sub_mask = mask[:, cols]
        rows = sub_mask.any(axis=1)
        if rows.any():
            sub = np.where(sub_mask, m[:, cols], -np.inf)[rows]
            out[s] = sub.max(axis=1).sum()
    return out


def _lexical_bwd(g, vals, out, attrs):
    (m,) = vals
    mask, seg, n_seg = attrs["mask"], attrs["segments"], attrs["n_segments"]
    if attrs["mode"] == "all_pairs_sum":
        return (np.where(mask, g[seg][None, :], 0.0),)
    gm = np.zeros_like(m)
    for s in range(n_seg):
        cols = np.flatnonzero(seg == s)
        sub_mask = mask[:, cols]
        for r in np.flatnonzero(sub_mask.any(axis=1)):
            row = np.where(sub_mask[r], m[r, cols], -np.inf)
            gm[r, cols[int(np.argmax(row))]] += g[s]
    return (gm,)


def _xent_fwd(vals, attrs):
    (z,) = vals
    t = attrs["target"]
    if z.ndim != 1:
        _shape_fail("softmax_cross_entropy", z)
    if not 0 <= t < z.shape[0]:
        raise IndexError(f"softmax_cross_entropy: target {t} outside [0, {z.shape[0]})")
    zmax = z.max()
    return np.asarray(zmax + np.log(np.exp(z - zmax).sum()) - z[t])


def _xent_bwd(g, vals, out, attrs):
    p = softmax(vals[0])
    p[attrs["target"]] -= 1.0
    return (g * p,)


def _bce_fwd(vals, attrs):
    (z,) = vals
    y = attrs["multihot"]
    if z.ndim != 1 or y.shape != z.shape:
        _shape_fail("bce_with_logits", z, y)
    # max(z,0) - z*y + log(1 + exp(-|z|))
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return np.asarray(per.mean())


def _sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _bce_bwd(g, vals, out, attrs):
    z = vals[0]
    return (g * (_sigmoid(z) - attrs["multihot"]) / z.shape[0],)


@dataclass(frozen=True)
class _Op:
    forward: Callable
    backward: Callable
    arity: tuple[int, int]  # (min, max) inputs; max -1 = unbounded


OPS: dict[str, _Op] = {
    "embed_lookup": _Op(_embed_fwd, _embed_bwd, (1, 1)),
    "linear": _Op(_linear_fwd, _linear_bwd, (2, 3)),
    "matmul": _Op(_matmul_fwd, _matmul_bwd, (2, 2)),
    "transpose": _Op(_transpose_fwd, lambda g, v, o, a: (g.T.copy(),), (1, 1)),
    "self_attention_1head": _Op(_attention_fwd, _attention_bwd, (5, 5)),
    "mean_pool": _Op(_mean_fwd, _mean_bwd, (1, 1)),
    "tanh": _Op(lambda v, a: np.tanh(v[0]), lambda g, v, o, a: (g * (1.0 - o * o),), (1, 1)),
    # derivative taken as 0 at exactly 0
    "relu": _Op(lambda v, a: np.maximum(v[0], 0.0), lambda g, v, o, a: (g * (v[0] > 0),), (1, 1)),
    "add": _Op(_add_fwd, _add_bwd, (2, 2)),
    "scale": _Op(lambda v, a: v[0] * a["factor"], lambda g, v, o, a: (g * a["factor"],), (1, 1)),
    "dot": _Op(_dot_fwd, lambda g, v, o, a: (g * v[1], g * v[0]), (2, 2)),
    "stack": _Op(_stack_fwd, lambda g, v, o, a: tuple(g[i] for i in range(len(v))), (1, -1)),
    "concat_rows": _Op(_concat_rows_fwd, _concat_rows_bwd, (1, -1)),
    "lexical_match": _Op(_lexical_fwd, _lexical_bwd, (1, 1)),
    "softmax_cross_entropy": _Op(_xent_fwd, _xent_bwd, (1, 1)),
    "bce_with_logits": _Op(_bce_fwd, _bce_bwd, (1, 1)),
}


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


@dataclass
class Node:
    kind: str
    inputs: tuple[int, ...]
    tensor: Tensor
    attrs: dict = field(default_factory=dict)


class Graph:
    """Eager tape.  Node ids are positions in ``nodes``."""

    def __init__(self):
        self.nodes: list[Node] = []
        self._leaf_ids: dict[int, int] = {}

    def __len__(self):
        return len(self.nodes)

    def leaf(self, tensor: Tensor) -> int:
        key = id(tensor)
        if key in self._leaf_ids:
            return self._leaf_ids[key]
        self.nodes.append(Node("leaf", (), tensor))
        nid = len(self.nodes) - 1
        self._leaf_ids[key] = nid
        return nid

    def constant(self, data) -> int:
        return self.leaf(Tensor(data))

    def apply(self, kind: str, *inputs: int, **attrs) -> int:
        try:
            op = OPS[kind]
        except KeyError:
            raise ValueError(f"unknown op kind {kind!r}") from None
        lo, hi = op.arity
        if len(inputs) < lo or (hi >= 0 and len(inputs) > hi):
            raise ValueError(f"{kind}: expected {lo}..{hi if hi >= 0 else 'n'} inputs, got {len(inputs)}")
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise ValueError(f"{kind}: input id {i} is not a node of this graph")
        vals = [self.nodes[i].tensor.data for i in inputs]
        out = Tensor(op.forward(vals, attrs), name=kind)
        self.nodes.append(Node(kind, tuple(inputs), out, attrs))
        return len(self.nodes) - 1

    def value(self, nid: int) -> np.ndarray:
        return self.nodes[nid].tensor.data

    def params(self) -> list[Tensor]:
        return [n.tensor for n in self.nodes if n.kind == "leaf" and n.tensor.requires_grad]

    # convenience wrappers --------------------------------------------------
    def embed_lookup(self, table: int, indices) -> int:
        return self.apply("embed_lookup", table, indices=np.asarray(indices, dtype=np.int64))

    def linear(self, x: int, w: int, b: int | None = None) -> int:
        return self.apply("linear", x, w) if b is None else self.apply("linear", x, w, b)

    def matmul(self, a: int, b: int) -> int:
        return self.apply("matmul", a, b)

    def add(self, a: int, b: int) -> int:
        return self.apply("add", a, b)

    def scale(self, a: int, factor: float) -> int:
        return self.apply("scale", a, factor=float(factor))

    def dot(self, a: int, b: int) -> int:
        return self.apply("dot", a, b)

    def tanh(self, a: int) -> int:
        return self.apply("tanh", a)

    def relu(self, a: int) -> int:
        return self.apply("relu", a)

    def mean_pool(self, a: int) -> int:
        return self.apply("mean_pool", a)

    def stack(self, ids) -> int:
        return self.apply("stack", *ids)

    def concat_rows(self, ids) -> int:
        return self.apply("concat_rows", *ids)

    def lexical_match(self, m: int, mask, segments, n_segments: int, mode: str = "all_pairs_sum") -> int:
        if mode not in ("all_pairs_sum", "per_type_max"):
            raise ValueError(f"unknown lexical mode {mode!r}")
        return self.apply("lexical_match", m, mask=np.asarray(mask, dtype=bool),
                          segments=np.asarray(segments, dtype=np.int64), n_segments=int(n_segments), mode=mode)

    def transpose(self, a: int) -> int:
        return self.apply("transpose", a)

    def self_attention(self, x: int, wq: int, wk: int, wv: int, wo: int) -> int:
        return self.apply("self_attention_1head", x, wq, wk, wv, wo)

    def softmax_cross_entropy(self, logits: int, target: int) -> int:
        return self.apply("softmax_cross_entropy", logits, target=int(target))

    def bce_with_logits(self, logits: int, multihot) -> int:
        y = np.asarray(multihot, dtype=np.float64)
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("bce_with_logits: multihot entries must be 0 or 1")
        if y.shape != self.value(logits).shape:
            raise ShapeError(f"bce_with_logits: logits {self.value(logits).shape} vs multihot {y.shape}")
        return self.apply("bce_with_logits", logits, multihot=y)

    # ----------------------------------------------------------------------
    def replay(self) -> None:
        """Recompute every non-leaf value from the current leaf data."""
        for node in self.nodes:
            if node.kind == "leaf":
                continue
            vals = [self.nodes[i].tensor.data for i in node.inputs]
            node.tensor.data = np.asarray(OPS[node.kind].forward(vals, node.attrs), dtype=np.float64)

    def backward(self, root: int) -> dict[int, np.ndarray]:
        if self.value(root).size != 1:
            raise ShapeError(f"backward: root must be scalar, got shape {self.value(root).shape}")
        grads: dict[int, np.ndarray] = {root: np.ones_like(self.value(root))}
        for nid in range(root, -1, -1):
            g = grads.get(nid)
            if g is None:
                continue
            node = self.nodes[nid]
            if node.kind == "leaf":
                t = node.tensor
                if t.requires_grad:
                    t.grad = g.copy() if t.grad is None else t.grad + g
                continue
            vals = [self.nodes[i].tensor.data for i in node.inputs]
            in_grads = OPS[node.kind].backward(g, vals, node.tensor.data, node.attrs)
            for i, gi in zip(node.inputs, in_grads):
                if gi is None:
                    continue
                grads[i] = gi if i not in grads else grads[i] + gi
        return grads


class GradCheck(NamedTuple):
    max_rel_error: float
    n_checked: int
    n_excluded: int


def finite_difference_check(graph: Graph, root: int, epsilon: float = 1e-5) -> GradCheck:
    """Compare backward() against central differences for every learnable scalar.

    Scalars whose perturbation moves a relu input onto or across its kink are
    counted in ``n_excluded`` instead of being compared.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    params = graph.params()
    for p in params:
        p.zero_grad()
    graph.backward(root)
    analytic = {id(p): (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for p in params}

    relu_inputs = [n.inputs[0] for n in graph.nodes if n.kind == "relu"]
    base_signs = [np.sign(graph.value(i)) for i in relu_inputs]

    def kink_crossed():
        return any(
            np.any(s == 0) or np.any(np.sign(graph.value(i)) != s)
            for i, s in zip(relu_inputs, base_signs)
        )

    worst, checked, excluded = 0.0, 0, 0
    for p in params:
        flat = p.data.reshape(-1)
        ad = analytic[id(p)].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + epsilon
            graph.replay()
            up = float(graph.value(root))
            crossed = kink_crossed()
            flat[k] = orig - epsilon
            graph.replay()
            down = float(graph.value(root))
            crossed = crossed or kink_crossed()
            flat[k] = orig
            if crossed:
                excluded += 1
                continue
            fd = (up - down) / (2 * epsilon)
            err = abs(fd - ad[k]) / max(abs(fd), abs(ad[k]), 1e-8)
            worst = max(worst, err)
            checked += 1
    graph.replay()
    return GradCheck(worst, checked, excluded)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_MAGIC = b"SSCK"
_VERSION = 1


def save_checkpoint(path, params: dict[str, Tensor]) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC + struct.pack("<II", _VERSION, len(params)))
        for name, t in params.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<I", t.data.ndim) + struct.pack(f"<{t.data.ndim}I", *t.shape))
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos, out = 12, {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + n].decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).astype(np.float64).reshape(shape)
        pos += 8 * size
    return out
