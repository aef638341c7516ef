"""Two-layer graph attention Q-network with hand-written gradients and Adam.

Graphs are processed as one packed, disjoint union (:class:`GraphPack`).
Edges are directed ``src -> dst``; node ``i`` attends over its in-neighbours
plus itself. Attention logits use the standard GAT form
``LeakyReLU(a_q . W v_i + a_k . W v_j)`` and are softmax-normalised per
query node, per head.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse


class ShapeMismatch(ValueError):
    pass


class NonFiniteInput(FloatingPointError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


CHECKPOINT_FORMAT = "guirl-qnet/1"


# --------------------------------------------------------------------- graphs

class GraphPack:
    """Disjoint union of graphs with self loops, edges sorted by destination.

    Parameters
    ----------
    x : (N, d) array
        Stacked node features.
    src, dst : int arrays
        Directed edges of the union, without self loops.
    offsets : int array, optional
        Start row of each member graph (plus a final ``N``).
    """

    def __init__(self, x: np.ndarray, src: np.ndarray, dst: np.ndarray,
                 offsets: Optional[np.ndarray] = None, x_sparse=None):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ShapeMismatch(f"features must be 2-D, got shape {x.shape}")
        n = x.shape[0]
        src = np.asarray(src, dtype=np.int64).ravel()
        dst = np.asarray(dst, dtype=np.int64).ravel()
        if src.shape != dst.shape:
            raise ShapeMismatch("src and dst must have equal length")
        if src.size and (src.min() < 0 or dst.min() < 0 or src.max() >= n or dst.max() >= n):
            raise ShapeMismatch("edge index out of range")
        loops = np.arange(n, dtype=np.int64)
        src = np.concatenate([src, loops])
        dst = np.concatenate([dst, loops])
        order = np.lexsort((src, dst))
        self.x = x
        self.n = n
        self.src = src[order]
        self.dst = dst[order]
        self.dst_starts = np.searchsorted(self.dst, loops)
        self.src_order = np.argsort(self.src, kind="stable")
        self.src_starts = np.searchsorted(self.src[self.src_order], loops)
        self._x_sparse = x_sparse
        self.offsets = np.array([0, n]) if offsets is None else np.asarray(offsets, dtype=np.int64)

    @classmethod
    def from_graphs(cls, graphs: Sequence) -> "GraphPack":
        """Pack objects exposing ``x``, ``src``, ``dst`` (e.g. GraphFeatures)."""
        sizes = [g.x.shape[0] for g in graphs]
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        x = np.concatenate([g.x for g in graphs], axis=0)
        src = np.concatenate([g.src + o for g, o in zip(graphs, offsets)])
        dst = np.concatenate([g.dst + o for g, o in zip(graphs, offsets)])
        xs = None
        if all(hasattr(g, "x_sparse") for g in graphs):
            xs = sparse.vstack([g.x_sparse for g in graphs], format="csr")
        return cls(x, src, dst, offsets, xs)

    @property
    def x_sparse(self):
        """CSR view of the (mostly one-hot) input features."""
        if self._x_sparse is None:
            self._x_sparse = sparse.csr_matrix(self.x)
        return self._x_sparse

    def sum_by_dst(self, v: np.ndarray) -> np.ndarray:
        return np.add.reduceat(v, self.dst_starts, axis=0)

    def sum_by_src(self, v: np.ndarray) -> np.ndarray:
        return np.add.reduceat(v[self.src_order], self.src_starts, axis=0)


# ----------------------------------------------------------------- parameters

@dataclass
class Parameter:
    value: np.ndarray
    grad: np.ndarray = field(default=None)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0.0


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class GATLayer:
    """Multi-head graph attention layer without bias.

    ``weight`` has shape ``(in_dim, heads * out_dim)`` (head-major columns);
    ``attention`` has shape ``(heads, 2 * out_dim)``, query half first.
    With ``concat`` the heads are concatenated, otherwise averaged.
    """

    def __init__(self, in_dim: int, out_dim: int, heads: int = 1, concat: bool = True,
                 negative_slope: float = 0.2, rng: Optional[np.random.Generator] = None):
        if heads < 1:
            raise ValueError("heads must be >= 1")
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_dim, self.out_dim, self.heads = in_dim, out_dim, heads
        self.concat = concat
        self.negative_slope = negative_slope
        self.weight = Parameter(glorot(rng, (in_dim, heads * out_dim), in_dim, heads * out_dim))
        self.attention = Parameter(glorot(rng, (heads, 2 * out_dim), 2 * out_dim, 1))

    @property
    def output_dim(self) -> int:
        return self.heads * self.out_dim if self.concat else self.out_dim

    def parameters(self) -> dict[str, Parameter]:
        return {"weight": self.weight, "attention": self.attention}

    def forward(self, x: np.ndarray, g: GraphPack, return_cache: bool = False):
        if x.shape != (g.n, self.in_dim):
            raise ShapeMismatch(f"expected features of shape {(g.n, self.in_dim)}, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise NonFiniteInput("non-finite node features")
        H, F = self.heads, self.out_dim
        xw = g.x_sparse @ self.weight.value if x is g.x else x @ self.weight.value
        h = xw.reshape(g.n, H, F)
        a_q = self.attention.value[:, :F]
        a_k = self.attention.value[:, F:]
        s_q = np.einsum("nhf,hf->nh", h, a_q)
        s_k = np.einsum("nhf,hf->nh", h, a_k)
        s = s_q[g.dst] + s_k[g.src]                          # (E, H)
        e = np.where(s > 0, s, self.negative_slope * s)
        e_max = np.maximum.reduceat(e, g.dst_starts, axis=0)
        ex = np.exp(e - e_max[g.dst])
        alpha = ex / g.sum_by_dst(ex)[g.dst]                 # (E, H)
        out = g.sum_by_dst(alpha[:, :, None] * h[g.src])      # (n, H, F)
        y = out.reshape(g.n, H * F) if self.concat else out.mean(axis=1)
        if return_cache:
            return y, (x, h, s, alpha)
        return y

    def attention_weights(self, x: np.ndarray, g: GraphPack) -> np.ndarray:
        """Per-edge attention ``(E, heads)`` aligned with ``g.src``/``g.dst``."""
        return self.forward(x, g, return_cache=True)[1][3]

    def backward(self, dy: np.ndarray, g: GraphPack, cache) -> np.ndarray:
        """Accumulate parameter gradients; return the gradient w.r.t. ``x``.

        Returns None when ``x`` is the pack's own input features, which
        never need a gradient.
        """
        x, h, s, alpha = cache
        H, F = self.heads, self.out_dim
        dout = dy.reshape(g.n, H, F) if self.concat else np.repeat(dy[:, None, :] / H, H, axis=1)
        # out_i = sum_j alpha_ij h_j
        d_alpha = np.einsum("ehf,ehf->eh", dout[g.dst], h[g.src])
        dh = g.sum_by_src(alpha[:, :, None] * dout[g.dst])
        # softmax over each query's neighbourhood
        d_e = alpha * (d_alpha - g.sum_by_dst(alpha * d_alpha)[g.dst])
        d_s = d_e * np.where(s > 0, 1.0, self.negative_slope)
        a_q = self.attention.value[:, :F]
        a_k = self.attention.value[:, F:]
        self.attention.grad[:, :F] += np.einsum("eh,ehf->hf", d_s, h[g.dst])
        self.attention.grad[:, F:] += np.einsum("eh,ehf->hf", d_s, h[g.src])
        dh += g.sum_by_dst(d_s)[:, :, None] * a_q[None]
        dh += g.sum_by_src(d_s)[:, :, None] * a_k[None]
        dh = dh.reshape(g.n, H * F)
        if x is g.x:
            self.weight.grad += g.x_sparse.T @ dh
            return None
        self.weight.grad += x.T @ dh
        return dh @ self.weight.value.T


class QNetwork:
    """GAT(8 heads, concat) -> ReLU -> GAT(1 head); one output per action type.

    ``Q(s, a)`` for the action of type ``e`` on node ``i`` is entry ``[i, e]``
    of :meth:`forward`.
    """

    def __init__(self, in_dim: int, n_action_types: int = 1, hidden: int = 10, heads: int = 8,
                 negative_slope: float = 0.2, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.config = {"in_dim": in_dim, "n_action_types": n_action_types, "hidden": hidden,
                       "heads": heads, "negative_slope": negative_slope, "seed": seed}
        self.layer1 = GATLayer(in_dim, hidden, heads, concat=True, negative_slope=negative_slope, rng=rng)
        self.layer2 = GATLayer(heads * hidden, n_action_types, 1, concat=False,
                               negative_slope=negative_slope, rng=rng)

    @property
    def in_dim(self) -> int:
        return self.layer1.in_dim

    @property
    def n_action_types(self) -> int:
        return self.layer2.out_dim

    def parameters(self) -> dict[str, Parameter]:
        return {
            "layer1.weight": self.layer1.weight, "layer1.attention": self.layer1.attention,
            "layer2.weight": self.layer2.weight, "layer2.attention": self.layer2.attention,
        }

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    def forward(self, g: GraphPack, return_cache: bool = False):
        if g.x.shape[1] != self.in_dim:
            raise ShapeMismatch(f"network expects {self.in_dim} input channels, got {g.x.shape[1]}")
        z1, c1 = self.layer1.forward(g.x, g, return_cache=True)
        a1 = np.maximum(z1, 0.0)
        q, c2 = self.layer2.forward(a1, g, return_cache=True)
        if return_cache:
            return q, (z1, c1, c2)
        return q

    def backward(self, dq: np.ndarray, g: GraphPack, cache) -> None:
        z1, c1, c2 = cache
        da1 = self.layer2.backward(dq, g, c2)
        self.layer1.backward(da1 * (z1 > 0), g, c1)

    def copy(self) -> "QNetwork":
        return copy.deepcopy(self)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.value.ravel() for p in self.parameters().values()])

    def load_state(self, other: "QNetwork") -> None:
        for (name, p), q in zip(self.parameters().items(), other.parameters().values()):
            p.value[...] = q.value

    # ------------------------------------------------------------- checkpoint

    def save(self, path, vocab_fingerprint: str = "", extra: Optional[dict] = None) -> None:
        meta = {"format": CHECKPOINT_FORMAT, "config": self.config,
                "vocab_fingerprint": vocab_fingerprint, "extra": extra or {}}
        arrays = {name: p.value for name, p in self.parameters().items()}
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
                     **arrays)

    @classmethod
    def load(cls, path, vocab_fingerprint: Optional[str] = None) -> tuple["QNetwork", dict]:
        """Load a checkpoint; verifies the vocabulary fingerprint if given."""
        with np.load(path) as data:
            meta = json.loads(bytes(data["__meta__"]).decode("utf-8"))
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise ValueError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
            if vocab_fingerprint is not None and meta["vocab_fingerprint"] != vocab_fingerprint:
                raise ValueError(f"{path}: trained against vocabulary {meta['vocab_fingerprint']}, "
                                 f"got {vocab_fingerprint}")
            net = cls(**meta["config"])
            for name, p in net.parameters().items():
                if data[name].shape != p.value.shape:
                    raise ShapeMismatch(f"{name}: stored shape {data[name].shape} != {p.value.shape}")
                p.value[...] = data[name]
        return net, meta


# ----------------------------------------------------------------------- loss

def q_values(net: QNetwork, g: GraphPack) -> np.ndarray:
    return net.forward(g)


def loss_and_gradients(net: QNetwork, g: GraphPack, rows: np.ndarray, kinds: np.ndarray,
                       targets: np.ndarray) -> float:
    """Mean squared TD error over selected ``(row, kind)`` entries.

    Gradients are accumulated into ``net``'s parameters (call ``zero_grad``
    first if needed). ``rows`` index packed node rows.
    """
    rows = np.asarray(rows)
    kinds = np.asarray(kinds)
    targets = np.asarray(targets, dtype=np.float64)
    if not (rows.shape == kinds.shape == targets.shape) or rows.size == 0:
        raise ShapeMismatch("rows, kinds and targets must be non-empty and equally shaped")
    q, cache = net.forward(g, return_cache=True)
    pred = q[rows, kinds]
    diff = pred - targets
    loss = float(np.mean(diff ** 2))
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss is {loss}")
    dq = np.zeros_like(q)
    np.add.at(dq, (rows, kinds), 2.0 * diff / rows.size)
    net.backward(dq, g, cache)
    return loss


@dataclass
class Adam:
    """Adam with bias correction; gradients are zeroed after each step."""

    params: dict
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default=None)
    v: dict = field(default=None)

    def __post_init__(self):
        self.params = dict(self.params)
        if self.m is None:
            self.m = {k: np.zeros_like(p.value) for k, p in self.params.items()}
        if self.v is None:
            self.v = {k: np.zeros_like(p.value) for k, p in self.params.items()}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p.value -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            p.zero_grad()


def adam_step(state: Adam) -> None:
    state.step()


# --------------------------------------------------------------- verification

@dataclass
class GradientReport:
    max_rel_error: dict[str, float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(err < self.tolerance for err in self.max_rel_error.values())


def _rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gradient_check(net: QNetwork, g: GraphPack, rows, kinds, targets, step: float = 1e-5,
                   tolerance: float = 1e-4, coords_per_block: int = 64, seed: int = 0,
                   analytic: Optional[dict[str, np.ndarray]] = None,
                   floor: float = 1e-6) -> GradientReport:
    """Compare analytic gradients against central finite differences.

    The relative error is ``|a - n| / max(|a|, |n|, floor)``. Round-off in
    the difference quotient is about ``eps * |loss| / step`` (1e-11 for an
    O(1) loss), so gradients much smaller than ``floor`` cannot be resolved
    to ``tolerance`` and are compared on an absolute scale instead.
    ``analytic`` may supply pre-computed gradients (used to inject faults in
    tests); otherwise they are computed here.
    """
    rng = np.random.default_rng(seed)
    if analytic is None:
        net.zero_grad()
        loss_and_gradients(net, g, rows, kinds, targets)
        analytic = {k: p.grad.copy() for k, p in net.parameters().items()}
        net.zero_grad()
    rows, kinds, targets = np.asarray(rows), np.asarray(kinds), np.asarray(targets, dtype=np.float64)

    def loss_only():
        q = net.forward(g)
        return float(np.mean((q[rows, kinds] - targets) ** 2))

    errors = {}
    for name, p in net.parameters().items():
        flat = p.value.reshape(-1)
        size = flat.size
        idx = np.arange(size) if size <= coords_per_block else rng.choice(size, coords_per_block, replace=False)
        numeric = np.empty(len(idx))
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_only()
            flat[i] = orig - step
            down = loss_only()
            flat[i] = orig
            numeric[k] = (up - down) / (2 * step)
        ana = analytic[name].reshape(-1)[idx]
        err = _rel_error(ana, numeric, floor)
        errors[name] = float(err.max()) if err.size else 0.0
    return GradientReport(errors, tolerance)
