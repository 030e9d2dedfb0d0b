"""
Reverse-mode differentiation over dense float64 numpy tensors.

A ComputeGraph is an append-only list of nodes. Each primitive computes its
forward value eagerly, caches what its backward needs in a closure and
returns the new node id. Node ids double as the topological order, so the
backward pass is a single reverse sweep.

Activations are NCHW. Conv weights are (out, in, k, k); depthwise weights are
(C, 1, k, k).
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.autodiff.param_store import ParamStore
from src.utils.errors import NumericalError, ShapeError

logger = logging.getLogger(__name__)

BN_EPS = 1e-7

BackwardFn = Callable[[np.ndarray], Tuple[np.ndarray | None, ...]]


@dataclass
class Node:
    kind: str
    inputs: Tuple[int, ...]
    value: np.ndarray
    backward_fn: BackwardFn | None = None
    param_id: int | None = None
    # selection pattern of a piecewise op (relu mask, max-pool argmax)
    branch: np.ndarray | None = None


@dataclass
class ComputeGraph:
    nodes: List[Node] = field(default_factory=list)
    _param_nodes: Dict[int, int] = field(default_factory=dict)

    def record(self, kind: str, inputs: Sequence[int], value: np.ndarray,
               backward_fn: BackwardFn | None = None, param_id: int | None = None,
               branch: np.ndarray | None = None) -> int:
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise ValueError(f"{kind}: input node {i} does not precede its consumer")
        self.nodes.append(Node(kind, tuple(inputs), value, backward_fn, param_id, branch))
        return len(self.nodes) - 1

    def constant(self, value: np.ndarray) -> int:
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NumericalError("non-finite input tensor", {"shape": value.shape})
        return self.record("input", (), value)

    def param(self, store: ParamStore, pid: int) -> int:
        # One leaf per parameter so gradients accumulate in a single slot
        if pid not in self._param_nodes:
            self._param_nodes[pid] = self.record("param", (), store[pid], param_id=pid)
        return self._param_nodes[pid]

    def value(self, node_id: int) -> np.ndarray:
        return self.nodes[node_id].value

    def __len__(self) -> int:
        return len(self.nodes)

    def branches(self) -> List[np.ndarray]:
        """Selection patterns of every piecewise node, in node order."""
        return [n.branch for n in self.nodes if n.branch is not None]


def backward(graph: ComputeGraph, loss_node: int, store: ParamStore) -> Dict[int, np.ndarray]:
    """Gradient of a scalar node w.r.t. every parameter of the store."""
    loss = graph.value(loss_node)
    if loss.size != 1:
        raise ShapeError("backward", loss.shape, "loss node must be scalar")

    grads: List[np.ndarray | None] = [None] * len(graph.nodes)
    grads[loss_node] = np.ones_like(loss)
    param_grads: Dict[int, np.ndarray] = {}

    for i in range(loss_node, -1, -1):
        g = grads[i]
        if g is None:
            continue
        node = graph.nodes[i]
        if node.param_id is not None:
            # Copy: backward fns may hand the same array to several inputs
            param_grads[node.param_id] = np.array(g, dtype=np.float64)
            continue
        if node.backward_fn is None:
            continue
        for j, gj in zip(node.inputs, node.backward_fn(g)):
            if gj is None:
                continue
            grads[j] = gj if grads[j] is None else grads[j] + gj

    return {pid: param_grads[pid] if pid in param_grads else np.zeros_like(store[pid])
            for pid in store.ids()}


# ===== plumbing primitives =====

def identity(graph: ComputeGraph, x: int) -> int:
    return graph.record("identity", (x,), graph.value(x), lambda g: (g,))


def zero(graph: ComputeGraph, x: int, stride: int = 1) -> int:
    out = np.zeros_like(graph.value(x)[:, :, ::stride, ::stride])
    return graph.record("zero", (x,), out, lambda g: (None,))


def subsample(graph: ComputeGraph, x: int, stride: int = 2) -> int:
    xv = graph.value(x)
    out = np.ascontiguousarray(xv[:, :, ::stride, ::stride])

    def backward_fn(g):
        gx = np.zeros_like(xv)
        gx[:, :, ::stride, ::stride] = g
        return (gx,)

    return graph.record("subsample", (x,), out, backward_fn)


def spatial_shift(graph: ComputeGraph, x: int) -> int:
    """Drop the first row and column (second branch of factorized reduction)."""
    xv = graph.value(x)
    out = np.ascontiguousarray(xv[:, :, 1:, 1:])

    def backward_fn(g):
        gx = np.zeros_like(xv)
        gx[:, :, 1:, 1:] = g
        return (gx,)

    return graph.record("spatial_shift", (x,), out, backward_fn)


def relu(graph: ComputeGraph, x: int) -> int:
    xv = graph.value(x)
    mask = xv > 0
    return graph.record("relu", (x,), np.where(mask, xv, 0.0), lambda g: (g * mask,), branch=mask)


def batch_norm(graph: ComputeGraph, x: int) -> int:
    # Batch statistics only, no running averages, no affine
    xv = graph.value(x)
    if xv.ndim != 4:
        raise ShapeError("batch_norm", xv.shape, "expected NCHW")
    axes = (0, 2, 3)
    m = xv.shape[0] * xv.shape[2] * xv.shape[3]
    mean = xv.mean(axis=axes, keepdims=True)
    centered = xv - mean
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = centered * inv_std

    def backward_fn(g):
        sum_g = g.sum(axis=axes, keepdims=True)
        sum_gx = (g * xhat).sum(axis=axes, keepdims=True)
        return ((inv_std / m) * (m * g - sum_g - xhat * sum_gx),)

    return graph.record("batch_norm", (x,), xhat, backward_fn)


def _windows(xp: np.ndarray, k: int, stride: int, dilation: int) -> np.ndarray:
    span = dilation * (k - 1) + 1
    win = sliding_window_view(xp, (span, span), axis=(2, 3))
    return win[:, :, ::stride, ::stride, ::dilation, ::dilation]


def _scatter_windows(gcols: np.ndarray, padded_shape: Tuple[int, ...], k: int,
                     stride: int, dilation: int) -> np.ndarray:
    # Adjoint of _windows: accumulate (N, C, Ho, Wo, k, k) back onto the padded input
    gxp = np.zeros(padded_shape)
    ho, wo = gcols.shape[2], gcols.shape[3]
    for i in range(k):
        hi = i * dilation
        for j in range(k):
            wj = j * dilation
            gxp[:, :, hi:hi + stride * (ho - 1) + 1:stride, wj:wj + stride * (wo - 1) + 1:stride] += gcols[:, :, :, :, i, j]
    return gxp


def _pad(xv: np.ndarray, padding: int, value: float = 0.0) -> np.ndarray:
    if padding == 0:
        return xv
    return np.pad(xv, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=value)


def conv2d(graph: ComputeGraph, x: int, w: int, stride: int = 1, padding: int = 0,
           dilation: int = 1, depthwise: bool = False) -> int:
    xv, wv = graph.value(x), graph.value(w)
    kind = "depthwise_conv" if depthwise else "conv2d"
    if xv.ndim != 4 or wv.ndim != 4 or wv.shape[2] != wv.shape[3]:
        raise ShapeError(kind, (xv.shape, wv.shape), "expected NCHW input and square OIkk kernel")
    if stride not in (1, 2):
        raise ShapeError(kind, (stride,), "stride must be 1 or 2")
    n, c, h, wd = xv.shape
    k = wv.shape[2]
    if depthwise and wv.shape[:2] != (c, 1):
        raise ShapeError(kind, (xv.shape, wv.shape), "depthwise kernel must be (C, 1, k, k)")
    if not depthwise and wv.shape[1] != c:
        raise ShapeError(kind, (xv.shape, wv.shape), "input channels differ from kernel")
    if h + 2 * padding < dilation * (k - 1) + 1 or wd + 2 * padding < dilation * (k - 1) + 1:
        raise ShapeError(kind, (xv.shape, wv.shape), "kernel larger than padded input")

    xp = _pad(xv, padding)
    cols = _windows(xp, k, stride, dilation)
    if depthwise:
        wk = wv[:, 0]
        out = np.einsum("nchwij,cij->nchw", cols, wk)
    else:
        out = np.ascontiguousarray(np.tensordot(cols, wv, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2))

    def backward_fn(g):
        if depthwise:
            gw = np.einsum("nchw,nchwij->cij", g, cols)[:, None]
            gcols = np.einsum("nchw,cij->nchwij", g, wk)
        else:
            gw = np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))
            gcols = np.tensordot(g, wv, axes=([1], [0])).transpose(0, 3, 1, 2, 4, 5)
        gxp = _scatter_windows(gcols, xp.shape, k, stride, dilation)
        return gxp[:, :, padding:padding + h, padding:padding + wd], gw

    return graph.record(kind, (x, w), out, backward_fn)


def max_pool(graph: ComputeGraph, x: int, k: int = 3, stride: int = 1, padding: int = 1) -> int:
    xv = graph.value(x)
    if xv.ndim != 4:
        raise ShapeError("max_pool_3x3", xv.shape, "expected NCHW")
    n, c, h, wd = xv.shape
    xp = _pad(xv, padding, -np.inf)
    cols = _windows(xp, k, stride, 1)
    flat = cols.reshape(cols.shape[:4] + (k * k,))
    # argmax picks the first maximal index in scan order
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward_fn(g):
        gcols = np.zeros(cols.shape)
        for t in range(k * k):
            i, j = divmod(t, k)
            gcols[:, :, :, :, i, j] = np.where(idx == t, g, 0.0)
        gxp = _scatter_windows(gcols, xp.shape, k, stride, 1)
        return (gxp[:, :, padding:padding + h, padding:padding + wd],)

    return graph.record("max_pool_3x3", (x,), out, backward_fn, branch=idx)


def avg_pool(graph: ComputeGraph, x: int, k: int = 3, stride: int = 1, padding: int = 1) -> int:
    # Padding excluded from the divisor
    xv = graph.value(x)
    if xv.ndim != 4:
        raise ShapeError("avg_pool_3x3", xv.shape, "expected NCHW")
    n, c, h, wd = xv.shape
    xp = _pad(xv, padding)
    cols = _windows(xp, k, stride, 1)
    ones = _pad(np.ones((1, 1, h, wd)), padding)
    counts = _windows(ones, k, stride, 1).sum(axis=(-1, -2))
    out = cols.sum(axis=(-1, -2)) / counts

    def backward_fn(g):
        gs = g / counts
        gcols = np.broadcast_to(gs[..., None, None], cols.shape)
        gxp = _scatter_windows(gcols, xp.shape, k, stride, 1)
        return (gxp[:, :, padding:padding + h, padding:padding + wd],)

    return graph.record("avg_pool_3x3", (x,), out, backward_fn)


def global_avg_pool(graph: ComputeGraph, x: int) -> int:
    xv = graph.value(x)
    if xv.ndim != 4:
        raise ShapeError("global_avg_pool", xv.shape, "expected NCHW")
    hw = xv.shape[2] * xv.shape[3]

    def backward_fn(g):
        return (np.broadcast_to(g[:, :, None, None] / hw, xv.shape).copy(),)

    return graph.record("global_avg_pool", (x,), xv.mean(axis=(2, 3)), backward_fn)


def linear(graph: ComputeGraph, x: int, w: int, b: int) -> int:
    xv, wv, bv = graph.value(x), graph.value(w), graph.value(b)
    if xv.ndim != 2 or wv.ndim != 2 or wv.shape[1] != xv.shape[1] or bv.shape != (wv.shape[0],):
        raise ShapeError("linear", (xv.shape, wv.shape, bv.shape))

    def backward_fn(g):
        return g @ wv, g.T @ xv, g.sum(axis=0)

    return graph.record("linear", (x, w, b), xv @ wv.T + bv, backward_fn)


def softmax_cross_entropy(graph: ComputeGraph, logits: int, labels: np.ndarray) -> int:
    """Mean cross-entropy over the batch; labels are class indices."""
    z = graph.value(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ShapeError("softmax_cross_entropy", (z.shape, labels.shape))
    if labels.size and (labels.min() < 0 or labels.max() >= z.shape[1]):
        raise ShapeError("softmax_cross_entropy", (z.shape[1], int(labels.min()), int(labels.max())),
                         "label out of range")
    n = z.shape[0]
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_norm
    loss = -log_p[np.arange(n), labels].mean()
    if not np.isfinite(loss):
        raise NumericalError("non-finite cross-entropy", {"batch": n})

    def backward_fn(g):
        grad = np.exp(log_p)
        grad[np.arange(n), labels] -= 1.0
        return (grad * (g / n),)

    return graph.record("softmax_cross_entropy", (logits,), np.asarray(loss), backward_fn)


def softmax_vector(graph: ComputeGraph, v: int) -> int:
    vv = graph.value(v)
    if vv.ndim != 1:
        raise ShapeError("softmax_vector", vv.shape, "expected a vector")
    e = np.exp(vv - vv.max())
    p = e / e.sum()

    def backward_fn(g):
        return (p * (g - np.dot(g, p)),)

    return graph.record("softmax_vector", (v,), p, backward_fn)


def select_row(graph: ComputeGraph, m: int, row: int) -> int:
    mv = graph.value(m)

    def backward_fn(g):
        gm = np.zeros_like(mv)
        gm[row] = g
        return (gm,)

    return graph.record("select_row", (m,), mv[row].copy(), backward_fn)


def scalar_weighted_sum(graph: ComputeGraph, weights: int, xs: Sequence[int]) -> int:
    """sum_k weights[k] * xs[k] with a differentiable weight vector."""
    wv = graph.value(weights)
    values = [graph.value(x) for x in xs]
    if wv.shape != (len(xs),):
        raise ShapeError("scalar_weighted_sum", (wv.shape, len(xs)))
    shapes = {v.shape for v in values}
    if len(shapes) != 1:
        raise ShapeError("scalar_weighted_sum", tuple(v.shape for v in values), "candidate outputs differ")
    out = np.zeros_like(values[0])
    for p, v in zip(wv, values):
        out += p * v

    def backward_fn(g):
        gw = np.array([np.sum(g * v) for v in values])
        return (gw,) + tuple(p * g for p in wv)

    return graph.record("scalar_weighted_sum", (weights, *xs), out, backward_fn)


def add(graph: ComputeGraph, xs: Sequence[int]) -> int:
    values = [graph.value(x) for x in xs]
    if len({v.shape for v in values}) != 1:
        raise ShapeError("add", tuple(v.shape for v in values))
    out = values[0].copy()
    for v in values[1:]:
        out += v
    return graph.record("add", tuple(xs), out, lambda g: tuple(g for _ in xs))


def concat_channels(graph: ComputeGraph, xs: Sequence[int]) -> int:
    values = [graph.value(x) for x in xs]
    if len({(v.shape[0],) + v.shape[2:] for v in values}) != 1:
        raise ShapeError("concat_channels", tuple(v.shape for v in values))
    bounds = np.cumsum([0] + [v.shape[1] for v in values])

    def backward_fn(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(values)))

    return graph.record("concat_channels", tuple(xs), np.concatenate(values, axis=1), backward_fn)


def reduce_sum(graph: ComputeGraph, x: int, weights: np.ndarray | None = None) -> int:
    """Scalar sum(x * weights); a constant projection, used to build test losses."""
    xv = graph.value(x)
    proj = np.ones_like(xv) if weights is None else np.asarray(weights, dtype=np.float64)
    if proj.shape != xv.shape:
        raise ShapeError("reduce_sum", (xv.shape, proj.shape))
    return graph.record("reduce_sum", (x,), np.asarray(np.sum(xv * proj)), lambda g: (g * proj,))


# ===== composite kinds (built from the primitives above) =====

def sep_conv(graph: ComputeGraph, x: int, params: Sequence[int], k: int, stride: int) -> int:
    dw1, pw1, dw2, pw2 = params
    pad = k // 2
    y = relu(graph, x)
    y = conv2d(graph, y, dw1, stride=stride, padding=pad, depthwise=True)
    y = batch_norm(graph, conv2d(graph, y, pw1))
    y = relu(graph, y)
    y = conv2d(graph, y, dw2, stride=1, padding=pad, depthwise=True)
    return batch_norm(graph, conv2d(graph, y, pw2))


def dil_conv(graph: ComputeGraph, x: int, params: Sequence[int], k: int, stride: int) -> int:
    dw, pw = params
    y = relu(graph, x)
    y = conv2d(graph, y, dw, stride=stride, padding=k - 1, dilation=2, depthwise=True)
    return batch_norm(graph, conv2d(graph, y, pw))


def relu_conv_bn(graph: ComputeGraph, x: int, params: Sequence[int], stride: int = 1) -> int:
    (w,) = params
    pad = graph.value(w).shape[2] // 2
    return batch_norm(graph, conv2d(graph, relu(graph, x), w, stride=stride, padding=pad))


def factorized_reduce(graph: ComputeGraph, x: int, params: Sequence[int]) -> int:
    w1, w2 = params
    y = relu(graph, x)
    a = conv2d(graph, y, w1, stride=2)
    b = conv2d(graph, spatial_shift(graph, y), w2, stride=2)
    return batch_norm(graph, concat_channels(graph, [a, b]))


def stem(graph: ComputeGraph, x: int, params: Sequence[int]) -> int:
    (w,) = params
    return batch_norm(graph, conv2d(graph, x, w, stride=1, padding=1))


def primitive_forward(kind: str, inputs: Sequence[int], params: Sequence[int],
                      graph: ComputeGraph, stride: int = 1, labels: np.ndarray | None = None) -> int:
    """Dispatch a kind by name; returns the id of the output node."""
    x = inputs[0] if inputs else None
    if kind == "sep_conv_3x3":
        return sep_conv(graph, x, params, 3, stride)
    if kind == "sep_conv_5x5":
        return sep_conv(graph, x, params, 5, stride)
    if kind == "dil_conv_3x3":
        return dil_conv(graph, x, params, 3, stride)
    if kind == "dil_conv_5x5":
        return dil_conv(graph, x, params, 5, stride)
    if kind == "max_pool_3x3":
        return max_pool(graph, x, stride=stride)
    if kind == "avg_pool_3x3":
        return avg_pool(graph, x, stride=stride)
    if kind == "identity":
        return identity(graph, x) if stride == 1 else subsample(graph, x, stride)
    if kind == "zero":
        return zero(graph, x, stride)
    if kind == "relu":
        return relu(graph, x)
    if kind == "batch_norm":
        return batch_norm(graph, x)
    if kind == "plain_conv_1x1":
        return conv2d(graph, x, params[0], stride=stride)
    if kind == "relu_conv_bn":
        return relu_conv_bn(graph, x, params, stride)
    if kind == "factorized_reduce":
        return factorized_reduce(graph, x, params)
    if kind == "stem":
        return stem(graph, x, params)
    if kind == "linear":
        return linear(graph, x, params[0], params[1])
    if kind == "global_avg_pool":
        return global_avg_pool(graph, x)
    if kind == "softmax_cross_entropy":
        return softmax_cross_entropy(graph, x, labels)
    if kind == "scalar_weighted_sum":
        return scalar_weighted_sum(graph, inputs[0], inputs[1:])
    if kind == "concat_channels":
        return concat_channels(graph, inputs)
    if kind == "softmax_vector":
        return softmax_vector(graph, x)
    raise ValueError(f"unknown op kind {kind!r}")
