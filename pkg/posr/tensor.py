"""
Reverse-mode automatic differentiation over dense float64 tensors.

Every primitive is registered in PRIMITIVES with a forward rule and a backward
rule. Calling a primitive records provenance (op kind, inputs, attrs) on the
output so that backward() can walk the graph in reverse topological order.

Graphs are immutable once built: outputs of primitives are read-only arrays.
Only leaves (plain tensors and Parameters) may be updated in place, which is
what the optimizer and the finite-difference checker do.
"""

import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

logger = logging.getLogger(__name__)


class TensorError(Exception):
    """Base exception for autodiff errors."""
    pass


class ShapeError(TensorError):
    """Raised when input shapes are incompatible for an operation."""
    pass


class DomainError(TensorError):
    """Raised when an input lies outside an operation's domain."""
    pass


class NonScalarLossError(TensorError):
    """Raised when backward() is called on a tensor with more than one element."""
    pass


class NonDeterministicLossError(TensorError):
    """Raised when a loss closure produces different values for identical parameters."""
    pass


ArrayLike = Union[float, int, Sequence, np.ndarray]


class DiffTensor:
    """A node in the differentiation graph."""

    __slots__ = ("values", "grad", "requires_grad", "op", "inputs", "attrs", "ctx", "__weakref__")

    def __init__(self, values: ArrayLike, requires_grad: bool = False):
        self.values: np.ndarray = np.array(values, dtype=np.float64, order="C")
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.op: Optional[str] = None
        self.inputs: Tuple["DiffTensor", ...] = ()
        self.attrs: Dict[str, Any] = {}
        self.ctx: Any = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def is_leaf(self) -> bool:
        return self.op is None

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def __repr__(self) -> str:
        origin = self.op or "leaf"
        return f"DiffTensor(shape={self.shape}, op={origin}, requires_grad={self.requires_grad})"

    # Operator sugar; everything routes through primitive_forward.

    def __add__(self, other: "DiffTensor") -> "DiffTensor":
        return primitive_forward("add", [self, as_tensor(other)])

    def __radd__(self, other) -> "DiffTensor":
        return primitive_forward("add", [as_tensor(other), self])

    def __sub__(self, other) -> "DiffTensor":
        return primitive_forward("subtract", [self, as_tensor(other)])

    def __rsub__(self, other) -> "DiffTensor":
        return primitive_forward("subtract", [as_tensor(other), self])

    def __mul__(self, other) -> "DiffTensor":
        if isinstance(other, (int, float)):
            return primitive_forward("scalar_multiply", [self], {"scalar": float(other)})
        return primitive_forward("elementwise_multiply", [self, as_tensor(other)])

    def __rmul__(self, other) -> "DiffTensor":
        return self.__mul__(other)

    def __neg__(self) -> "DiffTensor":
        return primitive_forward("negate", [self])

    def __matmul__(self, other: "DiffTensor") -> "DiffTensor":
        return primitive_forward("matmul", [self, other])

    def sum(self, axis=None, keepdims: bool = False) -> "DiffTensor":
        return primitive_forward("sum", [self], {"axis": axis, "keepdims": keepdims})

    def mean(self, axis=None, keepdims: bool = False) -> "DiffTensor":
        return primitive_forward("mean", [self], {"axis": axis, "keepdims": keepdims})

    def exp(self) -> "DiffTensor":
        return primitive_forward("exp", [self])

    def log(self) -> "DiffTensor":
        return primitive_forward("log", [self])

    def square(self) -> "DiffTensor":
        return primitive_forward("square", [self])

    def elu(self, alpha: float = 1.0) -> "DiffTensor":
        return primitive_forward("elu", [self], {"alpha": alpha})

    def reshape(self, *shape: int) -> "DiffTensor":
        return primitive_forward("reshape", [self], {"shape": tuple(shape)})

    def clamp_min(self, scalar: float) -> "DiffTensor":
        return primitive_forward("maximum_with_scalar", [self], {"scalar": float(scalar)})


class Parameter(DiffTensor):
    """A named learnable leaf."""

    __slots__ = ("name",)

    def __init__(self, values: ArrayLike, name: str):
        super().__init__(values, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.shape})"


def as_tensor(value) -> DiffTensor:
    if isinstance(value, DiffTensor):
        return value
    return DiffTensor(value)


def constant(values: ArrayLike) -> DiffTensor:
    """Leaf that never receives a gradient."""
    return DiffTensor(values, requires_grad=False)


# ---------------------------------------------------------------------------
# Primitive rules
# ---------------------------------------------------------------------------

ForwardRule = Callable[[Tuple[np.ndarray, ...], Dict[str, Any]], Tuple[np.ndarray, Any]]
BackwardRule = Callable[[np.ndarray, Tuple[np.ndarray, ...], np.ndarray, Any, Dict[str, Any]], Tuple[Optional[np.ndarray], ...]]


@dataclass(frozen=True)
class Primitive:
    arity: Optional[int]  # None = variadic
    forward: ForwardRule
    backward: BackwardRule


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum grad over the axes that broadcasting expanded to reach it."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op_kind: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op_kind}: incompatible shapes {a.shape} and {b.shape}")


def _expand_reduced(grad: np.ndarray, shape: Tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % len(shape) for a in axes)
        grad = np.expand_dims(grad, axes)
    return np.broadcast_to(grad, shape)


def _reduced_count(shape: Tuple[int, ...], axis) -> int:
    if axis is None:
        return int(np.prod(shape, dtype=np.int64))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return int(np.prod([shape[a] for a in axes], dtype=np.int64))


def _add_fwd(xs, attrs):
    _broadcast_shape("add", *xs)
    return xs[0] + xs[1], None


def _add_bwd(g, xs, out, ctx, attrs):
    return _unbroadcast(g, xs[0].shape), _unbroadcast(g, xs[1].shape)


def _sub_fwd(xs, attrs):
    _broadcast_shape("subtract", *xs)
    return xs[0] - xs[1], None


def _sub_bwd(g, xs, out, ctx, attrs):
    return _unbroadcast(g, xs[0].shape), _unbroadcast(-g, xs[1].shape)


def _mul_fwd(xs, attrs):
    _broadcast_shape("elementwise_multiply", *xs)
    return xs[0] * xs[1], None


def _mul_bwd(g, xs, out, ctx, attrs):
    return _unbroadcast(g * xs[1], xs[0].shape), _unbroadcast(g * xs[0], xs[1].shape)


def _scale_fwd(xs, attrs):
    return xs[0] * attrs["scalar"], None


def _scale_bwd(g, xs, out, ctx, attrs):
    return (g * attrs["scalar"],)


def _matmul_fwd(xs, attrs):
    a, b = xs
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot contract {a.shape} with {b.shape}")
    return a @ b, None


def _matmul_bwd(g, xs, out, ctx, attrs):
    a, b = xs
    return g @ b.T, a.T @ g


def _conv_temporal_fwd(xs, attrs):
    x, w, bias = xs
    if x.ndim != 4 or w.ndim != 3 or x.shape[1] != w.shape[1] or bias.shape != (w.shape[0],):
        raise ShapeError(
            f"conv1d_temporal: input {x.shape}, weight {w.shape}, bias {bias.shape} "
            "(expected [B,Fi,H,T], [Fo,Fi,K], [Fo])"
        )
    kernel = w.shape[2]
    if x.shape[3] < kernel:
        raise ShapeError(f"conv1d_temporal: kernel {kernel} longer than input {x.shape}")
    windows = np.lib.stride_tricks.sliding_window_view(x, kernel, axis=3)
    out = np.einsum("bihtk,oik->boht", windows, w, optimize=True)
    return out + bias[None, :, None, None], windows


def _conv_temporal_bwd(g, xs, out, windows, attrs):
    x, w, _ = xs
    kernel = w.shape[2]
    steps = g.shape[3]
    grad_w = np.einsum("bihtk,boht->oik", windows, g, optimize=True)
    grad_b = g.sum(axis=(0, 2, 3))
    grad_x = np.zeros_like(x)
    for k in range(kernel):
        grad_x[..., k:k + steps] += np.einsum("boht,oi->biht", g, w[:, :, k], optimize=True)
    return grad_x, grad_w, grad_b


def _conv_spatial_fwd(xs, attrs):
    x, w, bias = xs
    if x.ndim != 4 or w.ndim != 3 or x.shape[1:3] != w.shape[1:3] or bias.shape != (w.shape[0],):
        raise ShapeError(
            f"conv_spatial: input {x.shape}, weight {w.shape}, bias {bias.shape} "
            "(expected [B,Fi,H,T], [Fo,Fi,H], [Fo])"
        )
    out = np.einsum("biht,oih->bot", x, w, optimize=True)
    return (out + bias[None, :, None])[:, :, None, :], None


def _conv_spatial_bwd(g, xs, out, ctx, attrs):
    x, w, _ = xs
    g3 = g[:, :, 0, :]
    grad_x = np.einsum("bot,oih->biht", g3, w, optimize=True)
    grad_w = np.einsum("biht,bot->oih", x, g3, optimize=True)
    return grad_x, grad_w, g3.sum(axis=(0, 2))


def _elu_fwd(xs, attrs):
    x = xs[0]
    alpha = attrs.get("alpha", 1.0)
    return np.where(x > 0, x, alpha * np.expm1(np.minimum(x, 0.0))), None


def _elu_bwd(g, xs, out, ctx, attrs):
    alpha = attrs.get("alpha", 1.0)
    return (g * np.where(xs[0] > 0, 1.0, out + alpha),)


def _exp_fwd(xs, attrs):
    return np.exp(xs[0]), None


def _exp_bwd(g, xs, out, ctx, attrs):
    return (g * out,)


def _log_fwd(xs, attrs):
    x = xs[0]
    if np.any(x <= 0):
        raise DomainError(f"log: non-positive input (min {x.min()!r})")
    return np.log(x), None


def _log_bwd(g, xs, out, ctx, attrs):
    return (g / xs[0],)


def _square_fwd(xs, attrs):
    return xs[0] * xs[0], None


def _square_bwd(g, xs, out, ctx, attrs):
    return (2.0 * g * xs[0],)


def _sum_fwd(xs, attrs):
    return np.sum(xs[0], axis=attrs.get("axis"), keepdims=attrs.get("keepdims", False)), None


def _sum_bwd(g, xs, out, ctx, attrs):
    return (_expand_reduced(g, xs[0].shape, attrs.get("axis"), attrs.get("keepdims", False)).copy(),)


def _mean_fwd(xs, attrs):
    return np.mean(xs[0], axis=attrs.get("axis"), keepdims=attrs.get("keepdims", False)), None


def _mean_bwd(g, xs, out, ctx, attrs):
    axis = attrs.get("axis")
    count = _reduced_count(xs[0].shape, axis)
    return (_expand_reduced(g, xs[0].shape, axis, attrs.get("keepdims", False)) / count,)


def _pool_fwd(xs, attrs):
    x = xs[0]
    size = attrs["size"]
    steps = x.shape[-1] // size
    if steps < 1:
        raise ShapeError(f"max_pool_time: pool size {size} exceeds time extent of {x.shape}")
    windows = x[..., :steps * size].reshape(x.shape[:-1] + (steps, size))
    winner = np.argmax(windows, axis=-1)  # first maximum wins ties
    out = np.take_along_axis(windows, winner[..., None], axis=-1)[..., 0]
    return out, winner


def _pool_bwd(g, xs, out, winner, attrs):
    x = xs[0]
    size = attrs["size"]
    steps = g.shape[-1]
    scattered = np.zeros(x.shape[:-1] + (steps, size))
    np.put_along_axis(scattered, winner[..., None], g[..., None], axis=-1)
    grad_x = np.zeros_like(x)
    grad_x[..., :steps * size] = scattered.reshape(x.shape[:-1] + (steps * size,))
    return (grad_x,)


def _reshape_fwd(xs, attrs):
    x = xs[0]
    try:
        return x.reshape(attrs["shape"]), None
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {attrs['shape']}")


def _reshape_bwd(g, xs, out, ctx, attrs):
    return (g.reshape(xs[0].shape),)


def _concat_fwd(xs, attrs):
    axis = attrs.get("axis", 0)
    try:
        return np.concatenate(xs, axis=axis), None
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[x.shape for x in xs]} along axis {axis}")


def _concat_bwd(g, xs, out, ctx, attrs):
    axis = attrs.get("axis", 0)
    edges = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return tuple(np.split(g, edges, axis=axis))


def _negate_fwd(xs, attrs):
    return -xs[0], None


def _negate_bwd(g, xs, out, ctx, attrs):
    return (-g,)


def _maximum_fwd(xs, attrs):
    return np.maximum(xs[0], attrs["scalar"]), None


def _maximum_bwd(g, xs, out, ctx, attrs):
    # subgradient 0 at the hinge point
    return (g * (xs[0] > attrs["scalar"]),)


PRIMITIVES: Dict[str, Primitive] = {
    "add": Primitive(2, _add_fwd, _add_bwd),
    "subtract": Primitive(2, _sub_fwd, _sub_bwd),
    "elementwise_multiply": Primitive(2, _mul_fwd, _mul_bwd),
    "scalar_multiply": Primitive(1, _scale_fwd, _scale_bwd),
    "matmul": Primitive(2, _matmul_fwd, _matmul_bwd),
    "conv1d_temporal": Primitive(3, _conv_temporal_fwd, _conv_temporal_bwd),
    "conv_spatial": Primitive(3, _conv_spatial_fwd, _conv_spatial_bwd),
    "elu": Primitive(1, _elu_fwd, _elu_bwd),
    "exp": Primitive(1, _exp_fwd, _exp_bwd),
    "log": Primitive(1, _log_fwd, _log_bwd),
    "square": Primitive(1, _square_fwd, _square_bwd),
    "sum": Primitive(1, _sum_fwd, _sum_bwd),
    "mean": Primitive(1, _mean_fwd, _mean_bwd),
    "max_pool_time": Primitive(1, _pool_fwd, _pool_bwd),
    "reshape": Primitive(1, _reshape_fwd, _reshape_bwd),
    "concat": Primitive(None, _concat_fwd, _concat_bwd),
    "negate": Primitive(1, _negate_fwd, _negate_bwd),
    "maximum_with_scalar": Primitive(1, _maximum_fwd, _maximum_bwd),
}


def primitive_forward(op_kind: str, inputs: Sequence[DiffTensor], attrs: Optional[Dict[str, Any]] = None) -> DiffTensor:
    """
    Evaluate one primitive and record its provenance.

    Args:
        op_kind: Key into PRIMITIVES
        inputs: Input tensors
        attrs: Op-specific attributes (axis, scalar, pool size, ...)

    Returns:
        Output tensor; read-only values, with provenance when any input requires grad

    Raises:
        ShapeError: Incompatible input shapes
        DomainError: log of a non-positive value
    """
    primitive = PRIMITIVES.get(op_kind)
    if primitive is None:
        raise TensorError(f"Unknown primitive: {op_kind}")
    if primitive.arity is not None and len(inputs) != primitive.arity:
        raise ShapeError(f"{op_kind}: expected {primitive.arity} inputs, got {len(inputs)}")

    attrs = dict(attrs or {})
    values = tuple(t.values for t in inputs)
    out_values, ctx = primitive.forward(values, attrs)

    out = DiffTensor.__new__(DiffTensor)
    result = np.asarray(out_values, dtype=np.float64)
    if not result.flags.c_contiguous:
        result = result.copy(order="C")
    result = result.view()
    result.flags.writeable = False
    out.values = result
    out.grad = None
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.op = op_kind
    out.inputs = tuple(inputs)
    out.attrs = attrs
    out.ctx = ctx if out.requires_grad else None
    return out


def topological_order(root: DiffTensor) -> List[DiffTensor]:
    """Nodes reachable from root, every input before its consumers."""
    order: List[DiffTensor] = []
    visited = set()
    stack: List[Tuple[DiffTensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.inputs:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: DiffTensor, params: Optional[Sequence[Parameter]] = None) -> Dict[str, np.ndarray]:
    """
    Reverse-mode gradient of a scalar loss.

    Leaves that require grad get their .grad replaced. Adjoints of nodes used
    by several consumers accumulate additively.

    Args:
        loss: Scalar tensor (one element)
        params: Parameters to report; unreachable ones map to zeros.
            Defaults to every Parameter reachable from loss.

    Returns:
        Mapping of parameter name to gradient array
    """
    if loss.values.size != 1:
        raise NonScalarLossError(f"backward() needs a scalar loss, got shape {loss.shape}")

    order = topological_order(loss)
    for node in order:
        if node.is_leaf and node.requires_grad:
            node.grad = None
    for p in params or ():
        p.grad = None

    adjoints: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
    for node in reversed(order):
        g = adjoints.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            if node.requires_grad:
                node.grad = np.array(g, dtype=np.float64)
            continue
        rule = PRIMITIVES[node.op].backward
        grads = rule(g, tuple(t.values for t in node.inputs), node.values, node.ctx, node.attrs)
        for parent, grad in zip(node.inputs, grads):
            if grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in adjoints:
                adjoints[key] = adjoints[key] + grad
            else:
                adjoints[key] = grad

    if params is None:
        params = [n for n in order if isinstance(n, Parameter)]
    return {
        p.name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.values))
        for p in params
    }


class GradCheckReport(BaseModel):
    """Per-parameter comparison of analytic and central-difference gradients."""
    max_rel_error: Dict[str, float] = Field(default_factory=dict)
    tol: float
    h: float

    @property
    def failures(self) -> List[str]:
        return [name for name, err in self.max_rel_error.items() if err > self.tol]

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def grad_check(
    build_loss: Callable[[], DiffTensor],
    params: Sequence[Parameter],
    h: float = 1e-5,
    tol: float = 1e-4,
    atol: float = 1e-9,
) -> GradCheckReport:
    """
    Compare backward() against central finite differences.

    Relative error per entry is |a - n| / max(1e-12, |a| + |n|); entries whose
    absolute difference is at most atol count as exact (finite-difference
    rounding on vanishing gradients).

    Raises:
        NonDeterministicLossError: build_loss gave two different values
    """
    if h <= 0:
        raise ValueError("h must be positive")

    loss = build_loss()
    if not np.array_equal(loss.values, build_loss().values):
        raise NonDeterministicLossError("build_loss returned different values for identical parameters")

    checked = [p for p in params if p.requires_grad]
    analytic = backward(loss, checked)

    report = GradCheckReport(tol=tol, h=h)
    for param in checked:
        flat = param.values.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            upper = build_loss().item()
            flat[i] = original - h
            lower = build_loss().item()
            flat[i] = original
            numeric[i] = (upper - lower) / (2.0 * h)

        exact = analytic[param.name].reshape(-1)
        diff = np.abs(exact - numeric)
        rel = diff / np.maximum(1e-12, np.abs(exact) + np.abs(numeric))
        rel[diff <= atol] = 0.0
        report.max_rel_error[param.name] = float(rel.max()) if rel.size else 0.0

    if not report.passed:
        logger.warning(f"Gradient check failed for {report.failures}")
    return report
