"""
Dense float64 tensor operations with a reverse-mode gradient tape
Also hosts Gumbel-softmax sampling with straight-through gradients
"""

from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from errors import InvalidArgumentError, NonFiniteError, ShapeError, TapeError
from rng import RngStream

# A DenseMatrix is a 2-D, C-ordered float64 numpy array
DenseMatrix = np.ndarray

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def as_matrix(value, op: str = "as_matrix") -> DenseMatrix:
    """Coerce to a finite 2-D float64 array (scalars become 1x1, vectors a single row)"""
    array = np.array(value, dtype=np.float64, order="C")
    if array.ndim == 0:
        array = array.reshape(1, 1)
    elif array.ndim == 1:
        array = array.reshape(1, -1)
    elif array.ndim != 2:
        raise ShapeError(op, array.shape)
    _check_finite(array, op)
    return array


def _check_finite(array: np.ndarray, op: str) -> None:
    if not np.isfinite(array).all():
        bad = int(np.size(array) - np.count_nonzero(np.isfinite(array)))
        raise NonFiniteError(op, f"{bad} of {array.size} entries")


def _is_scalar(shape: Tuple[int, ...]) -> bool:
    return shape == (1, 1)


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Undo scalar broadcasting for an incoming gradient"""
    if grad.shape == shape:
        return grad
    return np.array([[grad.sum()]])


class Var:
    """Handle to a value recorded on a tape"""

    __slots__ = ("tape", "id", "value")

    def __init__(self, tape: "Tape", vid: int, value: DenseMatrix):
        self.tape = tape
        self.id = vid
        self.value = value

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(id={self.id}, shape={self.shape})"


class _Record(NamedTuple):
    op: str
    inputs: Tuple[int, ...]
    output: int
    backward: BackwardFn


class Tape:
    """Records forward operations in topological order and replays them backwards"""

    def __init__(self):
        self._values: List[DenseMatrix] = []
        self._requires: List[bool] = []
        self._records: List[_Record] = []
        self._params: Dict[str, int] = {}
        self._consumed = False

    # Leaves

    def param(self, name: str, value) -> Var:
        """Register a trainable parameter; backward() returns a gradient for it"""
        if name in self._params:
            raise TapeError(f"parameter {name!r} registered twice")
        var = self._leaf(as_matrix(value, f"param:{name}"), requires_grad=True)
        self._params[name] = var.id
        return var

    def constant(self, value) -> Var:
        return self._leaf(as_matrix(value, "constant"), requires_grad=False)

    def _leaf(self, value: DenseMatrix, requires_grad: bool) -> Var:
        self._values.append(value)
        self._requires.append(requires_grad)
        return Var(self, len(self._values) - 1, value)

    @property
    def parameters(self) -> Dict[str, Var]:
        return {name: Var(self, vid, self._values[vid]) for name, vid in self._params.items()}

    def value(self, var: Var) -> DenseMatrix:
        if var.tape is not self or var.id >= len(self._values):
            raise TapeError(f"value {var.id} is not on this tape")
        return self._values[var.id]

    def _push(self, op: str, value: np.ndarray, inputs: Sequence[Var], backward: BackwardFn) -> Var:
        for var in inputs:
            if var.tape is not self:
                raise TapeError(f"{op}: operand recorded on a different tape")
        _check_finite(value, op)
        requires = any(self._requires[v.id] for v in inputs)
        out = self._leaf(np.ascontiguousarray(value, dtype=np.float64), requires)
        if requires:
            self._records.append(_Record(op, tuple(v.id for v in inputs), out.id, backward))
        return out

    # Linear algebra

    def matmul(self, a: Var, b: Var) -> Var:
        if a.shape[1] != b.shape[0]:
            raise ShapeError("matmul", a.shape, b.shape)
        av, bv = a.value, b.value
        return self._push("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))

    def transpose(self, a: Var) -> Var:
        return self._push("transpose", a.value.T.copy(), (a,), lambda g: (g.T,))

    # Elementwise

    def _broadcast_check(self, op: str, a: Var, b: Var) -> None:
        if a.shape != b.shape and not (_is_scalar(a.shape) or _is_scalar(b.shape)):
            raise ShapeError(op, a.shape, b.shape)

    def add(self, a: Var, b: Var) -> Var:
        self._broadcast_check("add", a, b)
        sa, sb = a.shape, b.shape
        return self._push("add", a.value + b.value, (a, b),
                          lambda g: (_reduce_to(g, sa), _reduce_to(g, sb)))

    def sub(self, a: Var, b: Var) -> Var:
        self._broadcast_check("sub", a, b)
        sa, sb = a.shape, b.shape
        return self._push("sub", a.value - b.value, (a, b),
                          lambda g: (_reduce_to(g, sa), _reduce_to(-g, sb)))

    def mul(self, a: Var, b: Var) -> Var:
        self._broadcast_check("mul", a, b)
        av, bv = a.value, b.value
        return self._push("mul", av * bv, (a, b),
                          lambda g: (_reduce_to(g * bv, av.shape), _reduce_to(g * av, bv.shape)))

    def scale(self, a: Var, factor: float) -> Var:
        """Multiply by a python scalar"""
        factor = float(factor)
        return self._push("scale", a.value * factor, (a,), lambda g: (g * factor,))

    # Row indexing

    def gather(self, a: Var, index) -> Var:
        """Row-gather: out[i] = a[index[i]]"""
        index = np.asarray(index, dtype=np.int64).ravel()
        n = a.shape[0]
        if index.size and (index.min() < 0 or index.max() >= n):
            raise ShapeError("gather", a.shape, (int(index.max()) + 1, a.shape[1]))

        def backward(g):
            grad = np.zeros((n, a.shape[1]))
            np.add.at(grad, index, g)
            return (grad,)

        return self._push("gather", a.value[index], (a,), backward)

    def segment_sum(self, a: Var, segment_ids, num_segments: int) -> Var:
        """Sum rows of `a` into `num_segments` buckets; reduction order is row order"""
        segment_ids = np.asarray(segment_ids, dtype=np.int64).ravel()
        if segment_ids.size != a.shape[0]:
            raise ShapeError("segment_sum", a.shape, (segment_ids.size,))
        if segment_ids.size and (segment_ids.min() < 0 or segment_ids.max() >= num_segments):
            raise ShapeError("segment_sum", (num_segments, a.shape[1]), (int(segment_ids.max()) + 1,))
        out = np.zeros((num_segments, a.shape[1]))
        np.add.at(out, segment_ids, a.value)
        return self._push("segment_sum", out, (a,), lambda g: (g[segment_ids],))

    def concat_rows(self, parts: Sequence[Var]) -> Var:
        if not parts:
            raise ShapeError("concat_rows", ())
        cols = parts[0].shape[1]
        for p in parts:
            if p.shape[1] != cols:
                raise ShapeError("concat_rows", parts[0].shape, p.shape)
        bounds = np.cumsum([0] + [p.shape[0] for p in parts])

        def backward(g):
            return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

        return self._push("concat_rows", np.vstack([p.value for p in parts]), tuple(parts), backward)

    # Nonlinearities

    def sigmoid(self, a: Var) -> Var:
        y = 0.5 * (1.0 + np.tanh(0.5 * a.value))
        return self._push("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))

    def tanh(self, a: Var) -> Var:
        y = np.tanh(a.value)
        return self._push("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))

    def relu(self, a: Var) -> Var:
        mask = a.value > 0
        return self._push("relu", np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))

    def softplus(self, a: Var) -> Var:
        """log(1 + exp(a)) without overflow"""
        x = a.value
        y = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
        s = 0.5 * (1.0 + np.tanh(0.5 * x))
        return self._push("softplus", y, (a,), lambda g: (g * s,))

    def softmax(self, a: Var) -> Var:
        """Row-wise softmax"""
        z = a.value - a.value.max(axis=1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=1, keepdims=True)

        def backward(g):
            return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

        return self._push("softmax", y, (a,), backward)

    def log_softmax(self, a: Var) -> Var:
        """Row-wise log-softmax (log-sum-exp form)"""
        z = a.value - a.value.max(axis=1, keepdims=True)
        y = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        p = np.exp(y)
        return self._push("log_softmax", y, (a,),
                          lambda g: (g - p * g.sum(axis=1, keepdims=True),))

    def log(self, a: Var) -> Var:
        x = a.value
        with np.errstate(divide="ignore", invalid="ignore"):
            y = np.log(x)
        return self._push("log", y, (a,), lambda g: (g / x,))

    # Reductions

    def sum(self, a: Var) -> Var:
        shape = a.shape
        return self._push("sum", np.array([[a.value.sum()]]), (a,),
                          lambda g: (np.full(shape, g[0, 0]),))

    def mean(self, a: Var) -> Var:
        shape = a.shape
        count = a.value.size
        return self._push("mean", np.array([[a.value.mean()]]), (a,),
                          lambda g: (np.full(shape, g[0, 0] / count),))

    def row_sum(self, a: Var) -> Var:
        """Sum across columns: n x d -> n x 1"""
        cols = a.shape[1]
        return self._push("row_sum", a.value.sum(axis=1, keepdims=True), (a,),
                          lambda g: (np.repeat(g, cols, axis=1),))

    def row_norm(self, a: Var) -> Var:
        """L2 norm of each row: n x d -> n x 1; the gradient at a zero row is zero"""
        x = a.value
        norm = np.sqrt((x * x).sum(axis=1, keepdims=True))
        safe = np.where(norm > 0, norm, 1.0)
        return self._push("row_norm", norm, (a,), lambda g: (g * x / safe,))

    # Gradient routing

    def detach(self, a: Var) -> Var:
        """Same value, no gradient flows back through it"""
        return self._leaf(a.value, requires_grad=False)

    def straight_through(self, soft: Var, hard) -> Var:
        """Forward value is `hard` exactly; backward passes the gradient to `soft` unchanged"""
        hard = np.asarray(hard, dtype=np.float64)
        if hard.shape != soft.shape:
            raise ShapeError("straight_through", soft.shape, hard.shape)
        return self._push("straight_through", hard.copy(), (soft,), lambda g: (g,))

    # Backward pass

    def backward(self, loss: Var) -> Dict[str, DenseMatrix]:
        """Gradients of a 1x1 loss for every registered parameter (zeros when unreachable)"""
        if self._consumed:
            raise TapeError("tape already consumed: backward runs once per forward")
        if loss.tape is not self:
            raise TapeError("loss was recorded on a different tape")
        if not _is_scalar(loss.shape):
            raise TapeError(f"loss must be 1x1, got {loss.shape}")
        self._consumed = True

        grads: Dict[int, np.ndarray] = {loss.id: np.ones((1, 1))}
        for record in reversed(self._records):
            g = grads.pop(record.output, None)
            if g is None:
                continue
            for vid, gi in zip(record.inputs, record.backward(g)):
                if gi is None or not self._requires[vid]:
                    continue
                if vid in grads:
                    grads[vid] = grads[vid] + gi
                else:
                    grads[vid] = gi

        result = {}
        for name, vid in self._params.items():
            g = grads.get(vid)
            if g is None:
                g = np.zeros_like(self._values[vid])
            _check_finite(g, f"backward:{name}")
            result[name] = g
        return result


def gumbel_softmax(tape: Tape, logits: Var, temperature: float, hard: bool, rng: RngStream,
                   noise: Optional[np.ndarray] = None) -> Var:
    """Relaxed categorical sample per row of `logits`

    Soft mode returns softmax((logits + g) / temperature). Hard mode returns the one-hot
    argmax of that sample while gradients are those of the soft sample. `noise` overrides
    the Gumbel draw so a soft and a hard tape can share one sample.
    """
    if not temperature > 0:
        raise InvalidArgumentError(f"gumbel_softmax temperature must be > 0, got {temperature}")
    _check_finite(logits.value, "gumbel_softmax:logits")
    if noise is None:
        noise = rng.gumbel(logits.shape)
    perturbed = tape.add(logits, tape.constant(noise))
    soft = tape.softmax(tape.scale(perturbed, 1.0 / temperature))
    if not hard:
        return soft
    winners = np.argmax(soft.value, axis=1)
    one_hot = np.zeros(soft.shape)
    one_hot[np.arange(soft.shape[0]), winners] = 1.0
    return tape.straight_through(soft, one_hot)
