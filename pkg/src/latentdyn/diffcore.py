"""Dense float64 tensors with reverse-mode automatic differentiation.

Ops record onto an explicit Tape (execution order == topological order);
without an active tape they run in inference mode and keep no graph.
"""

import hashlib

import numpy as np

_LOG_2PI = float(np.log(2.0 * np.pi))

_ACTIVE_TAPE = None
_DEBUG_FINITE = False


class ShapeError(ValueError):
    pass


def set_debug_checks(enabled: bool) -> None:
    """Enable NaN/Inf checking of every op output (slow; tests only)."""
    global _DEBUG_FINITE
    _DEBUG_FINITE = bool(enabled)


def _stream_key(stream) -> int:
    if isinstance(stream, int):
        return stream & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.blake2b(str(stream).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class SeededRng:
    """Counter-based generator (Philox) keyed by (global seed, stream id).

    Independent streams never collide, so adding a consumer of one stream
    cannot perturb draws on another.
    """

    def __init__(self, seed: int, stream=0):
        self.seed = int(seed)
        self.stream = stream
        key = np.array([self.seed & 0xFFFFFFFFFFFFFFFF, _stream_key(stream)],
                       dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def standard_normal(self, shape):
        return self._gen.standard_normal(shape)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, n, size=None, replace=True, p=None):
        return self._gen.choice(n, size=size, replace=replace, p=p)


class Tape:
    """Ordered record of executed ops; backward replays it once, in reverse."""

    def __init__(self):
        self.nodes = []  # (output tensor, backward closure)
        self._consumed = False
        self._outer = None

    def __enter__(self):
        global _ACTIVE_TAPE
        self._outer = _ACTIVE_TAPE
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = self._outer
        return False

    def backward(self, loss: "Tensor") -> None:
        if self._consumed:
            raise RuntimeError("tape already consumed by a backward pass")
        self._consumed = True
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got {loss.dims}")
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(self.nodes):
            if out.grad is None:
                continue
            fn(out.grad)
            out.grad = None  # consumers all ran already; free eagerly


class Tensor:
    """Immutable n-d float64 array plus autodiff bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def dims(self):
        return tuple(self.data.shape)

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(dims={self.dims}, requires_grad={self.requires_grad})"

    # -- op plumbing --------------------------------------------------------

    def _accum(self, g):
        if self.requires_grad:
            if self.grad is None:
                # copy: g may be shared with a sibling branch of the graph
                if np.shape(g) == self.data.shape:
                    self.grad = np.array(g)
                else:
                    self.grad = np.zeros_like(self.data)
                    self.grad += g
            else:
                self.grad += g

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        if isinstance(other, Tensor):
            if other.dims == self.dims:
                out = Tensor(self.data + other.data)

                def back(g):
                    self._accum(g)
                    other._accum(g)

                return _record(out, (self, other), back)
            # bias-vector addition is the one permitted broadcast
            if other.data.ndim == 1 and self.data.ndim >= 2 \
                    and self.dims[-1] == other.dims[0]:
                out = Tensor(self.data + other.data)

                def back(g):
                    self._accum(g)
                    other._accum(g.reshape(-1, g.shape[-1]).sum(axis=0))

                return _record(out, (self, other), back)
            raise ShapeError(f"add: incompatible dims {self.dims} + {other.dims}")
        out = Tensor(self.data + float(other))
        return _record(out, (self,), self._accum)

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data)
        return _record(out, (self,), lambda g: self._accum(-g))

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return self + (-other)
        return self + (-float(other))

    def __rsub__(self, other):
        return (-self) + float(other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            if other.dims != self.dims:
                raise ShapeError(f"mul: incompatible dims {self.dims} * {other.dims}")
            out = Tensor(self.data * other.data)
            a_data, b_data = self.data, other.data

            def back(g):
                self._accum(g * b_data)
                other._accum(g * a_data)

            return _record(out, (self, other), back)
        c = float(other)
        out = Tensor(self.data * c)
        return _record(out, (self,), lambda g: self._accum(g * c))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self * (1.0 / float(other))

    def mul_const(self, arr):
        """Elementwise multiply by a non-differentiable constant array."""
        arr = np.asarray(arr, dtype=np.float64)
        out = Tensor(self.data * arr)
        if out.dims != self.dims:
            raise ShapeError(f"mul_const must preserve dims, got {out.dims} from {self.dims}")
        return _record(out, (self,), lambda g: self._accum(g * arr))

    def matmul(self, other: "Tensor") -> "Tensor":
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ShapeError(f"matmul needs 2-d operands, got {self.dims} @ {other.dims}")
        if self.dims[1] != other.dims[0]:
            raise ShapeError(f"matmul: inner dims differ, {self.dims} @ {other.dims}")
        out = Tensor(self.data @ other.data)
        a_data, b_data = self.data, other.data

        def back(g):
            self._accum(g @ b_data.T)
            other._accum(a_data.T @ g)

        return _record(out, (self, other), back)

    __matmul__ = matmul

    # -- nonlinearities -----------------------------------------------------

    def exp(self):
        out = Tensor(np.exp(self.data))
        out_data = out.data
        return _record(out, (self,), lambda g: self._accum(g * out_data))

    def tanh(self):
        out = Tensor(np.tanh(self.data))
        out_data = out.data
        return _record(out, (self,), lambda g: self._accum(g * (1.0 - out_data * out_data)))

    def sigmoid(self):
        x = self.data
        # stable form; never exponentiates a large positive value
        e = np.exp(-np.abs(x))
        out_data = np.where(x >= 0, 1.0, e) / (1.0 + e)
        out = Tensor(out_data)
        return _record(out, (self,), lambda g: self._accum(g * out_data * (1.0 - out_data)))

    def elu(self):
        x = self.data
        out_data = x.copy()
        dx = np.ones_like(x)
        neg = x < 0.0
        shrunk = np.expm1(x[neg])
        out_data[neg] = shrunk
        dx[neg] = shrunk + 1.0
        out = Tensor(out_data)
        return _record(out, (self,), lambda g: self._accum(g * dx))

    def clamp(self, lo: float, hi: float):
        out = Tensor(np.clip(self.data, lo, hi))
        mask = (self.data >= lo) & (self.data <= hi)
        return _record(out, (self,), lambda g: self._accum(g * mask))

    # -- reductions ---------------------------------------------------------

    def sum(self, axis=None):
        out = Tensor(self.data.sum(axis=axis))
        shape = self.data.shape

        def back(g):
            if axis is None:
                self._accum(np.broadcast_to(g, shape))
            else:
                self._accum(np.broadcast_to(np.expand_dims(g, axis), shape))

        return _record(out, (self,), back)

    def mean(self, axis=None):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis) * (1.0 / n)

    def logsumexp(self, axis: int):
        x = self.data
        m = np.max(x, axis=axis, keepdims=True)
        e = np.exp(x - m)
        z = e.sum(axis=axis, keepdims=True)
        out = Tensor(np.squeeze(np.log(z) + m, axis=axis))
        soft = e / z

        def back(g):
            self._accum(np.expand_dims(g, axis) * soft)

        return _record(out, (self,), back)

    # -- shape ops ----------------------------------------------------------

    def reshape(self, *dims):
        if len(dims) == 1 and isinstance(dims[0], (tuple, list)):
            dims = tuple(dims[0])
        out = Tensor(self.data.reshape(dims))
        shape = self.data.shape
        return _record(out, (self,), lambda g: self._accum(g.reshape(shape)))

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if sorted(axes) != list(range(self.data.ndim)):
            raise ShapeError(f"permute axes {axes} invalid for dims {self.dims}")
        out = Tensor(self.data.transpose(axes))
        inv = np.argsort(axes)
        return _record(out, (self,), lambda g: self._accum(g.transpose(inv)))

    def slice_axis(self, axis: int, start: int, stop: int):
        if not -self.data.ndim <= axis < self.data.ndim:
            raise ShapeError(f"slice axis {axis} out of range for dims {self.dims}")
        idx = [slice(None)] * self.data.ndim
        idx[axis] = slice(start, stop)
        idx = tuple(idx)
        out = Tensor(self.data[idx])
        shape = self.data.shape

        def back(g):
            if self.requires_grad:
                full = np.zeros(shape)
                full[idx] = g
                self._accum(full)

        return _record(out, (self,), back)

    def pad_axis(self, axis: int, before: int, after: int):
        if not -self.data.ndim <= axis < self.data.ndim:
            raise ShapeError(f"pad axis {axis} out of range for dims {self.dims}")
        widths = [(0, 0)] * self.data.ndim
        widths[axis] = (before, after)
        out = Tensor(np.pad(self.data, widths))
        idx = [slice(None)] * self.data.ndim
        idx[axis] = slice(before, before + self.data.shape[axis])
        idx = tuple(idx)
        return _record(out, (self,), lambda g: self._accum(g[idx]))

    def expand_axis(self, axis: int, times: int):
        """Repeat a size-1 axis; backward sums over the copies."""
        if self.data.shape[axis] != 1:
            raise ShapeError(f"expand_axis needs size-1 axis, dims {self.dims} axis {axis}")
        out = Tensor(np.repeat(self.data, times, axis=axis))
        return _record(out, (self,), lambda g: self._accum(g.sum(axis=axis, keepdims=True)))

    def take_cols(self, indices):
        """Gather columns of a 2-d tensor; repeated indices sum in backward."""
        if self.data.ndim != 2:
            raise ShapeError(f"take_cols needs a 2-d tensor, got {self.dims}")
        idx = np.asarray(indices, dtype=np.intp)
        out = Tensor(self.data[:, idx])

        def back(g):
            if self.requires_grad:
                full = np.zeros(self.data.shape)
                np.add.at(full, (slice(None), idx), g)
                self._accum(full)

        return _record(out, (self,), back)


def _record(out: Tensor, parents, back_fn) -> Tensor:
    if _DEBUG_FINITE and not np.all(np.isfinite(out.data)):
        raise FloatingPointError("non-finite values in op output")
    tape = _ACTIVE_TAPE
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.nodes.append((out, back_fn))
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for t, a, b in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(a, b)
                t._accum(g[tuple(idx)])

    return _record(out, tensors, back)


def reparam_sample(mu: Tensor, log_sigma: Tensor, rng: SeededRng) -> Tensor:
    """mu + exp(log_sigma) * eps with eps ~ N(0,1); gradients skip eps."""
    if mu.dims != log_sigma.dims:
        raise ShapeError(f"reparam: dims differ, {mu.dims} vs {log_sigma.dims}")
    eps = rng.standard_normal(mu.dims)
    sigma = np.exp(log_sigma.data)
    out = Tensor(mu.data + sigma * eps)

    def back(g):
        mu._accum(g)
        log_sigma._accum(g * sigma * eps)

    return _record(out, (mu, log_sigma), back)
