"""Reverse-mode autodiff on numpy arrays plus forward-mode Taylor jets.

Two halves, used together by the training code:

* ``Tensor`` records a tape of array operations so that a scalar loss can be
  differentiated with respect to network parameters (reverse mode).
* ``Jet`` carries a value together with its first and optional second
  derivative with respect to one chosen input coordinate (forward mode,
  truncated Taylor propagation).  Jet components may be plain ndarrays
  (nothing trainable downstream) or Tensors, in which case the reverse-mode
  tape sees the whole derivative computation and parameter gradients of
  residual losses come out exact.

Everything is float64.  Operations on constants (no tensor with
``requires_grad`` anywhere upstream) record nothing, so evaluating frozen
networks is tape-free.
"""

from __future__ import annotations

import numpy as np


class NonFiniteError(RuntimeError):
    """A non-finite value appeared; carries the name of the offending op."""

    def __init__(self, op: str, what: str = "value"):
        super().__init__(f"non-finite {what} in op '{op}'")
        self.op = op


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))  # never overflows
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _sum_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    # sum over leading broadcast axes
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _needs_grad(*xs) -> bool:
    return any(isinstance(x, Tensor) and x.requires_grad for x in xs)


class Tensor:
    """ndarray wrapper recording a backward tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    # make numpy defer to our reflected operators
    __array_priority__ = 1000
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self._op = op

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def param(data) -> "Tensor":
        return Tensor(data, requires_grad=True)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, grad={self.requires_grad})"

    def _accum(self, g: np.ndarray):
        if self.grad is None:
            # copy: g may alias an upstream grad buffer (e.g. add's passthrough)
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g

    # -- reverse pass ----------------------------------------------------------

    def backward(self, check_finite: bool = False):
        """Backpropagate from this scalar through the recorded tape."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
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
                node._backward()
                if check_finite:
                    for p in node._parents:
                        if p.grad is not None and not np.all(np.isfinite(p.grad)):
                            raise NonFiniteError(node._op, "gradient")

    # -- arithmetic ------------------------------------------------------------

    def __add__(self, other):
        od = _data(other)
        out = Tensor(self.data + od, _needs_grad(self, other), op="add")
        if out.requires_grad:
            parents = tuple(x for x in (self, other) if isinstance(x, Tensor) and x.requires_grad)
            def backward():
                if self.requires_grad:
                    self._accum(_sum_to(out.grad, self.data.shape))
                if isinstance(other, Tensor) and other.requires_grad:
                    other._accum(_sum_to(out.grad, od.shape))
            out._parents, out._backward = parents, backward
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, self.requires_grad, op="neg")
        if out.requires_grad:
            def backward():
                self._accum(-out.grad)
            out._parents, out._backward = (self,), backward
        return out

    def __sub__(self, other):
        od = _data(other)
        out = Tensor(self.data - od, _needs_grad(self, other), op="sub")
        if out.requires_grad:
            parents = tuple(x for x in (self, other) if isinstance(x, Tensor) and x.requires_grad)
            def backward():
                if self.requires_grad:
                    self._accum(_sum_to(out.grad, self.data.shape))
                if isinstance(other, Tensor) and other.requires_grad:
                    other._accum(_sum_to(-out.grad, od.shape))
            out._parents, out._backward = parents, backward
        return out

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        od = _data(other)
        out = Tensor(self.data * od, _needs_grad(self, other), op="mul")
        if out.requires_grad:
            parents = tuple(x for x in (self, other) if isinstance(x, Tensor) and x.requires_grad)
            def backward():
                if self.requires_grad:
                    self._accum(_sum_to(out.grad * od, self.data.shape))
                if isinstance(other, Tensor) and other.requires_grad:
                    other._accum(_sum_to(out.grad * self.data, od.shape))
            out._parents, out._backward = parents, backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        od = _data(other)
        out = Tensor(self.data / od, _needs_grad(self, other), op="div")
        if out.requires_grad:
            parents = tuple(x for x in (self, other) if isinstance(x, Tensor) and x.requires_grad)
            def backward():
                if self.requires_grad:
                    self._accum(_sum_to(out.grad / od, self.data.shape))
                if isinstance(other, Tensor) and other.requires_grad:
                    other._accum(_sum_to(-out.grad * self.data / (od * od), od.shape))
            out._parents, out._backward = parents, backward
        return out

    def __rtruediv__(self, other):
        od = _data(other)
        out = Tensor(od / self.data, self.requires_grad, op="rdiv")
        if out.requires_grad:
            def backward():
                self._accum(_sum_to(-out.grad * od / (self.data * self.data), self.data.shape))
            out._parents, out._backward = (self,), backward
        return out

    def __pow__(self, p):
        p = float(p)
        out = Tensor(self.data ** p, self.requires_grad, op="pow")
        if out.requires_grad:
            def backward():
                self._accum(out.grad * p * self.data ** (p - 1.0))
            out._parents, out._backward = (self,), backward
        return out

    # -- elementwise functions ---------------------------------------------------

    def _unary(self, value: np.ndarray, dvalue: np.ndarray, op: str) -> "Tensor":
        out = Tensor(value, self.requires_grad, op=op)
        if out.requires_grad:
            def backward():
                self._accum(out.grad * dvalue)
            out._parents, out._backward = (self,), backward
        return out

    def tanh(self):
        t = np.tanh(self.data)
        return self._unary(t, 1.0 - t * t, "tanh")

    def sin(self):
        return self._unary(np.sin(self.data), np.cos(self.data), "sin")

    def cos(self):
        return self._unary(np.cos(self.data), -np.sin(self.data), "cos")

    def exp(self):
        e = np.exp(self.data)
        return self._unary(e, e, "exp")

    def sigmoid(self):
        s = _stable_sigmoid(self.data)
        return self._unary(s, s * (1.0 - s), "sigmoid")

    def abs(self):
        # subgradient at 0 taken as 0 (sign(0) == 0)
        return self._unary(np.abs(self.data), np.sign(self.data), "abs")

    # -- reductions / shaping ------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), self.requires_grad, op="sum")
        if out.requires_grad:
            shape = self.data.shape
            def backward():
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accum(np.broadcast_to(g, shape).copy())
            out._parents, out._backward = (self,), backward
        return out

    def mean(self):
        out = Tensor(np.asarray(self.data.mean()), self.requires_grad, op="mean")
        if out.requires_grad:
            n = self.data.size
            def backward():
                self._accum(np.broadcast_to(out.grad / n, self.data.shape).copy())
            out._parents, out._backward = (self,), backward
        return out

    def take_rows(self, idx: np.ndarray):
        out = Tensor(self.data[idx], self.requires_grad, op="take_rows")
        if out.requires_grad:
            def backward():
                if self.grad is None:
                    self.grad = np.zeros_like(self.data)
                np.add.at(self.grad, idx, out.grad)
            out._parents, out._backward = (self,), backward
        return out

    def cols(self, j0: int, j1: int):
        out = Tensor(self.data[:, j0:j1], self.requires_grad, op="cols")
        if out.requires_grad:
            def backward():
                if self.grad is None:
                    self.grad = np.zeros_like(self.data)
                self.grad[:, j0:j1] += out.grad
            out._parents, out._backward = (self,), backward
        return out


# -- generic functions working on Tensor or ndarray -------------------------------


def tanh(x):
    return x.tanh() if isinstance(x, Tensor) else np.tanh(x)


def sin(x):
    return x.sin() if isinstance(x, Tensor) else np.sin(x)


def cos(x):
    return x.cos() if isinstance(x, Tensor) else np.cos(x)


def exp(x):
    return x.exp() if isinstance(x, Tensor) else np.exp(x)


def sigmoid(x):
    return x.sigmoid() if isinstance(x, Tensor) else _stable_sigmoid(np.asarray(x, dtype=np.float64))


def absolute(x):
    return x.abs() if isinstance(x, Tensor) else np.abs(x)


def value_of(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def linear(x, W, b=None, op: str = "linear"):
    """Affine layer ``x @ W.T (+ b)`` with W of shape (out, in).

    Any of x, W, b may be a Tensor or a plain array; only tensors that
    require grad end up on the tape.
    """
    xd, Wd = _data(x), _data(W)
    if xd.shape[-1] != Wd.shape[1]:
        raise ValueError(f"linear: input width {xd.shape[-1]} != weight fan-in {Wd.shape[1]}")
    y = xd @ Wd.T
    if b is not None:
        y = y + _data(b)
    if not _needs_grad(x, W, b):
        return y
    out = Tensor(y, True, op=op)
    parents = tuple(t for t in (x, W, b) if isinstance(t, Tensor) and t.requires_grad)

    def backward():
        g = out.grad
        if isinstance(x, Tensor) and x.requires_grad:
            x._accum(g @ Wd)
        if isinstance(W, Tensor) and W.requires_grad:
            W._accum(g.T @ xd)
        if b is not None and isinstance(b, Tensor) and b.requires_grad:
            b._accum(g.sum(axis=0))

    out._parents, out._backward = parents, backward
    return out


def concat(xs, axis: int = 1):
    """Concatenate a mix of Tensors and ndarrays along `axis`."""
    datas = [_data(x) for x in xs]
    y = np.concatenate(datas, axis=axis)
    if not _needs_grad(*xs):
        return y
    out = Tensor(y, True, op="concat")
    parents = tuple(t for t in xs if isinstance(t, Tensor) and t.requires_grad)
    sizes = [d.shape[axis] for d in datas]

    def backward():
        off = 0
        for x, n in zip(xs, sizes):
            if isinstance(x, Tensor) and x.requires_grad:
                sl = [slice(None)] * out.grad.ndim
                sl[axis] = slice(off, off + n)
                x._accum(out.grad[tuple(sl)])
            off += n

    out._parents, out._backward = parents, backward
    return out


def take_rows(x, idx: np.ndarray):
    return x.take_rows(idx) if isinstance(x, Tensor) else np.asarray(x)[idx]


def scatter_rows(x, idx: np.ndarray, n_rows: int):
    """Place the rows of x at positions idx of an otherwise-zero (n_rows, ...) array."""
    xd = _data(x)
    y = np.zeros((n_rows,) + xd.shape[1:])
    y[idx] = xd
    if not _needs_grad(x):
        return y
    out = Tensor(y, True, op="scatter_rows")

    def backward():
        x._accum(out.grad[idx])

    out._parents, out._backward = (x,), backward
    return out


def mean_sumsq(r) -> "Tensor | np.ndarray":
    """Mean over batch rows of the squared row norm, i.e. sum(r*r)/n_rows."""
    n = _data(r).shape[0]
    return (r * r).sum() / n if isinstance(r, Tensor) else np.asarray((r * r).sum() / n)


# -- forward-mode jets --------------------------------------------------------------

# A missing (None) derivative component means "identically zero"; operations
# skip the corresponding terms, which keeps constant branches cheap.


def _zadd(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a + b


class Jet:
    """Value plus first (and optionally second) derivative along one coordinate."""

    __slots__ = ("val", "d1", "d2", "order")

    def __init__(self, val, d1=None, d2=None, order: int = 0):
        self.val = val
        self.d1 = d1
        self.d2 = d2
        self.order = order

    @staticmethod
    def constant(val, order: int = 0) -> "Jet":
        return Jet(val, None, None, order)

    def take_rows(self, idx: np.ndarray) -> "Jet":
        return Jet(
            take_rows(self.val, idx),
            None if self.d1 is None else take_rows(self.d1, idx),
            None if self.d2 is None else take_rows(self.d2, idx),
            self.order,
        )

    def __add__(self, other: "Jet") -> "Jet":
        return Jet(self.val + other.val, _zadd(self.d1, other.d1),
                   _zadd(self.d2, other.d2), max(self.order, other.order))

    def __mul__(self, other: "Jet") -> "Jet":
        """Leibniz product of two jets."""
        order = max(self.order, other.order)
        val = self.val * other.val
        d1 = _zadd(None if self.d1 is None else self.d1 * other.val,
                   None if other.d1 is None else self.val * other.d1)
        d2 = None
        if order >= 2:
            t1 = None if self.d2 is None else self.d2 * other.val
            t2 = None if (self.d1 is None or other.d1 is None) else 2.0 * (self.d1 * other.d1)
            t3 = None if other.d2 is None else self.val * other.d2
            d2 = _zadd(_zadd(t1, t2), t3)
        return Jet(val, d1, d2, order)

    def __truediv__(self, other: "Jet") -> "Jet":
        """Quotient rule: (f/g)' = (f' - (f/g) g')/g, and once more for d2."""
        order = max(self.order, other.order)
        val = self.val / other.val
        d1 = None
        if self.d1 is not None or other.d1 is not None:
            num = _zadd(self.d1, None if other.d1 is None else -(val * other.d1))
            d1 = None if num is None else num / other.val
        d2 = None
        if order >= 2:
            t = _zadd(self.d2, None if (d1 is None or other.d1 is None) else -(2.0 * d1 * other.d1))
            t = _zadd(t, None if other.d2 is None else -(val * other.d2))
            d2 = None if t is None else t / other.val
        return Jet(val, d1, d2, order)

    def scale(self, c) -> "Jet":
        """Multiply all components by a coordinate-independent factor."""
        return Jet(c * self.val,
                   None if self.d1 is None else c * self.d1,
                   None if self.d2 is None else c * self.d2,
                   self.order)

    def shift(self, c) -> "Jet":
        return Jet(self.val + c, self.d1, self.d2, self.order)

    def chain(self, f0, f1, f2=None) -> "Jet":
        """Compose with an elementwise function given f(val), f'(val), f''(val)."""
        d1 = None if self.d1 is None else f1 * self.d1
        d2 = None
        if self.order >= 2:
            if self.d1 is not None and f2 is not None:
                d2 = f2 * (self.d1 * self.d1)
            if self.d2 is not None:
                d2 = _zadd(d2, f1 * self.d2)
        return Jet(f0, d1, d2, self.order)

    def values(self):
        """Plain-ndarray view (val, d1, d2) with zeros for missing parts."""
        v = value_of(self.val)
        z = np.zeros_like(v)
        d1 = z if self.d1 is None else value_of(self.d1)
        d2 = z if self.d2 is None else value_of(self.d2)
        return v, d1, d2


def jet_cos(j: Jet) -> Jet:
    c, s = cos(j.val), sin(j.val)
    return j.chain(c, -1.0 * s, -1.0 * c if j.order >= 2 else None)


def jet_scatter_rows(j: Jet, idx: np.ndarray, n_rows: int) -> Jet:
    return Jet(
        scatter_rows(j.val, idx, n_rows),
        None if j.d1 is None else scatter_rows(j.d1, idx, n_rows),
        None if j.d2 is None else scatter_rows(j.d2, idx, n_rows),
        j.order,
    )


def jet_concat(jets, axis: int = 1) -> Jet:
    """Concatenate jets along the feature axis, materialising zero components."""
    order = max(j.order for j in jets)

    def comp(get):
        parts, any_nonzero = [], False
        for j in jets:
            c = get(j)
            if c is not None:
                any_nonzero = True
        if not any_nonzero:
            return None
        for j in jets:
            c = get(j)
            parts.append(np.zeros(value_of(j.val).shape) if c is None else c)
        return concat(parts, axis=axis)

    return Jet(concat([j.val for j in jets], axis=axis),
               comp(lambda j: j.d1) if order >= 1 else None,
               comp(lambda j: j.d2) if order >= 2 else None,
               order)
