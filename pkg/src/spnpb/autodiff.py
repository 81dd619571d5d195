"""Reverse-mode automatic differentiation on a flat operation tape.

Every value flowing through a differentiable computation is wrapped in a
Var node.  Each primitive operation computes its result eagerly with numpy
and appends one record (outputs, inputs, vector-Jacobian product) to a
Tape.  backward() replays the records in exact reverse order and
accumulates gradients into a map keyed by leaf Var.

All arithmetic is float64.  The networks this drives are tiny (tens of
units), so records operate on whole vectors and matrices rather than
scalars; ops are fused only where the closed-form local gradient is
standard (LSTM step, Gaussian log-likelihood, L2 norm).

Tapes hold references to the arrays captured at forward time, not copies.
Run backward() before mutating parameter arrays in place.
"""

from __future__ import annotations

import numpy as np

LOG_2PI = 1.8378770664093453  # log(2*pi)


class ShapeError(ValueError):
    """Operand dimensions do not match."""


class Var:
    """A node in the computation graph wrapping a float64 numpy value."""

    __slots__ = ("value",)

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)

    def __repr__(self):
        return f"Var({self.value!r})"


def as_var(x):
    return x if isinstance(x, Var) else Var(x)


class Tape:
    """Ordered record of primitive ops, replayed backward for gradients.

    Leaves (Vars that no op on this tape produced) are tracked at record
    time so backward() can report an exact-zero gradient for any leaf
    that participated but received no flow.
    """

    __slots__ = ("_records", "_produced", "_leaves")

    def __init__(self):
        self._records = []
        self._produced = set()
        self._leaves = set()

    def record(self, outs, inputs, vjp):
        produced = self._produced
        for v in inputs:
            if v not in produced:
                self._leaves.add(v)
        produced.update(outs)
        self._records.append((outs, inputs, vjp))

    def __len__(self):
        return len(self._records)

    @property
    def leaves(self):
        return frozenset(self._leaves)


def backward(tape, output_grads, output=None):
    """Replay the tape in reverse and return a gradient map.

    output_grads must match the shape of the tape's final output (or of
    the explicitly chosen output Var).  The returned dict maps every
    participating leaf Var to d(output)/d(leaf), with exact zeros for
    leaves the flow never reached.  An empty tape yields an empty map.
    """
    records = tape._records
    if not records:
        return {}
    if output is None:
        output = records[-1][0][0]
    elif output not in tape._produced:
        raise ValueError("requested output was not produced on this tape")
    seed = np.asarray(output_grads, dtype=np.float64)
    if seed.shape != output.value.shape:
        raise ShapeError(
            f"output grad shape {seed.shape} does not match output shape "
            f"{output.value.shape}"
        )
    grads = {output: seed}
    for outs, inputs, vjp in reversed(records):
        gs = [grads.pop(o, None) for o in outs]
        if all(g is None for g in gs):
            continue
        gs = [
            np.zeros_like(o.value) if g is None else g
            for g, o in zip(gs, outs)
        ]
        for v, g in zip(inputs, vjp(*gs)):
            prev = grads.get(v)
            grads[v] = g if prev is None else prev + g
    out = {}
    for v in tape._leaves:
        g = grads.get(v)
        out[v] = np.zeros_like(v.value) if g is None else np.asarray(g, dtype=np.float64)
    return out


# ---------------------------------------------------------------------------
# primitive operations


def affine(tape, w, b, x):
    """w @ x + b with w (out, in), b (out,), x (in,)."""
    wv, bv, xv = w.value, b.value, x.value
    if wv.ndim != 2 or xv.ndim != 1 or wv.shape[1] != xv.shape[0]:
        raise ShapeError(f"affine: weight {wv.shape} incompatible with input {xv.shape}")
    if bv.shape != (wv.shape[0],):
        raise ShapeError(f"affine: bias {bv.shape} incompatible with weight {wv.shape}")
    out = Var(wv @ xv + bv)

    def vjp(g):
        return np.outer(g, xv), g, wv.T @ g

    tape.record((out,), (w, b, x), vjp)
    return out


def tanh_(tape, x):
    y = np.tanh(x.value)
    out = Var(y)

    def vjp(g):
        return (g * (1.0 - y * y),)

    tape.record((out,), (x,), vjp)
    return out


def exp_(tape, x):
    y = np.exp(x.value)
    out = Var(y)

    def vjp(g):
        return (g * y,)

    tape.record((out,), (x,), vjp)
    return out


def clip_(tape, x, lo, hi):
    """Clamp to [lo, hi]; gradient passes only where the value was kept."""
    xv = x.value
    out = Var(np.clip(xv, lo, hi))
    mask = (xv >= lo) & (xv <= hi)

    def vjp(g):
        return (g * mask,)

    tape.record((out,), (x,), vjp)
    return out


def abs_(tape, x):
    xv = x.value
    out = Var(np.abs(xv))
    sign = np.sign(xv)

    def vjp(g):
        return (g * sign,)

    tape.record((out,), (x,), vjp)
    return out


def add(tape, a, b):
    if a.value.shape != b.value.shape:
        raise ShapeError(f"add: {a.value.shape} vs {b.value.shape}")
    out = Var(a.value + b.value)

    def vjp(g):
        return g, g

    tape.record((out,), (a, b), vjp)
    return out


def sub(tape, a, b):
    if a.value.shape != b.value.shape:
        raise ShapeError(f"sub: {a.value.shape} vs {b.value.shape}")
    out = Var(a.value - b.value)

    def vjp(g):
        return g, -g

    tape.record((out,), (a, b), vjp)
    return out


def mul(tape, a, b):
    if a.value.shape != b.value.shape:
        raise ShapeError(f"mul: {a.value.shape} vs {b.value.shape}")
    av, bv = a.value, b.value
    out = Var(av * bv)

    def vjp(g):
        return g * bv, g * av

    tape.record((out,), (a, b), vjp)
    return out


def div(tape, a, b):
    if a.value.shape != b.value.shape:
        raise ShapeError(f"div: {a.value.shape} vs {b.value.shape}")
    av, bv = a.value, b.value
    out = Var(av / bv)

    def vjp(g):
        return g / bv, -g * av / (bv * bv)

    tape.record((out,), (a, b), vjp)
    return out


def scale(tape, x, c):
    """c * x for a plain float constant c."""
    c = float(c)
    out = Var(c * x.value)

    def vjp(g):
        return (g * c,)

    tape.record((out,), (x,), vjp)
    return out


def shift(tape, x, c):
    """x + c for a constant (float or array) c."""
    out = Var(x.value + c)

    def vjp(g):
        return (g,)

    tape.record((out,), (x,), vjp)
    return out


def csub(tape, c, x):
    """c - x for a constant c."""
    out = Var(c - x.value)

    def vjp(g):
        return (-g,)

    tape.record((out,), (x,), vjp)
    return out


def add_n(tape, parts):
    parts = tuple(parts)
    if not parts:
        raise ValueError("add_n needs at least one operand")
    shape = parts[0].value.shape
    for p in parts[1:]:
        if p.value.shape != shape:
            raise ShapeError("add_n: mismatched operand shapes")
    total = parts[0].value
    for p in parts[1:]:
        total = total + p.value
    out = Var(total)
    n = len(parts)

    def vjp(g):
        return (g,) * n

    tape.record((out,), parts, vjp)
    return out


def concat(tape, parts):
    parts = tuple(parts)
    if not parts:
        raise ValueError("concat needs at least one operand")
    sizes = [p.value.shape[0] for p in parts]
    out = Var(np.concatenate([p.value for p in parts]))
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(sizes)))

    tape.record((out,), parts, vjp)
    return out


def slice_(tape, x, start, stop):
    n = x.value.shape[0]
    if not (0 <= start <= stop <= n):
        raise ShapeError(f"slice [{start}:{stop}] out of range for length {n}")
    out = Var(x.value[start:stop].copy())

    def vjp(g):
        full = np.zeros(n)
        full[start:stop] = g
        return (full,)

    tape.record((out,), (x,), vjp)
    return out


def sum_(tape, x):
    out = Var(np.sum(x.value))
    shape = x.value.shape

    def vjp(g):
        return (np.full(shape, g),)

    tape.record((out,), (x,), vjp)
    return out


def l2norm(tape, x):
    """Euclidean norm of a vector; gradient guarded near zero."""
    xv = x.value
    y = float(np.sqrt(np.sum(xv * xv)))
    out = Var(y)
    denom = max(y, 1e-12)

    def vjp(g):
        return (g * xv / denom,)

    tape.record((out,), (x,), vjp)
    return out


def affine_batch(tape, w, b, x):
    """x @ w.T + b with w (out, in), b (out,), x (batch, in)."""
    wv, bv, xv = w.value, b.value, x.value
    if wv.ndim != 2 or xv.ndim != 2 or wv.shape[1] != xv.shape[1]:
        raise ShapeError(f"affine_batch: weight {wv.shape} incompatible with input {xv.shape}")
    if bv.shape != (wv.shape[0],):
        raise ShapeError(f"affine_batch: bias {bv.shape} incompatible with weight {wv.shape}")
    out = Var(xv @ wv.T + bv)

    def vjp(g):
        return g.T @ xv, g.sum(axis=0), g @ wv

    tape.record((out,), (w, b, x), vjp)
    return out


def concat_cols(tape, parts):
    """Concatenate (batch, n_i) blocks along the feature axis."""
    parts = tuple(parts)
    if not parts:
        raise ValueError("concat_cols needs at least one operand")
    rows = parts[0].value.shape[0]
    for p in parts:
        if p.value.ndim != 2 or p.value.shape[0] != rows:
            raise ShapeError("concat_cols: operands must share the batch dimension")
    sizes = [p.value.shape[1] for p in parts]
    out = Var(np.concatenate([p.value for p in parts], axis=1))
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(g[:, offsets[i]:offsets[i + 1]] for i in range(len(sizes)))

    tape.record((out,), parts, vjp)
    return out


def slice_cols(tape, x, start, stop):
    xv = x.value
    if xv.ndim != 2 or not (0 <= start <= stop <= xv.shape[1]):
        raise ShapeError(f"slice_cols [{start}:{stop}] out of range for shape {xv.shape}")
    out = Var(xv[:, start:stop].copy())
    shape = xv.shape

    def vjp(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    tape.record((out,), (x,), vjp)
    return out


def stack_rows(tape, parts):
    """Stack equal-length vectors into a (batch, n) matrix."""
    parts = tuple(parts)
    if not parts:
        raise ValueError("stack_rows needs at least one operand")
    n = parts[0].value.shape
    for p in parts:
        if p.value.ndim != 1 or p.value.shape != n:
            raise ShapeError("stack_rows: operands must be vectors of one length")
    out = Var(np.stack([p.value for p in parts]))

    def vjp(g):
        return tuple(g[i] for i in range(len(parts)))

    tape.record((out,), parts, vjp)
    return out


def tile_rows(tape, x, reps):
    """Repeat each row of x (B, n) reps times: out[b*reps + r] = x[b]."""
    xv = x.value
    if xv.ndim != 2 or reps < 1:
        raise ShapeError(f"tile_rows needs a matrix and reps >= 1, got {xv.shape}, {reps}")
    B, n = xv.shape
    out = Var(np.repeat(xv, reps, axis=0))

    def vjp(g):
        return (g.reshape(B, reps, n).sum(axis=1),)

    tape.record((out,), (x,), vjp)
    return out


def unstack_steps(tape, x, B, T):
    """Split x (B*T, n), laid out batch-major, into T nodes of shape (B, n).

    One record with T outputs, so splitting a whole sequence costs one
    tape entry instead of T.
    """
    xv = x.value
    if xv.ndim != 2 or xv.shape[0] != B * T:
        raise ShapeError(f"unstack_steps: {xv.shape} does not factor as ({B}*{T}, n)")
    n = xv.shape[1]
    cube = xv.reshape(B, T, n)
    outs = tuple(Var(cube[:, t].copy()) for t in range(T))

    def vjp(*gs):
        return (np.stack(gs, axis=1).reshape(B * T, n),)

    tape.record(outs, (x,), vjp)
    return outs


def stack_steps(tape, parts):
    """Inverse of unstack_steps: T nodes of (B, n) into one (B*T, n) node."""
    parts = tuple(parts)
    if not parts:
        raise ValueError("stack_steps needs at least one operand")
    shape = parts[0].value.shape
    for p in parts:
        if p.value.ndim != 2 or p.value.shape != shape:
            raise ShapeError("stack_steps: operands must share one (B, n) shape")
    B, n = shape
    T = len(parts)
    out = Var(np.stack([p.value for p in parts], axis=1).reshape(B * T, n))

    def vjp(g):
        cube = g.reshape(B, T, n)
        return tuple(cube[:, t] for t in range(T))

    tape.record((out,), parts, vjp)
    return out


def gaussian_nll(tape, mean, logvar, target):
    """Sum over dims of the Gaussian negative log density of target.

    Parameterized by log variance so the exp head's clamp is shared with
    the prediction path:  0.5 * sum(log(2*pi) + lv + (m - t)^2 * exp(-lv)).
    """
    mv, lv = mean.value, logvar.value
    if mv.shape != lv.shape or mv.shape != np.shape(target):
        raise ShapeError("gaussian_nll: mean, logvar, and target shapes must match")
    r = mv - target
    e = np.exp(-lv)
    out = Var(0.5 * np.sum(LOG_2PI + lv + r * r * e))

    def vjp(g):
        return g * (r * e), g * 0.5 * (1.0 - r * r * e)

    tape.record((out,), (mean, logvar), vjp)
    return out
