"""Dense float64 tensors with tape-based reverse-mode differentiation.

The primitive set is deliberately small: matmul, add, multiply, relu,
gelu (tanh form), softmax, layer_norm, embedding, cross_entropy, plus the
structural ops reshape/transpose needed to wire attention blocks together.
Everything runs in float64; reduced precision is simulated elsewhere by
explicit rounding of parameter values, never inside a forward pass.

Broadcasting is restricted: an operand of ``add``/``multiply`` may be
shared across leading batch axes (its shape must equal the trailing shape
of the other operand); ``matmul`` accepts a 2-d operand against a stacked
one. Nothing else broadcasts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

GradMap = dict[str, np.ndarray]


class AutodiffError(Exception):
    """Base class for forward/backward failures."""


class ShapeError(AutodiffError):
    """Operand shapes violate a primitive's contract. Names the primitive."""


class NonFiniteError(AutodiffError):
    """A primitive produced inf/nan. Carries the tape index of the op."""

    def __init__(self, op: str, index: int):
        super().__init__(f"non-finite output of primitive '{op}' at tape index {index}")
        self.op = op
        self.index = index


class TapeConsumedError(AutodiffError):
    """backward() was called twice on the same tape."""


class OutOfVocabError(AutodiffError):
    """A token id is outside [0, vocab). Carries the offending sample index."""

    def __init__(self, msg: str, sample_index: int):
        super().__init__(msg)
        self.sample_index = sample_index


class EmptyTargetError(AutodiffError):
    """The loss has zero prediction positions to average over."""


@dataclass
class TapeEntry:
    op: str
    inputs: tuple[int, ...]
    output: int
    # adjoint of output -> [(input node, adjoint contribution)]
    backward: Callable[[np.ndarray], list[tuple[int, np.ndarray]]]


class Tape:
    """Ordered record of primitives; single-use for backward replay."""

    def __init__(self):
        self.entries: list[TapeEntry] = []
        self.leaves: dict[int, tuple[str, tuple[int, ...]]] = {}
        self.output_node: int | None = None
        self.consumed = False
        self.relu_signs: list[np.ndarray] = []
        self._next = 0

    def new_node(self) -> int:
        n = self._next
        self._next += 1
        return n

    def leaf(self, name: str, data: np.ndarray) -> "Tensor":
        node = self.new_node()
        arr = np.asarray(data, dtype=np.float64)
        self.leaves[node] = (name, arr.shape)
        return Tensor(arr, self, node)

    def record(self, op, inputs, out_node, backward):
        self.entries.append(TapeEntry(op, inputs, out_node, backward))


class Tensor:
    """float64 array, optionally attached to a tape node."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: Tape | None = None, node: int | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node = node

    @property
    def shape(self):
        return self.data.shape


def _parts(x):
    """Split an operand into (data, tape, node); constants have no node."""
    if isinstance(x, Tensor):
        return x.data, x.tape, x.node
    return np.asarray(x, dtype=np.float64), None, None


def _one_tape(*tapes) -> Tape | None:
    live = [t for t in tapes if t is not None]
    if not live:
        return None
    first = live[0]
    for t in live[1:]:
        if t is not first:
            raise AutodiffError("operands recorded on different tapes")
    return first


def _finish(op, out, tape, contribs):
    """Check finiteness, record the entry if any input is tracked."""
    if not np.all(np.isfinite(out)):
        idx = len(tape.entries) if tape is not None else -1
        raise NonFiniteError(op, idx)
    if tape is None:
        return Tensor(out)
    tracked = [(n, fn) for n, fn in contribs if n is not None]
    if not tracked:
        return Tensor(out)
    out_node = tape.new_node()
    nodes = tuple(n for n, _ in tracked)
    fns = [fn for _, fn in tracked]

    def backward(g):
        return [(n, f(g)) for n, f in zip(nodes, fns)]

    tape.record(op, nodes, out_node, backward)
    return Tensor(out, tape, out_node)


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g over the leading axes a trailing-broadcast operand was shared on."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g


def _trailing_ok(a_shape, b_shape) -> bool:
    k = len(b_shape)
    return len(a_shape) >= k and (k == 0 or a_shape[len(a_shape) - k:] == b_shape)


def add(a, b) -> Tensor:
    """Elementwise sum; the smaller operand may be shared across leading axes."""
    ad, at, an = _parts(a)
    bd, bt, bn = _parts(b)
    tape = _one_tape(at, bt)
    if not (_trailing_ok(ad.shape, bd.shape) or _trailing_ok(bd.shape, ad.shape)):
        raise ShapeError(f"add: incompatible shapes {ad.shape} and {bd.shape}")
    out = ad + bd
    return _finish(
        "add",
        out,
        tape,
        [(an, lambda g: _reduce_to(g, ad.shape)), (bn, lambda g: _reduce_to(g, bd.shape))],
    )


def multiply(a, b) -> Tensor:
    """Elementwise product; same trailing-broadcast rule as add."""
    ad, at, an = _parts(a)
    bd, bt, bn = _parts(b)
    tape = _one_tape(at, bt)
    if not (_trailing_ok(ad.shape, bd.shape) or _trailing_ok(bd.shape, ad.shape)):
        raise ShapeError(f"multiply: incompatible shapes {ad.shape} and {bd.shape}")
    out = ad * bd
    return _finish(
        "multiply",
        out,
        tape,
        [
            (an, lambda g: _reduce_to(g * bd, ad.shape)),
            (bn, lambda g: _reduce_to(g * ad, bd.shape)),
        ],
    )


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes.

    Either both operands carry identical leading axes, or exactly one of
    them is 2-d and is shared across the other's leading axes.
    """
    ad, at, an = _parts(a)
    bd, bt, bn = _parts(b)
    tape = _one_tape(at, bt)
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(f"matmul: operands must be >= 2-d, got {ad.shape} and {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {ad.shape} x {bd.shape}")
    same_lead = ad.ndim == bd.ndim and ad.shape[:-2] == bd.shape[:-2]
    if not (same_lead or ad.ndim == 2 or bd.ndim == 2):
        raise ShapeError(f"matmul: leading axes mismatch, {ad.shape} x {bd.shape}")
    out = np.matmul(ad, bd)

    def da(g):
        r = np.matmul(g, np.swapaxes(bd, -1, -2))
        if ad.ndim == 2 and g.ndim > 2:
            r = r.reshape(-1, *r.shape[-2:]).sum(axis=0)
        return r

    def db(g):
        r = np.matmul(np.swapaxes(ad, -1, -2), g)
        if bd.ndim == 2 and g.ndim > 2:
            r = r.reshape(-1, *r.shape[-2:]).sum(axis=0)
        return r

    return _finish("matmul", out, tape, [(an, da), (bn, db)])


def relu(x) -> Tensor:
    """max(x, 0); the adjoint at exactly 0 is 0 (subgradient convention)."""
    xd, xt, xn = _parts(x)
    mask = xd > 0.0
    if xt is not None:
        xt.relu_signs.append(mask)
    out = np.where(mask, xd, 0.0)
    return _finish("relu", out, xt, [(xn, lambda g: g * mask)])


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x) -> Tensor:
    """Tanh-form gelu: 0.5*x*(1 + tanh(c*(x + 0.044715*x^3)))."""
    xd, xt, xn = _parts(x)
    inner = _GELU_C * (xd + 0.044715 * xd**3)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def dx(g):
        sech2 = 1.0 - t * t
        d = 0.5 * (1.0 + t) + 0.5 * xd * sech2 * _GELU_C * (1.0 + 3 * 0.044715 * xd**2)
        return g * d

    return _finish("gelu", out, xt, [(xn, dx)])


def softmax(x) -> Tensor:
    """Softmax along the last axis, max-shifted for stability."""
    xd, xt, xn = _parts(x)
    if xd.ndim < 1:
        raise ShapeError("softmax: needs at least 1 axis")
    z = xd - xd.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def dx(g):
        return out * (g - (g * out).sum(axis=-1, keepdims=True))

    return _finish("softmax", out, xt, [(xn, dx)])


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    xd, xt, xn = _parts(x)
    gd, gt, gn = _parts(gain)
    bd, bt, bn = _parts(bias)
    tape = _one_tape(xt, gt, bt)
    d = xd.shape[-1]
    if gd.shape != (d,) or bd.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain/bias must be ({d},), got {gd.shape} and {bd.shape}"
        )
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gd * xhat + bd

    def dx(g):
        dxhat = g * gd
        return inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )

    def dgain(g):
        return (g * xhat).reshape(-1, d).sum(axis=0)

    def dbias(g):
        return g.reshape(-1, d).sum(axis=0)

    return _finish("layer_norm", out, tape, [(xn, dx), (gn, dgain), (bn, dbias)])


def embedding(table, ids: np.ndarray) -> Tensor:
    """Row lookup table[ids]; ids are constants, the table receives scatter-add adjoints."""
    td, tt, tn = _parts(table)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError("embedding: ids must be integers")
    if td.ndim != 2:
        raise ShapeError(f"embedding: table must be 2-d, got {td.shape}")
    vocab = td.shape[0]
    bad = (ids < 0) | (ids >= vocab)
    if bad.any():
        pos = np.argwhere(bad)[0]
        sample = int(pos[0]) if ids.ndim > 0 else 0
        raise OutOfVocabError(
            f"embedding: token id {int(ids[tuple(pos)])} outside [0, {vocab}) "
            f"at sample {sample}, position {tuple(int(p) for p in pos)}",
            sample_index=sample,
        )
    out = td[ids]

    def dtable(g):
        acc = np.zeros_like(td)
        np.add.at(acc, ids, g)
        return acc

    return _finish("embedding", out, tt, [(tn, dtable)])


def cross_entropy(logits, targets: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer targets under softmax(logits).

    The reduction uses math.fsum over per-position losses, so the result is
    the correctly rounded mean: invariant under sample permutation and exact
    for batches made of repeated samples.
    """
    ld, lt, ln = _parts(logits)
    targets = np.asarray(targets)
    if not np.issubdtype(targets.dtype, np.integer):
        raise ShapeError("cross_entropy: targets must be integers")
    if ld.ndim < 1 or targets.shape != ld.shape[:-1]:
        raise ShapeError(
            f"cross_entropy: targets shape {targets.shape} does not match logits {ld.shape}"
        )
    count = int(targets.size)
    if count == 0:
        raise EmptyTargetError("cross_entropy: empty target (no prediction positions)")
    vocab = ld.shape[-1]
    bad = (targets < 0) | (targets >= vocab)
    if bad.any():
        pos = np.argwhere(bad)[0] if targets.ndim > 0 else (0,)
        sample = int(pos[0])
        raise OutOfVocabError(
            f"cross_entropy: target id {int(targets[tuple(pos)])} outside [0, {vocab}) "
            f"at sample {sample}",
            sample_index=sample,
        )
    z = ld - ld.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    flat_t = targets.reshape(-1)
    picked = np.take_along_axis(
        z.reshape(-1, vocab), flat_t[:, None], axis=1
    ).reshape(-1)
    nll = lse.reshape(-1) - picked
    out = np.float64(math.fsum(nll) / count)

    def dlogits(g):
        p = np.exp(z - lse.reshape(*lse.shape, 1))
        flat = p.reshape(-1, vocab)
        np.subtract.at(flat, (np.arange(count), flat_t), 1.0)
        return (float(g) / count) * flat.reshape(ld.shape)

    return _finish("cross_entropy", np.asarray(out), lt, [(ln, dlogits)])


def reshape(x, shape) -> Tensor:
    xd, xt, xn = _parts(x)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != xd.size:
        raise ShapeError(f"reshape: cannot view {xd.shape} as {shape}")
    out = xd.reshape(shape)
    return _finish("reshape", out, xt, [(xn, lambda g: g.reshape(xd.shape))])


def transpose(x, axes) -> Tensor:
    xd, xt, xn = _parts(x)
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(xd.ndim)):
        raise ShapeError(f"transpose: {axes} is not a permutation of {xd.ndim} axes")
    inv = np.argsort(axes)
    out = xd.transpose(axes)
    return _finish("transpose", out, xt, [(xn, lambda g: g.transpose(inv))])


def sum_all(x) -> Tensor:
    """Scalar sum of all entries, composed from reshape + matmul with a ones vector."""
    xd, _, _ = _parts(x)
    n = xd.size
    row = reshape(x, (1, n))
    total = matmul(row, np.ones((n, 1)))
    return reshape(total, ())


def forward(program, params: Mapping[str, np.ndarray], batch=None) -> tuple[float, Tape]:
    """Run program(leaves, batch) on a fresh tape.

    ``program`` receives a dict of leaf Tensors (one per parameter, same
    names) and must return a scalar Tensor. Returns the loss as a float
    together with the tape holding the recorded graph.
    """
    tape = Tape()
    leaves = {name: tape.leaf(name, arr) for name, arr in params.items()}
    out = program(leaves, batch)
    if not isinstance(out, Tensor):
        raise AutodiffError("program must return a Tensor")
    if out.data.shape != ():
        raise ShapeError(f"forward: loss must be scalar, got shape {out.data.shape}")
    tape.output_node = out.node
    return float(out.data), tape


def backward(tape: Tape) -> GradMap:
    """Replay adjoints in reverse; returns gradients for every leaf that
    participated in the forward pass. Tapes are single-use."""
    if tape.consumed:
        raise TapeConsumedError("tape already consumed by a previous backward()")
    tape.consumed = True
    adj: dict[int, np.ndarray] = {}
    participated: set[int] = set()
    for e in tape.entries:
        for n in e.inputs:
            if n in tape.leaves:
                participated.add(n)
    if tape.output_node is not None:
        adj[tape.output_node] = np.ones(())
    for e in reversed(tape.entries):
        g = adj.pop(e.output, None)
        if g is None:
            continue
        for node, contrib in e.backward(g):
            if node in adj:
                adj[node] = adj[node] + contrib
            else:
                adj[node] = contrib
    grads: GradMap = {}
    for node, (name, shape) in tape.leaves.items():
        if node in participated:
            g = adj.get(node)
            if g is None:
                g = np.zeros(shape)
            grads[name] = np.asarray(g, dtype=np.float64)
    return grads


def gradient(program, params, batch=None) -> tuple[float, GradMap]:
    """Convenience wrapper: forward then backward on one fresh tape."""
    loss, tape = forward(program, params, batch)
    return loss, backward(tape)


@dataclass
class GradCheckReport:
    per_param_max: dict[str, float]
    max_rel_err: float
    checked: int
    excluded: list[tuple[str, int]]
    passed: bool
    tolerance: float


def grad_check(
    program,
    params: Mapping[str, np.ndarray],
    batch=None,
    step: float = 1e-5,
    tolerance: float = 1e-5,
    n_coords: int = 50,
    seed: int = 0,
) -> GradCheckReport:
    """Compare reverse-mode gradients against central finite differences.

    Relative error uses |a-b| / max(|a|, |b|, 1): at tiny gradient scales it
    degrades to absolute error, keeping the finite-difference noise floor
    (~1e-11 at step 1e-5) well below any meaningful tolerance. Coordinates
    whose +/-step evaluations land on different sides of a relu kink are
    excluded and listed in the report.
    """
    if step <= 0:
        raise ValueError("grad_check: step must be positive")
    _, grads = gradient(program, params, batch)
    coords: list[tuple[str, int]] = []
    for name, arr in params.items():
        coords.extend((name, i) for i in range(np.asarray(arr).size))
    rng = np.random.default_rng(seed)
    if len(coords) > n_coords:
        picked = rng.choice(len(coords), size=n_coords, replace=False)
        coords = [coords[i] for i in sorted(picked)]

    def eval_at(name, idx, delta):
        shifted = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
        shifted[name].reshape(-1)[idx] += delta
        loss, tape = forward(program, shifted, batch)
        return loss, tape.relu_signs

    per_param: dict[str, float] = {name: 0.0 for name in params}
    excluded: list[tuple[str, int]] = []
    checked = 0
    for name, idx in coords:
        lo, signs_lo = eval_at(name, idx, -step)
        hi, signs_hi = eval_at(name, idx, +step)
        kink = any(not np.array_equal(a, b) for a, b in zip(signs_lo, signs_hi))
        if kink:
            excluded.append((name, idx))
            continue
        fd = (hi - lo) / (2.0 * step)
        an = float(np.asarray(grads.get(name, np.zeros(np.shape(params[name])))).reshape(-1)[idx])
        err = abs(an - fd) / max(abs(an), abs(fd), 1.0)
        per_param[name] = max(per_param[name], err)
        checked += 1
    max_err = max(per_param.values()) if per_param else 0.0
    return GradCheckReport(
        per_param_max=per_param,
        max_rel_err=max_err,
        checked=checked,
        excluded=excluded,
        passed=max_err < tolerance,
        tolerance=tolerance,
    )
