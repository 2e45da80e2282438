"""Dense float64 tensors with reverse-mode (tape) and forward-mode (dual) derivatives.

Only the primitives the convolutional autoencoder needs are provided: dense
(affine) layers, strided convolutions with half padding, their transposes,
ELU, reshapes, a fixed per-channel affine map, and a squared-error reduction.

Every primitive accepts arbitrary leading batch axes.  Reverse mode is
recorded on a :class:`Tape` (one node per primitive).  Forward mode is
carried by ``Tensor.tangent``; a tangent may carry extra leading axes, one per
direction, so a full Jacobian can be pushed through a network in one pass.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DEBUG = False


class DimensionError(ValueError):
    pass


class Tensor:
    """Immutable float64 array, optionally carrying a forward-mode tangent."""

    __slots__ = ("data", "tangent")

    def __init__(self, data, tangent=None, *, check: bool = True):
        if check:
            arr = np.array(data, dtype=np.float64)
            if arr.ndim == 0:
                arr = arr.reshape(1)
            if not np.all(np.isfinite(arr)):
                raise ValueError("tensor input contains NaN or Inf")
        else:
            arr = data
        arr.flags.writeable = False
        self.data = arr
        if tangent is not None:
            tangent = np.asarray(tangent, dtype=np.float64)
            if tangent.shape[tangent.ndim - arr.ndim:] != arr.shape:
                raise DimensionError(
                    f"tangent shape {tangent.shape} does not end with {arr.shape}")
        self.tangent = tangent

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


def _out(data, tangent=None) -> Tensor:
    if DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value produced")
    return Tensor(data, tangent, check=False)


# ---------------------------------------------------------------------------
# Tape

_local = threading.local()


def _active() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Records primitive applications for later reverse-mode replay.

    Use as a context manager; only tensors that were ``watch``-ed, or that
    were computed from watched tensors while the tape was active, are tracked.
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.leaves: dict[int, Tensor] = {}
        self._tracked: set[int] = set()

    def __enter__(self):
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()

    def watch(self, t: Tensor) -> Tensor:
        self.leaves[id(t)] = t
        self._tracked.add(id(t))
        return t

    def tracks(self, t: Tensor) -> bool:
        return id(t) in self._tracked

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable):
        self.nodes.append((out, inputs, vjp))
        self._tracked.add(id(out))


def _record(out: Tensor, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    tape = _active()
    if tape is not None and any(tape.tracks(t) for t in inputs):
        tape._record(out, inputs, vjp)
    return out


def vjp_backward(tape: Tape, output: Tensor, seed) -> dict[Tensor, np.ndarray]:
    """Gradient of ``<seed, output>`` with respect to every watched tensor."""
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != output.shape:
        raise DimensionError(f"seed shape {seed.shape} != output shape {output.shape}")
    grads: dict[int, np.ndarray] = {id(output): seed}
    for out, inputs, vjp in reversed(tape.nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for t, gi in zip(inputs, vjp(g)):
            if gi is None or not tape.tracks(t):
                continue
            if id(t) in grads:
                grads[id(t)] = grads[id(t)] + gi
            else:
                grads[id(t)] = gi
    return {t: grads.get(i, np.zeros(t.shape)) for i, t in tape.leaves.items()}


def jvp_forward(fn: Callable[[Tensor], Tensor], x, direction) -> np.ndarray:
    """Directional derivative of ``fn`` at ``x`` along ``direction`` (dual numbers)."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    v = np.asarray(direction, dtype=np.float64)
    if v.shape != x.shape:
        raise DimensionError(f"direction shape {v.shape} != input shape {x.shape}")
    out = fn(Tensor(x.data, v, check=False))
    if out.tangent is None:
        return np.zeros(out.shape)
    return out.tangent


def jacobian_forward(fn: Callable[[Tensor], Tensor], x) -> tuple[np.ndarray, np.ndarray]:
    """Value and full Jacobian of a vector function via one multi-direction pass.

    Returns ``(fn(x), J)`` with ``J[:, i] = d fn / d x_i``.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    (n,) = x.shape
    out = fn(Tensor(x.data, np.eye(n), check=False))
    tangent = out.tangent if out.tangent is not None else np.zeros((n,) + out.shape)
    return out.data, tangent.reshape(n, -1).T


# ---------------------------------------------------------------------------
# Dense layers


def dense_forward(x: Tensor, weights: Tensor) -> Tensor:
    """Affine map ``weights @ [1; x]`` applied over the last axis of ``x``."""
    W = weights.data
    if W.ndim != 2 or x.shape[-1] + 1 != W.shape[1]:
        raise DimensionError(
            f"dense weights {W.shape} incompatible with input of width {x.shape[-1]}")
    A = W[:, 1:]
    y = x.data @ A.T + W[:, 0]
    tan = None if x.tangent is None else x.tangent @ A.T
    out = _out(y, tan)

    def vjp(g):
        g2 = g.reshape(-1, W.shape[0])
        x2 = x.data.reshape(-1, A.shape[1])
        gW = np.empty_like(W)
        gW[:, 0] = g2.sum(axis=0)
        gW[:, 1:] = g2.T @ x2
        return g @ A, gW

    return _record(out, (x, weights), vjp)


# ---------------------------------------------------------------------------
# Convolutions


@dataclass(frozen=True)
class ConvSpec:
    """Hyperparameters of one (transposed) convolutional layer with half padding."""

    spatial_rank: int
    kernel: tuple[int, ...]
    stride: tuple[int, ...]
    in_channels: int
    out_channels: int

    def __post_init__(self):
        if self.spatial_rank not in (1, 2):
            raise ValueError("spatial_rank must be 1 or 2")
        for name in ("kernel", "stride"):
            val = getattr(self, name)
            val = (val,) * self.spatial_rank if isinstance(val, int) else tuple(val)
            object.__setattr__(self, name, val)
            if len(val) != self.spatial_rank or any(v < 1 for v in val):
                raise ValueError(f"{name} must hold {self.spatial_rank} positive ints")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be positive")

    @property
    def pad_left(self) -> tuple[int, ...]:
        return tuple((k - 1) // 2 for k in self.kernel)

    @property
    def filter_shape(self) -> tuple[int, ...]:
        return (self.out_channels, self.in_channels) + self.kernel

    def transposed(self) -> "ConvSpec":
        return ConvSpec(self.spatial_rank, self.kernel, self.stride,
                        self.out_channels, self.in_channels)


def conv_output_shape(spec: ConvSpec, in_extents: Sequence[int],
                      transposed: bool = False) -> tuple[int, ...]:
    if len(in_extents) != spec.spatial_rank or any(n < 1 for n in in_extents):
        raise ValueError(f"need {spec.spatial_rank} positive extents, got {in_extents}")
    if transposed:
        return tuple(n * s for n, s in zip(in_extents, spec.stride))
    return tuple(-(-n // s) for n, s in zip(in_extents, spec.stride))


def _windows(x, kernel, stride, pad_left, n_out):
    """Strided patches of ``x`` (B, C, *n) -> (B, C, *n_out, *kernel), zero-extended."""
    d = len(kernel)
    n = x.shape[2:]
    need = [(m - 1) * s + k for m, s, k in zip(n_out, stride, kernel)]
    pads = [(0, 0), (0, 0)] + [(pl, max(L - pl - ni, 0)) for pl, L, ni in zip(pad_left, need, n)]
    xp = np.pad(x, pads)
    xp = xp[(slice(None), slice(None)) + tuple(slice(0, L) for L in need)]
    win = sliding_window_view(xp, kernel, axis=tuple(range(2, 2 + d)))
    return win[(slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)]


def _scatter(col, kernel, stride, pad_left, n_in):
    """Adjoint of ``_windows``: col (C, *kernel, B, *n_out) -> (B, C, *n_in).

    Kernel axes lead so that each tap adds a contiguous block.
    """
    d = len(kernel)
    C, B = col.shape[0], col.shape[1 + d]
    n_out = col.shape[2 + d:]
    need = [(m - 1) * s + k for m, s, k in zip(n_out, stride, kernel)]
    size = [max(L, pl + ni) for L, pl, ni in zip(need, pad_left, n_in)]
    out = np.zeros((C, B) + tuple(size))
    for offset in np.ndindex(*kernel):
        dst = tuple(slice(o, o + s * (m - 1) + 1, s) for o, s, m in zip(offset, stride, n_out))
        out[(slice(None), slice(None)) + dst] += col[(slice(None),) + offset]
    out = out[(slice(None), slice(None)) + tuple(slice(pl, pl + ni) for pl, ni in zip(pad_left, n_in))]
    return np.ascontiguousarray(out.swapaxes(0, 1))


def _correlate(x, W, spec, n_out):
    d = spec.spatial_rank
    win = _windows(x, spec.kernel, spec.stride, spec.pad_left, n_out)
    y = np.tensordot(win, W, axes=([1] + list(range(2 + d, 2 + 2 * d)), list(range(1, 2 + d))))
    return np.moveaxis(y, -1, 1)


def _correlate_adjoint(g, W, spec, n_in):
    d = spec.spatial_rank
    col = np.tensordot(W, g, axes=([0], [1]))          # (C_in, *k, B, *n_out)
    return _scatter(col, spec.kernel, spec.stride, spec.pad_left, n_in)


def _filter_grad(g, x, spec, n_out):
    d = spec.spatial_rank
    win = _windows(x, spec.kernel, spec.stride, spec.pad_left, n_out)
    axes = [0] + list(range(2, 2 + d))
    return np.tensordot(g, win, axes=(axes, axes))      # (C_out, C_in, *k)


def _as_batch(a, trailing):
    lead = a.shape[:a.ndim - trailing]
    return a.reshape((-1,) + a.shape[a.ndim - trailing:]), lead


def _check_conv(x: Tensor, spec: ConvSpec, filters: Tensor, bias: Tensor, c_in, c_out):
    d = spec.spatial_rank
    if x.data.ndim < d + 1 or x.shape[-d - 1] != c_in:
        raise DimensionError(f"input {x.shape} does not have {c_in} channels")
    if bias.shape != (c_out,):
        raise DimensionError(f"bias shape {bias.shape} != ({c_out},)")


def conv_forward(x: Tensor, spec: ConvSpec, filters: Tensor, bias: Tensor) -> Tensor:
    """Strided cross-correlation with half padding and a per-channel bias.

    ``x`` has shape (..., C_in, *n); ``filters`` has shape (C_out, C_in, *k).
    """
    _check_conv(x, spec, filters, bias, spec.in_channels, spec.out_channels)
    if filters.shape != spec.filter_shape:
        raise DimensionError(f"filter shape {filters.shape} != {spec.filter_shape}")
    d = spec.spatial_rank
    n = x.shape[-d:]
    n_out = conv_output_shape(spec, n)
    xb, lead = _as_batch(x.data, d + 1)
    W = filters.data
    bshape = (-1,) + (1,) * d
    y = _correlate(xb, W, spec, n_out) + bias.data.reshape(bshape)
    tan = None
    if x.tangent is not None:
        tb, tlead = _as_batch(x.tangent, d + 1)
        tan = _correlate(tb, W, spec, n_out).reshape(tlead + y.shape[1:])
    out = _out(y.reshape(lead + y.shape[1:]), tan)

    def vjp(g):
        gb = g.reshape((-1,) + g.shape[g.ndim - d - 1:])
        gx = _correlate_adjoint(gb, W, spec, n).reshape(x.shape)
        gW = _filter_grad(gb, xb, spec, n_out)
        gB = gb.sum(axis=(0,) + tuple(range(2, 2 + d)))
        return gx, gW, gB

    return _record(out, (x, filters, bias), vjp)


def tconv_forward(x: Tensor, spec: ConvSpec, filters: Tensor, bias: Tensor) -> Tensor:
    """Transposed convolution: the exact adjoint of ``conv_forward`` plus a bias.

    ``spec`` describes this layer (C_in = channels of ``x``); ``filters`` has
    shape (C_in, C_out, *k), i.e. the filter bank of the mirrored convolution.
    The output extent is ``stride * n`` per spatial dimension.
    """
    _check_conv(x, spec, filters, bias, spec.in_channels, spec.out_channels)
    fspec = spec.transposed()          # the forward convolution this layer transposes
    if filters.shape != fspec.filter_shape:
        raise DimensionError(f"filter shape {filters.shape} != {fspec.filter_shape}")
    d = spec.spatial_rank
    m = x.shape[-d:]
    n = conv_output_shape(spec, m, transposed=True)
    xb, lead = _as_batch(x.data, d + 1)
    W = filters.data
    y = _correlate_adjoint(xb, W, fspec, n) + bias.data.reshape((-1,) + (1,) * d)
    tan = None
    if x.tangent is not None:
        tb, tlead = _as_batch(x.tangent, d + 1)
        tan = _correlate_adjoint(tb, W, fspec, n).reshape(tlead + y.shape[1:])
    out = _out(y.reshape(lead + y.shape[1:]), tan)

    def vjp(g):
        gb = g.reshape((-1,) + g.shape[g.ndim - d - 1:])
        gx = _correlate(gb, W, fspec, m).reshape(x.shape)
        gW = _filter_grad(xb, gb, fspec, m)
        gB = gb.sum(axis=(0,) + tuple(range(2, 2 + d)))
        return gx, gW, gB

    return _record(out, (x, filters, bias), vjp)


# ---------------------------------------------------------------------------
# Elementwise and shape primitives


def elu(x: Tensor) -> Tensor:
    v = x.data
    neg = np.exp(np.minimum(v, 0.0))
    y = np.where(v >= 0, v, neg - 1.0)
    dy = np.where(v >= 0, 1.0, neg)
    tan = None if x.tangent is None else x.tangent * dy
    out = _out(y, tan)
    return _record(out, (x,), lambda g: (g * dy,))


def reshape(x: Tensor, n_trailing: int, shape: Sequence[int]) -> Tensor:
    """Replace the last ``n_trailing`` axes of ``x`` by ``shape``."""
    shape = tuple(shape)
    lead = x.shape[:x.data.ndim - n_trailing]
    old = x.shape[x.data.ndim - n_trailing:]
    if int(np.prod(old)) != int(np.prod(shape)):
        raise DimensionError(f"cannot reshape {old} to {shape}")
    tan = None
    if x.tangent is not None:
        tl = x.tangent.shape[:x.tangent.ndim - n_trailing]
        tan = x.tangent.reshape(tl + shape)
    out = _out(x.data.reshape(lead + shape), tan)
    return _record(out, (x,), lambda g: (g.reshape(x.shape),))


def channel_affine(x: Tensor, scale, shift, spatial_rank: int) -> Tensor:
    """``x * scale[c] + shift[c]`` for channel axis ``-spatial_rank-1`` (fixed, untrained)."""
    bshape = (-1,) + (1,) * spatial_rank
    a = np.asarray(scale, dtype=np.float64).reshape(bshape)
    b = np.asarray(shift, dtype=np.float64).reshape(bshape)
    tan = None if x.tangent is None else x.tangent * a
    out = _out(x.data * a + b, tan)
    return _record(out, (x,), lambda g: (g * a,))


def squared_error(x: Tensor, target, n_trailing: int) -> Tensor:
    """Per-sample ``||x - target||^2`` summed over the last ``n_trailing`` axes."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    diff = x.data - t
    red = tuple(range(diff.ndim - n_trailing, diff.ndim))
    y = np.atleast_1d(np.sum(diff * diff, axis=red))
    tan = None
    if x.tangent is not None:
        off = x.tangent.ndim - diff.ndim
        tan = np.sum(2.0 * diff * x.tangent, axis=tuple(a + off for a in red))
        tan = tan.reshape(x.tangent.shape[:off] + y.shape)
    out = _out(y, tan)

    def vjp(g):
        g = np.asarray(g).reshape(diff.shape[:diff.ndim - n_trailing] + (1,) * n_trailing)
        return (2.0 * g * diff,)

    return _record(out, (x,), vjp)
