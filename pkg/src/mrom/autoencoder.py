"""Convolutional autoencoder: architecture spec, parameters, scaling and checkpoints.

The encoder is restriction -> per-channel scaling -> conv layers -> flatten ->
dense layers.  The decoder mirrors it: dense layers -> reshape -> transposed
conv layers -> inverse scaling -> prolongation.  Every layer applies ELU except
the final decoder layer, which is the identity.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as tc
from .io import FormatError, Reader, Writer
from .tensor import ConvSpec, DimensionError, Tensor

AE_MAGIC = b"MROM-AE1"


# ---------------------------------------------------------------------------
# Architecture


@dataclass(frozen=True)
class AutoencoderSpec:
    """Architecture of a convolutional autoencoder.

    ``enc_convs`` are ordinary strided convolutions; ``dec_convs`` describe
    transposed convolutions in their own direction (in = channels received).
    ``enc_dense`` and ``dec_dense`` are ``(in, out)`` widths.
    """

    grid: tuple[int, ...]
    channels: int
    latent_dim: int
    enc_convs: tuple[ConvSpec, ...] = ()
    enc_dense: tuple[tuple[int, int], ...] = ()
    dec_dense: tuple[tuple[int, int], ...] = ()
    dec_convs: tuple[ConvSpec, ...] = ()
    activation: str = "elu"

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(int(n) for n in self.grid))
        object.__setattr__(self, "enc_convs", tuple(self.enc_convs))
        object.__setattr__(self, "dec_convs", tuple(self.dec_convs))
        object.__setattr__(self, "enc_dense", tuple(tuple(map(int, d)) for d in self.enc_dense))
        object.__setattr__(self, "dec_dense", tuple(tuple(map(int, d)) for d in self.dec_dense))
        self.validate()

    @property
    def spatial_rank(self) -> int:
        return len(self.grid)

    @property
    def state_dim(self) -> int:
        return self.channels * int(np.prod(self.grid))

    @property
    def code_extents(self) -> tuple[int, ...]:
        """Spatial extents after the encoder convolutions."""
        n = self.grid
        for c in self.enc_convs:
            n = tc.conv_output_shape(c, n)
        return n

    @property
    def flat_dim(self) -> int:
        c = self.enc_convs[-1].out_channels if self.enc_convs else self.channels
        return c * int(np.prod(self.code_extents))

    @property
    def decoder_extents(self) -> tuple[int, ...]:
        """Spatial extents entering the first transposed convolution."""
        n = self.grid
        for c in reversed(self.dec_convs):
            if any(ni % si for ni, si in zip(n, c.stride)):
                raise ValueError(f"grid {self.grid} not divisible by decoder strides")
            n = tuple(ni // si for ni, si in zip(n, c.stride))
        return n

    @property
    def decoder_flat_dim(self) -> int:
        c = self.dec_convs[0].in_channels if self.dec_convs else self.channels
        return c * int(np.prod(self.decoder_extents))

    def validate(self):
        if self.spatial_rank not in (1, 2) or any(n < 1 for n in self.grid):
            raise ValueError(f"grid must be 1 or 2 positive extents, got {self.grid}")
        if self.channels < 1 or self.latent_dim < 1:
            raise ValueError("channels and latent_dim must be positive")
        if self.activation != "elu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if not self.enc_dense or not self.dec_dense:
            raise ValueError("encoder and decoder need at least one dense layer")
        c = self.channels
        for i, cv in enumerate(self.enc_convs):
            if cv.spatial_rank != self.spatial_rank or cv.in_channels != c:
                raise DimensionError(f"encoder conv {i}: expected {c} input channels")
            c = cv.out_channels
        width = self.flat_dim
        for i, (a, b) in enumerate(self.enc_dense):
            if a != width:
                raise DimensionError(f"encoder dense {i}: input {a} != {width}")
            width = b
        if width != self.latent_dim:
            raise DimensionError(f"encoder output {width} != latent_dim {self.latent_dim}")
        for i, (a, b) in enumerate(self.dec_dense):
            if a != width:
                raise DimensionError(f"decoder dense {i}: input {a} != {width}")
            width = b
        if width != self.decoder_flat_dim:
            raise DimensionError(f"decoder dense output {width} != {self.decoder_flat_dim}")
        c = self.dec_convs[0].in_channels if self.dec_convs else self.channels
        for i, cv in enumerate(self.dec_convs):
            if cv.spatial_rank != self.spatial_rank or cv.in_channels != c:
                raise DimensionError(f"decoder tconv {i}: expected {c} input channels")
            c = cv.out_channels
        if c != self.channels:
            raise DimensionError(f"decoder emits {c} channels, state has {self.channels}")
        # the decoder must mirror the encoder
        if len(self.enc_convs) != len(self.dec_convs) or len(self.enc_dense) != len(self.dec_dense):
            raise DimensionError("decoder layer counts do not mirror the encoder")
        for e, d in zip(self.enc_convs, reversed(self.dec_convs)):
            if e.kernel != d.kernel or e.stride != d.stride:
                raise DimensionError("decoder kernels/strides do not mirror the encoder")
        for (a, b), (c2, d2) in zip(self.enc_dense, reversed(self.dec_dense)):
            if (a, b) != (d2, c2):
                raise DimensionError("decoder dense widths do not mirror the encoder")
        if self.decoder_extents != self.code_extents:
            raise DimensionError("decoder input extents differ from encoder code extents")

    def layer_shapes(self) -> list[tuple[str, list[tuple[int, ...]]]]:
        """Parameter tensor shapes, in layer order."""
        out = []
        for cv in self.enc_convs:
            out.append(("conv", [cv.filter_shape, (cv.out_channels,)]))
        for a, b in self.enc_dense:
            out.append(("dense", [(b, a + 1)]))
        for a, b in self.dec_dense:
            out.append(("dense", [(b, a + 1)]))
        for cv in self.dec_convs:
            out.append(("tconv", [cv.transposed().filter_shape, (cv.out_channels,)]))
        return out

    def n_params(self) -> int:
        return sum(int(np.prod(s)) for _, shapes in self.layer_shapes() for s in shapes)

    # -- text form used by checkpoints ------------------------------------

    def to_text(self) -> str:
        lines = [
            "grid=" + ",".join(map(str, self.grid)),
            f"channels={self.channels}",
            f"latent_dim={self.latent_dim}",
            f"activation={self.activation}",
        ]

        def conv(tag, cv):
            return (f"{tag}=kernel:{','.join(map(str, cv.kernel))};"
                    f"stride:{','.join(map(str, cv.stride))};"
                    f"in:{cv.in_channels};out:{cv.out_channels}")

        lines += [conv("enc_conv", cv) for cv in self.enc_convs]
        lines += [f"enc_dense={a},{b}" for a, b in self.enc_dense]
        lines += [f"dec_dense={a},{b}" for a, b in self.dec_dense]
        lines += [conv("dec_conv", cv) for cv in self.dec_convs]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "AutoencoderSpec":
        kw: dict = {"enc_convs": [], "dec_convs": [], "enc_dense": [], "dec_dense": []}
        rank = None
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"bad spec line {line!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key == "grid":
                kw["grid"] = tuple(int(v) for v in val.split(","))
                rank = len(kw["grid"])
            elif key in ("channels", "latent_dim"):
                kw[key] = int(val)
            elif key == "activation":
                kw[key] = val
            elif key in ("enc_dense", "dec_dense"):
                a, b = val.split(",")
                kw[key].append((int(a), int(b)))
            elif key in ("enc_conv", "dec_conv"):
                if rank is None:
                    raise FormatError("grid must precede conv layers")
                fields = dict(part.split(":") for part in val.split(";"))
                kw[key + "s"].append(ConvSpec(
                    rank,
                    tuple(int(v) for v in fields["kernel"].split(",")),
                    tuple(int(v) for v in fields["stride"].split(",")),
                    int(fields["in"]), int(fields["out"])))
            else:
                raise FormatError(f"unknown spec key {key!r}")
        try:
            return cls(**kw)
        except TypeError as exc:
            raise FormatError(str(exc)) from None


def conv_autoencoder_spec(grid: Sequence[int], channels: int, latent_dim: int,
                          kernel, enc_filters: Sequence[int], enc_strides: Sequence,
                          dec_filters: Sequence[int]) -> AutoencoderSpec:
    """Encoder convs then one dense layer to the latent space, with mirrored decoder."""
    grid = tuple(grid)
    d = len(grid)
    enc, c = [], channels
    for f, s in zip(enc_filters, enc_strides):
        enc.append(ConvSpec(d, kernel, s, c, f))
        c = f
    dec_strides = list(reversed(enc_strides))
    dec_in = [enc_filters[-1]] + list(dec_filters[:-1])
    dec = [ConvSpec(d, kernel, s, a, b) for s, a, b in zip(dec_strides, dec_in, dec_filters)]
    n = grid
    for cv in enc:
        n = tc.conv_output_shape(cv, n)
    flat = enc_filters[-1] * int(np.prod(n))
    dec_flat = dec_in[0] * int(np.prod(n))
    return AutoencoderSpec(grid, channels, latent_dim, tuple(enc), ((flat, latent_dim),),
                           ((latent_dim, dec_flat),), tuple(dec))


def burgers_spec(latent_dim: int, n: int = 256) -> AutoencoderSpec:
    """1-D architecture used for the Burgers model (kernel 25)."""
    return conv_autoencoder_spec((n,), 1, latent_dim, 25, (8, 16, 32, 64), (2, 4, 4, 4),
                                 (64, 32, 16, 1))


def reacting_spec(latent_dim: int, grid: Sequence[int] = (64, 32)) -> AutoencoderSpec:
    """2-D architecture used for the reacting flow (4 channels, 5x5 kernels)."""
    return conv_autoencoder_spec(tuple(grid), 4, latent_dim, 5, (8, 16, 32, 64), (2, 2, 2, 2),
                                 (64, 32, 16, 4))


# ---------------------------------------------------------------------------
# Scaling, restriction and prolongation


@dataclass
class ScalingOperator:
    """Per-channel map ``(v - lo) / (hi - lo)``; a constant channel uses denominator 1."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64).ravel()
        self.hi = np.asarray(self.hi, dtype=np.float64).ravel()
        if self.lo.shape != self.hi.shape:
            raise DimensionError("scaling bounds differ in length")

    @property
    def scale(self) -> np.ndarray:
        span = self.hi - self.lo
        return np.where(span > 0, span, 1.0)

    @classmethod
    def identity(cls, channels: int) -> "ScalingOperator":
        return cls(np.zeros(channels), np.ones(channels))

    @classmethod
    def fit(cls, states: np.ndarray, spec: AutoencoderSpec) -> "ScalingOperator":
        """Per-channel extrema of the columns of ``states`` (N x n_s)."""
        t = restrict(states.T, spec)
        axes = (0,) + tuple(range(2, t.ndim))
        return cls(t.min(axis=axes), t.max(axis=axes))

    def apply(self, t: Tensor, spatial_rank: int) -> Tensor:
        s = self.scale
        return tc.channel_affine(t, 1.0 / s, -self.lo / s, spatial_rank)

    def invert(self, t: Tensor, spatial_rank: int) -> Tensor:
        return tc.channel_affine(t, self.scale, self.lo, spatial_rank)


def restrict(x, spec: AutoencoderSpec):
    """Vector(s) of length N -> array(s) of shape (channels, *grid); channel-major."""
    shape = (spec.channels,) + spec.grid
    if isinstance(x, Tensor):
        return tc.reshape(x, 1, shape)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != spec.state_dim:
        raise DimensionError(f"state length {x.shape[-1]} != {spec.state_dim}")
    return x.reshape(x.shape[:-1] + shape)


def prolong(t, spec: AutoencoderSpec):
    """Inverse of :func:`restrict`."""
    k = spec.spatial_rank + 1
    if isinstance(t, Tensor):
        return tc.reshape(t, k, (spec.state_dim,))
    t = np.asarray(t)
    return t.reshape(t.shape[:t.ndim - k] + (spec.state_dim,))


# ---------------------------------------------------------------------------
# Parameters


ParameterSet = list  # list of per-layer lists of float64 arrays, in layer order


def init_params(spec: AutoencoderSpec, scheme: str = "xavier", seed: int = 0) -> ParameterSet:
    """Xavier-uniform or He-normal weights, zero biases."""
    if scheme not in ("xavier", "he"):
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    params = []
    for kind, shapes in spec.layer_shapes():
        wshape = shapes[0]
        if kind == "dense":
            fan_out, fan_in = wshape[0], wshape[1] - 1
        else:
            k = int(np.prod(wshape[2:]))
            # filter layout is (C_out, C_in) of the correlation; a tconv swaps roles
            a, b = wshape[0] * k, wshape[1] * k
            fan_in, fan_out = (b, a) if kind == "conv" else (a, b)
        if scheme == "xavier":
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            W = rng.uniform(-bound, bound, size=wshape)
        else:
            W = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=wshape)
        if kind == "dense":
            W[:, 0] = 0.0
            params.append([W])
        else:
            params.append([W, np.zeros(shapes[1])])
    return params


def flatten_params(params: ParameterSet) -> np.ndarray:
    return np.concatenate([a.ravel() for layer in params for a in layer])


def unflatten_params(theta: np.ndarray, spec: AutoencoderSpec) -> ParameterSet:
    out, pos = [], 0
    for _, shapes in spec.layer_shapes():
        layer = []
        for s in shapes:
            n = int(np.prod(s))
            layer.append(np.array(theta[pos:pos + n]).reshape(s))
            pos += n
        out.append(layer)
    if pos != theta.size:
        raise DimensionError(f"parameter vector length {theta.size} != {pos}")
    return out


def check_params(spec: AutoencoderSpec, params: ParameterSet):
    shapes = spec.layer_shapes()
    if len(params) != len(shapes):
        raise DimensionError(f"expected {len(shapes)} layers, got {len(params)}")
    for i, ((kind, want), got) in enumerate(zip(shapes, params)):
        if len(got) != len(want):
            raise DimensionError(f"layer {i} ({kind}): expected {len(want)} tensors")
        for w, g in zip(want, got):
            if tuple(np.shape(g)) != tuple(w):
                raise DimensionError(f"layer {i} ({kind}): shape {np.shape(g)} != {w}")
            if not np.all(np.isfinite(g)):
                raise ValueError(f"layer {i} ({kind}): non-finite parameters")


# ---------------------------------------------------------------------------
# Networks


def encoder_net(spec: AutoencoderSpec, layers: Sequence[Sequence[Tensor]], t: Tensor) -> Tensor:
    """Scaled field(s) (..., C, *grid) -> latent code(s) (..., p)."""
    d = spec.spatial_rank
    i = 0
    for cv in spec.enc_convs:
        t = tc.elu(tc.conv_forward(t, cv, *layers[i]))
        i += 1
    t = tc.reshape(t, d + 1, (spec.flat_dim,))
    for _ in spec.enc_dense:
        t = tc.elu(tc.dense_forward(t, *layers[i]))
        i += 1
    return t


def decoder_net(spec: AutoencoderSpec, layers: Sequence[Sequence[Tensor]], z: Tensor) -> Tensor:
    """Latent code(s) (..., p) -> scaled field(s) (..., C, *grid)."""
    i = len(spec.enc_convs) + len(spec.enc_dense)
    n_last = len(spec.dec_dense) + len(spec.dec_convs)
    k = 0
    t = z
    for _ in spec.dec_dense:
        t = tc.dense_forward(t, *layers[i])
        k += 1
        i += 1
        if k < n_last:
            t = tc.elu(t)
    c0 = spec.dec_convs[0].in_channels if spec.dec_convs else spec.channels
    t = tc.reshape(t, 1, (c0,) + spec.decoder_extents)
    for cv in spec.dec_convs:
        t = tc.tconv_forward(t, cv, *layers[i])
        k += 1
        i += 1
        if k < n_last:
            t = tc.elu(t)
    return t


@dataclass
class AutoencoderModel:
    """Trained (or initialized) autoencoder with its scaling operator."""

    spec: AutoencoderSpec
    params: ParameterSet
    scaling: ScalingOperator = None
    _layers: list = field(default=None, repr=False)

    def __post_init__(self):
        check_params(self.spec, self.params)
        if self.scaling is None:
            self.scaling = ScalingOperator.identity(self.spec.channels)
        if self.scaling.lo.size != self.spec.channels:
            raise DimensionError("scaling channel count mismatch")
        self._layers = [[Tensor(a) for a in layer] for layer in self.params]

    @property
    def latent_dim(self) -> int:
        return self.spec.latent_dim

    @property
    def state_dim(self) -> int:
        return self.spec.state_dim

    def encode_tensor(self, x: Tensor) -> Tensor:
        d = self.spec.spatial_rank
        t = self.scaling.apply(restrict(x, self.spec), d)
        return encoder_net(self.spec, self._layers, t)

    def decode_tensor(self, z: Tensor) -> Tensor:
        d = self.spec.spatial_rank
        t = self.scaling.invert(decoder_net(self.spec, self._layers, z), d)
        return prolong(t, self.spec)

    def encode(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.state_dim:
            raise DimensionError(f"state length {x.shape[-1]} != {self.state_dim}")
        return self.encode_tensor(Tensor(x)).data.copy()

    def decode(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.latent_dim:
            raise DimensionError(f"latent length {z.shape[-1]} != {self.latent_dim}")
        return self.decode_tensor(Tensor(z)).data.copy()

    def decode_with_jacobian(self, z) -> tuple[np.ndarray, np.ndarray]:
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.latent_dim,):
            raise DimensionError(f"latent shape {z.shape} != ({self.latent_dim},)")
        return tc.jacobian_forward(self.decode_tensor, z)

    def decoder_jacobian(self, z) -> np.ndarray:
        return self.decode_with_jacobian(z)[1]

    def encoder_jvp(self, x, v) -> np.ndarray:
        return tc.jvp_forward(self.encode_tensor, np.asarray(x, dtype=np.float64), v)

    def encode_with_jacobian_action(self, x, V) -> tuple[np.ndarray, np.ndarray]:
        """``h_enc(x)`` and ``dh_enc/dx(x) @ V`` for an ``N x k`` matrix ``V``."""
        x = np.asarray(x, dtype=np.float64)
        V = np.asarray(V, dtype=np.float64)
        if x.shape != (self.state_dim,) or V.ndim != 2 or V.shape[0] != self.state_dim:
            raise DimensionError(f"expected x ({self.state_dim},) and V ({self.state_dim}, k)")
        out = self.encode_tensor(Tensor(x, np.ascontiguousarray(V.T)))
        return out.data.copy(), out.tangent.T.copy()

    def reconstruct(self, x) -> np.ndarray:
        return self.decode(self.encode(x))


def assemble(spec: AutoencoderSpec, params: ParameterSet,
             scaling: ScalingOperator | None = None) -> AutoencoderModel:
    return AutoencoderModel(spec, params, scaling)


# ---------------------------------------------------------------------------
# Cost model


def flop_estimate(spec: AutoencoderSpec, act_cost: float = 1.0) -> dict:
    """Floating-point operation counts of one encoder and one decoder evaluation.

    Dense: ``2 out (in + 1) + c out``; conv/tconv: ``2 |out| prod(k) C_in + c |out|``
    where ``|out|`` is the output size; scaling and its inverse cost ``2N`` each;
    restriction and prolongation are free; the identity final decoder layer carries no activation term.

    Returns ``{"layers": [(name, flops), ...], "encoder", "decoder", "total"}``.
    """
    N = spec.state_dim
    n_dec = len(spec.dec_dense) + len(spec.dec_convs)

    def conv_cost(cv, n_out, act):
        size = cv.out_channels * int(np.prod(n_out))
        return 2.0 * size * int(np.prod(cv.kernel)) * cv.in_channels + (act_cost * size if act else 0.0)

    def dense_cost(a, b, act):
        return 2.0 * b * (a + 1) + (act_cost * b if act else 0.0)

    enc = [("restrict", 0.0), ("scale", 2.0 * N)]
    n = spec.grid
    for i, cv in enumerate(spec.enc_convs):
        n = tc.conv_output_shape(cv, n)
        enc.append((f"enc_conv{i}", conv_cost(cv, n, True)))
    for i, (a, b) in enumerate(spec.enc_dense):
        enc.append((f"enc_dense{i}", dense_cost(a, b, True)))
    dec, k = [], 0
    for i, (a, b) in enumerate(spec.dec_dense):
        k += 1
        dec.append((f"dec_dense{i}", dense_cost(a, b, k < n_dec)))
    n = spec.decoder_extents
    for i, cv in enumerate(spec.dec_convs):
        k += 1
        n = tc.conv_output_shape(cv, n, transposed=True)
        dec.append((f"dec_tconv{i}", conv_cost(cv, n, k < n_dec)))
    dec += [("unscale", 2.0 * N), ("prolong", 0.0)]
    e = sum(f for _, f in enc)
    d = sum(f for _, f in dec)
    return {"layers": enc + dec, "encoder": e, "decoder": d, "total": e + d}


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(model: AutoencoderModel, path):
    """Write ``MROM-AE1``: spec text, parameter tensors in layer order, scaling bounds."""
    w = Writer(AE_MAGIC)
    w.text(model.spec.to_text())
    for layer in model.params:
        for a in layer:
            w.tensor(a)
    w.tensor(model.scaling.lo)
    w.tensor(model.scaling.hi)
    w.save(path)


def load_checkpoint(path) -> AutoencoderModel:
    r = Reader.open(path, AE_MAGIC)
    spec = AutoencoderSpec.from_text(r.text())
    params = []
    for kind, shapes in spec.layer_shapes():
        layer = []
        for s in shapes:
            a = r.tensor()
            if a.shape != tuple(s):
                raise FormatError(f"{kind} tensor shape {a.shape} != {tuple(s)}")
            layer.append(a)
        params.append(layer)
    lo, hi = r.tensor(), r.tensor()
    r.done()
    return AutoencoderModel(spec, params, ScalingOperator(lo, hi))
