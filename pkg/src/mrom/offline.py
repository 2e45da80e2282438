"""Snapshots, POD, and autoencoder training with Adam, minibatches and early stopping."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as tc
from .autoencoder import (AutoencoderModel, AutoencoderSpec, ScalingOperator, decoder_net,
                          encoder_net, flatten_params, init_params, restrict, unflatten_params)
from .fom.core import Trajectory
from .io import FormatError, Reader, Writer
from .tensor import Tape, Tensor

SNP_MAGIC = b"MROM-SNP"
POD_MAGIC = b"MROM-POD"
NO_STEP = 2**64 - 1


class RankError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training diverged (non-finite loss) in epoch {epoch}")
        self.epoch = epoch


# ---------------------------------------------------------------------------
# Snapshots


def select_steps(n_steps: int, rule: str = "all", m: int | None = None) -> list[int]:
    """Time indices (1-based) kept by a subset rule.

    ``all``: every step; ``first``: steps 1..m; ``equispaced``: m equally spaced
    steps ending at the final step.
    """
    if rule == "all":
        return list(range(1, n_steps + 1))
    if m is None or not 1 <= m <= n_steps:
        raise ValueError(f"subset size must lie in [1, {n_steps}], got {m}")
    if rule == "first":
        return list(range(1, m + 1))
    if rule == "equispaced":
        return [(i + 1) * n_steps // m for i in range(m)]
    raise ValueError(f"unknown subset rule {rule!r}")


@dataclass
class SnapshotMatrix:
    """Centered snapshots ``x^n(mu) - x^0(mu)`` as columns, with their provenance."""

    W: np.ndarray
    params: np.ndarray                  # (n_s, n_mu); NaN rows for the zero column
    steps: np.ndarray                   # (n_s,) step indices; NO_STEP for the zero column
    zero_column: bool = False

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.params = np.atleast_2d(np.asarray(self.params, dtype=np.float64))
        self.steps = np.asarray(self.steps, dtype=np.uint64)
        n_s = self.W.shape[1]
        if self.params.shape[0] != n_s or self.steps.shape != (n_s,):
            raise ValueError("provenance does not match the column count")

    @property
    def n_dofs(self) -> int:
        return self.W.shape[0]

    @property
    def n_snapshots(self) -> int:
        return self.W.shape[1]

    def with_zero_column(self) -> "SnapshotMatrix":
        if self.zero_column:
            return self
        W = np.hstack([self.W, np.zeros((self.n_dofs, 1))])
        params = np.vstack([self.params, np.full((1, self.params.shape[1]), np.nan)])
        return SnapshotMatrix(W, params, np.append(self.steps, np.uint64(NO_STEP)), True)

    def save(self, path):
        w = Writer(SNP_MAGIC)
        w.u64(self.n_dofs)
        w.u64(self.n_snapshots)
        w.u64(self.params.shape[1])
        w.u32(int(self.zero_column))
        for mu, step in zip(self.params, self.steps):
            for v in mu:
                w.f64(v)
            w.u64(int(step))
        w.array(self.W, order="F")
        w.save(path)

    @classmethod
    def load(cls, path) -> "SnapshotMatrix":
        r = Reader.open(path, SNP_MAGIC)
        N, n_s, n_mu = r.u64(), r.u64(), r.u64()
        zero = bool(r.u32())
        params = np.empty((n_s, n_mu))
        steps = np.empty(n_s, dtype=np.uint64)
        for i in range(n_s):
            params[i] = [r.f64() for _ in range(n_mu)]
            steps[i] = r.u64()
        W = np.ascontiguousarray(r.array((N, n_s), order="F"))
        r.done()
        return cls(W, params, steps, zero)


def collect_snapshots(trajectories: Sequence[Trajectory], rule: str = "all",
                      m: int | None = None, append_zero: bool = False) -> SnapshotMatrix:
    if not trajectories:
        raise ValueError("no trajectories")
    N = trajectories[0].states.shape[0]
    cols, params, steps = [], [], []
    for tr in trajectories:
        if tr.states.shape[0] != N:
            raise ValueError(f"trajectory state dimension {tr.states.shape[0]} != {N}")
        idx = select_steps(tr.n_steps, rule, m)
        cols.append(tr.states[:, idx] - tr.states[:, :1])
        params += [tr.mu] * len(idx)
        steps += idx
    snaps = SnapshotMatrix(np.hstack(cols), np.array(params), np.array(steps, dtype=np.uint64))
    return snaps.with_zero_column() if append_zero else snaps


# ---------------------------------------------------------------------------
# POD


@dataclass
class PodBasis:
    phi: np.ndarray
    sigma: np.ndarray

    @property
    def dim(self) -> int:
        return self.phi.shape[1]

    def project(self, X) -> np.ndarray:
        return self.phi @ (self.phi.T @ X)

    def truncate(self, p: int) -> "PodBasis":
        if not 1 <= p <= self.dim:
            raise RankError(f"p={p} outside [1, {self.dim}]")
        return PodBasis(self.phi[:, :p].copy(), self.sigma[:p].copy())

    def save(self, path):
        w = Writer(POD_MAGIC)
        w.tensor(self.phi)
        w.tensor(self.sigma)
        w.save(path)

    @classmethod
    def load(cls, path) -> "PodBasis":
        r = Reader.open(path, POD_MAGIC)
        phi, sigma = r.tensor(), r.tensor()
        r.done()
        if phi.ndim != 2 or sigma.shape != (phi.shape[1],):
            raise FormatError("inconsistent POD basis extents")
        return cls(phi, sigma)


def jacobi_eigh(G, tol: float = 1e-14, max_sweeps: int = 100):
    """Cyclic Jacobi eigensolver for a symmetric matrix; eigenvalues descending."""
    A = np.array(G, dtype=np.float64)
    n = A.shape[0]
    V = np.eye(n)
    scale = max(np.linalg.norm(A), 1e-300)
    for _ in range(max_sweeps):
        off = np.sqrt(max(np.sum(A * A) - np.sum(np.diag(A) ** 2), 0.0))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap, aq = A[:, p].copy(), A[:, q].copy()
                A[:, p], A[:, q] = c * ap - s * aq, s * ap + c * aq
                ap, aq = A[p, :].copy(), A[q, :].copy()
                A[p, :], A[q, :] = c * ap - s * aq, s * ap + c * aq
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p], V[:, q] = c * vp - s * vq, s * vp + c * vq
    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]


def singular_values(W, method: str = "svd") -> np.ndarray:
    return _left_svd(W, method)[1]


def _left_svd(W, method):
    W = np.asarray(W, dtype=np.float64)
    if method == "svd":
        U, s, _ = np.linalg.svd(W, full_matrices=False)
        return U, s
    if method == "jacobi":
        N, n_s = W.shape
        if n_s <= N:
            lam, V = jacobi_eigh(W.T @ W)
            s = np.sqrt(np.maximum(lam, 0.0))
            keep = s > 0
            U = np.zeros((N, n_s))
            U[:, keep] = (W @ V[:, keep]) / s[keep]
            return U, s
        lam, U = jacobi_eigh(W @ W.T)
        return U, np.sqrt(np.maximum(lam, 0.0))
    raise ValueError(f"unknown POD method {method!r}")


def pod_basis(W, p: int, method: str = "svd", rank_tol: float = 1e-12) -> PodBasis:
    """Leading ``p`` left singular vectors of ``W``.

    ``method="svd"`` uses LAPACK; ``"jacobi"`` is the method of snapshots with a
    cyclic Jacobi eigensolver.
    """
    if isinstance(W, SnapshotMatrix):
        W = W.W
    if p < 1 or p > min(W.shape):
        raise RankError(f"p={p} outside [1, {min(W.shape)}]")
    U, s = _left_svd(W, method)
    if s[0] == 0.0 or s[p - 1] / s[0] < rank_tol:
        raise RankError(f"p={p} exceeds the numerical rank (sigma_p/sigma_1 = "
                        f"{s[p - 1] / s[0] if s[0] else 0.0:.3e})")
    phi = U[:, :p].copy()
    # fix the sign so the largest entry of each vector is positive
    flip = np.sign(phi[np.argmax(np.abs(phi), axis=0), np.arange(p)])
    return PodBasis(phi * flip, s[:p].copy())


def projection_error(X, phi) -> float:
    """Relative error of the orthogonal projection of the columns of ``X`` onto ``range(phi)``."""
    nx = np.linalg.norm(X)
    if nx == 0:
        return 0.0
    return float(np.linalg.norm(X - phi @ (phi.T @ X)) / nx)


# ---------------------------------------------------------------------------
# Loss and optimizer


def l2_loss(x, model: AutoencoderModel) -> float:
    """``||x - h(x)||^2`` in state space."""
    x = np.asarray(x, dtype=np.float64)
    return float(np.sum((x - model.reconstruct(x)) ** 2))


def network_loss(spec: AutoencoderSpec, layers, scaled_batch: Tensor) -> Tensor:
    """Per-sample ``||s - h(s)||^2`` on scaled fields (B, C, *grid)."""
    out = decoder_net(spec, layers, encoder_net(spec, layers, scaled_batch))
    return tc.squared_error(out, scaled_batch, spec.spatial_rank + 1)


def loss_and_gradient(spec: AutoencoderSpec, theta: np.ndarray, scaled_batch: np.ndarray):
    """Mean per-sample loss and its gradient with respect to the flat parameter vector."""
    params = unflatten_params(theta, spec)
    layers = [[Tensor(a, check=False) for a in layer] for layer in params]
    x = Tensor(scaled_batch, check=False)
    with Tape() as tape:
        for layer in layers:
            for t in layer:
                tape.watch(t)
        loss = network_loss(spec, layers, x)
    B = loss.shape[0]
    grads = tc.vjp_backward(tape, loss, np.full(B, 1.0 / B))
    g = np.concatenate([grads[t].ravel() for layer in layers for t in layer])
    return float(loss.data.mean()), g


def batch_losses(spec, theta, scaled, chunk: int = 256) -> np.ndarray:
    params = unflatten_params(theta, spec)
    layers = [[Tensor(a, check=False) for a in layer] for layer in params]
    out = [network_loss(spec, layers, Tensor(scaled[i:i + chunk], check=False)).data
           for i in range(0, scaled.shape[0], chunk)]
    return np.concatenate(out) if out else np.zeros(0)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_update(theta, grad, state: AdamState, lr: float = 1e-4, beta1: float = 0.9,
                beta2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam step; returns ``(theta, state)`` (new arrays)."""
    t = state.step + 1
    m = beta1 * state.m
    m += (1.0 - beta1) * grad
    v = beta2 * state.v
    v += (1.0 - beta2) * np.square(grad)
    # lr mhat / (sqrt(vhat) + eps) with both bias corrections folded into scalars
    c2 = np.sqrt(1.0 - beta2 ** t)
    step = np.sqrt(v)
    step += eps * c2
    np.divide(m, step, out=step)
    step *= lr * c2 / (1.0 - beta1 ** t)
    return theta - step, AdamState(m, v, t)


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainConfig:
    val_fraction: float = 0.1
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 20
    max_epochs: int = 1000
    patience: int | None = 100
    seed: int = 0
    init: str = "xavier"
    reshuffle: bool = False
    final_learning_rate: float | None = None    # cosine decay to this rate when set
    zero_copies: int = 1                         # repeats of the zero column in the training set

    def __post_init__(self):
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_epochs < 0:
            raise ValueError("learning rate, batch size and epochs must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("invalid Adam constants")
        if self.final_learning_rate is not None and self.final_learning_rate <= 0:
            raise ValueError("final learning rate must be positive")
        if self.zero_copies < 1:
            raise ValueError("zero_copies must be at least 1")

    def rate(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch: constant, or cosine from the initial to the final rate."""
        if self.final_learning_rate is None or self.max_epochs <= 1:
            return self.learning_rate
        w = 0.5 * (1.0 + math.cos(math.pi * (epoch - 1) / (self.max_epochs - 1)))
        return self.final_learning_rate + (self.learning_rate - self.final_learning_rate) * w


@dataclass
class TrainResult:
    model: AutoencoderModel
    history: list = field(default_factory=list)     # (epoch, train_loss, val_loss)
    best_epoch: int = 0

    def save_history(self, path, extra: dict | None = None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            keys = list(extra or {})
            w.writerow(["epoch", "train_loss", "val_loss"] + keys)
            for e, tr, va in self.history:
                w.writerow([e, repr(float(tr)), repr(float(va))] + [extra[k] for k in keys])


def split_columns(n_s: int, val_fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Seeded permutation; the last ``ceil(omega n_s)`` shuffled columns validate."""
    perm = rng.permutation(n_s)
    n_val = math.ceil(val_fraction * n_s - 1e-12)
    if n_val >= n_s:
        raise ValueError("validation split leaves no training data")
    return perm[:n_s - n_val], perm[n_s - n_val:]


def train_autoencoder(snapshots, spec: AutoencoderSpec, config: TrainConfig = TrainConfig(),
                      initial: list | None = None, log=None) -> TrainResult:
    """Train on centered snapshots; returns the best-validation parameters.

    The zero column (if appended) joins the scaling statistics with the
    training columns and, when it falls in the training split, is repeated
    ``zero_copies`` times; the loss is measured on scaled fields.
    """
    W = snapshots.W if isinstance(snapshots, SnapshotMatrix) else np.asarray(snapshots, dtype=np.float64)
    if W.ndim != 2 or W.shape[1] == 0:
        raise ValueError("snapshot matrix is empty")
    if W.shape[0] != spec.state_dim:
        raise ValueError(f"snapshot dimension {W.shape[0]} != {spec.state_dim}")
    rng = np.random.default_rng(config.seed)
    train_idx, val_idx = split_columns(W.shape[1], config.val_fraction, rng)
    stats = W[:, train_idx]
    has_zero = isinstance(snapshots, SnapshotMatrix) and snapshots.zero_column
    if has_zero:
        stats = np.hstack([stats, np.zeros((W.shape[0], 1))])
    scaling = ScalingOperator.fit(stats, spec)
    zero_idx = W.shape[1] - 1
    if has_zero and config.zero_copies > 1 and zero_idx in train_idx:
        train_idx = np.concatenate([train_idx, np.full(config.zero_copies - 1, zero_idx)])

    def scaled(cols):
        t = restrict(W[:, cols].T, spec)
        bshape = (1, -1) + (1,) * spec.spatial_rank
        return (t - scaling.lo.reshape(bshape)) / scaling.scale.reshape(bshape)

    S_train, S_val = scaled(train_idx), scaled(val_idx)
    params = initial if initial is not None else init_params(spec, config.init, config.seed)
    theta = flatten_params(params)
    state = AdamState.zeros(theta.size)

    def val_loss(th):
        S = S_val if S_val.shape[0] else S_train
        return float(batch_losses(spec, th, S).mean())

    order = rng.permutation(S_train.shape[0])
    best_theta, best_val, best_epoch = theta.copy(), val_loss(theta), 0
    history = [(0, float(batch_losses(spec, theta, S_train).mean()), best_val)]
    bs = config.batch_size
    for epoch in range(1, config.max_epochs + 1):
        if config.reshuffle and epoch > 1:
            order = rng.permutation(S_train.shape[0])
        losses, lr = [], config.rate(epoch)
        for k in range(0, order.size, bs):
            loss, g = loss_and_gradient(spec, theta, S_train[order[k:k + bs]])
            if not np.isfinite(loss) or not np.all(np.isfinite(g)):
                raise TrainingDiverged(epoch)
            theta, state = adam_update(theta, g, state, lr, config.beta1, config.beta2, config.eps)
            losses.append(loss)
        vl = val_loss(theta)
        if not np.isfinite(vl):
            raise TrainingDiverged(epoch)
        history.append((epoch, float(np.mean(losses)), vl))
        if vl < best_val:
            best_theta, best_val, best_epoch = theta.copy(), vl, epoch
        if log is not None:
            log(epoch, history[-1][1], vl)
        if config.patience is not None and epoch - best_epoch >= config.patience:
            break
    model = AutoencoderModel(spec, unflatten_params(best_theta, spec), scaling)
    return TrainResult(model, history, best_epoch)


def read_loss_history(path) -> list[tuple[int, float, float]]:
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    try:
        return [(int(r["epoch"]), float(r["train_loss"]), float(r["val_loss"])) for r in rows]
    except KeyError as exc:
        raise FormatError(f"loss history lacks column {exc}") from None


__all__ = [
    "RankError", "TrainingDiverged", "select_steps", "SnapshotMatrix", "collect_snapshots",
    "PodBasis", "jacobi_eigh", "singular_values", "pod_basis", "projection_error", "l2_loss",
    "network_loss", "loss_and_gradient", "AdamState", "adam_update", "TrainConfig",
    "TrainResult", "split_columns", "train_autoencoder", "read_loss_history",
]
