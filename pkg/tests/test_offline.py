import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrom.autoencoder import AutoencoderModel, conv_autoencoder_spec, flatten_params, init_params
from mrom.fom import BurgersModel, Trajectory, backward_euler, simulate_fom
from mrom.offline import (NO_STEP, AdamState, RankError, SnapshotMatrix, TrainConfig,
                          TrainingDiverged, adam_update, collect_snapshots, jacobi_eigh, l2_loss,
                          loss_and_gradient, pod_basis, projection_error, read_loss_history,
                          select_steps, singular_values, train_autoencoder)


def small_spec(p=2):
    return conv_autoencoder_spec((32,), 1, p, 5, (4, 8), (2, 2), (4, 1))


def test_select_steps():
    assert select_steps(10, "equispaced", 5) == [2, 4, 6, 8, 10]
    assert select_steps(10, "first", 3) == [1, 2, 3]
    assert select_steps(4) == [1, 2, 3, 4]
    assert select_steps(10, "equispaced", 3)[-1] == 10
    with pytest.raises(ValueError):
        select_steps(10, "first", 11)
    with pytest.raises(ValueError):
        select_steps(10, "bogus", 2)


def test_collect_snapshots_centered():
    X = np.arange(12.0).reshape(3, 4)
    tr = Trajectory(X, 0.1, [1.0, 2.0])
    s = collect_snapshots([tr])
    assert s.W.shape == (3, 3)
    assert np.array_equal(s.W, X[:, 1:] - X[:, :1])
    assert list(s.steps) == [1, 2, 3]
    z = collect_snapshots([tr, tr], append_zero=True)
    assert z.n_snapshots == 7 and z.zero_column
    assert np.all(z.W[:, -1] == 0) and z.steps[-1] == NO_STEP
    with pytest.raises(ValueError):
        collect_snapshots([tr, Trajectory(np.zeros((2, 2)), 0.1, [0.0])])


def test_snapshot_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    trs = [Trajectory(rng.normal(size=(6, 11)), 0.1, rng.normal(size=2)) for _ in range(3)]
    s = collect_snapshots(trs, "equispaced", 5, append_zero=True)
    s.save(tmp_path / "s.snp")
    b = SnapshotMatrix.load(tmp_path / "s.snp")
    assert np.array_equal(b.W, s.W) and np.array_equal(b.steps, s.steps)
    assert np.array_equal(b.params[:-1], s.params[:-1]) and np.all(np.isnan(b.params[-1]))
    b.save(tmp_path / "t.snp")
    assert (tmp_path / "s.snp").read_bytes() == (tmp_path / "t.snp").read_bytes()


def test_pod_rank_one():
    w = np.array([3.0, 0.0, 4.0, 1.0])
    basis = pod_basis(np.column_stack([w, 2 * w]), 1)
    assert np.allclose(basis.phi[:, 0], w / np.linalg.norm(w), atol=1e-14)
    assert projection_error(np.column_stack([w, 2 * w]), basis.phi) < 1e-15
    with pytest.raises(RankError):
        pod_basis(np.column_stack([w, 2 * w]), 2)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_pod_svd_identity(seed, p):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(30, 12)) @ np.diag(2.0 ** -np.arange(12))
    basis = pod_basis(W, p)
    assert np.abs(basis.phi.T @ basis.phi - np.eye(p)).max() < 1e-12
    assert np.all(np.diff(basis.sigma) <= 0)
    s = np.linalg.svd(W, compute_uv=False)
    resid = np.sum((W - basis.project(W)) ** 2)
    assert resid == pytest.approx(np.sum(s[p:] ** 2), rel=1e-8)


def test_pod_jacobi_matches_lapack():
    rng = np.random.default_rng(5)
    for shape in ((40, 10), (8, 20)):
        W = rng.normal(size=shape)
        assert np.allclose(singular_values(W, "jacobi"), np.linalg.svd(W, compute_uv=False),
                           rtol=1e-10)
        a, b = pod_basis(W, 4, "jacobi").phi, pod_basis(W, 4).phi
        assert np.abs(a - b).max() < 1e-9
    G = rng.normal(size=(6, 6))
    G = G + G.T
    lam, V = jacobi_eigh(G)
    assert np.allclose(V @ np.diag(lam) @ V.T, G, atol=1e-12)


def test_pod_projection_error_monotone_and_rank():
    rng = np.random.default_rng(2)
    W = rng.normal(size=(50, 3)) @ rng.normal(size=(3, 40))
    errs = [projection_error(W, pod_basis(W, p).phi) for p in (1, 2, 3)]
    assert errs[0] >= errs[1] >= errs[2]
    assert errs[2] < 1e-10


def test_l2_loss_identity_and_zero():
    spec = small_spec()
    rng = np.random.default_rng(0)
    x = rng.normal(size=32)
    zero = AutoencoderModel(spec, [[np.zeros(s) for s in sh] for _, sh in spec.layer_shapes()])
    assert l2_loss(x, zero) == pytest.approx(np.sum(x * x), rel=1e-14)
    model = AutoencoderModel(spec, init_params(spec, seed=1))
    assert l2_loss(x, model) == pytest.approx(np.sum((x - model.reconstruct(x)) ** 2), rel=1e-12)


def test_adam_zero_gradient_and_unit_step():
    theta = np.array([1.0, -2.0])
    t2, st2 = adam_update(theta, np.zeros(2), AdamState.zeros(2))
    assert np.array_equal(t2, theta) and st2.step == 1
    state = AdamState.zeros(2)
    g = np.array([3.0, -0.5])
    th = theta.copy()
    for _ in range(500):
        prev = th
        th, state = adam_update(th, g, state, lr=1e-3)
    assert np.allclose(np.abs(th - prev), 1e-3, rtol=1e-6)


def test_minibatch_gradient_is_mean():
    spec = small_spec()
    theta = flatten_params(init_params(spec, seed=3))
    S = np.random.default_rng(3).uniform(size=(6, 1, 32))
    full, gf = loss_and_gradient(spec, theta, S)
    parts = [loss_and_gradient(spec, theta, S[i:i + 1]) for i in range(6)]
    assert full == pytest.approx(np.mean([p[0] for p in parts]), rel=1e-12)
    assert np.allclose(gf, np.mean([p[1] for p in parts], axis=0), rtol=1e-10, atol=1e-14)


def test_train_zero_epochs_returns_initial():
    spec = small_spec()
    W = np.random.default_rng(0).normal(size=(32, 20))
    init = init_params(spec, seed=7)
    res = train_autoencoder(W, spec, TrainConfig(max_epochs=0, patience=0, seed=7), initial=init)
    assert np.array_equal(flatten_params(res.model.params), flatten_params(init))
    assert res.best_epoch == 0 and len(res.history) == 1


def test_train_loss_decreases_and_deterministic(tmp_path):
    spec = small_spec(2)
    rng = np.random.default_rng(4)
    W = rng.normal(size=(32, 20))
    cfg = TrainConfig(learning_rate=1e-4, batch_size=20, max_epochs=5, val_fraction=0.0, seed=3)
    a = train_autoencoder(W, spec, cfg)
    losses = [h[1] for h in a.history[1:]]
    assert all(x > y for x, y in zip(losses, losses[1:]))
    b = train_autoencoder(W, spec, cfg)
    assert np.array_equal(flatten_params(a.model.params), flatten_params(b.model.params))
    a.save_history(tmp_path / "h.csv")
    hist = read_loss_history(tmp_path / "h.csv")
    assert hist == [(e, float(t), float(v)) for e, t, v in a.history]


def test_train_returns_best_validation():
    spec = small_spec(2)
    W = np.random.default_rng(8).normal(size=(32, 40))
    res = train_autoencoder(W, spec, TrainConfig(learning_rate=5e-2, max_epochs=15, patience=3,
                                                 batch_size=5, seed=1))
    vals = [h[2] for h in res.history]
    assert res.history[res.best_epoch][2] == min(vals)
    assert len(res.history) - 1 - res.best_epoch <= 3


def test_train_divergence_reported():
    spec = small_spec(2)
    W = np.random.default_rng(1).normal(size=(32, 10))
    W[0, 0] = np.inf
    with np.errstate(all="ignore"), pytest.raises(TrainingDiverged):
        train_autoencoder(W, spec, TrainConfig(max_epochs=2, val_fraction=0.0))


def test_burgers_snapshot_count():
    m = BurgersModel(16)
    trs = [simulate_fom(m, backward_euler(0.07), (4.3, 0.021), 500) for _ in range(2)]
    s = collect_snapshots(trs, append_zero=True)
    assert s.n_snapshots == 2 * 500 + 1


def test_cosine_learning_rate():
    cfg = TrainConfig(learning_rate=1e-3, final_learning_rate=1e-5, max_epochs=11)
    assert cfg.rate(1) == pytest.approx(1e-3) and cfg.rate(11) == pytest.approx(1e-5)
    assert cfg.rate(6) == pytest.approx(0.5 * (1e-3 + 1e-5))
    rates = [cfg.rate(e) for e in range(1, 12)]
    assert all(a > b for a, b in zip(rates, rates[1:]))
    assert TrainConfig(learning_rate=2e-4).rate(7) == 2e-4
    with pytest.raises(ValueError):
        TrainConfig(final_learning_rate=0.0)


def test_zero_copies_anchor_origin():
    spec = small_spec(2)
    rng = np.random.default_rng(5)
    W = 1.0 + rng.uniform(size=(32, 40))
    snaps = SnapshotMatrix(W, np.zeros((40, 1)), np.arange(1, 41)).with_zero_column()
    offsets = []
    for k in (1, 40):
        cfg = TrainConfig(learning_rate=1e-2, max_epochs=40, val_fraction=0.0, batch_size=10,
                          seed=2, zero_copies=k, patience=None)
        model = train_autoencoder(snaps, spec, cfg).model
        offsets.append(np.linalg.norm(model.reconstruct(np.zeros(32))))
    assert offsets[1] < 0.5 * offsets[0]
    with pytest.raises(ValueError):
        TrainConfig(zero_copies=0)
