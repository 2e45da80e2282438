import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrom.analysis import (ErrorReport, bound_constants, equivalence_gap, error_bound_check,
                           lipschitz_estimate, manifold_projection, manifold_projection_error,
                           optimal_projection_error, projection_error, relative_error,
                           reports_to_csv)
from mrom.fom import BurgersModel, LinearModel, Trajectory, backward_euler, bdf2, simulate_fom
from mrom.fom.scheme import LinearMultistepScheme
from mrom.offline import pod_basis
from mrom.rom import SolverConfig, manifold_from_pod, rom_simulate

from oracles import QuadraticManifold, orthonormal

MU = (4.3, 0.021)


@pytest.fixture(scope="module")
def burgers_run():
    m = BurgersModel(64)
    tr = simulate_fom(m, backward_euler(0.07), MU, 50)
    return m, tr


def test_relative_error_cases():
    X = np.array([[1.0, 2.0, 0.0], [1.0, 0.0, 3.0]])
    assert relative_error(X, X) == 0.0
    assert relative_error(X, np.zeros_like(X)) == pytest.approx(1.0)
    Y = X + np.array([[0.0, 1.0, 0.0], [0.0, 0.0, -2.0]])
    # hand arithmetic: sqrt(1 + 4) / sqrt(4 + 9)
    assert relative_error(X, Y) == pytest.approx(np.sqrt(5 / 13), rel=1e-15)
    with pytest.raises(ValueError):
        relative_error(X, X[:, :2])


def test_projection_error_cases(burgers_run):
    _, tr = burgers_run
    X = tr.states
    D = X[:, 1:] - X[:, :1]
    assert projection_error(tr, np.eye(64)) < 1e-14
    U = np.linalg.qr(D[:, :5])[0]
    exact = Trajectory(np.column_stack([X[:, 0], X[:, :1] + D[:, :5]]), 0.07, MU)
    assert projection_error(exact, U) < 1e-14
    with pytest.raises(ValueError):
        projection_error(tr, np.ones((64, 2)))
    errs = [optimal_projection_error(tr, p) for p in range(1, 12)]
    assert all(a >= b for a, b in zip(errs, errs[1:]))


def test_optimal_beats_pod(burgers_run):
    m, tr = burgers_run
    other = simulate_fom(m, backward_euler(0.07), (5.0, 0.025), 50)
    x0 = other.states[:, :1]
    for p in (2, 4, 8):
        phi = pod_basis(other.states[:, 1:] - x0, p).phi
        assert optimal_projection_error(tr, p) <= projection_error(tr, phi) + 1e-10


def test_manifold_projection_affine_equals_pod(burgers_run):
    _, tr = burgers_run
    phi = pod_basis(tr.states[:, 1:] - tr.states[:, :1], 3).phi
    man = manifold_from_pod(phi, tr.states[:, 0])
    assert abs(manifold_projection_error(tr, man) - projection_error(tr, phi)) < 1e-10


def test_manifold_projection_exact_path():
    rng = np.random.default_rng(0)
    man = QuadraticManifold(orthonormal(rng, 30, 2), rng.normal(size=(30, 2)), rng.normal(size=30))
    path = np.array([[0.1 * n, -0.05 * n] for n in range(8)]).T
    X = np.column_stack([man.state(path[:, n]) for n in range(8)])
    tr = Trajectory(X, 0.1, [0.0])
    assert manifold_projection_error(tr, man) < 1e-8
    assert np.abs(manifold_projection(tr, man) - X).max() < 1e-8


def test_manifold_projection_below_lspg(burgers_run):
    m, tr = burgers_run
    phi = pod_basis(tr.states[:, 1:] - tr.states[:, :1], 4).phi
    man = QuadraticManifold(phi, np.roll(phi, 4, axis=0), tr.states[:, 0], c=0.05)
    sol = rom_simulate(man, backward_euler(0.07), MU, 50, "lspg", m)
    assert manifold_projection_error(tr, man) <= relative_error(tr, sol) + 1e-12


def test_lipschitz_linear():
    rng = np.random.default_rng(1)
    A = np.diag([3.0, 1.0, 0.5, 0.2]) @ orthonormal(rng, 4, 4)
    model = LinearModel(A, np.zeros(4))
    k = lipschitz_estimate(model, rng.normal(size=(4, 3)), None)
    assert k == pytest.approx(3.0, rel=1e-3) and k <= 3.0 + 1e-12
    const = LinearModel(np.zeros((4, 4)), np.zeros(4), b=np.ones(4))
    assert lipschitz_estimate(const, rng.normal(size=(4, 3)), None) == 0.0


def test_lipschitz_monotone_in_samples(burgers_run):
    m, tr = burgers_run
    ks = [lipschitz_estimate(m, tr.states[:, :n], MU, power_iters=5) for n in (2, 5, 10)]
    assert ks[0] <= ks[1] <= ks[2]


def test_bound_constants():
    h, g = bound_constants(backward_euler(0.1), 0.5)
    assert h == pytest.approx(0.95) and g[0] == pytest.approx(1 / 0.95)
    assert bound_constants(backward_euler(1.0), 2.0)[1] is None


def test_bound_trivial_and_inapplicable():
    A = -np.eye(3)
    model = LinearModel(A, np.ones(3))
    tr = simulate_fom(model, backward_euler(0.1), None, 10)
    chk = error_bound_check(tr, tr, backward_euler(0.1), 1.0, model)
    assert chk.applicable and chk.violations == 0
    assert np.all(chk.residual < 1e-12)
    bad = error_bound_check(tr, tr, backward_euler(0.1), 20.0, model)
    assert not bad.applicable


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["galerkin", "lspg"]))
def test_bound_linear_fom(seed, method):
    rng = np.random.default_rng(seed)
    n = 20
    A = rng.normal(size=(n, n)) / np.sqrt(n) - 0.5 * np.eye(n)
    model = LinearModel(A, rng.normal(size=n))
    kappa = model.lipschitz_constant()
    dt = 0.5 / kappa
    s = backward_euler(dt)
    tr = simulate_fom(model, s, None, 30)
    phi = pod_basis(tr.states[:, 1:] - tr.states[:, :1], 3).phi
    sol = rom_simulate(manifold_from_pod(phi, tr.states[:, 0]), s, None, 30, method, model)
    chk = error_bound_check(tr, sol, s, kappa, model)
    assert chk.applicable and chk.violations == 0


def test_equivalence_gap_affine():
    rng = np.random.default_rng(2)
    n = 16
    fom = BurgersModel(n)
    x0 = fom.initial_state(None)
    man = manifold_from_pod(orthonormal(rng, n, 3), x0)
    fe = lambda dt: LinearMultistepScheme((1.0, -1.0), (0.0, 1.0), dt, "forward-euler")
    # explicit scheme: both methods reduce to the same update
    gap = equivalence_gap(man, fom, fe, [0.1], [np.zeros(3)], MU)
    assert gap.gaps[0] < 1e-12
    gap = equivalence_gap(man, fom, backward_euler, [0.2, 0.1, 0.05], [np.zeros(3)], MU)
    assert all(r >= 1.8 for r in gap.ratios), gap.gaps


def test_report_json_csv():
    rep = ErrorReport("lspg", [4.3, 0.021], 5, 0.01, 0.2, 0.05, kappa=3.0)
    back = ErrorReport.from_json(rep.to_json())
    assert back.relative_error == 0.01 and np.isnan(back.manifold_projection_error)
    assert json.loads(rep.to_json())["manifold_projection_error"] is None
    text = reports_to_csv([rep], {"config_hash": "abc"})
    lines = text.strip().split("\n")
    assert lines[0].startswith("config_hash,method") and lines[1].startswith("abc,lspg")
    with pytest.raises(ValueError):
        ErrorReport("lspg", [1.0], 2, -1.0)


def test_report_json_inapplicable_bound():
    rep = ErrorReport("galerkin", [4.3, 0.021], 3, 0.02, bound=[0.0, float("inf")],
                      bound_applicable=False)
    assert json.loads(rep.to_json())["bound"] == [0.0, None]
    assert np.isnan(ErrorReport.from_json(rep.to_json()).bound[1])
