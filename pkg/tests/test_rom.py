import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrom.autoencoder import AutoencoderModel, ScalingOperator, burgers_spec, init_params
from mrom.fom import BurgersModel, LinearModel, backward_euler, bdf2, simulate_fom
from mrom.fom.core import OdeResidual, StepFailure
from mrom.fom.scheme import LinearMultistepScheme
from mrom.offline import pod_basis
from mrom.rom import (_backtrack, GalerkinResidual, LineSearchError, RomSolution, SingularManifold,
                      SolverConfig, _fd_jacobian, galerkin_solve,
                      galerkin_odelta_residual, galerkin_reduced_velocity, galerkin_step,
                      lspg_objective_and_test_basis, lspg_step, manifold_from_autoencoder,
                      manifold_from_pod, rom_simulate, wolfe_line_search)

from oracles import (QuadraticManifold, classical_pod_galerkin, classical_pod_lspg,
                     fom_discrete_residual, orthonormal)

MU = (4.3, 0.021)


@pytest.fixture(scope="module")
def burgers_pod():
    m = BurgersModel(64)
    tr = simulate_fom(m, backward_euler(0.07), (4.6, 0.02), 50)
    x0 = m.initial_state(None)
    return m, pod_basis(tr.states[:, 1:] - x0[:, None], 4).phi, x0


@pytest.fixture(scope="module")
def random_ae():
    spec = burgers_spec(3, n=128)
    rng = np.random.default_rng(0)
    scaling = ScalingOperator(np.array([0.0]), np.array([4.0]))
    model = AutoencoderModel(spec, init_params(spec, seed=2), scaling)
    m = BurgersModel(128)
    return model, m, rng


def test_manifold_initial_condition(random_ae, burgers_pod):
    model, m, _ = random_ae
    x0 = m.initial_state(None)
    man = manifold_from_autoencoder(model, x0)
    assert np.abs(man.state(man.xi0) - x0).max() < 1e-12
    assert np.array_equal(man.xi0, model.encode(np.zeros(128)))
    fom, phi, x0 = burgers_pod
    pod = manifold_from_pod(phi, x0)
    assert np.array_equal(pod.xi0, np.zeros(4)) and np.array_equal(pod.state(pod.xi0), x0)
    assert pod.decode_with_jacobian(np.ones(4))[1] is pod.phi


def test_pod_manifold_rejects_nonorthonormal():
    with pytest.raises(ValueError):
        manifold_from_pod(np.ones((5, 2)), np.zeros(5))


def test_reduced_velocity_affine_is_projection(burgers_pod):
    fom, phi, x0 = burgers_pod
    man = manifold_from_pod(phi, x0)
    xi = np.array([0.5, -0.2, 0.1, 0.3])
    f = fom.velocity(man.state(xi), 0.0, MU)
    assert np.allclose(galerkin_reduced_velocity(man, xi, 0.0, MU, fom), phi.T @ f, atol=1e-12)


def test_reduced_velocity_orthogonality(random_ae):
    model, fom, rng = random_ae
    man = manifold_from_autoencoder(model, fom.initial_state(None))
    for _ in range(5):
        xi = man.xi0 + 0.1 * rng.normal(size=3)
        v = galerkin_reduced_velocity(man, xi, 0.0, MU, fom)
        x, J = man.state_with_jacobian(xi)
        f = fom.velocity(x, 0.0, MU)
        assert np.linalg.norm(J.T @ (f - J @ v)) < 1e-9 * np.linalg.norm(f)


class RangeModel(LinearModel):
    """Velocity ``J c`` always inside a given range."""

    def __init__(self, J, c):
        super().__init__(np.zeros((J.shape[0], J.shape[0])), np.zeros(J.shape[0]), J @ c)


def test_reduced_velocity_exact_on_range():
    rng = np.random.default_rng(1)
    phi, psi = orthonormal(rng, 20, 3), rng.normal(size=(20, 3))
    man = QuadraticManifold(phi, psi, np.zeros(20))
    xi = rng.normal(size=3)
    J = man.decode_with_jacobian(xi)[1]
    c = rng.normal(size=3)
    v = galerkin_reduced_velocity(man, xi, 0.0, None, RangeModel(J, c))
    assert np.abs(J @ v - J @ c).max() < 1e-10


def test_singular_manifold_detected():
    phi = np.zeros((10, 2))
    phi[0, 0] = phi[1, 1] = 1.0
    man = QuadraticManifold(phi, np.zeros((10, 2)), np.zeros(10))
    man.phi = np.column_stack([phi[:, 0], phi[:, 0]])
    with pytest.raises(SingularManifold):
        galerkin_reduced_velocity(man, np.zeros(2), 0.0, None, LinearModel(np.eye(10), np.zeros(10)))


def test_galerkin_residual_commutes_with_projection(burgers_pod):
    # discretize-then-project equals project-then-discretize on an affine manifold
    fom, phi, x0 = burgers_pod
    man = manifold_from_pod(phi, x0)
    rng = np.random.default_rng(2)
    for scheme in (backward_euler(0.07), bdf2(0.07)):
        hist = [0.3 * rng.normal(size=4) for _ in range(scheme.steps)]
        xi = 0.3 * rng.normal(size=4)
        rg = galerkin_odelta_residual(man, scheme, hist, xi, 0.7, MU, fom)
        rf = fom_discrete_residual(fom, scheme, man.state(xi), [man.state(h) for h in hist], 0.7, MU)
        assert np.abs(rg - phi.T @ rf).max() < 1e-12


def test_galerkin_residual_zero_velocity():
    zero = LinearModel(np.zeros((6, 6)), np.zeros(6))
    man = manifold_from_pod(orthonormal(np.random.default_rng(3), 6, 2), np.ones(6))
    s = bdf2(0.1)
    hist = [np.array([1.0, 2.0]), np.array([-1.0, 0.5])]
    xi = np.array([0.3, 0.4])
    r = galerkin_odelta_residual(man, s, hist, xi, 0.2, None, zero)
    assert np.allclose(r, s.alpha[0] * xi + s.alpha[1] * hist[0] + s.alpha[2] * hist[1], atol=1e-15)


def test_affine_linear_one_iteration():
    rng = np.random.default_rng(4)
    A = -np.eye(12) + 0.1 * rng.normal(size=(12, 12))
    fom = LinearModel(A, rng.normal(size=12))
    man = manifold_from_pod(orthonormal(rng, 12, 3), fom.initial_state(None))
    s = backward_euler(0.05)
    _, info = galerkin_step(man, s, [man.xi0], 0.05, None, fom, SolverConfig(tol=1e-12))
    assert info.iterations == 1
    hist = [man.state(man.xi0)]
    _, info = lspg_step(man, s, hist, 0.05, None, fom, SolverConfig(tol=1e-12), guess=man.xi0)
    assert info.iterations == 1


def test_galerkin_small_dt_limit():
    rng = np.random.default_rng(5)
    man = QuadraticManifold(orthonormal(rng, 16, 2), rng.normal(size=(16, 2)), rng.normal(size=16))
    fom = LinearModel(-np.eye(16), np.zeros(16))
    prev = np.array([0.2, -0.1])
    errs = []
    for dt in (1e-3, 1e-4):
        xi, _ = galerkin_step(man, backward_euler(dt), [prev], dt, None, fom)
        errs.append(np.linalg.norm(xi - prev))
    assert errs[1] < 0.2 * errs[0]


def test_lspg_explicit_test_basis():
    rng = np.random.default_rng(6)
    man = QuadraticManifold(orthonormal(rng, 16, 2), rng.normal(size=(16, 2)), np.zeros(16))
    fom = LinearModel(rng.normal(size=(16, 16)), np.zeros(16))
    fe = LinearMultistepScheme((1.0, -1.0), (0.0, 1.0), 0.1, "forward-euler")
    xi = rng.normal(size=2)
    _, Psi = lspg_objective_and_test_basis(man, fe, [man.state(xi)], xi, 0.1, None, fom)
    assert np.array_equal(Psi, man.decode_with_jacobian(xi)[1])


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_lspg_test_basis_fd(seed):
    rng = np.random.default_rng(seed)
    spec = burgers_spec(3, n=128)
    model = AutoencoderModel(spec, init_params(spec, seed=seed % 1000),
                             ScalingOperator(np.array([0.0]), np.array([4.0])))
    fom = BurgersModel(128)
    man = manifold_from_autoencoder(model, fom.initial_state(None))
    s = bdf2(0.07)
    hist = [man.state(man.xi0 + 0.01 * rng.normal(size=3)) for _ in range(2)]
    xi = man.xi0 + 0.01 * rng.normal(size=3)
    r, Psi = lspg_objective_and_test_basis(man, s, hist, xi, 0.14, MU, fom)
    h = 1e-6
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        rp = lspg_objective_and_test_basis(man, s, hist, xi + e, 0.14, MU, fom)[0]
        rm = lspg_objective_and_test_basis(man, s, hist, xi - e, 0.14, MU, fom)[0]
        fd = (rp - rm) / (2 * h)
        assert np.linalg.norm(fd - Psi[:, i]) <= 1e-5 * np.linalg.norm(fd)


def test_lspg_local_minimum_probe(burgers_pod):
    fom, phi, x0 = burgers_pod
    man = QuadraticManifold(phi, np.roll(phi, 3, axis=0), x0, c=0.05)
    s = backward_euler(0.07)
    hist = [x0]
    xi, _ = lspg_step(man, s, hist, 0.07, MU, fom, SolverConfig(tol=1e-10), guess=man.xi0)
    obj = lambda z: np.linalg.norm(OdeResidual(fom, s, hist, 0.07, MU)(man.state(z)))
    base = obj(xi)
    for i in range(4):
        for sgn in (1, -1):
            e = np.zeros(4)
            e[i] = sgn * 1e-4
            assert obj(xi + e) >= base - 1e-10


def test_wolfe_quadratic():
    phi = lambda lam: ((lam - 1.0) ** 2, 2 * (lam - 1.0))
    lam, trials = wolfe_line_search(phi, 1.0, -2.0)
    assert lam == 1.0 and trials == 1
    # minimum at 0.3: the full step fails Armijo and zoom finds a valid point
    psi = lambda lam: ((lam - 0.3) ** 2, 2 * (lam - 0.3))
    lam, _ = wolfe_line_search(psi, 0.09, -0.6)
    val, d = psi(lam)
    assert val <= 0.09 + 1e-4 * lam * -0.6 and abs(d) <= 0.9 * 0.6


@settings(max_examples=100, deadline=None)
@given(st.floats(0.05, 20.0), st.floats(-3.0, 3.0), st.floats(0.1, 5.0))
def test_wolfe_conditions_hold(m, c, k):
    # phi(lam) = (lam - m)^2 + c sin(k lam) / k^2, strictly descending at 0 when filtered
    phi = lambda lam: ((lam - m) ** 2 + c * np.sin(k * lam) / k ** 2,
                       2 * (lam - m) + c * np.cos(k * lam) / k)
    f0, d0 = phi(0.0)
    if d0 >= -1e-3:
        return
    lam, _ = wolfe_line_search(phi, f0, d0)
    f, d = phi(lam)
    assert f <= f0 + 1e-4 * lam * d0 and abs(d) <= 0.9 * abs(d0)


def test_wolfe_rejects_ascent():
    with pytest.raises(ValueError):
        wolfe_line_search(lambda lam: (lam, 1.0), 0.0, 1.0)


def test_wolfe_failure_reported():
    # descending derivative reported but the function increases: no valid step exists
    with pytest.raises(LineSearchError):
        wolfe_line_search(lambda lam: (lam, -1.0), 0.0, -1.0, max_trials=30)


@pytest.mark.parametrize("scheme", [backward_euler(0.07), bdf2(0.07)])
def test_affine_recovers_classical(burgers_pod, scheme):
    fom, phi, x0 = burgers_pod
    man = manifold_from_pod(phi, x0)
    cfg = SolverConfig(tol=1e-12)
    g = rom_simulate(man, scheme, MU, 20, "galerkin", fom, cfg)
    l = rom_simulate(man, scheme, MU, 20, "lspg", fom, cfg)
    assert np.abs(g.xi - classical_pod_galerkin(fom, scheme, phi, x0, MU, 20)).max() < 1e-10
    assert np.abs(l.xi - classical_pod_lspg(fom, scheme, phi, x0, MU, 20)).max() < 1e-10


def test_rom_solution_roundtrip(tmp_path, burgers_pod):
    fom, phi, x0 = burgers_pod
    sol = rom_simulate(manifold_from_pod(phi, x0), bdf2(0.07), MU, 5, "lspg", fom)
    assert np.abs(sol.states[:, 0] - x0).max() < 1e-12
    sol.save(tmp_path / "a.rom")
    back = RomSolution.load(tmp_path / "a.rom")
    assert np.array_equal(back.xi, sol.xi) and np.array_equal(back.states, sol.states)
    assert np.array_equal(back.iterations, sol.iterations) and back.method == "lspg"
    back.save(tmp_path / "b.rom")
    assert (tmp_path / "a.rom").read_bytes() == (tmp_path / "b.rom").read_bytes()
    assert (tmp_path / "a.rom").read_bytes()[:8] == b"MROM-ROM"


def test_encoder_galerkin_runs(random_ae, burgers_pod):
    model, fom, _ = random_ae
    man = manifold_from_autoencoder(model, fom.initial_state(None))
    sol = rom_simulate(man, backward_euler(0.07), MU, 3, "encoder-galerkin", fom)
    assert sol.xi.shape == (3, 4) and np.all(np.isfinite(sol.states))
    f, phi, x0 = burgers_pod
    with pytest.raises(ValueError):
        rom_simulate(manifold_from_pod(phi, x0), backward_euler(0.07), MU, 3, "encoder-galerkin", f)
    with pytest.raises(ValueError):
        rom_simulate(man, backward_euler(0.07), MU, 3, "bogus", fom)


def test_step_failure_carries_index(burgers_pod):
    fom, phi, x0 = burgers_pod
    cfg = SolverConfig(tol=1e-30, max_iter=0)
    with pytest.raises(StepFailure) as exc:
        rom_simulate(manifold_from_pod(phi, x0), backward_euler(0.07), MU, 3, "lspg", fom, cfg)
    assert exc.value.step == 1


def test_galerkin_descent_on_burgers(burgers_pod):
    fom, phi, x0 = burgers_pod
    man = QuadraticManifold(phi, np.roll(phi, 5, axis=0), x0, c=0.05)
    xi = man.xi0
    for n in range(1, 6):
        xi, info = galerkin_step(man, backward_euler(0.07), [xi], 0.07 * n, MU, fom)
        assert all(d < 0 for d in info.descent)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(c1=0.9, c2=0.1)


def test_fd_jacobian_matches_affine_jacobian(burgers_pod):
    fom, phi, x0 = burgers_pod
    res = GalerkinResidual(manifold_from_pod(phi, x0), backward_euler(0.07), [np.zeros(4)],
                           0.07, MU, fom)
    xi = np.array([0.3, -0.2, 0.1, 0.05])
    _, _, Jt = res.evaluate(xi, True)
    assert np.abs(_fd_jacobian(res, xi) - Jt).max() < 1e-6 * np.abs(Jt).max()


class WrongJacobian(GalerkinResidual):
    """Reports the negated Jacobian, so the quasi-Newton direction ascends."""

    def evaluate(self, xi, need_jacobian=False):
        r, v, Jt = super().evaluate(xi, need_jacobian)
        return r, v, (None if Jt is None else -Jt)


def test_galerkin_fallback_when_not_descent(burgers_pod):
    fom, phi, x0 = burgers_pod
    man = manifold_from_pod(phi, x0)
    s = backward_euler(0.07)
    ref, _ = galerkin_step(man, s, [np.zeros(4)], 0.07, MU, fom, SolverConfig(tol=1e-10))
    res = WrongJacobian(man, s, [np.zeros(4)], 0.07, MU, fom)
    xi, info = galerkin_solve(res, np.zeros(4), SolverConfig(tol=1e-10, max_iter=50))
    assert all(d < 0 for d in info.descent)
    assert np.abs(xi - ref).max() < 1e-8


class ScaledJacobian(GalerkinResidual):
    """Reports three times the Jacobian: undamped steps then contract by only 2/3."""

    def evaluate(self, xi, need_jacobian=False):
        r, v, Jt = super().evaluate(xi, need_jacobian)
        return r, v, (None if Jt is None else 3.0 * Jt)


def test_galerkin_switches_to_fd_jacobian_when_slow(burgers_pod):
    fom, phi, x0 = burgers_pod
    man = manifold_from_pod(phi, x0)
    s = backward_euler(0.07)
    cfg = SolverConfig(tol=1e-10, max_iter=10, line_search=False)
    ref, _ = galerkin_step(man, s, [np.zeros(4)], 0.07, MU, fom, cfg)
    xi, info = galerkin_solve(ScaledJacobian(man, s, [np.zeros(4)], 0.07, MU, fom), np.zeros(4), cfg)
    assert info.iterations <= 8 and np.abs(xi - ref).max() < 1e-8


def test_backtrack_picks_first_decreasing_direction():
    # |x| has a kink at 0 along the first coordinate; the first direction never decreases
    res = lambda x: np.array([abs(x[0]), x[1] - 1.0])
    xi = np.zeros(2)
    norm = np.linalg.norm(res(xi))
    lam, p, trials = _backtrack(res, xi, norm, (np.array([1.0, 0.0]), np.array([0.0, 4.0])), 10)
    assert p[1] == 4.0 and lam == 0.25 and trials == 13
    with pytest.raises(LineSearchError):
        _backtrack(res, xi, norm, (np.array([1.0, 0.0]), np.array([-1.0, 0.0])), 5)
