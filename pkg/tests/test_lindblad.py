import math

import numpy as np
import pytest
from scipy.linalg import expm

from optoheat import lindblad as lb
from optoheat.baths import BathSpectrum, EngineParams, Flat, engine_rates, optical_steady_state, response
from optoheat.config import load_config
from optoheat.errors import FitError, NumericalError, TruncationError
from optoheat.hilbert import Coherent, Fock, Thermal, make_state
from optoheat.phasespace import OUFlow, coherent, mean_number, propagate, thermal


def flat_params(T_h=1.0, T_c=1.0, g=0.5, Gamma_M=0.01, n_th=None, omega_O=2.5):
    hot = BathSpectrum("hot", T_h, Flat(1.0))
    cold = BathSpectrum("cold", T_c, Flat(1.0))
    if n_th is None:
        n_th = 1 / math.expm1(1 / T_c) if T_c > 0 else 0.0
    return EngineParams(omega_O, 1.0, g, hot, cold, Gamma_M, n_th)


def random_density(n, rng):
    A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    m = A @ A.conj().T
    return m / np.trace(m).real


@pytest.fixture(scope="module")
def default():
    return load_config("default_engine")


@pytest.fixture(scope="module")
def default_run(default):
    info = lb.EvolveInfo()
    gens = lb.build_generators(default.params, default.dim_O, default.dim_M)
    _, pops = optical_steady_state(default.params, default.dim_O)
    s0 = lb.product_state(pops, make_state(Coherent(0.5), default.dim_M))
    t = np.linspace(0, 12, 25)
    return t, lb.evolve(s0, gens, t, info=info), gens, info


# -- generators ---------------------------------------------------------------------


@pytest.mark.invariant
def test_trace_and_hermiticity_preserved_on_random_matrices(default):
    rng = np.random.default_rng(0)
    gens = lb.build_generators(default.params, 3, 6)
    L = gens.superoperator()
    for _ in range(5):
        X = rng.normal(size=(18, 18)) + 1j * rng.normal(size=(18, 18))
        out = (L @ X.ravel()).reshape(18, 18)
        assert abs(np.trace(out)) < 1e-12 * np.abs(X).sum()
        H = X + X.conj().T
        outH = (L @ H.ravel()).reshape(18, 18)
        assert np.max(np.abs(outH - outH.conj().T)) < 1e-12 * np.abs(H).max()


def test_superoperator_matches_direct_action(default):
    rng = np.random.default_rng(1)
    gens = lb.build_generators(default.params, 3, 5)
    rho = random_density(15, rng)
    for bath in (None, "hot", "cold", "phonon"):
        via_super = (gens.superoperator(bath) @ rho.ravel()).reshape(15, 15)
        assert np.allclose(via_super, gens.apply(rho, bath), atol=1e-13)


@pytest.mark.invariant
def test_generators_are_gkls(default):
    gens = lb.build_generators(default.params, 3, 4)
    assert all(c.rate >= 0 for c in gens.channels)
    # each channel's dissipator generates a completely positive semigroup:
    # its Choi matrix restricted to the complement of the identity is PSD
    n = gens.size
    for c in gens.channels:
        if c.rate == 0:
            continue
        L = c.op.toarray()
        phi = c.rate * np.kron(L, L.conj())  # jump part in the Choi basis
        choi = phi.reshape(n, n, n, n).transpose(0, 2, 1, 3).reshape(n * n, n * n)
        assert np.linalg.eigvalsh(0.5 * (choi + choi.conj().T)).min() > -1e-12


def test_zero_coupling_removes_sidebands():
    gens = lb.build_generators(flat_params(g=0.0), 3, 4)
    assert all(c.rate == 0 for c in gens.channels if c.harmonic in (1, -1))
    assert any(c.rate > 0 for c in gens.channels if c.harmonic == 0)
    assert gens.superoperator(harmonic=1).nnz == 0 and gens.superoperator(harmonic=-1).nnz == 0


def test_zero_temperature_has_no_upward_rates():
    gens = lb.build_generators(flat_params(T_h=0.0, T_c=0.0), 3, 4)
    ups = [c for c in gens.channels if c.kind == "up"]
    assert ups and all(c.rate == 0 for c in ups)


def test_rate_table_matches_responses(default):
    p = default.params
    table = lb.build_generators(p, 3, 4).rate_table()
    k = p.kappa
    w = p.harmonic_frequencies
    for name, bath in p.baths.items():
        assert table[(name, 0, "down")] == response(bath, w[0])
        assert table[(name, 0, "up")] == response(bath, -w[0])
        for q in (1, -1):
            assert table[(name, q, "down")] == k * response(bath, w[q])
            assert table[(name, q, "up")] == k * response(bath, -w[q])
    assert table[("phonon", None, "down")] == p.Gamma_M * (p.n_M_th + 1)
    assert table[("phonon", None, "up")] == p.Gamma_M * p.n_M_th


# -- reduced states -------------------------------------------------------------------


def test_product_state_factors_recovered():
    rng = np.random.default_rng(2)
    a, b = random_density(3, rng), random_density(5, rng)
    s = lb.product_state(a, b)
    assert np.allclose(lb.reduced_O(s).matrix, a, atol=1e-14)
    assert np.allclose(lb.reduced_M(s).matrix, b, atol=1e-14)


def test_correlated_diagonal_marginals():
    # 0.5 |00><00| + 0.5 |11><11|
    m = np.zeros((6, 6))
    m[0, 0] = m[4, 4] = 0.5
    s = lb.JointState(m, 2, 3)
    assert np.allclose(lb.reduced_O(s).populations, [0.5, 0.5])
    assert np.allclose(lb.reduced_M(s).populations, [0.5, 0.5, 0.0])


def test_reduced_optical_state_stays_near_geometric(default, default_run):
    _, traj, _, _ = default_run
    _, pops = optical_steady_state(default.params, default.dim_O)
    for s in traj:
        assert np.max(np.abs(lb.reduced_O(s).populations - pops)) < 0.02


# -- evolution -------------------------------------------------------------------------


def test_gibbs_state_is_stationary():
    p = flat_params()
    a = engine_rates(p).drift
    dim_O, dim_M = 7, 15
    n_O = 1 / math.expm1(2.5)
    s0 = lb.product_state(make_state(Thermal(n_O), dim_O, 1.0), make_state(Thermal(p.n_M_th), dim_M, 1.0))
    gens = lb.build_generators(p, dim_O, dim_M)
    traj = lb.evolve(s0, gens, [0, 5 / a, 10 / a])
    for s in traj[1:]:
        assert np.max(np.abs(s.matrix - s0.matrix)) < 1e-8


def test_damped_oscillator_amplitude():
    p = flat_params(T_h=0.0, T_c=0.0, g=0.0, Gamma_M=0.1, n_th=0.0)
    gens = lb.build_generators(p, 2, 14)
    s0 = lb.product_state([1, 0], make_state(Coherent(1.0), 14))
    t = np.linspace(0, 20, 11)
    for ti, s in zip(t, lb.evolve(s0, gens, t)):
        mean, _ = lb.mechanical_moments(s)
        assert abs(mean - math.exp(-0.05 * ti)) < 1e-6


@pytest.mark.invariant
def test_evolution_preserves_trace_and_positivity(default_run):
    t, traj, _, info = default_run
    assert info.trace_drift < 1e-9 * t[-1]
    for s in traj:
        assert abs(np.trace(s.matrix).real - 1) < 1e-12
        assert np.linalg.eigvalsh(s.matrix).min() > -1e-8
    assert info.max_leak < lb.LEAK_BUDGET


def test_step_size_failure_raises(default):
    gens = lb.build_generators(default.params, 2, 4)
    s0 = lb.product_state([1, 0], make_state(Fock(1), 4))
    with pytest.raises(NumericalError, match="step-size"):
        lb.evolve(s0, gens, [0, 1], tol=1e-40, max_halvings=3)


def test_truncation_leak_raises():
    # thermal phonon bath pumps a tiny mechanical space
    p = flat_params(g=0.0, Gamma_M=0.5, n_th=2.0)
    gens = lb.build_generators(p, 2, 4)
    s0 = lb.product_state([1, 0], make_state(Fock(0), 4))
    with pytest.raises(TruncationError) as info:
        lb.evolve(s0, gens, [0, 5])
    assert "mechanical" in str(info.value) and info.value.required_dim > 4


def test_strang_splitting_defect_is_third_order(default):
    gens = lb.build_generators(default.params, 2, 4)
    A = gens.superoperator("hot").toarray()
    B = (gens.superoperator("cold") + gens.superoperator("phonon")).toarray()
    rho = lb.product_state([0.9, 0.1], make_state(Coherent(0.3), 4, budget=1e-3)).matrix.ravel()

    def defect(h):
        exact = expm(h * (A + B)) @ rho
        split = expm(0.5 * h * A) @ (expm(h * B) @ (expm(0.5 * h * A) @ rho))
        return np.max(np.abs(exact - split))

    d1, d2 = defect(0.02), defect(0.01)
    assert d2 < d1
    assert math.log2(d1 / d2) == pytest.approx(3.0, abs=0.2)


@pytest.mark.invariant
def test_truncation_robustness(default):
    p = default.params
    t = np.linspace(0, 10, 6)
    out = []
    for dim_M in (16, 24):
        gens = lb.build_generators(p, 5, dim_M)
        _, pops = optical_steady_state(p, 5)
        s0 = lb.product_state(pops, make_state(Coherent(0.5), dim_M))
        s = lb.evolve(s0, gens, t)[-1]
        m, n = lb.mechanical_moments(s)
        J = lb.heat_currents(s, gens)
        out.append(np.array([abs(m), n, J.hot, J.cold]))
    assert np.max(np.abs(out[1] - out[0]) / np.abs(out[1])) < 0.01


# -- heat currents ---------------------------------------------------------------------


def test_gibbs_state_carries_no_heat():
    p = flat_params()
    dim_O, dim_M = 5, 10
    s = lb.product_state(
        make_state(Thermal(1 / math.expm1(2.5)), dim_O, 1.0), make_state(Thermal(p.n_M_th), dim_M, 1.0)
    )
    for dressed in (False, True):
        J = lb.heat_currents(s, lb.build_generators(p, dim_O, dim_M), dressed_correction=dressed)
        if not dressed:
            assert max(abs(J.hot), abs(J.cold), abs(J.phonon)) < 1e-10
        assert abs(J.total) < 1e-10


def test_sideband_heat_vanishes_without_coupling():
    p = flat_params(T_h=3.0, T_c=0.5, g=0.0)
    gens = lb.build_generators(p, 3, 5)
    rho = random_density(15, np.random.default_rng(3))
    h = np.diag(gens.hamiltonian())
    for q in (1, -1):
        assert np.trace(h @ gens.apply(rho, harmonic=q)) == 0


@pytest.mark.invariant
def test_heat_bookkeeping(default, default_run):
    _, traj, gens, _ = default_run
    h = gens.hamiltonian()
    L = gens.superoperator()
    for s in traj[::6]:
        J = lb.heat_currents(s, gens)
        dE = float(np.real(np.dot(h, (L @ s.matrix.ravel()).reshape(gens.size, gens.size).diagonal())))
        assert J.total == pytest.approx(dE, rel=1e-8, abs=1e-14)


def test_engine_signature(default_run):
    _, traj, gens, _ = default_run
    for s in traj[4:]:
        J = lb.heat_currents(s, gens)
        assert J.hot > 0 and J.cold < 0


# -- drift and diffusion fit ------------------------------------------------------------


def test_fit_round_trip_on_ou_moments():
    f = OUFlow(-0.02, 0.013)
    t = np.linspace(0, 40, 81)
    start = coherent(0.8)
    mean = [propagate(start, f, ti).mean for ti in t]
    number = [mean_number(propagate(start, f, ti)) for ti in t]
    fit = lb.fit_drift_diffusion(t, mean, number, Gamma_M=0.001)
    assert fit.gamma == pytest.approx(-0.021, rel=1e-3)
    assert fit.d == pytest.approx(0.013, rel=1e-3)
    # thermal input: no first moment, second moment alone
    number = [mean_number(propagate(thermal(0.3), f, ti)) for ti in t]
    fit = lb.fit_drift_diffusion(t, np.zeros(len(t)), number)
    assert fit.drift_first is None
    assert fit.gamma == pytest.approx(-0.02, rel=1e-3) and fit.d == pytest.approx(0.013, rel=1e-3)


def test_fit_round_trip_on_monte_carlo_moments():
    from optoheat.phasespace import sample_ou

    f = OUFlow(0.05, 0.02)
    t = np.linspace(0, 20, 11)
    samples = [sample_ou(coherent(1.0), f, ti, 400_000, seed=int(i)) for i, ti in enumerate(t)]
    mean = [s.mean() for s in samples]
    number = [np.mean(np.abs(s) ** 2) for s in samples]
    fit = lb.fit_drift_diffusion(t, mean, number)
    assert fit.gamma == pytest.approx(0.05, rel=0.02)
    assert fit.d == pytest.approx(0.02, rel=0.05)


def test_fit_rejects_degenerate_input():
    with pytest.raises(FitError):
        lb.fit_drift_diffusion([0, 0, 0], [1, 1, 1], [1, 1, 1])


def test_uncoupled_oracle_fit():
    p = flat_params(T_h=0.0, T_c=0.0, g=0.0, Gamma_M=0.05, n_th=0.3)
    gens = lb.build_generators(p, 2, 16)
    t = np.linspace(0, 20, 21)
    traj = lb.evolve(lb.product_state([1, 0], make_state(Coherent(1.0), 16)), gens, t)
    fit = lb.extract_drift_diffusion(t, traj, Gamma_M=p.Gamma_M)
    assert abs(fit.gamma) < 1e-6
    assert fit.d == pytest.approx(p.Gamma_M * p.n_M_th, rel=1e-5)
