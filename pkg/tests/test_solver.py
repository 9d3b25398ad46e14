import numpy as np
import pytest

from renormflow.flow import closed_form_coefficients
from renormflow.grid import TorusGrid, sample_white_noise
from renormflow.kernels import KernelFactory
from renormflow.renorm import counterterms_mode
from renormflow.solver import (SolverError, besov_grid, besov_norm, convergence_study, force,
                               green, picard_solve, series_solution, stationary_residual)
from renormflow.stats import fit_exponent


# -- force ---------------------------------------------------------------------------------
def test_force_trivial(noise64):
    phi = np.linspace(-1, 1, 64)
    assert np.array_equal(force(phi, noise64, 0.0, {1: -0.4}), noise64)
    assert np.array_equal(force(np.zeros(64), noise64, 0.7, {1: -0.4, 2: 0.1}), noise64)


def test_force_formula(noise64):
    phi = np.linspace(-1, 1, 64)
    lam, c = 0.3, {1: -0.4, 2: 0.1}
    ref = noise64 + lam * phi ** 3 + (lam * -0.4 + lam ** 2 * 0.1) * phi
    assert np.max(np.abs(force(phi, noise64, lam, c) - ref)) < 1e-15
    with pytest.raises(ValueError, match="shape"):
        force(np.zeros(32), noise64, lam, c)


def test_force_jacobian(noise64):
    rng = np.random.default_rng(0)
    phi, dphi = rng.standard_normal(64), rng.standard_normal(64)
    lam, c = 0.3, {1: -0.4, 2: 0.1}
    jac = 3 * lam * phi ** 2 + lam * c[1] + lam ** 2 * c[2]
    eps = 1e-6
    fd = (force(phi + eps * dphi, noise64, lam, c) - force(phi - eps * dphi, noise64, lam, c)) / (2 * eps)
    assert np.max(np.abs(fd - jac * dphi)) < 1e-6


# -- Picard ---------------------------------------------------------------------------------
@pytest.fixture(scope="module")
def sing():
    F = KernelFactory(TorusGrid(1, 64), 0.4)
    xi = sample_white_noise(F.grid, 1).values
    return F, xi, counterterms_mode(F, 0.125, 2)


def test_picard_lambda_zero(sing):
    F, xi, ct = sing
    r = picard_solve(xi, 0.0, 0.125, ct, F)
    assert r.residual_sup == 0.0 and r.iterations == 1
    assert np.array_equal(r.phi, F.G_kappa(0.125).apply(xi))


def test_picard_fixed_point(sing):
    F, xi, ct = sing
    r = picard_solve(xi, 0.3, 0.125, ct, F, seed=1)
    Gk = green(F, 0.125)
    assert np.max(np.abs(r.phi - Gk.apply(force(r.phi, xi, 0.3, ct)))) <= 1e-10
    assert r.residual_sup <= 1e-10
    assert 0 < r.contraction_ratio < 1
    assert r.provenance == "mode-sum" and r.seed == 1 and r.lam == 0.3


def test_regular_regime_pde_residual():
    F = KernelFactory(TorusGrid(1, 256), 1.6)
    xi = sample_white_noise(F.grid, 0).values
    r = picard_solve(xi, 0.1, 0, None, F, tol=1e-12, auto=True)
    k = F.grid.kabs()
    Q = np.fft.ifft(np.fft.fft(r.phi) * (1 + k ** 1.6)).real
    assert np.max(np.abs(Q - xi - r.lam * r.phi ** 3)) < 1e-8
    assert r.contraction_ratio < 1


def test_picard_divergence_and_auto(sing):
    F, xi, ct = sing
    with pytest.raises(SolverError) as info:
        picard_solve(xi, 50.0, 0.125, ct, F, max_iter=200)
    assert info.value.lam == 50.0
    r = picard_solve(xi, 50.0, 0.125, ct, F, max_iter=200, auto=True)
    assert r.lam < 50.0 and r.residual_sup <= 1e-10
    assert np.log2(50.0 / r.lam) == pytest.approx(round(np.log2(50.0 / r.lam)))


def test_picard_max_iter_error(sing):
    F, xi, ct = sing
    with pytest.raises(SolverError, match="no convergence") as info:
        picard_solve(xi, 0.3, 0.125, ct, F, max_iter=2)
    assert info.value.residual > 1e-10


def test_odd_symmetry(sing):
    F, xi, ct = sing
    a = picard_solve(xi, 0.3, 0.125, ct, F).phi
    b = picard_solve(-xi, 0.3, 0.125, ct, F).phi
    assert np.max(np.abs(a + b)) < 1e-12


def test_translation_equivariance(sing):
    F, xi, ct = sing
    a = picard_solve(xi, 0.3, 0.125, ct, F).phi
    b = picard_solve(np.roll(xi, 7), 0.3, 0.125, ct, F).phi
    assert np.max(np.abs(np.roll(a, 7) - b)) < 1e-12


# -- series solution ------------------------------------------------------------------------------
def test_series_lambda_zero(flow64, factory64, noise64):
    _, res = flow64
    s = series_solution(res.state, 0.0, 0.125, factory64)
    assert np.max(np.abs(s - factory64.G_kappa(0.125).apply(noise64))) < 1e-15


def test_series_picard_order_closed_form(sing):
    # the exact mu = 1 coefficients remove the flow integration error
    F, xi, ct = sing
    cf, _ = closed_form_coefficients(xi, 0.125, 1.0, ct, F)
    lams = [2.0 ** -j for j in range(1, 6)]
    diff = [np.max(np.abs(series_solution(cf, l, 0.125, F) - picard_solve(xi, l, 0.125, ct, F).phi))
            for l in lams]
    fit = fit_exponent(lams, diff)
    assert abs(fit.slope - 3) <= 0.2 * 3


@pytest.mark.parametrize("mu", [0.25, 0.5, 0.75])
def test_stationary_relation_order(flow64, factory64, mu):
    # near mu = 1 the cubic term is small, so small lambda hits the flow error floor
    ct, res = flow64
    lams = [3.2, 1.6, 0.8, 0.4]
    r = [stationary_residual(res.state, res.snapshots[mu], l, 0.125, mu, factory64, 2) for l in lams]
    fit = fit_exponent(lams, r)
    assert abs(fit.slope - 3) <= 0.2 * 3


# -- Besov norm ---------------------------------------------------------------------------------
def test_besov_constant_and_homogeneity(factory64, noise64):
    assert besov_norm(np.full(64, -2.5), -0.3, factory64) == pytest.approx(2.5, rel=1e-13)
    a = besov_norm(noise64, -0.6, factory64)
    assert besov_norm(2 * noise64, -0.6, factory64) == pytest.approx(2 * a, rel=1e-14)
    with pytest.raises(ValueError, match="unsupported"):
        besov_norm(noise64, 0.0, factory64)


def test_besov_grid_reaches_lattice(factory64):
    mus = besov_grid(factory64)
    assert mus[0] == 1.0
    assert mus[-1] ** (1 / 0.4) <= factory64.grid.h < mus[-2] ** (1 / 0.4)


def test_besov_white_noise_refinement():
    vals = []
    for N in (256, 512, 1024):
        F = KernelFactory(TorusGrid(1, N), 0.45)
        vals.append(np.mean([besov_norm(sample_white_noise(F.grid, s).values, -0.6, F)
                             for s in range(8)]))
    assert np.all(np.isfinite(vals))
    assert max(vals[1] / vals[0], vals[2] / vals[1]) <= 1.25
    assert min(vals[1] / vals[0], vals[2] / vals[1]) >= 0.8


# -- convergence study ---------------------------------------------------------------------------
def test_convergence_requires_decreasing(sing):
    F, _, _ = sing
    with pytest.raises(ValueError, match="strictly decreasing"):
        convergence_study(0, 0.1, -0.1, [0.25, 0.25, 0.125], F)


def test_convergence_flags_failures(sing):
    F, xi, _ = sing
    tab = convergence_study(0, 50.0, -0.1, [0.25, 0.125], F, max_iter=50)
    assert len(tab.failures) == 2
    assert not any(r[-1] for r in tab.rows)
    assert np.isnan(tab.rows[0][1])


def test_convergence_regular_regime():
    F = KernelFactory(TorusGrid(1, 256), 1.6)
    kappas = [2.0 ** -j for j in range(1, 7)]
    tab = convergence_study(3, 0.05, -0.1, kappas, F, counterterms=None)
    d = [r[1] for r in tab.rows[:-1]]
    assert tab.decay is not None and tab.decay.slope > 0
    assert d[-1] < d[0]
    assert tab.rows[0][3:6] == (3, -0.1, 0.05)


def test_convergence_same_noise(sing):
    F, xi, ct = sing
    tab = convergence_study(1, 0.2, -0.1, [0.25, 0.125], F)
    phi = picard_solve(xi, 0.2, 0.125, counterterms_mode(F, 0.125, 2), F).phi
    assert tab.rows[1][2] == pytest.approx(besov_norm(phi, -0.1, F), rel=1e-12)
