import numpy as np
import pytest

from renormflow.flow import (BoundRow, FlowConfig, FlowError, boundary_force,
                             closed_form_coefficients, flow_rhs, integrate_flow, max_m,
                             nonzero_entries, resummed_force)
from renormflow.grid import TorusGrid, sample_white_noise
from renormflow.kernels import KernelFactory
from renormflow.renorm import counterterms_mode
from renormflow.tensorkern import TruncationError

KEYS = [(1, 2), (1, 1), (1, 0), (2, 0), (2, 1)]


def dense_rel(a, b):
    A, B = a.to_dense(), b.to_dense()
    return float(np.max(np.abs(A - B)) / np.max(np.abs(B)))


@pytest.fixture(scope="module")
def small():
    F = KernelFactory(TorusGrid(1, 32), 0.4)
    xi = sample_white_noise(F.grid, 3).values
    return F, xi, {1: -0.3, 2: -0.02}


# -- boundary data -------------------------------------------------------------------------
def test_boundary_nonzero_pattern(grid64, noise64):
    st = boundary_force(noise64, {1: -0.4, 2: -0.03}, 2, grid64, required=2)
    assert sorted(nonzero_entries(st)) == [(0, 0), (1, 1), (1, 3), (2, 1)]
    assert np.array_equal(st[(0, 0)].terms[()], noise64)
    assert st[(1, 3)].terms == {(0, 0, 0): pytest.approx(np.ones(64))}
    assert np.all(st[(2, 1)].local_part() == -0.03)


def test_boundary_zero_inputs(grid64):
    st = boundary_force(np.zeros(64), {}, 2, grid64)
    assert nonzero_entries(st) == [(1, 3)]


def test_boundary_keys_and_missing_counterterm(grid64, noise64):
    st = boundary_force(noise64, {1: -0.4, 2: -0.03}, 2, grid64)
    # only non-vanishing (i, m) are stored
    assert sorted(st) == sorted((i, m) for i in range(3) for m in range(max_m(i) + 1))
    with pytest.raises(KeyError, match=r"c\[2\]"):
        boundary_force(noise64, {1: -0.4}, 2, grid64, required=2)


# -- right-hand side --------------------------------------------------------------------------
def test_rhs_trivial_entries(factory64, noise64):
    st = boundary_force(noise64, {1: -0.4, 2: -0.03}, 2, factory64.grid)
    r = flow_rhs(st, factory64.d_mu_G(0.125, 0.4), 2, 3)
    assert r[(1, 3)].is_zero
    assert r[(0, 0)].is_zero


def test_rhs_F12_closed_form(factory64, noise64):
    # d/dmu 3 Psi = -3 d_mu G * xi on the double diagonal
    st = boundary_force(noise64, {1: -0.4, 2: -0.03}, 2, factory64.grid)
    dG = factory64.d_mu_G(0.125, 0.4)
    r = flow_rhs(st, dG, 2, 3)[(1, 2)]
    assert list(r.terms) == [(0, 0)]
    ref = -3 * dG.apply(noise64)
    assert np.max(np.abs(r.terms[(0, 0)] - ref)) <= 1e-12 * np.max(np.abs(ref))


def test_rhs_truncation_is_hard_error(factory64, noise64):
    st = boundary_force(noise64, {1: -0.4}, 2, factory64.grid)
    st = integrate_flow(noise64, 0.125, {1: -0.4, 2: 0.0}, FlowConfig(steps=8), factory64).state
    with pytest.raises(TruncationError, match="truncation"):
        flow_rhs(st, factory64.d_mu_G(0.125, 0.4), 2, 0)


# -- integration against closed forms ---------------------------------------------------------
@pytest.mark.parametrize("mu", [0.25, 0.5, 0.75])
def test_flow_matches_closed_form(flow64, factory64, noise64, mu):
    ct, res = flow64
    cf, _ = closed_form_coefficients(noise64, 0.125, mu, ct, factory64)
    for key in KEYS:
        assert dense_rel(res.snapshots[mu][key], cf[key]) < 1e-3, key
    assert (res.snapshots[mu][(1, 3)] - cf[(1, 3)]).vm_norm() == 0


def test_flow_end_state(flow64, factory64, noise64):
    ct, res = flow64
    cf, psi = closed_form_coefficients(noise64, 0.125, 1.0, ct, factory64)
    assert np.max(np.abs(psi - factory64.G_kappa(0.125).apply(noise64))) < 1e-15
    for key in KEYS:
        assert dense_rel(res.state[key], cf[key]) < 1e-3, key


def test_flow_F11_scalar(flow64, factory64, noise64):
    ct, res = flow64
    psi = factory64.fluctuation(0.125, 0.5).apply(noise64)
    F11 = res.snapshots[0.5][(1, 1)]
    ref = 3 * psi ** 2 + ct.c[1]
    assert np.max(np.abs(F11.local_part() - ref)) <= 1e-3 * np.max(np.abs(ref))


def test_closed_form_mu_zero(factory64, noise64):
    cf, psi = closed_form_coefficients(noise64, 0.125, 0.0, {1: -0.4, 2: -0.03}, factory64)
    assert np.all(psi == 0)
    assert cf[(1, 0)].is_zero
    assert np.all(cf[(1, 1)].local_part() == -0.4)


def test_midpoint_order(small):
    F, xi, ct = small
    errs = []
    cf, _ = closed_form_coefficients(xi, 0.125, 0.5, ct, F)
    for steps in (32, 64, 128):
        res = integrate_flow(xi, 0.125, ct, FlowConfig(steps=steps), F, mu_end=0.5)
        errs.append(dense_rel(res.state[(1, 0)], cf[(1, 0)]))
    slopes = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(slopes - 2) <= 0.4), slopes


@pytest.mark.parametrize("variable", ["logit", "bracket"])
def test_step_variables(small, variable):
    F, xi, ct = small
    res = integrate_flow(xi, 0.125, ct, FlowConfig(steps=256, variable=variable), F, mu_end=0.5)
    cf, _ = closed_form_coefficients(xi, 0.125, 0.5, ct, F)
    for key in KEYS:
        assert dense_rel(res.state[key], cf[key]) < 1e-3, key


def test_constant_below_half_kappa(small):
    F, xi, ct = small
    res = integrate_flow(xi, 0.125, ct, FlowConfig(steps=16), F, checkpoints=(0.01, 0.0625))
    st0 = boundary_force(xi, ct, 2, F.grid)
    for mu in (0.01, 0.0625):
        for key, V in st0.items():
            assert (res.snapshots[mu][key] - V).vm_norm() == 0


def test_vanishing_pattern(flow64):
    _, res = flow64
    for (i, m) in res.state:
        assert i > 0 or m == 0
        assert m <= max_m(i)
    assert not res.state[(2, 5)].is_zero


def test_nonfinite_aborts(small):
    F, xi, ct = small
    bad = xi.copy()
    bad[3] = np.nan
    with pytest.raises(FlowError, match="non-finite"):
        integrate_flow(bad, 0.125, ct, FlowConfig(steps=4), F)


def test_config_validation():
    for kw in ({"i_max": 0}, {"m_max": 4}, {"steps": 0}, {"variable": "log"}):
        with pytest.raises(ValueError):
            FlowConfig(**kw)


# -- weighted coefficients ---------------------------------------------------------------------
def test_weighted_flow_consistency():
    # G_{kappa||mu} is supported in |x|^sigma <= 2 mu / (1 - mu); up to mu = 0.3
    # at sigma = 1/2 this stays inside |x| < pi, where the minimal-image weight
    # splits exactly across each contraction
    F = KernelFactory(TorusGrid(1, 32), 0.5)
    xi = sample_white_noise(F.grid, 3).values
    key = (2, 1, ((1,),))
    res = integrate_flow(xi, 0.125, {1: -0.3}, FlowConfig(steps=64, weighted=(key,)), F,
                         checkpoints=(0.2,), mu_end=0.3)
    for st, wst in ((res.snapshots[0.2], res.wsnapshots[0.2]), (res.state, res.wstate)):
        ref = st[(2, 1)].weight([(1,)])
        assert ref.vm_norm() > 0
        assert (wst[key] - ref).vm_norm() <= 1e-12 * ref.vm_norm()
        # diagonal part has no weight
        assert (0,) not in wst[key].terms or not np.any(wst[key].terms[(0,)])


def test_weighted_F12_vanishes(small):
    F, xi, ct = small
    key = (1, 2, ((1,), (0,)))
    res = integrate_flow(xi, 0.125, ct, FlowConfig(steps=8, weighted=(key,)), F, mu_end=0.3)
    assert res.wstate[key].vm_norm() == 0


# -- resummation and harness rows ---------------------------------------------------------------
def test_resummed_force_polynomial(grid64, noise64):
    st = boundary_force(noise64, {1: -0.4, 2: -0.03}, 2, grid64)
    phi = np.sin(np.arange(64) * grid64.h)
    lam = 0.3
    ref = noise64 + lam * (phi ** 3 - 0.4 * phi) + lam ** 2 * (-0.03) * phi
    assert np.max(np.abs(resummed_force(st, lam, phi) - ref)) < 1e-14
    assert np.max(np.abs(resummed_force(st, lam, phi, i_max=1) - ref + lam ** 2 * (-0.03) * phi)) < 1e-14


def test_mu_end(small):
    F, xi, ct = small
    a = integrate_flow(xi, 0.125, ct, FlowConfig(steps=16), F, mu_end=0.05)
    for key, V in boundary_force(xi, ct, 2, F.grid).items():
        assert (a.state[key] - V).vm_norm() == 0
    b = integrate_flow(xi, 0.125, ct, FlowConfig(steps=64), F, checkpoints=(0.4, 0.9), mu_end=0.4)
    assert set(b.snapshots) == {0.4}
    assert (b.snapshots[0.4][(1, 0)] - b.state[(1, 0)]).vm_norm() == 0


def test_bound_row_ratio():
    assert BoundRow(1, 0, 1, (0.5, 0.25), (0.0, 0.0)).ratio == 1.0
    assert BoundRow(1, 0, 1, (0.5, 0.25), (0.0, 2.0)).ratio == float("inf")
    assert BoundRow(1, 0, 1, (0.5, 0.25), (1.0, 3.0)).ratio == 3.0
