"""
Mass counterterms from the renormalization conditions at mu = 1/2.

Conditions: E f^{i,1,0}_{kappa,1/2} = frak^{[i]} for i = 1..i_sharp.  With
Psi = G_{kappa||mu} * xi a centred stationary Gaussian field of covariance
C = G_{kappa||mu} * G_{kappa||mu}, the expectations are polynomial Gaussian
moments evaluated by Wick's rule over all perfect matchings of the legs.
"""
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .grid import sample_white_noise
from .kernels import PeriodizedKernel

MU_REF = 0.5


class RenormError(ValueError):
    pass


@dataclass
class RenormConditions:
    frak: dict = field(default_factory=dict)
    mu_ref: float = MU_REF

    def value(self, i):
        return float(self.frak.get(i, 0.0))


@dataclass
class CountertermSet:
    kappa: float
    c: dict
    provenance: str = "mode-sum"
    i_sharp: int = None
    errors: dict = field(default_factory=dict)


# -- Gaussian moments ---------------------------------------------------------
def all_pairings(legs):
    """Every perfect matching of a list of legs, as lists of pairs."""
    legs = list(legs)
    if not legs:
        yield []
        return
    first, rest = legs[0], legs[1:]
    for k in range(len(rest)):
        pair = (first, rest[k])
        for tail in all_pairings(rest[:k] + rest[k + 1:]):
            yield [pair] + tail


def gaussian_moment(powers, cov):
    """E prod_v X_v^{powers[v]} for centred jointly Gaussian X.

    cov(u, v) returns the covariance (scalars or broadcastable arrays).
    """
    legs = [v for v, p in enumerate(powers) for _ in range(p)]
    if len(legs) % 2:
        return 0.0
    total = 0.0
    for match in all_pairings(legs):
        term = 1.0
        for u, v in match:
            term = term * cov(u, v)
        total = total + term
    return total


def poly_mul(p, q):
    out = {}
    for ka, ca in p.items():
        for kb, cb in q.items():
            key = tuple(x + y for x, y in zip(ka, kb))
            out[key] = out.get(key, 0.0) + ca * cb
    return out


def poly_add(*ps):
    out = {}
    for p in ps:
        for k, c in p.items():
            out[k] = out.get(k, 0.0) + c
    return out


def poly_expectation(poly, cov):
    return sum(c * gaussian_moment(k, cov) for k, c in poly.items() if c)


# -- covariance -----------------------------------------------------------------
def psi_covariance(factory, kappa, mu):
    """Covariance kernel C(z) = E Psi(x + z) Psi(x) as a PeriodizedKernel."""
    m = factory.fluctuation(kappa, mu).multiplier
    return PeriodizedKernel(factory.grid, None, m * m)


def expected_psi_sq(factory, kappa, mu, check=True):
    """E Psi_{kappa,mu}(x)^2 from the position sum, checked against the mode sum."""
    g = factory.grid
    if mu == 0:
        return 0.0
    Gf = factory.fluctuation(kappa, mu)
    pos = g.cell_volume * float(np.sum(Gf.position ** 2))
    modes = float(np.sum(Gf.multiplier ** 2)) / (2 * np.pi) ** g.d
    if check and abs(pos - modes) > 1e-10 * max(abs(pos), 1e-300):
        raise RenormError("position and mode sums disagree: %r vs %r" % (pos, modes))
    return pos


def counterterm_c1(factory, kappa, conditions=None):
    conditions = conditions or RenormConditions()
    return conditions.value(1) - 3.0 * expected_psi_sq(factory, kappa, conditions.mu_ref)


def f21_polynomial(c1):
    """E f^{2,1,0}(x) = int G(w) E[P(Psi(x), Psi(x+w))] dw + c2, P as a dict."""
    X = {(1, 0): 1.0}
    Y = {(0, 1): 1.0}
    const = {(0, 0): c1}
    AX = poly_add(poly_mul({(0, 0): 3.0}, poly_mul(X, X)), const)
    AY = poly_add(poly_mul({(0, 0): 3.0}, poly_mul(Y, Y)), const)
    BY = poly_add(poly_mul(Y, poly_mul(Y, Y)), poly_mul(const, Y))
    return poly_add(poly_mul(AX, AY), poly_mul({(0, 0): 6.0}, poly_mul(X, BY)))


def expected_f21_without_c2(factory, kappa, c1, mu=MU_REF):
    g = factory.grid
    C = psi_covariance(factory, kappa, mu)
    Cpos = C.position.ravel()
    C0 = Cpos[0]
    G = factory.fluctuation(kappa, mu).position.ravel()

    def cov(u, v):
        return C0 if u == v else Cpos

    EP = poly_expectation(f21_polynomial(c1), cov)
    return g.cell_volume * float(np.sum(G * EP))


def counterterm_c2(factory, kappa, c1, conditions=None, i_sharp=None):
    """Second counterterm from the Wick expansion of E f^{2,1,0}."""
    conditions = conditions or RenormConditions()
    if i_sharp is not None and i_sharp < 2:
        raise RenormError("no second counterterm for these (d,σ)")
    return conditions.value(2) - expected_f21_without_c2(factory, kappa, c1, conditions.mu_ref)


def counterterms_mode(factory, kappa, i_sharp, conditions=None):
    conditions = conditions or RenormConditions()
    if i_sharp > 2:
        raise RenormError("counterterms beyond second order are not implemented")
    c = {1: counterterm_c1(factory, kappa, conditions)}
    if i_sharp >= 2:
        c[2] = counterterm_c2(factory, kappa, c[1], conditions, i_sharp)
    return CountertermSet(kappa, c, "mode-sum", i_sharp)


# -- Monte Carlo -------------------------------------------------------------------
def _f_observables(factory, kappa, mu, xi, c1):
    """Spatial means of f^{1,1,0} (c1 = 0) and f^{2,1,0} (c2 = 0)."""
    g = factory.grid
    Gf = factory.fluctuation(kappa, mu)
    psi = Gf.apply(xi)
    A = 3 * psi ** 2 + c1
    B = psi ** 3 + c1 * psi
    f11 = 3 * psi ** 2
    f21 = A * Gf.apply(A) + 6 * psi * Gf.apply(B)
    return float(f11.mean()), float(f21.mean())


def _pool_size(threads):
    import os
    if threads is None:
        threads = int(os.environ.get("RENORMFLOW_THREADS", 0)) or os.cpu_count() or 1
    return max(1, int(threads))


def counterterms_mc(factory, kappa, i_sharp, samples=1000, base_seed=0, conditions=None,
                    c1=None, threads=None, tol=None):
    """Counterterms estimated order by order from sampled noise.

    The second condition is evaluated with the supplied c1 (default: the
    Monte Carlo estimate of the first).  Returns a CountertermSet whose
    ``errors`` hold the standard errors.
    """
    conditions = conditions or RenormConditions()
    mu = conditions.mu_ref
    g = factory.grid
    c1_used = c1

    def one(s):
        xi = sample_white_noise(g, base_seed + s).values
        return xi

    with ThreadPoolExecutor(_pool_size(threads)) as ex:
        xis = list(ex.map(one, range(samples)))
    f11 = np.array([_f_observables(factory, kappa, mu, xi, 0.0)[0] for xi in xis])
    c1_mc = conditions.value(1) - f11.mean()
    e1 = f11.std(ddof=1) / np.sqrt(samples)
    c = {1: c1_mc}
    err = {1: e1}
    if i_sharp >= 2:
        if c1_used is None:
            c1_used = c1_mc
        with ThreadPoolExecutor(_pool_size(threads)) as ex:
            f21 = np.array(list(ex.map(lambda xi: _f_observables(factory, kappa, mu, xi, c1_used)[1], xis)))
        c[2] = conditions.value(2) - f21.mean()
        err[2] = f21.std(ddof=1) / np.sqrt(samples)
    if tol is not None and max(err.values()) > tol:
        warnings.warn("Monte Carlo error %.3g exceeds requested tolerance %.3g" % (max(err.values()), tol))
    return CountertermSet(kappa, c, "monte-carlo", i_sharp, err)


def enhanced_noise_expectations(factory, kappa, mus, counterterms, samples=200, base_seed=0):
    """Sample means of the enhanced-noise observables across mu.

    Rows: (label, mu, mean, stderr); observables are spatial means per sample.
    """
    from .flow import closed_form_coefficients
    g = factory.grid
    rows = []
    for mu in mus:
        acc = {}
        for s in range(samples):
            xi = sample_white_noise(g, base_seed + s).values
            cf, psi = closed_form_coefficients(xi, kappa, mu, counterterms, factory)
            vals = {
                "(0,0,0)": xi.mean(),
                "(1,0,0)": cf[(1, 0)].integrate().mean(),
                "(1,1,0)": cf[(1, 1)].integrate().mean(),
                "(1,2,0)": cf[(1, 2)].integrate().mean(),
                "(1,3,0)": cf[(1, 3)].integrate().mean(),
                "(2,0,0)": cf[(2, 0)].integrate().mean(),
                "(2,1,0)": cf[(2, 1)].integrate().mean(),
            }
            for k, v in vals.items():
                acc.setdefault(k, []).append(v)
        for k, v in acc.items():
            v = np.asarray(v)
            rows.append((k, mu, float(v.mean()), float(v.std(ddof=1) / np.sqrt(len(v)))))
    return rows


def divergence_slope(sigma, kappas, N=2 ** 22, M=4, conditions=None):
    """Scaling of c1 with [kappa] on a fine one-dimensional grid.

    Returns a dict with
      raw        : PowerFit of -c1 against [kappa]
      diff       : PowerFit of |c1(kappa_j) - c1(kappa_{j+1})| against [kappa_j]
      corrected  : (p, stderr) from -c1 = A + B [kappa]^p (1 + b [kappa]^sigma),
                   None if the fit fails
      c1, bracket
    The correction term is the first subleading power in the expansion of
    (1 + |k|^sigma)^{-2}; without it the fits are dominated by it up to
    kappa ~ 2^-10.
    """
    from scipy.optimize import curve_fit
    from .grid import TorusGrid
    from .kernels import KernelFactory, bracket
    from .stats import fit_exponent
    F = KernelFactory(TorusGrid(1, N), sigma, M)
    kappas = sorted(kappas, reverse=True)
    c1 = np.array([counterterm_c1(F, k, conditions) for k in kappas])
    br = bracket(np.asarray(kappas), sigma)
    raw = fit_exponent(br, -c1) if len(kappas) >= 4 else None
    dfit = fit_exponent(br[:-1], np.abs(np.diff(c1))) if len(kappas) >= 5 else None
    corrected = None
    if len(kappas) >= 5:
        def model(lb, A, B, p, b):
            return A + B * np.exp(p * lb) * (1 + b * np.exp(sigma * lb))
        try:
            popt, pcov = curve_fit(model, np.log(br), -c1, p0=(0.0, 1.0, 2 * sigma - 1, 0.0))
            corrected = (float(popt[2]), float(np.sqrt(pcov[2, 2])))
        except RuntimeError:
            # no convergence, e.g. when c1 saturates below the lattice scale
            corrected = None
    return {"raw": raw, "diff": dfit, "corrected": corrected, "c1": c1, "bracket": br}
