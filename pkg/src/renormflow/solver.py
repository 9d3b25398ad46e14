"""
Solutions of the regularized mild equation Phi = G_kappa * F_kappa[Phi].

Two routes: a Picard fixed point in position space and the series
G_kappa * sum_i lam^i F^{i,0}_{kappa,1} built from the flow.  Besov norms
use the mollifiers K_mu^{*g} on a dyadic mu grid.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .grid import Field, _values, sample_white_noise
from .kernels import bracket


class SolverError(RuntimeError):
    """Picard iteration failed; ``residual`` holds the last sup-residual."""

    def __init__(self, msg, residual=float("nan"), lam=None):
        super().__init__(msg)
        self.residual = residual
        self.lam = lam


def _cmap(counterterms):
    c = getattr(counterterms, "c", counterterms)
    return dict(c or {})


def force(phi, xi, lam, counterterms=None):
    """F_kappa[phi] = xi + lam phi^3 + sum_i lam^i c^{[i]} phi, pointwise."""
    p = _values(phi)
    x = _values(xi)
    if p.shape != x.shape:
        raise ValueError("shape mismatch: %s vs %s" % (p.shape, x.shape))
    mass = sum(lam ** i * float(ci) for i, ci in _cmap(counterterms).items())
    out = x + lam * p ** 3 + mass * p
    return Field(xi.grid, out) if isinstance(xi, Field) else out


@dataclass
class SolveResult:
    phi: np.ndarray
    residual_sup: float
    iterations: int
    lam: float
    kappa: float
    seed: int = None
    provenance: str = ""
    residuals: list = field(default_factory=list)

    @property
    def contraction_ratio(self):
        r = [x for x in self.residuals if x > 0]
        if len(r) < 3:
            return float("nan")
        r = np.asarray(r)
        return float(np.exp(np.mean(np.diff(np.log(r[1:])))))


def green(factory, kappa):
    """G_kappa; kappa = 0 gives the uncut Green function."""
    return factory.G() if kappa == 0 else factory.G_kappa(kappa)


def _picard(xi, lam, kappa, counterterms, factory, tol, max_iter):
    Gk = green(factory, kappa)
    x = _values(xi)
    phi = Gk.apply(x)
    res = []
    for n in range(1, max_iter + 1):
        new = Gk.apply(force(phi, x, lam, counterterms))
        r = float(np.max(np.abs(new - phi)))
        res.append(r)
        phi = new
        if not np.isfinite(r) or (n > 3 and r > 1e6 * max(res[0], 1e-300)):
            raise SolverError("Picard iteration diverged at lam=%g" % lam, r, lam)
        if r <= tol:
            return phi, r, n, res
    raise SolverError("no convergence after %d iterations (residual %.3g)" % (max_iter, res[-1]),
                      res[-1], lam)


def picard_solve(xi, lam, kappa, counterterms, factory, tol=1e-10, max_iter=500,
                 auto=False, min_lam=1e-8, seed=None):
    """Fixed point of Phi -> G_kappa * F_kappa[Phi] from Phi_0 = G_kappa * xi.

    With ``auto=True`` lam is halved after each failure until the iteration
    converges or |lam| drops below ``min_lam``; the lam actually used is
    stored in the result.  The reported residual is sup |Phi - G_kappa *
    F_kappa[Phi]| of the returned field.
    """
    prov = getattr(counterterms, "provenance", "explicit" if counterterms else "none")
    while True:
        try:
            if lam == 0:
                phi = green(factory, kappa).apply(_values(xi))
                return SolveResult(phi, 0.0, 1, 0.0, kappa, seed, prov, [0.0])
            phi, r, n, res = _picard(xi, lam, kappa, counterterms, factory, tol, max_iter)
            Gk = green(factory, kappa)
            check = float(np.max(np.abs(phi - Gk.apply(force(phi, _values(xi), lam, counterterms)))))
            return SolveResult(phi, check, n, lam, kappa, seed, prov, res)
        except SolverError:
            if not auto or abs(lam) / 2 < min_lam:
                raise
            lam = lam / 2


def series_solution(state, lam, kappa, factory, i_max=None):
    """G_kappa * sum_{i <= i_max} lam^i F^{i,0}_{kappa,1}."""
    return green(factory, kappa).apply(
        series_force(state, lam, i_max).reshape(factory.grid.shape))


def series_force(state, lam, i_max=None):
    """F_{kappa,mu}[0] = sum_i lam^i F^{i,0}_{kappa,mu} as a flat array."""
    out = 0.0
    for (i, m), V in state.items():
        if m == 0 and (i_max is None or i <= i_max):
            out = out + lam ** i * V.integrate()
    return np.asarray(out, float)


def stationary_residual(state_1, state_mu, lam, kappa, mu, factory, i_max=None):
    """sup |F_{kappa,1}[0] - F_{kappa,mu}[G_{kappa,mu} * F_{kappa,1}[0]]|."""
    from .flow import resummed_force
    f1 = series_force(state_1, lam, i_max)
    phi = factory.G_cut(kappa, mu).apply(f1.reshape(factory.grid.shape)).ravel()
    rhs = resummed_force(state_mu, lam, phi, i_max)
    return float(np.max(np.abs(f1 - rhs)))


def besov_grid(factory, J=None):
    """Dyadic mu = 2^-j, j = 0..J, with [2^-J] close to the lattice spacing."""
    if J is None:
        J = max(0, int(math.ceil(factory.sigma * math.log2(1.0 / factory.grid.h))))
    return [2.0 ** -j for j in range(J + 1)]


def besov_norm(phi, alpha, factory, mus=None):
    """sup_mu [mu]^{-alpha} || K_mu^{*g} * phi ||_inf with g = ceil(-alpha)."""
    if not alpha < 0:
        raise ValueError("unsupported: besov_norm needs alpha < 0")
    g = int(math.ceil(-alpha))
    v = _values(phi).reshape(factory.grid.shape)
    best = 0.0
    for mu in (mus or besov_grid(factory)):
        Kv = factory.K_pow(mu, g).apply(v)
        best = max(best, float(bracket(mu, factory.sigma)) ** (-alpha) * float(np.max(np.abs(Kv))))
    return best


@dataclass
class ConvergenceTable:
    rows: list
    beta: float
    seed: int
    decay: object = None
    failures: list = field(default_factory=list)

    columns = ("kappa", "diff_norm", "norm", "seed", "beta", "lam", "ok")


def convergence_study(seed, lam, beta, kappas, factory, counterterms="mode", tol=1e-10,
                      max_iter=500, noise=None):
    """Successive C^beta differences of Phi_kappa along a dyadic kappa sequence.

    The same position-space noise drives every level.  ``counterterms`` is
    'mode' (Wick mode sums per kappa), None (no counterterms) or a callable
    kappa -> counterterm mapping.  A failed solve flags its row.
    """
    from .renorm import counterterms_mode
    from .scaling import Dimensions, i_sharp as _isharp
    from .stats import fit_exponent
    kappas = list(kappas)
    if any(b >= a for a, b in zip(kappas, kappas[1:])):
        raise ValueError("kappa sequence must be strictly decreasing")
    g = factory.grid
    xi = sample_white_noise(g, seed).values if noise is None else _values(noise)
    if counterterms == "mode" and factory.sigma > g.d / 2:
        # regular regime: nothing to subtract
        ct = lambda k: {}
    elif counterterms == "mode":
        ish = _isharp(Dimensions(g.d, factory.sigma))
        ct = (lambda k: counterterms_mode(factory, k, ish)) if ish > 0 else (lambda k: {})
    elif counterterms is None:
        ct = lambda k: {}
    else:
        ct = counterterms
    sols, fails = [], []
    for k in kappas:
        try:
            sols.append(picard_solve(xi, lam, k, ct(k), factory, tol, max_iter, seed=seed).phi)
        except Exception as exc:
            sols.append(None)
            fails.append((k, str(exc)))
    rows = []
    for j, k in enumerate(kappas):
        ok = sols[j] is not None
        norm = besov_norm(sols[j], beta, factory) if ok else float("nan")
        diff = float("nan")
        if ok and j + 1 < len(kappas) and sols[j + 1] is not None:
            diff = besov_norm(sols[j] - sols[j + 1], beta, factory)
        rows.append((k, diff, norm, seed, beta, lam, ok))
    decay = None
    pts = [(bracket(r[0], factory.sigma), r[1]) for r in rows if np.isfinite(r[1]) and r[1] > 0]
    if len(pts) >= 4:
        decay = fit_exponent(*zip(*pts))
    return ConvergenceTable(rows, beta, seed, decay, fails)
