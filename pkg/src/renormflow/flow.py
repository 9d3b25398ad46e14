"""
Effective-force hierarchy.

The coefficients F^{i,m}_{kappa,mu} obey

    d/dmu F^{i,m} = - sym sum_{j,k} (1 + k) B(d_mu G_{kappa,mu}, F^{j,1+k}, F^{i-j,m-k})

with boundary data F^{0,0} = xi, F^{1,3} = delta^3 and F^{i,1} = c^{[i]} delta.
The system is lower triangular in (i, -m), so one explicit midpoint step
applied to all coefficients at once is equivalent to marching them in order.
Below kappa/2 the coefficients do not move.  Two step variables are
available: the length scale s = [mu] = mu^(1/sigma), or t = log(mu/(1-mu)).
In t every lattice point is swept by the shell supporting d_mu G in an
interval of fixed width log 2, which keeps the integrand equally resolved
at all scales; this is the default.  Once mu/(1-mu) exceeds the largest box
radius to the power sigma, G_{kappa,mu} vanishes on the box and the flow
has ended exactly.
"""
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .tensorkern import KernelTensor, TruncationError, circulant, contract_B, poly_binom_terms


class FlowError(RuntimeError):
    pass


def max_m(i):
    """Largest argument count of a non-vanishing order-i coefficient."""
    return 0 if i == 0 else 2 * (i - 1) + 3


@dataclass
class FlowConfig:
    """Truncation and integration settings.

    m_max bounds the number of extra (non-root) vertices a coefficient may
    carry; exceeding it at a retained order is an error.
    """

    i_max: int = 2
    m_max: int = 3
    steps: int = 512
    weighted: tuple = ()
    variable: str = "logit"

    def __post_init__(self):
        if self.i_max < 1:
            raise ValueError("i_max must be at least 1")
        if not 0 <= self.m_max <= 3:
            raise ValueError("m_max must be in 0..3")
        if self.steps < 1:
            raise ValueError("steps must be positive")
        if self.variable not in ("logit", "bracket"):
            raise ValueError("variable must be 'logit' or 'bracket'")


class _Logit:
    def __init__(self, factory):
        g = factory.grid
        self.sigma = factory.sigma
        rmax = np.pi * factory.M * math.sqrt(g.d)
        self.t_end = self.sigma * math.log(rmax)

    def start(self, kappa):
        mu = kappa / 2.0
        return math.log(mu / (1.0 - mu))

    def end(self):
        return self.t_end

    def to_var(self, mu):
        return self.t_end if mu >= 1.0 else min(math.log(mu / (1.0 - mu)), self.t_end)

    def mu(self, t):
        return 1.0 / (1.0 + math.exp(-t))

    def jac(self, t):
        mu = self.mu(t)
        return mu * (1.0 - mu)


class _Bracket:
    def __init__(self, factory):
        self.sigma = factory.sigma

    def start(self, kappa):
        return (kappa / 2.0) ** (1.0 / self.sigma)

    def end(self):
        return 1.0

    def to_var(self, mu):
        return mu ** (1.0 / self.sigma)

    def mu(self, s):
        return s ** self.sigma

    def jac(self, s):
        return self.sigma * s ** (self.sigma - 1.0)


def _counterterm_map(counterterms):
    c = getattr(counterterms, "c", counterterms)
    return dict(c or {})


def boundary_force(xi, counterterms, i_max, grid, required=None):
    """Coefficients of the bare force F_kappa (mu = 0).

    Parameters
    ----------
    xi : array
        Noise sample.
    counterterms : mapping i -> c^{[i]} or an object with attribute ``c``.
    required : int, optional
        Number of counterterms that must be present (i_sharp).
    """
    c = _counterterm_map(counterterms)
    if required is None:
        required = getattr(counterterms, "i_sharp", None)
    if required is not None:
        for i in range(1, min(required, i_max) + 1):
            if i not in c:
                raise KeyError("missing counterterm c[%d]" % i)
    state = {}
    for i in range(i_max + 1):
        for m in range(max_m(i) + 1):
            state[(i, m)] = KernelTensor(grid, m)
    state[(0, 0)] = KernelTensor.scalar(grid, np.asarray(xi, float).ravel())
    state[(1, 3)] = KernelTensor.local(grid, 1.0, 3)
    for i, ci in c.items():
        if 1 <= i <= i_max and ci:
            state[(i, 1)] = KernelTensor.local(grid, float(ci), 1)
    return state


def nonzero_entries(state):
    return [key for key, V in state.items() if not V.is_zero]


def flow_rhs(state, dG, i_max, m_max, targets=None, Gm=None):
    """d/dmu of every coefficient (i, m) with i <= i_max.

    dG is the PeriodizedKernel d_mu G_{kappa,mu}.
    """
    grid = dG.grid
    if Gm is None:
        Gm = circulant(dG)
    out = {}
    keys = targets if targets is not None else [k for k in state if k[0] <= i_max]
    for (i, m) in keys:
        acc = KernelTensor(grid, m)
        for j in range(1, i + 1):
            for k in range(m + 1):
                W = state.get((j, 1 + k))
                U = state.get((i - j, m - k))
                if W is None or U is None or W.is_zero or U.is_zero:
                    continue
                try:
                    acc = acc + (1 + k) * contract_B(dG, W, U, max_extra=m_max, kernel_matrix=Gm)
                except TruncationError as exc:
                    raise TruncationError("truncation at (i,m)=(%d,%d): %s" % (i, m, exc))
        out[(i, m)] = -1.0 * acc.symmetrize()
    return out


# -- weighted coefficients ---------------------------------------------------------
def _zero_a(m, d):
    return ((0,) * d,) * m


def _wkey(i, m, a, d):
    a = tuple(tuple(x) for x in a)
    return (i, m, a) if any(any(x) for x in a) else (i, m, _zero_a(m, d))


def weighted_dependencies(key, d):
    """Keys (i, m, a) whose flows feed the flow of `key`."""
    i, m, a = key
    deps = set()
    for pi in itertools.permutations(range(m)):
        ap = tuple(a[q] for q in pi)
        for j in range(1, i + 1):
            for k in range(m + 1):
                if 1 + k > max_m(j) or m - k > max_m(i - j):
                    continue
                for b, c, e, coef in poly_binom_terms(ap, k):
                    deps.add(_wkey(j, 1 + k, b, d))
                    deps.add(_wkey(i - j, m - k, e, d))
    return deps


def weighted_closure(keys, d):
    todo = [tuple(k) for k in keys]
    seen = set()
    while todo:
        key = todo.pop()
        key = _wkey(key[0], key[1], key[2], d)
        if key in seen:
            continue
        seen.add(key)
        todo.extend(weighted_dependencies(key, d))
    return seen


def weighted_rhs(wstate, factory, kappa, mu, i_max, m_max, keys):
    """d/dmu F^{i,m,a} from the weighted flow equation.

    The polynomial weight is split across each contraction with
    multinomial coefficients (see tensorkern.poly_binom_terms); the kernel
    carries X^c d_mu G, built on the oversampled box.
    """
    grid = factory.grid
    d = grid.d
    kern = {}
    out = {}
    for key in keys:
        i, m, a = key
        if i > i_max:
            continue
        acc = KernelTensor(grid, m)
        nperm = math.factorial(m)
        for pi in itertools.permutations(range(m)):
            ap = tuple(a[q] for q in pi)
            part = KernelTensor(grid, m)
            for j in range(1, i + 1):
                for k in range(m + 1):
                    if 1 + k > max_m(j) or m - k > max_m(i - j):
                        continue
                    for b, c, e, coef in poly_binom_terms(ap, k):
                        W = wstate.get(_wkey(j, 1 + k, b, d))
                        U = wstate.get(_wkey(i - j, m - k, e, d))
                        if W is None or U is None or W.is_zero or U.is_zero:
                            continue
                        if c not in kern:
                            K = factory.d_mu_G(kappa, mu, weight=c if any(c) else None)
                            kern[c] = (K, circulant(K))
                        K, Km = kern[c]
                        part = part + (coef * (1 + k)) * contract_B(K, W, U, max_extra=m_max, kernel_matrix=Km)
            # part is weighted by X^{pi(a)}; move slots back
            acc = acc + part.permute(pi)
        out[key] = (-1.0 / nperm) * acc
    return out


# -- integration -------------------------------------------------------------------
@dataclass
class FlowResult:
    kappa: float
    state: dict
    snapshots: dict = field(default_factory=dict)
    wstate: dict = None
    wsnapshots: dict = field(default_factory=dict)


def _axpy(state, rhs, h):
    out = dict(state)
    for key, dv in rhs.items():
        out[key] = state[key] + h * dv
    return out


def _check_finite(state, mu):
    for key, V in state.items():
        for A in V.terms.values():
            if not np.all(np.isfinite(A)):
                raise FlowError("non-finite coefficient %s at mu=%g" % (key, mu))


def _segments(v0, v1, checkpoints, steps):
    """Split [v0, v1] at the checkpoints, with steps shared by length."""
    cuts = sorted({v for v in checkpoints if v0 < v < v1})
    edges = [v0] + cuts + [v1]
    length = v1 - v0
    segs = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        segs.append((lo, hi, max(1, int(round(steps * (hi - lo) / length)))))
    return segs


def integrate_flow(xi, kappa, counterterms, config, factory, checkpoints=(), required=None,
                   mu_end=1.0):
    """Integrate the hierarchy from mu = 0 to mu = mu_end (default 1).

    Returns a FlowResult holding the final state and snapshots at the
    requested checkpoint values of mu.  With mu_end < 1 the step count
    applies to the shortened interval.
    """
    grid = factory.grid
    d = grid.d
    state = boundary_force(xi, counterterms, config.i_max, grid, required)
    wkeys = []
    wstate = None
    if config.weighted:
        wkeys = sorted(weighted_closure(config.weighted, d))
        wstate = {}
        for key in wkeys:
            i, m, a = key
            base = state.get((i, m), KernelTensor(grid, m))
            wstate[key] = base.weight(a) if any(any(x) for x in a) else base
    wmoving = [k for k in wkeys if any(any(x) for x in k[2])]

    var = (_Logit if config.variable == "logit" else _Bracket)(factory)
    v0, v1 = var.start(kappa), var.end() if mu_end >= 1.0 else var.to_var(mu_end)
    if mu_end <= kappa / 2.0:
        v1 = v0
    snaps, wsnaps = {}, {}
    cps = {}
    for mu in checkpoints:
        if mu <= kappa / 2.0:
            snaps[mu] = state
            if wstate is not None:
                wsnaps[mu] = wstate
        elif mu <= mu_end:
            cps.setdefault(var.to_var(mu), []).append(mu)
    keys = [k for k in state if k[0] >= 1]

    def rhs(st, wst, v):
        mu = var.mu(v)
        jac = var.jac(v)
        dG = factory.d_mu_G(kappa, mu)
        r = flow_rhs(st, dG, config.i_max, config.m_max, targets=keys)
        r = {k: jac * val for k, val in r.items()}
        wr = None
        if wst is not None:
            merged = dict(wst)
            for (i, m), V in st.items():
                merged[_wkey(i, m, _zero_a(m, d), d)] = V
            wr = weighted_rhs(merged, factory, kappa, mu, config.i_max, config.m_max, wmoving)
            wr = {k: jac * val for k, val in wr.items()}
        return r, wr

    for lo, hi, n in (_segments(v0, v1, cps, config.steps) if v1 > v0 else ()):
        dv = (hi - lo) / n
        for step in range(n):
            v = lo + step * dv
            k1, w1 = rhs(state, wstate, v)
            mid = _axpy(state, k1, 0.5 * dv)
            wmid = _axpy(wstate, w1, 0.5 * dv) if wstate is not None else None
            k2, w2 = rhs(mid, wmid, v + 0.5 * dv)
            state = _axpy(state, k2, dv)
            if wstate is not None:
                wstate = _axpy(wstate, w2, dv)
            _check_finite(state, var.mu(v + dv))
        for mu in cps.get(hi, ()):
            snaps[mu] = state
            if wstate is not None:
                wsnaps[mu] = wstate
    return FlowResult(kappa, state, snaps, wstate, wsnaps)


def resummed_force(state, lam, phi, i_max=None):
    """F_{kappa,mu}[phi] = sum_i sum_m lam^i F^{i,m}[phi] (truncated)."""
    out = 0.0
    for (i, m), V in state.items():
        if i_max is not None and i > i_max:
            continue
        if V.is_zero:
            continue
        out = out + lam ** i * V.evaluate(phi)
    return out


# -- closed forms -------------------------------------------------------------------
def closed_form_coefficients(xi, kappa, mu, counterterms, factory):
    """Low-order coefficients written in terms of Psi = G_{kappa||mu} * xi."""
    grid = factory.grid
    c = _counterterm_map(counterterms)
    c1, c2 = float(c.get(1, 0.0)), float(c.get(2, 0.0))
    xi = np.asarray(xi, float).ravel()
    Gf = factory.fluctuation(kappa, mu)
    psi = Gf.apply(xi.reshape(grid.shape)).ravel()
    A = 3 * psi ** 2 + c1
    B = psi ** 3 + c1 * psi
    GB = Gf.apply(B.reshape(grid.shape)).ravel()
    Gm = circulant(Gf)
    out = {
        (0, 0): KernelTensor.scalar(grid, xi),
        (1, 3): KernelTensor.local(grid, 1.0, 3),
        (1, 2): KernelTensor.local(grid, 3 * psi, 2),
        (1, 1): KernelTensor.local(grid, A, 1),
        (1, 0): KernelTensor.scalar(grid, B),
    }
    F25 = KernelTensor(grid, 5, {(0, 0, 1, 1, 1): 3.0 * Gm})
    out[(2, 5)] = F25.symmetrize()
    F21 = KernelTensor(grid, 1, {(1,): A[:, None] * Gm * A[None, :]})
    F21.add_term((0,), 6 * psi * GB + c2)
    out[(2, 1)] = F21
    out[(2, 0)] = KernelTensor.scalar(grid, A * GB + c2 * psi)
    return out, psi


# -- bound harness -------------------------------------------------------------------
@dataclass
class BoundRow:
    i: int
    m: int
    g: int
    mus: tuple
    scaled: tuple

    @property
    def ratio(self):
        v = np.asarray(self.scaled)
        if np.all(v == 0):
            return 1.0
        if np.any(v == 0):
            return float("inf")
        return float(v.max() / v.min())


def bound_harness(xi, kappa, counterterms, factory, dim, lengths=None, config=None,
                  g_values=None, m_dense=3):
    """Scaled mollified norms ||K_mu^{*g,(x)(1+m)} * F^{i,m}|| [mu]^{-rho_eps(i,m)}.

    The scales are dyadic in length, [mu] = 2^-j, down to about the lattice
    spacing.  Coefficients with m > m_dense are skipped (the mollified norm
    is computed on the dense N^{d(1+m)} array).  Returns (rows, best) with
    best[(i, m)] the row of smallest max/min ratio over g.
    """
    from .scaling import rho
    grid = factory.grid
    sigma = factory.sigma
    config = config or FlowConfig(steps=256)
    if lengths is None:
        lengths = [2.0 ** -j for j in range(1, 16) if 2.0 ** -j >= 0.5 * grid.h]
    mus = [float(L) ** sigma for L in lengths]
    if g_values is None:
        g_values = range(1, 2 * grid.d + 1)
    res = integrate_flow(xi, kappa, counterterms, config, factory, checkpoints=mus)
    rows, best = [], {}
    keys = sorted(k for k in res.state if k[1] <= m_dense)
    for (i, m) in keys:
        r = float(rho(dim, i, m, 0, dim.eps))
        for g in g_values:
            vals = []
            for mu, L in zip(mus, lengths):
                K = factory.K_pow(mu, g)
                vals.append(res.snapshots[mu][(i, m)].mollified_norm(K) * L ** (-r))
            row = BoundRow(i, m, g, tuple(mus), tuple(vals))
            rows.append(row)
            if (i, m) not in best or row.ratio < best[(i, m)].ratio:
                best[(i, m)] = row
    return rows, best
