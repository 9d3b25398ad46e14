"""
Coefficient kernels F(x; y_1, ..., y_m) on the lattice.

A KernelTensor is a finite sum of *vertex terms*.  A term is a pair
(alpha, A): A is an array over the root x and r extra lattice vertices
w_1..w_r, and alpha assigns each argument slot p to a vertex (0 = root).
The term represents

    F(x; y) = A(x, w) prod_p delta(y_p - v_{alpha(p)}),   v_0 = x,

with the extra vertices integrated against h^{d r}.  A dense kernel is the
term alpha = (1, ..., m); the local kernel v(x) delta(x-y_1)...delta(x-y_m)
is alpha = (0, ..., 0) with a one-axis array.  Delta factors therefore never
appear as h^-d spikes unless a dense view is requested.

Terms are kept canonical: extra vertices are labelled in order of first
appearance in alpha, and terms with equal alpha are merged.
"""
import itertools
import math
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

DENSE_LIMIT = 2 ** 25


class TruncationError(RuntimeError):
    pass


# -- lattice index helpers ---------------------------------------------------
@lru_cache(maxsize=16)
def _unravel(d, N):
    return np.array(np.unravel_index(np.arange(N ** d), (N,) * d))


@lru_cache(maxsize=16)
def _shift_table(d, N):
    """S[x, u] = flat index of x + u (periodic)."""
    c = _unravel(d, N)
    out = np.zeros((N ** d, N ** d), dtype=np.intp)
    for ax in range(d):
        out = out * N + (c[ax][:, None] + c[ax][None, :]) % N
    return out


@lru_cache(maxsize=16)
def _diff_table(d, N):
    """D[v, z] = flat index of v - z (periodic)."""
    c = _unravel(d, N)
    out = np.zeros((N ** d, N ** d), dtype=np.intp)
    for ax in range(d):
        out = out * N + (c[ax][:, None] - c[ax][None, :]) % N
    return out


@lru_cache(maxsize=16)
def _min_image(d, N):
    """Minimal-image coordinates (in (-pi, pi]) of each flat site, shape (d, n)."""
    j = np.arange(N)
    j = np.where(j > N // 2, j - N, j) * (2 * np.pi / N)
    return j[_unravel(d, N)]


def displacement_matrix(grid, axis):
    """(x - y)_axis reduced to (-pi, pi], as an n x n matrix."""
    u = _min_image(grid.d, grid.N)[axis]
    D = _diff_table(grid.d, grid.N)
    return u[D]


def circulant(kernel):
    """Matrix G(v - z) of a PeriodizedKernel's smooth part."""
    g = kernel.grid
    return kernel.position.ravel()[_diff_table(g.d, g.N)]


def _monomial(grid, a):
    """(x - y)^a / a! on the lattice (minimal image), n x n."""
    out = np.ones((grid.size, grid.size))
    for ax, c in enumerate(a):
        if c:
            out = out * displacement_matrix(grid, ax) ** c / math.factorial(c)
    return out


# -- canonical form -------------------------------------------------------------
def _canon(alpha, A):
    order = []
    for v in alpha:
        if v and v not in order:
            order.append(v)
    new = {old: i + 1 for i, old in enumerate(order)}
    alpha2 = tuple(new.get(v, 0) for v in alpha)
    if A.ndim != 1 + len(order):
        raise ValueError("array rank does not match the vertex count")
    return alpha2, np.transpose(A, [0] + order)


def _n_extra(alpha):
    return max(alpha, default=0)


class KernelTensor:
    """Coefficient kernel with m argument slots (see module docstring)."""

    def __init__(self, grid, m, terms=None):
        self.grid = grid
        self.m = int(m)
        self.terms = {}
        for alpha, A in (terms or {}).items():
            self.add_term(alpha, A)

    # construction
    def add_term(self, alpha, A):
        alpha = tuple(int(v) for v in alpha)
        if len(alpha) != self.m:
            raise ValueError("alpha has %d slots, tensor has m=%d" % (len(alpha), self.m))
        A = np.asarray(A, dtype=float)
        if A.shape != (self.grid.size,) * A.ndim:
            raise ValueError("term array must have shape (n, ..., n)")
        alpha, A = _canon(alpha, A)
        if alpha in self.terms:
            self.terms[alpha] = self.terms[alpha] + A
        else:
            self.terms[alpha] = np.array(A, dtype=float)
        return self

    @classmethod
    def zeros(cls, grid, m):
        return cls(grid, m)

    @classmethod
    def scalar(cls, grid, v):
        """m = 0 coefficient (a field)."""
        return cls(grid, 0, {(): np.asarray(v, float).ravel()})

    @classmethod
    def local(cls, grid, v, m):
        """v(x) delta(x - y_1) ... delta(x - y_m)."""
        v = np.broadcast_to(np.asarray(v, float).ravel(), (grid.size,))
        return cls(grid, m, {(0,) * m: v.copy()})

    @classmethod
    def from_dense(cls, grid, values):
        values = np.asarray(values, float)
        n = grid.size
        m = int(round(math.log(values.size, n))) - 1
        values = values.reshape((n,) * (1 + m))
        return cls(grid, m, {tuple(range(1, m + 1)): values})

    def copy(self):
        return KernelTensor(self.grid, self.m, {a: A.copy() for a, A in self.terms.items()})

    # structure
    @property
    def max_extra(self):
        return max((_n_extra(a) for a in self.terms), default=0)

    @property
    def is_zero(self):
        return all(not np.any(A) for A in self.terms.values())

    def local_part(self):
        """Field multiplying the all-diagonal term (zeros if absent)."""
        A = self.terms.get((0,) * self.m)
        return np.zeros(self.grid.size) if A is None else A

    # linear structure
    def _check(self, other):
        if other.grid != self.grid or other.m != self.m:
            raise ValueError("incompatible grids")

    def __add__(self, other):
        self._check(other)
        out = self.copy()
        for a, A in other.terms.items():
            out.add_term(a, A)
        return out

    def __sub__(self, other):
        return self + (-1.0) * other

    def __mul__(self, c):
        return KernelTensor(self.grid, self.m, {a: c * A for a, A in self.terms.items()})

    __rmul__ = __mul__

    def __neg__(self):
        return (-1.0) * self

    # slot operations
    def permute(self, pi):
        """Y_pi: the slot p of the result is slot pi^{-1}(p) of self."""
        inv = np.argsort(pi)
        out = KernelTensor(self.grid, self.m)
        for alpha, A in self.terms.items():
            out.add_term(tuple(alpha[q] for q in inv), A)
        return out

    def symmetrize(self):
        """Average over all permutations of the argument slots."""
        if self.m < 2:
            return self.copy()
        out = KernelTensor(self.grid, self.m)
        nperm = math.factorial(self.m)
        for alpha, A in self.terms.items():
            counts = {}
            for pi in itertools.permutations(range(self.m)):
                key = tuple(alpha[q] for q in pi)
                counts[key] = counts.get(key, 0) + 1
            for key, c in counts.items():
                out.add_term(key, (c / nperm) * A)
        return out

    # measures
    def _h(self, r):
        return self.grid.cell_volume ** r

    def integrate(self):
        """I V(x) = integral over all y of V(x; y)."""
        out = np.zeros(self.grid.size)
        for alpha, A in self.terms.items():
            r = A.ndim - 1
            out += self._h(r) * A.reshape(self.grid.size, -1).sum(axis=1)
        return out

    def vm_norm(self):
        """sup_x of the total variation in y (terms are mutually singular)."""
        if not self.terms:
            return 0.0
        tot = np.zeros(self.grid.size)
        for alpha, A in self.terms.items():
            r = A.ndim - 1
            tot += self._h(r) * np.abs(A).reshape(self.grid.size, -1).sum(axis=1)
        return float(tot.max())

    def evaluate(self, phi):
        """F[phi](x) = integral of V(x; y) phi(y_1) ... phi(y_m)."""
        return self.pair_slots([phi] * self.m)

    def pair_slots(self, phis):
        """Integrate the slots against the given fields, leaving a field of x."""
        if len(phis) != self.m:
            raise ValueError("need one field per slot")
        phis = [np.asarray(p, float).ravel() for p in phis]
        out = np.zeros(self.grid.size)
        for alpha, A in self.terms.items():
            r = A.ndim - 1
            root = np.ones(self.grid.size)
            vert = [np.ones(self.grid.size) for _ in range(r)]
            for p, v in enumerate(alpha):
                if v == 0:
                    root = root * phis[p]
                else:
                    vert[v - 1] = vert[v - 1] * phis[p]
            ops = [A, list(range(r + 1))]
            for j in range(r):
                ops += [vert[j], [j + 1]]
            out += root * self._h(r) * np.einsum(*ops, [0], optimize=True)
        return out

    def pair(self, psi, phis):
        """<V, psi (x) phi_1 (x) ... (x) phi_m>."""
        return self.grid.cell_volume * float(np.sum(np.asarray(psi, float).ravel() * self.pair_slots(phis)))

    def to_dense(self):
        """Dense (x; y_1..y_m) array, deltas written as h^-d spikes."""
        n = self.grid.size
        if n ** (1 + self.m) > DENSE_LIMIT:
            raise MemoryError("dense view of m=%d tensor exceeds the memory guard" % self.m)
        out = np.zeros((n,) * (1 + self.m))
        eye = np.eye(n) / self.grid.cell_volume
        for alpha, A in self.terms.items():
            r = A.ndim - 1
            ops = [A, list(range(r + 1))]
            for p, v in enumerate(alpha):
                ops += [eye, [v, r + 1 + p]]
            out += self._h(r) * np.einsum(*ops, [0] + list(range(r + 1, r + 1 + self.m)), optimize=True)
        return out

    def weight(self, a):
        """Multiply by X^{m,a}(x; y) = prod_p (x - y_p)^{a_p} / a_p!."""
        a = [tuple(x) for x in a]
        if len(a) != self.m:
            raise ValueError("need one multi-index per slot")
        out = KernelTensor(self.grid, self.m)
        for alpha, A in self.terms.items():
            if any(v == 0 and any(ap) for v, ap in zip(alpha, a)):
                continue
            A = A.copy()
            r = A.ndim - 1
            for v, ap in zip(alpha, a):
                if any(ap):
                    shape = [1] * (r + 1)
                    shape[0] = shape[v] = self.grid.size
                    A = A * _monomial(self.grid, ap).reshape(shape)
            out.add_term(alpha, A)
        return out

    def mollify_dense(self, kernel):
        """Dense array of K^{(x)(1+m)} * V (every argument convolved)."""
        g = self.grid
        V = self.to_dense().reshape((g.N,) * (g.d * (1 + self.m)))
        mult = kernel.multiplier
        axes = tuple(range(V.ndim))
        Vh = sfft.fftn(V, axes=axes)
        for s in range(1 + self.m):
            shape = [1] * V.ndim
            shape[s * g.d:(s + 1) * g.d] = [g.N] * g.d
            # the x-argument and y-arguments enter with opposite frequency
            # signs, but the multipliers in use are even
            Vh *= mult.reshape(shape)
        return sfft.ifftn(Vh, axes=axes).real.reshape((g.size,) * (1 + self.m))

    def mollified_norm(self, kernel):
        """sup_x integral over y of |K^{(x)(1+m)} * V|."""
        D = self.mollify_dense(kernel)
        return float((self._h(self.m) * np.abs(D).reshape(self.grid.size, -1).sum(axis=1)).max())

    def is_symmetric(self, tol=1e-12):
        return (self.symmetrize() - self).vm_norm() <= tol * max(self.vm_norm(), 1e-300)


def embed_L(v, m, grid):
    return KernelTensor.local(grid, v, m)


def integrate_I(V):
    return V.integrate()


def vm_norm(V):
    return V.vm_norm()


def symmetrize(V):
    return V.symmetrize()


def weight_X(V, a):
    return V.weight(a)


def contract_B(G, W, U, max_extra=None, kernel_matrix=None):
    """B(G, W, U)(x; y_1..y_k, y_{k+1}..y_m).

    The first slot y_0 of W is contracted with z through G(y_0 - z); U is
    rooted at z.  `kernel_matrix` may supply the circulant matrix of G's
    smooth part.  Raises TruncationError when a result term needs more
    than `max_extra` extra vertices.
    """
    if W.grid != U.grid or W.grid != G.grid:
        raise ValueError("incompatible grids")
    if W.m < 1:
        raise ValueError("W needs at least one slot")
    grid = W.grid
    hd = grid.cell_volume
    m = W.m - 1 + U.m
    out = KernelTensor(grid, m)
    Gm = kernel_matrix
    smooth = bool(np.any(G.position))
    if smooth and Gm is None:
        Gm = circulant(G)
    for aW, AW in W.terms.items():
        rW = AW.ndim - 1
        v0, rest = aW[0], aW[1:]
        for aU, AU in U.terms.items():
            rU = AU.ndim - 1
            z = rW + 1
            ulab = [z] + list(range(rW + 2, rW + 2 + rU))
            slots = list(rest) + [ulab[v] for v in aU]
            if smooth:
                _contract_term(out, slots, AW, rW, v0, AU, rU, Gm, hd, z)
            if G.delta:
                # delta part of G: z is identified with v0
                ulab_d = [v0] + list(range(rW + 1, rW + 1 + rU))
                slots_d = list(rest) + [ulab_d[v] for v in aU]
                sub_W = list(range(rW + 1))
                sub_U = [v0] + list(range(rW + 1, rW + 1 + rU))
                _emit(out, slots_d, [(AW, sub_W), (AU, sub_U)], rW + rU, hd, G.delta)
    if max_extra is not None:
        for alpha in out.terms:
            if _n_extra(alpha) > max_extra:
                raise TruncationError("contraction needs %d extra vertices (limit %d)"
                                      % (_n_extra(alpha), max_extra))
    return out


def _contract_term(out, slots, AW, rW, v0, AU, rU, Gm, hd, z):
    sub_W = list(range(rW + 1))
    sub_U = [z] + list(range(rW + 2, rW + 2 + rU))
    _emit(out, slots, [(AW, sub_W), (Gm, [v0, z]), (AU, sub_U)], rW + 1 + rU, hd, 1.0)


def _emit(out, slots, operands, top, hd, coef):
    """Contract operands, summing vertices that no slot references."""
    keep = [0] + sorted({v for v in slots if v != 0})
    summed = [v for v in range(1, top + 1) if v not in keep]
    used = set()
    for _, sub in operands:
        used.update(sub)
    summed = [v for v in summed if v in used]
    ops = []
    for arr, sub in operands:
        ops += [arr, sub]
    arr = np.einsum(*ops, keep, optimize=True)
    relabel = {v: i for i, v in enumerate(keep)}
    alpha = tuple(relabel[v] for v in slots)
    out.add_term(alpha, coef * hd ** len(summed) * arr)


# -- polynomial weights -----------------------------------------------------------
def monomial(x, a):
    """x^a / a! for a point x (sequence) and multi-index a."""
    out = 1.0
    for xi, ai in zip(x, a):
        out *= xi ** ai / math.factorial(ai)
    return out


def poly_X(a, x, ys):
    """X^{m,a}(x; y_1..y_m) at real points (no periodic reduction)."""
    out = 1.0
    for ap, y in zip(a, ys):
        out *= monomial(np.subtract(x, y), ap)
    return out


def _splits(a):
    """All (b, c, e) with b + c + e = a componentwise."""
    ranges = []
    for ai in a:
        ranges.append([(b, c, ai - b - c) for b in range(ai + 1) for c in range(ai - b + 1)])
    for combo in itertools.product(*ranges):
        yield tuple(t[0] for t in combo), tuple(t[1] for t in combo), tuple(t[2] for t in combo)


def _multinom(parts):
    """prod over components of (sum parts)! / prod parts!."""
    if not parts:
        return 1
    out = 1
    for comp in zip(*parts):
        out *= math.factorial(sum(comp))
        for c in comp:
            out //= math.factorial(c)
    return out


def poly_binom_terms(a, k):
    """Expansion of X^{m,a} across a B-contraction with W carrying k+1 slots.

    Yields (b, c, e, coef): b is the list of k+1 weights of W (b[0] on the
    contracted slot), c the weight on the kernel argument y_0 - z, e the
    list of m - k weights of U, with X^{m,a} = sum coef X^b X^c X^e.
    """
    a = [tuple(x) for x in a]
    dd = len(a[0]) if a else 0
    head, tail = a[:k], a[k:]
    for parts in itertools.product(*[list(_splits(ap)) for ap in tail]):
        bs = [p[0] for p in parts]
        cs = [p[1] for p in parts]
        es = [p[2] for p in parts]
        B = tuple(sum(col) for col in zip(*bs)) if bs else (0,) * dd
        C = tuple(sum(col) for col in zip(*cs)) if cs else (0,) * dd
        coef = _multinom(bs) * _multinom(cs)
        yield [B] + list(head), C, es, coef


# -- Taylor machinery -------------------------------------------------------------
def _dense_terms_only(V):
    if set(V.terms) - {tuple(range(1, V.m + 1))}:
        return V.to_dense()
    A = V.terms.get(tuple(range(1, V.m + 1)))
    n = V.grid.size
    return np.zeros((n,) * (1 + V.m)) if A is None else A


def relative(V):
    """W[x, u_1..u_m] = V(x; x + u_1, ..., x + u_m) (dense)."""
    g = V.grid
    A = _dense_terms_only(V)
    S = _shift_table(g.d, g.N)
    n = g.size
    idx = [np.arange(n).reshape((n,) + (1,) * V.m)]
    for p in range(V.m):
        shape = [1] * (1 + V.m)
        shape[0] = shape[1 + p] = n
        idx.append(S.reshape(shape))
    return A[tuple(idx)]


def from_relative(W, grid):
    n = grid.size
    m = W.ndim - 1
    S = _shift_table(grid.d, grid.N)
    out = np.zeros_like(W)
    idx = [np.arange(n).reshape((n,) + (1,) * m)]
    for p in range(m):
        shape = [1] * (1 + m)
        shape[0] = shape[1 + p] = n
        idx.append(np.broadcast_to(S.reshape(shape), W.shape))
    out[tuple(np.broadcast_arrays(*idx))] = W
    return KernelTensor.from_dense(grid, out)


def _slot_axes(grid, m):
    """Reshape helper: (n, n.., n) -> (n, N.., N..) with d axes per slot."""
    return (grid.size,) + (grid.N,) * (grid.d * m)


def rel_spectrum(V, tau=1.0):
    """W-hat_x(tau k) = h^{dm} sum_u W_x(u) exp(-i tau k.u), u minimal image.

    Returns an array (n, N.., N..) indexed by x and the integer frequencies
    of every slot (FFT ordering).
    """
    g = V.grid
    W = relative(V).reshape(_slot_axes(g, V.m))
    if tau == 1.0:
        axes = tuple(range(1, W.ndim))
        return sfft.fftn(W, axes=axes) * g.cell_volume ** V.m
    k = sfft.fftfreq(g.N, 1.0 / g.N)
    j = np.arange(g.N)
    u = np.where(j > g.N // 2, j - g.N, j) * g.h
    E = np.exp(-1j * tau * np.outer(k, u)) * g.h
    out = W.astype(complex)
    for ax in range(1, W.ndim):
        out = np.moveaxis(np.tensordot(E, np.moveaxis(out, ax, 0), axes=(1, 0)), 0, ax)
    return out


def from_rel_spectrum(S, grid, m):
    """Inverse of rel_spectrum at tau = 1 (lattice values, real part)."""
    axes = tuple(range(1, S.ndim))
    W = sfft.ifftn(S, axes=axes).real / grid.cell_volume ** m
    return from_relative(W.reshape((grid.size,) * (1 + m)), grid)


def rescale_Z(V, tau):
    """Z_tau V(x; y) = tau^{-dm} V(x; x + (y - x)/tau), band-limited.

    Implemented on the Fourier side of the relative variables: the spectrum
    at k is the continuous transform of the lattice kernel at tau k, so the
    integral I V (the k = 0 value) is preserved exactly.
    """
    if not 0 < tau <= 1:
        raise ValueError("domain error: tau must be in (0, 1], got %r" % (tau,))
    if tau == 1:
        return V.copy()
    return from_rel_spectrum(rel_spectrum(V, tau), V.grid, V.m)


def _slot_freqs(grid, m):
    """Integer frequency arrays for all m*d relative components."""
    k = sfft.fftfreq(grid.N, 1.0 / grid.N)
    ndim = grid.d * m
    out = []
    for ax in range(ndim):
        shape = [1] * (1 + ndim)
        shape[1 + ax] = grid.N
        out.append(k.reshape(shape))
    return out


def _flat(a):
    return tuple(c for ap in a for c in ap)


def _binom_multi(ab, a):
    out = 1
    for x, y in zip(ab, a):
        out *= math.comb(x, y)
    return out


def taylor_X_spectrum(a, l, v, V, grid, m, nodes=16):
    """Relative spectrum of X^a_l(v, V).

    Parameters
    ----------
    a : list of m multi-indices, |a| < l
    l : int
    v : dict mapping flattened multi-index c (|c| < l, c >= a) to fields
        v^c = I(X^{m,c} V)
    V : dict mapping flattened c with |c| = l to KernelTensor X^{m,c} V
    nodes : Gauss-Legendre nodes for the tau integral
    """
    af = _flat(a)
    D = len(af)
    if sum(af) >= l:
        raise ValueError("need |a| < l")
    ks = _slot_freqs(grid, m)
    out = np.zeros(_slot_axes(grid, m), dtype=complex)
    xg, wg = np.polynomial.legendre.leggauss(nodes)
    taus = 0.5 * (xg + 1.0)
    wts = 0.5 * wg
    for b_order in range(0, l - sum(af) + 1):
        for bf in _all_multi(D, b_order):
            c = tuple(x + y for x, y in zip(af, bf))
            coef = _binom_multi(c, af)
            deriv = 1.0
            for ax, e in enumerate(bf):
                if e:
                    deriv = deriv * (1j * ks[ax]) ** e
            if sum(c) < l:
                if c not in v:
                    raise KeyError("missing lower coefficient v^%s" % (c,))
                field = np.asarray(v[c], float).ravel().reshape((grid.size,) + (1,) * (grid.d * m))
                out += coef * deriv * field
            else:
                if c not in V:
                    raise KeyError("missing remainder kernel V^%s" % (c,))
                nb = sum(bf)
                acc = np.zeros_like(out)
                for t, w in zip(taus, wts):
                    acc += w * (1 - t) ** (nb - 1) * rel_spectrum(V[c], t)
                out += nb * coef * deriv * acc
    return out


def _all_multi(D, total):
    if D == 0:
        if total == 0:
            yield ()
        return
    for first in range(total + 1):
        for rest in _all_multi(D - 1, total - first):
            yield (first,) + rest


def taylor_X(a, l, v, V, grid, m, nodes=16):
    """Position-space (band-limited) reconstruction X^a_l(v, V)."""
    return from_rel_spectrum(taylor_X_spectrum(a, l, v, V, grid, m, nodes), grid, m)


def taylor_inputs(V, a, l):
    """Inputs of X^a_l for a dense kernel V: v^c = I(X^c V), V^c = X^c V."""
    af = _flat(a)
    D = len(af)
    m, d = V.m, V.grid.d
    v, R = {}, {}
    for b_order in range(0, l - sum(af) + 1):
        for bf in _all_multi(D, b_order):
            c = tuple(x + y for x, y in zip(af, bf))
            cw = [c[p * d:(p + 1) * d] for p in range(m)]
            XV = V.weight(cw)
            if sum(c) < l:
                v[c] = XV.integrate()
            else:
                R[c] = XV
    return v, R


# -- identity checks -----------------------------------------------------------------
def smooth_random_kernel(grid, m, seed, width=0.45):
    """Random kernel with a Gaussian profile of the given width in every x - y.

    The spectrum in the relative variables decays like exp(-width^2 k^2 / 2),
    so the kernel is band-limited to double precision for |k| >~ 20 / width.
    """
    if grid.d != 1:
        raise ValueError("smooth_random_kernel is one-dimensional")
    n = grid.N
    x = np.arange(n) * grid.h
    j = np.arange(n)
    u = np.where(j > n // 2, j - n, j) * grid.h
    rng = np.random.default_rng(seed)
    W = (1 + 0.3 * np.cos(x + rng.uniform(0, 2 * np.pi))).reshape((n,) + (1,) * m)
    for p in range(m):
        sh = [1] * (1 + m)
        sh[1 + p] = n
        ph = rng.uniform(0, 2 * np.pi)
        prof = np.exp(-u ** 2 / (2 * width ** 2)) * (1 + 0.5 * np.cos(u + ph) + 0.3 * np.sin(2 * u))
        W = W * prof.reshape(sh)
    return from_relative(W, grid)


def taylor_error(V, a, l, band=0.125, nodes=16):
    """Relative error of X^a_l(I(X^c V), X^c V) against X^{m,a} V.

    Compared in the relative-variable spectrum for slot frequencies
    |k| <= band * N, where both sides are resolved.
    """
    g, m = V.grid, V.m
    v, R = taylor_inputs(V, a, l)
    S = taylor_X_spectrum(a, l, v, R, g, m, nodes)
    ref = rel_spectrum(V.weight(a))
    k = np.abs(sfft.fftfreq(g.N, 1.0 / g.N))
    mask = np.ones(ref.shape[1:], bool)
    for p in range(g.d * m):
        sh = [1] * (g.d * m)
        sh[p] = g.N
        mask = mask & (k.reshape(sh) <= band * g.N)
    return float(np.abs(S[:, mask] - ref[:, mask]).max() / np.abs(ref[:, mask]).max())


def poly_binom_error(a, k, d, points=64, seed=0):
    """Max deviation of the split sum from X^{m,a} at random points."""
    rng = np.random.default_rng(seed)
    m = len(a)
    worst = 0.0
    for _ in range(points):
        x = rng.uniform(-1, 1, d)
        ys = rng.uniform(-1, 1, (m, d))
        z = rng.uniform(-1, 1, d)
        y0 = rng.uniform(-1, 1, d)
        lhs = poly_X(a, x, ys)
        rhs = 0.0
        for b, c, e, coef in poly_binom_terms(a, k):
            wpts = [y0] + list(ys[:k])
            term = coef * poly_X(b, x, wpts) * monomial(y0 - z, c) * poly_X(e, z, ys[k:])
            rhs += term
        worst = max(worst, abs(lhs - rhs))
    return worst
