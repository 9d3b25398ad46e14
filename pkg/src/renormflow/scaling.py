"""
Power counting for the cubic equation driven by white noise.

All arithmetic is exact (``fractions.Fraction``); sigma is converted with
``Fraction(sigma).limit_denominator(10**6)`` so that decimal inputs such as
0.45 become 9/20.
"""
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction


def as_fraction(x):
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(str(x)).limit_denominator(10 ** 6) if isinstance(x, str) else \
        Fraction(x).limit_denominator(10 ** 6)


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class Dimensions:
    """Scaling dimensions for given (d, sigma).

    Parameters
    ----------
    d : int
        Spatial dimension, 1..6.
    sigma : float or Fraction
        Order of the fractional operator; must lie in (d/3, d/2] unless
        ``regular=True`` (then (d/2, d] is also accepted).
    eps : Fraction, optional
        Regularity loss; defaults to eps_diamond / 6.
    """

    d: int
    sigma: Fraction
    eps: Fraction = None
    regular: bool = False

    def __post_init__(self):
        object.__setattr__(self, "sigma", as_fraction(self.sigma))
        d, s = self.d, self.sigma
        if not (isinstance(d, int) and 1 <= d <= 6):
            raise DimensionError("d must be an integer in 1..6, got %r" % (d,))
        lo, hi = Fraction(d, 3), Fraction(d, 2)
        ok = lo < s <= hi or (self.regular and hi < s <= d)
        if not ok:
            raise DimensionError(
                "sigma=%s outside the admissible interval (%s, %s] for d=%d"
                % (s, lo, hi if not self.regular else d, d))
        if self.eps is None:
            object.__setattr__(self, "eps", epsilon_diamond(self) / 6)
        else:
            e = as_fraction(self.eps)
            if not 0 < e < epsilon_diamond(self) / 3:
                raise DimensionError("eps must lie in (0, eps_diamond/3)")
            object.__setattr__(self, "eps", e)

    @property
    def dim_xi(self):
        return Fraction(self.d, 2)

    @property
    def dim_phi(self):
        return Fraction(self.d, 2) - self.sigma

    @property
    def dim_lambda(self):
        return 3 * self.sigma - self.d

    @property
    def singular(self):
        return self.sigma <= Fraction(self.d, 2)


def rho(dim, i, m, a=0, eps=0):
    """rho_eps(i, m) + |a|."""
    eps = as_fraction(eps)
    return (-dim.dim_xi - eps + m * (dim.dim_phi + 2 * eps)
            + i * (dim.dim_lambda - 6 * eps) + a)


def i_sharp(dim):
    """Number of mass counterterms, floor(sigma / (3 sigma - d))."""
    return math.floor(dim.sigma / dim.dim_lambda)


def i_diamond(dim):
    i = 0
    while rho(dim, i + 1, 0) <= 0:
        i += 1
    return i


def rho_diamond(dim, l_max=10):
    best = None
    for i in range(i_diamond(dim) + 1):
        for m in range(3 * i + 1):
            for l in range(1, l_max + 1):
                r = rho(dim, i, m, l)
                if r > 0 and (best is None or r < best):
                    best = r
    return best


def epsilon_diamond(dim):
    idm = i_diamond(dim)
    return min(Fraction(dim.d, 6), dim.dim_lambda / 9,
               rho_diamond(dim) / (7 + 6 * idm), dim.sigma)


def vanishing(i, m):
    """Coefficients that vanish identically."""
    return (i == 0 and m > 0) or (i > 0 and m > 2 * (i - 1) + 3)


@dataclass(frozen=True)
class CoeffIndex:
    i: int
    m: int
    a: tuple = ()

    def __post_init__(self):
        a = tuple(tuple(x) for x in self.a)
        if a and len(a) != self.m:
            raise ValueError("need one multi-index per argument")
        object.__setattr__(self, "a", a)

    @property
    def order(self):
        return sum(sum(x) for x in self.a)

    @property
    def vanishing(self):
        return vanishing(self.i, self.m)

    def label(self):
        if not self.order:
            return "(%d,%d,0)" % (self.i, self.m)
        return "(%d,%d,%s)" % (self.i, self.m, ";".join("(%s)" % ",".join(map(str, x)) for x in self.a))


def multi_indices(d, total):
    """All multi-indices in N_0^d with |b| = total."""
    for cut in itertools.combinations(range(total + d - 1), d - 1):
        prev, out = -1, []
        for c in cut:
            out.append(c - prev - 1)
            prev = c
        out.append(total + d - 2 - prev)
        yield tuple(out)


def weight_lists(d, m, total):
    """All lists of m multi-indices with summed order `total`."""
    if m == 0:
        if total == 0:
            yield ()
        return
    for t in range(total + 1):
        for first in multi_indices(d, t):
            for rest in weight_lists(d, m - 1, total - t):
                yield (first,) + rest


@dataclass
class Classification:
    dim: Dimensions
    relevant: list = field(default_factory=list)
    enhanced_noise: list = field(default_factory=list)

    @property
    def relevant_pairs(self):
        return sorted({(c.i, c.m) for c in self.relevant})

    @property
    def i_sharp(self):
        return i_sharp(self.dim)

    @property
    def i_diamond(self):
        return i_diamond(self.dim)

    @property
    def epsilon_diamond(self):
        return epsilon_diamond(self.dim)


def classify(dim, i_max=None):
    """Relevant coefficients and the enhanced noise.

    Relevant means rho(i, m) + |a| <= 0 with m <= 3i, non-vanishing.  The
    enhanced noise additionally drops the weighted first-order entries
    (i = 1, a != 0): every first-order coefficient is supported on the
    diagonal, where the polynomial weight vanishes.
    """
    idm = i_diamond(dim)
    if i_max is None:
        i_max = idm
    if i_max < idm:
        raise ValueError("i_max must be at least i_diamond=%d" % idm)
    a_cap = math.ceil(dim.d / 2) + 3
    out = Classification(dim)
    for i in range(i_max + 1):
        for m in range(3 * i + 1):
            if vanishing(i, m):
                continue
            base = rho(dim, i, m)
            if base > 0:
                continue
            top = min(a_cap, math.floor(-base))
            for t in range(top + 1):
                for a in weight_lists(dim.d, m, t):
                    c = CoeffIndex(i, m, a)
                    out.relevant.append(c)
                    if not (i == 1 and t > 0):
                        out.enhanced_noise.append(c)
    return out


@dataclass(frozen=True)
class ListEntry:
    i: int
    m: int
    a: tuple = ()
    s: int = 0
    r: int = 0

    def __post_init__(self):
        if self.s not in (0, 1) or self.r not in (0, 1, 2):
            raise ValueError("s must be 0/1 and r in 0..2")

    @property
    def order(self):
        return sum(sum(x) for x in self.a)


@dataclass(frozen=True)
class IndexList:
    entries: tuple

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(
            e if isinstance(e, ListEntry) else ListEntry(*e) for e in self.entries))

    @property
    def n(self):
        return len(self.entries)

    @property
    def i(self):
        return sum(e.i for e in self.entries)

    @property
    def m(self):
        return sum(e.m for e in self.entries)

    @property
    def a(self):
        return sum(e.order for e in self.entries)

    @property
    def s(self):
        return sum(e.s for e in self.entries)

    @property
    def r(self):
        return sum(e.r for e in self.entries)


def rho_list(dim, ilist, eps=0):
    """rho_eps of an index list and its cumulant relevance flag."""
    total = sum(rho(dim, e.i, e.m, e.order, eps) for e in ilist.entries)
    return total, total + (ilist.n - 1) * dim.d <= 0


def predicted_cumulant_exponent(dim, ilist):
    """Exponent rho_{3 eps}(I) - sigma s(I) + (n - 1) d of the scaling bound."""
    r, _ = rho_list(dim, ilist, 3 * dim.eps)
    return r - dim.sigma * ilist.s + (ilist.n - 1) * dim.d


def predicted_pointwise_exponent(dim, ilist):
    """Exponent of a cumulant evaluated at coinciding points (no integration).

    The integrated bound gains (n - 1) d from the n - 1 free arguments; a
    pointwise proxy does not.
    """
    return predicted_cumulant_exponent(dim, ilist) - (ilist.n - 1) * dim.d
