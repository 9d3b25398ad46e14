"""
Cut-off Green functions, regularizing kernels and their periodizations.

The Green function G of Q = 1 + (-Delta)^{sigma/2} is approximated on an
M-fold enlarged box (same lattice spacing, period 2 pi M), multiplied in
position space by the cutoffs chi_kappa(|x|^sigma) chi_mu(|x|^sigma), and then
folded onto the base torus.  Without cutoffs the fold reproduces the exact
lattice multiplier 1 / (1 + |k|^sigma).
"""
import hashlib
import threading

import numpy as np
import scipy.fft as sfft

from .grid import Field, GridError, kernel_from_multiplier, multiplier_of

DEFAULT_OVERSAMPLING = {1: 8, 2: 4, 3: 2}


def _f(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def _fprime(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos]) / t[pos] ** 2
    return out


def chi(r):
    """Smooth step: 0 for |r| <= 1, 1 for |r| >= 2, monotone in between."""
    r = np.abs(np.asarray(r, dtype=float))
    t = np.clip(r - 1.0, 0.0, 1.0)
    a, b = _f(t), _f(1.0 - t)
    with np.errstate(invalid="ignore"):
        s = a / (a + b)
    s = np.where(r <= 1.0, 0.0, np.where(r >= 2.0, 1.0, s))
    return s[()] if s.ndim == 0 else s


def chi_prime(r):
    """Derivative of chi (with respect to r)."""
    r = np.asarray(r, dtype=float)
    ar = np.abs(r)
    t = np.clip(ar - 1.0, 0.0, 1.0)
    a, b = _f(t), _f(1.0 - t)
    da, db = _fprime(t), _fprime(1.0 - t)
    inside = (ar > 1.0) & (ar < 2.0)
    den = np.where(inside, (a + b) ** 2, 1.0)
    s = np.where(inside, (da * b + a * db) / den, 0.0) * np.sign(r)
    return s[()] if s.ndim == 0 else s


def _check_mu(mu):
    if not mu > 0:
        raise ValueError("domain error: mu must be in (0, 1], got %r" % (mu,))


def chi_mu(r, mu):
    """chi_mu(r) = chi(r (1 - mu) / mu); identically zero at mu = 1."""
    _check_mu(mu)
    return chi(np.asarray(r, dtype=float) * (1.0 - mu) / mu)


def d_chi_mu(r, mu):
    """Analytic mu-derivative of chi_mu(r)."""
    _check_mu(mu)
    r = np.asarray(r, dtype=float)
    return chi_prime(r * (1.0 - mu) / mu) * (-r / mu ** 2)


def bracket(mu, sigma):
    """Length scale [mu] = mu^(1/sigma)."""
    return np.asarray(mu, dtype=float) ** (1.0 / float(sigma))


class PeriodizedKernel:
    """Periodic kernel: symbolic delta of mass `delta` plus a smooth part.

    `position` holds the lattice values of the smooth part, `multiplier` the
    Fourier multiplier of the whole kernel (delta included).
    """

    def __init__(self, grid, position=None, multiplier=None, delta=0.0, label=""):
        self.grid = grid
        self.delta = float(delta)
        self.label = label
        if position is None and multiplier is None:
            position = np.zeros(grid.shape)
        if position is None:
            smooth = np.asarray(multiplier) - self.delta
            position = kernel_from_multiplier(smooth, grid)
        position = np.asarray(position, dtype=float)
        if multiplier is None:
            multiplier = multiplier_of(position, grid).real + self.delta
        self.position = position
        self.multiplier = np.asarray(multiplier).real if np.isrealobj(multiplier) else np.asarray(multiplier)

    @classmethod
    def delta_kernel(cls, grid, mass=1.0):
        return cls(grid, np.zeros(grid.shape), np.full(grid.shape, float(mass)), delta=mass, label="delta")

    @property
    def position_values(self):
        return self.position

    def dense_values(self):
        """Position values with the delta written as a lattice spike."""
        v = self.position.copy()
        v[(0,) * self.grid.d] += self.delta / self.grid.cell_volume
        return v

    @property
    def l1_norm(self):
        return abs(self.delta) + self.grid.cell_volume * np.sum(np.abs(self.position))

    @property
    def mass(self):
        return self.delta + self.grid.cell_volume * np.sum(self.position)

    def apply(self, v):
        axes = tuple(range(-self.grid.d, 0))
        out = sfft.ifftn(sfft.fftn(v, axes=axes) * self.multiplier, axes=axes)
        return out.real

    def __call__(self, f):
        if isinstance(f, Field):
            if f.grid != self.grid:
                raise GridError("incompatible grids")
            return Field(self.grid, self.apply(f.values))
        return self.apply(np.asarray(f, dtype=float))

    def _check(self, other):
        if other.grid != self.grid:
            raise GridError("incompatible grids")

    def __add__(self, other):
        self._check(other)
        return PeriodizedKernel(self.grid, self.position + other.position,
                                self.multiplier + other.multiplier, self.delta + other.delta)

    def __sub__(self, other):
        self._check(other)
        return PeriodizedKernel(self.grid, self.position - other.position,
                                self.multiplier - other.multiplier, self.delta - other.delta)

    def __mul__(self, c):
        return PeriodizedKernel(self.grid, c * self.position, c * self.multiplier, c * self.delta)

    __rmul__ = __mul__

    def convolve(self, other):
        """Kernel of the composition self * other."""
        self._check(other)
        return PeriodizedKernel(self.grid, None, self.multiplier * other.multiplier,
                                self.delta * other.delta)

    def consistency_error(self):
        """Relative mismatch between position values and multiplier."""
        m = multiplier_of(self.position, self.grid) + self.delta
        scale = max(np.max(np.abs(self.multiplier)), 1e-300)
        return float(np.max(np.abs(m - self.multiplier)) / scale)


class KernelFactory:
    """Builds and caches the kernels of one (grid, sigma, M) configuration.

    The cache may be read concurrently; insertions are serialized.
    """

    def __init__(self, grid, sigma, M=None):
        sigma = float(sigma)
        if not sigma > 0:
            raise ValueError("sigma must be positive, got %r" % sigma)
        self.grid = grid
        self.sigma = sigma
        self.M = int(M if M is not None else DEFAULT_OVERSAMPLING.get(grid.d, 1))
        self._cache = {}
        self._lock = threading.Lock()
        self._box = None

    def _cached(self, key, build):
        val = self._cache.get(key)
        if val is not None:
            return val
        val = build()
        with self._lock:
            return self._cache.setdefault(key, val)

    def bracket(self, mu):
        return float(bracket(mu, self.sigma))

    # -- oversampled box ---------------------------------------------------
    def _box_data(self):
        if self._box is None:
            box = self.grid.refined(self.M)
            k = box.kabs()
            Ghat = 1.0 / (1.0 + k ** self.sigma)
            Gbox = sfft.ifftn(Ghat).real / self.grid.cell_volume
            R, X = box.radius()
            with self._lock:
                if self._box is None:
                    self._box = (box, Gbox, R ** self.sigma, X)
        return self._box

    def _fold(self, v):
        N, M, d = self.grid.N, self.M, self.grid.d
        shape = []
        for _ in range(d):
            shape += [M, N]
        v = v.reshape(shape)
        return v.sum(axis=tuple(range(0, 2 * d, 2)))

    def box_weight(self, kappa, mu, dmu=False, weight=None):
        """Position-space cutoff profile on the box."""
        _, _, rs, X = self._box_data()
        w = chi_mu(rs, kappa) if kappa is not None else np.ones_like(rs)
        if mu:
            w = w * (d_chi_mu(rs, mu) if dmu else chi_mu(rs, mu))
        if weight is not None:
            for ax, c in enumerate(weight):
                if c:
                    w = w * X[ax] ** c / float(np.prod(np.arange(1, c + 1)))
        return w

    def _from_box(self, profile, label):
        _, Gbox, _, _ = self._box_data()
        pos = self._fold(Gbox * profile)
        return PeriodizedKernel(self.grid, pos, label=label)

    # -- Green functions -----------------------------------------------------
    def G(self):
        """Uncut torus Green function, multiplier 1 / (1 + |k|^sigma)."""
        def build():
            mult = 1.0 / (1.0 + self.grid.kabs() ** self.sigma)
            return PeriodizedKernel(self.grid, None, mult, label="G")
        return self._cached(("G",), build)

    @staticmethod
    def _check_kappa(kappa):
        if not 0 < kappa <= 0.5:
            raise ValueError("domain error: kappa must be in (0, 1/2], got %r" % (kappa,))

    def G_cut(self, kappa, mu=0.0):
        """G_{kappa,mu} = chi_kappa chi_mu G (mu = 0: no chi_mu factor)."""
        self._check_kappa(kappa)
        if not 0 <= mu <= 1:
            raise ValueError("domain error: mu must be in [0, 1], got %r" % (mu,))
        if mu == 1:
            return PeriodizedKernel(self.grid, np.zeros(self.grid.shape),
                                    np.zeros(self.grid.shape), label="G_cut")

        def build():
            return self._from_box(self.box_weight(kappa, mu), "G_cut")
        return self._cached(("Gcut", kappa, mu), build)

    def G_kappa(self, kappa):
        return self.G_cut(kappa, 0.0)

    def G_single(self, mu):
        """Single-cutoff kernel chi_mu G."""
        _check_mu(mu)
        if mu == 1:
            return PeriodizedKernel(self.grid, np.zeros(self.grid.shape), np.zeros(self.grid.shape))

        def build():
            return self._from_box(self.box_weight(None, mu), "G_mu")
        return self._cached(("Gmu", mu), build)

    def fluctuation(self, kappa, mu):
        """G_{kappa||mu} = G_kappa - G_{kappa,mu}."""
        def build():
            if mu == 0:
                return PeriodizedKernel(self.grid, np.zeros(self.grid.shape), np.zeros(self.grid.shape))
            return self.G_kappa(kappa) - self.G_cut(kappa, mu)
        return self._cached(("Gfl", kappa, mu), build)

    def d_mu_G(self, kappa, mu, weight=None):
        """Analytic derivative d/dmu G_{kappa,mu}, optionally times x^c / c!."""
        self._check_kappa(kappa)
        if not 0 < mu < 1:
            raise ValueError("domain error: mu must be in (0, 1), got %r" % (mu,))
        key = ("dG", kappa, mu, None if weight is None else tuple(weight))

        def build():
            return self._from_box(self.box_weight(kappa, mu, dmu=True, weight=weight), "dG")
        return self._cached(key, build)

    def d_kappa_G(self, kappa, mu=0.0):
        """Analytic kappa-derivative of G_{kappa,mu}."""
        self._check_kappa(kappa)
        _, _, rs, _ = self._box_data()
        w = d_chi_mu(rs, kappa)
        if mu:
            w = w * chi_mu(rs, mu)
        return self._from_box(w, "dkG")

    # -- regularizing kernels ----------------------------------------------
    def K_multiplier(self, mu, g):
        k2 = self.grid.kabs() ** 2
        return (1.0 + self.bracket(mu) ** 2 * k2) ** (-float(g))

    def K_pow(self, mu, g):
        """K_mu^{*g}, the inverse of P_mu^g with P_mu = 1 - [mu]^2 Laplacian."""
        if mu < 0 or g < 0:
            raise ValueError("K_pow needs mu >= 0 and g >= 0")
        if mu == 0 or g == 0:
            return PeriodizedKernel.delta_kernel(self.grid)

        def build():
            return PeriodizedKernel(self.grid, None, self.K_multiplier(mu, g), label="K")
        return self._cached(("K", mu, g), build)

    def K_two_scale(self, mu, eta):
        """K_{mu,eta} = [eta/mu]^2 delta + (1 - [eta/mu]^2) K_mu, so K_mu = K_{mu,eta} * K_eta."""
        r = self.bracket(eta / mu) ** 2
        K = self.K_pow(mu, 1)
        return PeriodizedKernel(self.grid, (1.0 - r) * K.position,
                                r + (1.0 - r) * K.multiplier, delta=r, label="K2")

    def d_mu_K(self, mu, g=1):
        """mu-derivative of K_mu^{*g}."""
        k2 = self.grid.kabs() ** 2
        b = self.bracket(mu)
        db = b / (self.sigma * mu)
        mult = -g * (1.0 + b * b * k2) ** (-g - 1.0) * 2.0 * b * db * k2
        return PeriodizedKernel(self.grid, None, mult)

    def dK_pow(self, mu, g, a):
        """Spatial derivative d^a K_mu^{*g} (a is a multi-index)."""
        ks = self.grid.frequencies()
        mult = self.K_multiplier(mu, g).astype(complex)
        for ax, c in enumerate(a):
            mult = mult * (1j * ks[ax]) ** c
        pos = sfft.ifftn(mult).real / self.grid.cell_volume
        return PeriodizedKernel(self.grid, pos, mult)

    def P_pow(self, mu, g, kernel):
        """P_mu^g applied to a kernel."""
        mult = kernel.multiplier * (1.0 + self.bracket(mu) ** 2 * self.grid.kabs() ** 2) ** g
        return PeriodizedKernel(self.grid, None, mult)


def fit_loglog(x, y):
    """Least-squares slope of log y against log x."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    return float(coef[0]), float(coef[1]), float(np.max(np.abs(resid)))


def periodize_l1_norms(factory, mus, kind="dK", kappa=None, g=1, a=None):
    """Lattice l1 norms of kernel families across scales, with a log-log fit.

    kind:
      'dK'  : ||d_mu K_mu||, expected exponent -sigma in [mu]
      'PdG' : ||P_mu^g d_mu G_{kappa,mu}||, expected exponent 0
      'daK' : ||d^a K_mu^{*g}||, expected exponent -|a|

    Returns a dict with the norms, the fitted (slope, intercept, max residual)
    against [mu], the expected exponent and the max/min ratio of
    norm * [mu]^(-expected).
    """
    mus = np.asarray(sorted(mus, reverse=True), dtype=float)
    if len(mus) < 4:
        raise ValueError("insufficient scales")
    sigma = factory.sigma
    norms = []
    for mu in mus:
        if kind == "dK":
            norms.append(factory.d_mu_K(mu, g).l1_norm)
        elif kind == "PdG":
            norms.append(factory.P_pow(mu, g, factory.d_mu_G(kappa, mu)).l1_norm)
        elif kind == "daK":
            norms.append(factory.dK_pow(mu, g, a).l1_norm)
        else:
            raise ValueError("unknown kind %r" % kind)
    expected = {"dK": -sigma, "PdG": 0.0, "daK": -float(sum(a or ()))}[kind]
    br = bracket(mus, sigma)
    slope, icpt, res = fit_loglog(br, norms)
    scaled = np.asarray(norms) * br ** (-expected)
    return {"mu": mus, "norm": np.asarray(norms), "slope": slope, "intercept": icpt,
            "max_residual": res, "expected": expected,
            "ratio": float(scaled.max() / scaled.min())}


def dump_kernel(path, kernel, meta):
    """Write kernel position values (float64, little endian) and a text header."""
    data = np.ascontiguousarray(kernel.position, dtype="<f8").tobytes()
    digest = hashlib.sha256(data).hexdigest()
    g = kernel.grid
    lines = ["d=%d" % g.d, "N=%d" % g.N]
    for key in ("sigma", "kappa", "mu", "M"):
        lines.append("%s=%r" % (key, meta.get(key)))
    lines.append("delta=%r" % kernel.delta)
    lines.append("checksum=sha256:%s" % digest)
    with open(str(path) + ".bin", "wb") as fh:
        fh.write(data)
    with open(str(path) + ".hdr", "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return digest


def load_kernel(path):
    with open(str(path) + ".hdr") as fh:
        header = dict(line.strip().split("=", 1) for line in fh if "=" in line)
    with open(str(path) + ".bin", "rb") as fh:
        data = fh.read()
    if "sha256:" + hashlib.sha256(data).hexdigest() != header["checksum"]:
        raise ValueError("kernel dump checksum mismatch")
    d, N = int(header["d"]), int(header["N"])
    return np.frombuffer(data, dtype="<f8").reshape((N,) * d).copy(), header
