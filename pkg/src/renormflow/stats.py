"""
Joint cumulants, moment-cumulant algebra and power-law fits.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sstats


class InsufficientData(ValueError):
    pass


def set_partitions(items):
    """All set partitions of a list (as lists of tuples)."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        for k in range(len(part)):
            yield part[:k] + [(first,) + part[k]] + part[k + 1:]
        yield [(first,)] + part


def _key(block):
    return tuple(sorted(block))


def moments_to_cumulants(moments, p):
    """Joint cumulant of (z_0..z_{p-1}) from subset moments.

    Parameters
    ----------
    moments : mapping from sorted index tuples to E prod_{q in S} z_q
    p : int, 1..4
    """
    if not 1 <= p <= 4:
        raise ValueError("p must be in 1..4")
    total = 0.0
    for part in set_partitions(range(p)):
        r = len(part)
        coef = (-1) ** (r - 1) * math.factorial(r - 1)
        term = coef
        for block in part:
            k = _key(block)
            if k not in moments:
                raise KeyError("missing moment for subset %s" % (k,))
            term = term * moments[k]
        total = total + term
    return total


def cumulants_to_moments(cumulants, p):
    """E z_0..z_{p-1} from joint cumulants of all subsets."""
    total = 0.0
    for part in set_partitions(range(p)):
        term = 1.0
        for block in part:
            k = _key(block)
            if k not in cumulants:
                raise KeyError("missing cumulant for subset %s" % (k,))
            term = term * cumulants[k]
        total = total + term
    return total


def all_subset_cumulants(moments, p):
    """Cumulants of every non-empty subset, from subset moments."""
    out = {}
    for size in range(1, p + 1):
        for sub in _subsets(p, size):
            relabel = {q: i for i, q in enumerate(sub)}
            local = {}
            for s2 in range(1, size + 1):
                for inner in _subsets(size, s2):
                    local[inner] = moments[tuple(sub[i] for i in inner)]
            out[sub] = moments_to_cumulants(local, size)
    return out


def _subsets(p, size):
    import itertools
    return list(itertools.combinations(range(p), size))


def sample_moments(samples):
    """Plug-in moments of every subset of the columns of an (S, p) array."""
    samples = np.asarray(samples, float)
    p = samples.shape[1]
    out = {}
    for size in range(1, p + 1):
        for sub in _subsets(p, size):
            out[sub] = float(np.mean(np.prod(samples[:, sub], axis=1)))
    return out


def joint_cumulant(samples):
    """Plug-in joint cumulant of the columns of an (S, p) array."""
    samples = np.asarray(samples, float)
    return moments_to_cumulants(sample_moments(samples), samples.shape[1])


@dataclass
class CumulantEstimate:
    value: float
    stderr: float
    samples: int


def estimate_cumulants(samples, order=None):
    """Joint cumulant of the columns with a jackknife standard error.

    A one-dimensional input with `order` p estimates the p-th cumulant of a
    single observable.  The plug-in estimator has O(1/S) bias.
    """
    x = np.asarray(samples, float)
    if x.ndim == 1:
        if order is None:
            raise ValueError("order is needed for a single observable")
        x = np.repeat(x[:, None], order, axis=1)
    p = x.shape[1]
    S = x.shape[0]
    if S < 16 * p:
        raise InsufficientData("need at least %d samples for order %d, got %d" % (16 * p, p, S))
    full = joint_cumulant(x)
    # delete-one jackknife via running sums of subset products
    subs = [sub for size in range(1, p + 1) for sub in _subsets(p, size)]
    prods = {sub: np.prod(x[:, sub], axis=1) for sub in subs}
    sums = {sub: v.sum() for sub, v in prods.items()}
    loo = np.empty(S)
    for s in range(S):
        mom = {sub: (sums[sub] - prods[sub][s]) / (S - 1) for sub in subs}
        loo[s] = moments_to_cumulants(mom, p)
    err = math.sqrt((S - 1) / S * np.sum((loo - loo.mean()) ** 2))
    return CumulantEstimate(float(full), float(err), S)


@dataclass
class PowerFit:
    slope: float
    intercept: float
    stderr: float
    r2: float
    scales: np.ndarray
    values: np.ndarray


def fit_exponent(scales, values):
    """Least-squares fit of log(values) against log(scales)."""
    x = np.asarray(scales, float)
    y = np.asarray(values, float)
    if x.size < 4:
        raise InsufficientData("insufficient scales")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("scales and values must be positive")
    lx, ly = np.log(x), np.log(y)
    if np.ptp(ly) == 0:
        return PowerFit(0.0, float(ly[0]), 0.0, 1.0, x, y)
    res = sstats.linregress(lx, ly)
    return PowerFit(float(res.slope), float(res.intercept), float(res.stderr),
                    float(res.rvalue ** 2), x, y)


def mollified_noise_variance(grid, sigma, mus, samples=64, base_seed=0, g=None):
    """Variance of K_mu^{*g} * xi at a point, averaged over the lattice.

    Returns (mus, variances, stderrs, exact mode sums).
    """
    from .grid import sample_white_noise
    from .kernels import KernelFactory
    F = KernelFactory(grid, sigma, M=1)
    g = grid.d if g is None else g
    var, err, exact = [], [], []
    noise = [sample_white_noise(grid, base_seed + s).values for s in range(samples)]
    for mu in mus:
        K = F.K_pow(mu, g)
        per = np.array([np.mean(K.apply(xi) ** 2) for xi in noise])
        var.append(per.mean())
        err.append(per.std(ddof=1) / math.sqrt(samples))
        exact.append(float(np.sum(K.multiplier ** 2)) / (2 * np.pi) ** grid.d)
    return np.asarray(mus), np.asarray(var), np.asarray(err), np.asarray(exact)


def verify_cumulant_scaling(dim, grid, mus, samples=256, base_seed=0, which="noise", kappa=None,
                            counterterms=None):
    """Fitted scaling of a mollified cumulant proxy against the predicted exponent.

    The proxies are variances at a point, so the prediction is the pointwise
    exponent rho_{3 eps}(I) - sigma s(I).

    which='noise'   : variance of K_mu^{*d} * xi (pair of noise entries)
    which='f100'    : variance of K_mu * f^{1,0,0}_{kappa,mu} (report-only)
    Returns a dict with the fit, prediction and an 'inconclusive' flag set
    when the statistical error dominates.
    """
    from .kernels import bracket
    from .scaling import IndexList, predicted_pointwise_exponent
    sigma = float(dim.sigma)
    br = bracket(np.asarray(mus, float), sigma)
    if which == "noise":
        _, v, e, _ = mollified_noise_variance(grid, sigma, mus, samples, base_seed)
        pred = float(predicted_pointwise_exponent(dim, IndexList(((0, 0), (0, 0)))))
    elif which == "f100":
        from .flow import closed_form_coefficients
        from .grid import sample_white_noise
        from .kernels import KernelFactory
        F = KernelFactory(grid, sigma)
        v, e = [], []
        for mu in mus:
            K = F.K_pow(mu, 1)
            vals = []
            for s in range(samples):
                xi = sample_white_noise(grid, base_seed + s).values
                cf, _ = closed_form_coefficients(xi, kappa, mu, counterterms or {}, F)
                f = cf[(1, 0)].integrate().reshape(grid.shape)
                vals.append(np.mean(K.apply(f) ** 2))
            vals = np.asarray(vals)
            v.append(vals.mean())
            e.append(vals.std(ddof=1) / math.sqrt(samples))
        v, e = np.asarray(v), np.asarray(e)
        pred = float(predicted_pointwise_exponent(dim, IndexList(((1, 0), (1, 0)))))
    else:
        raise ValueError("unknown observable %r" % which)
    fit = fit_exponent(br, v)
    rel = np.max(e / v)
    return {"mu": np.asarray(mus), "estimate": v, "stderr": e, "fit": fit,
            "predicted": pred, "inconclusive": bool(rel > 0.2)}
