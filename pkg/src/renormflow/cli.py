"""
Command-line harness.

Every subcommand writes plot-ready CSV files and ``manifest.json`` into
``--out``.  Options may also come from ``--config`` (flat key=value text,
or a previous manifest); explicit flags win.  Exit codes: 0 success,
2 configuration error, 3 numeric failure, 4 inconclusive statistics.
"""
import argparse
import hashlib
import json
import math
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INCONCLUSIVE = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class Inconclusive(RuntimeError):
    pass


# -- output ------------------------------------------------------------------------
def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating, Fraction)):
        return "{:.16e}".format(float(v))
    return str(v)


def write_csv(path, header, rows):
    """Comma-separated table, floats with 17 significant digits."""
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path


def sha256_file(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_manifest(out, command, config, derived, files, wall):
    man = {
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "derived": derived,
        "version": __version__,
        "wall_clock_s": wall,
        "outputs": {Path(f).name: sha256_file(f) for f in files},
    }
    path = Path(out) / "manifest.json"
    with open(path, "w") as fh:
        json.dump(man, fh, indent=2, sort_keys=True, default=_json_default)
    return path


def _json_default(o):
    if isinstance(o, Fraction):
        return str(o)
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    return str(o)


# -- configuration --------------------------------------------------------------------
def read_config(path):
    """key=value lines (# comments) or a manifest JSON; keys use underscores."""
    text = Path(path).read_text()
    if path.endswith(".json"):
        return dict(json.loads(text)["config"])
    cfg = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("%s:%d: expected key=value" % (path, n))
        k, v = line.split("=", 1)
        cfg[k.strip().replace("-", "_")] = v.strip()
    return cfg


def thread_count(flag):
    env = os.environ.get("RENORMFLOW_THREADS")
    if env:
        return max(1, int(env))
    return max(1, int(flag)) if flag else (os.cpu_count() or 1)


def float_list(s):
    if isinstance(s, (list, tuple)):
        return [float(x) for x in s]
    return [float(Fraction(x.strip())) if "/" in x else float(x) for x in str(s).split(",") if x.strip()]


class _Regular:
    """Field runs with sigma > d/2: no counterterms, no power counting."""

    def __init__(self, d, sigma):
        self.d, self.sigma = d, sigma


def _dimensions(d, sigma, allow_regular=False):
    from .scaling import DimensionError, Dimensions
    try:
        s = Fraction(str(sigma)).limit_denominator(10 ** 6)
        if allow_regular and s > Fraction(d, 2):
            return _Regular(d, s)
        return Dimensions(d, s)
    except DimensionError as exc:
        raise ConfigError(str(exc))


def _field_grid(args):
    from .grid import GridError, TorusGrid
    if not 1 <= args.d <= 3:
        raise ConfigError("field subcommands need d in 1..3, got %d" % args.d)
    try:
        return TorusGrid(args.d, args.N)
    except GridError as exc:
        raise ConfigError(str(exc))


def _check_kappa(k):
    if not 0 < k <= 0.5:
        raise ConfigError("kappa must lie in (0, 1/2], got %r" % k)


def _derived(dim):
    from .scaling import epsilon_diamond, i_diamond, i_sharp
    if dim.sigma > Fraction(dim.d, 2):
        return {"regime": "regular", "i_sharp": 0}
    return {"regime": "singular", "eps": dim.eps, "eps_diamond": epsilon_diamond(dim),
            "i_sharp": i_sharp(dim), "i_diamond": i_diamond(dim)}


# -- subcommands -------------------------------------------------------------------------
def cmd_classify(args, out):
    from .scaling import DimensionError, classify, rho
    if not 1 <= args.d <= 6:
        raise ConfigError("classify needs d in 1..6, got %d" % args.d)
    from .scaling import Dimensions
    try:
        dim = Dimensions(args.d, Fraction(str(args.sigma)).limit_denominator(10 ** 6),
                         regular=args.regular)
        cl = classify(dim, args.imax)
    except (DimensionError, ValueError) as exc:
        raise ConfigError(str(exc))
    enh = set(cl.enhanced_noise)
    rows = [(c.i, c.m, c.label(), rho(dim, c.i, c.m, c.order), c in enh) for c in cl.relevant]
    f1 = write_csv(out / "classify.csv", ("i", "m", "label", "rho", "enhanced"), rows)
    summ = [("i_sharp", cl.i_sharp), ("i_diamond", cl.i_diamond),
            ("eps_diamond", str(cl.epsilon_diamond)), ("eps", str(dim.eps)),
            ("relevant_pairs", " ".join("(%d,%d)" % ij for ij in cl.relevant_pairs)),
            ("relevant", len(cl.relevant)), ("enhanced_noise", len(cl.enhanced_noise))]
    f2 = write_csv(out / "summary.csv", ("key", "value"), summ)
    print("d=%d sigma=%s" % (dim.d, dim.sigma))
    print("%-14s %10s %9s" % ("coefficient", "rho", "enhanced"))
    for _, _, lab, r, e in rows:
        print("%-14s %10s %9s" % (lab, r, "yes" if e else "no"))
    for k, v in summ:
        print("%s = %s" % (k, v))
    return [f1, f2], _derived(dim)


def cmd_kernels(args, out):
    from .kernels import KernelFactory, dump_kernel, periodize_l1_norms
    dim = _dimensions(args.d, args.sigma, allow_regular=True)
    g = _field_grid(args)
    _check_kappa(args.kappa)
    F = KernelFactory(g, float(dim.sigma), args.M)
    # default: dyadic in [mu] down to the lattice spacing
    mus = float_list(args.mus) if args.mus else [
        2.0 ** (-0.5 * j * F.sigma) for j in range(1, 2 * int(math.log2(args.N)) + 1)]
    if args.kind == "PdG":
        mus = [m for m in mus if m >= 2 * args.kappa]
    # scales below the lattice spacing carry no lattice points in the shell
    mus = [m for m in mus if F.bracket(m) >= g.h]
    a = tuple(int(x) for x in args.a.split(",")) if args.a else None
    try:
        rep = periodize_l1_norms(F, mus, args.kind, args.kappa, args.g, a)
    except ValueError as exc:
        raise ConfigError(str(exc))
    rows = [(mu, n, n * F.bracket(mu) ** (-rep["expected"])) for mu, n in zip(rep["mu"], rep["norm"])]
    f1 = write_csv(out / "kernels.csv", ("mu", "l1_norm", "scaled"), rows)
    f2 = write_csv(out / "fit.csv", ("kind", "slope", "intercept", "max_residual", "expected", "ratio"),
                   [(args.kind, rep["slope"], rep["intercept"], rep["max_residual"],
                     rep["expected"], rep["ratio"])])
    files = [f1, f2]
    if args.dump_mu is not None:
        K = F.G_cut(args.kappa, args.dump_mu)
        dump_kernel(out / "G_cut", K, {"sigma": F.sigma, "kappa": args.kappa,
                                       "mu": args.dump_mu, "M": F.M})
        files += [out / "G_cut.bin", out / "G_cut.hdr"]
    print("%s: slope %.4f (expected %.4f), max/min ratio %.3f"
          % (args.kind, rep["slope"], rep["expected"], rep["ratio"]))
    return files, _derived(dim)


def cmd_taylor(args, out):
    from .grid import TorusGrid
    from .tensorkern import poly_binom_error, smooth_random_kernel, taylor_error
    g = TorusGrid(1, args.N)
    rows = []
    for m in (1, 2):
        V = smooth_random_kernel(g, m, args.seed + m)
        for l in (1, 2):
            for order in range(l):
                alist = [[(order,)]] if m == 1 else [[(j,), (order - j,)] for j in range(order + 1)]
                for a in alist:
                    e = taylor_error(V, a, l, nodes=args.nodes)
                    rows.append(("taylor", m, l, ";".join(str(x[0]) for x in a), e, e <= args.tol))
    for a, k in (([(1,), (2,)], 1), ([(2,), (1,), (1,)], 2), ([(1,), (1,)], 0)):
        e = poly_binom_error(a, k, 1, seed=args.seed)
        rows.append(("poly_binom", len(a), k, ";".join(str(x[0]) for x in a), e, e <= 1e-12))
    f = write_csv(out / "taylor.csv", ("check", "m", "l_or_k", "a", "rel_error", "pass"), rows)
    worst = max(r[4] for r in rows if r[0] == "taylor")
    print("worst Taylor relative error %.3e over %d cases" % (worst, len(rows)))
    if not all(r[5] for r in rows):
        raise ArithmeticError("identity check failed")
    return [f], {}


def _counterterms(F, kappa, dim, disabled):
    from .renorm import counterterms_mode
    der = _derived(dim)
    if disabled or der["i_sharp"] == 0:
        return {}
    return counterterms_mode(F, kappa, der["i_sharp"])


def cmd_flow(args, out):
    from .flow import FlowConfig, integrate_flow
    from .grid import sample_white_noise
    from .kernels import KernelFactory
    from .scaling import rho
    dim = _dimensions(args.d, args.sigma)
    g = _field_grid(args)
    _check_kappa(args.kappa)
    F = KernelFactory(g, float(dim.sigma))
    ct = _counterterms(F, args.kappa, dim, False)
    cfg = FlowConfig(i_max=args.imax, m_max=args.mmax, steps=args.musteps)
    mus = [2.0 ** -j for j in range(1, 7) if 2.0 ** -j > args.kappa / 2]
    xi = sample_white_noise(g, args.seed).values
    res = integrate_flow(xi, args.kappa, ct, cfg, F, checkpoints=mus)
    rows = []
    for mu in sorted(res.snapshots):
        st = res.snapshots[mu]
        K = F.K_pow(mu, 1)
        L = F.bracket(mu)
        for (i, m), V in sorted(st.items()):
            mn = V.mollified_norm(K) if g.size ** (1 + m) <= 2 ** 26 else float("nan")
            r = float(rho(dim, i, m, 0, dim.eps))
            rows.append((mu, i, m, V.vm_norm(), mn, mn * L ** (-r)))
    f = write_csv(out / "flow.csv", ("mu", "i", "m", "vm_norm", "mollified_norm", "rho_eps_scaled"), rows)
    der = _derived(dim)
    der["counterterms"] = dict(getattr(ct, "c", ct))
    print("flow integrated to mu=1 with %d steps; %d diagnostic rows" % (cfg.steps, len(rows)))
    return [f], der


def cmd_counterterms(args, out):
    from .kernels import KernelFactory
    from .renorm import RenormConditions, counterterms_mc, counterterms_mode
    dim = _dimensions(args.d, args.sigma)
    g = _field_grid(args)
    F = KernelFactory(g, float(dim.sigma))
    ish = _derived(dim)["i_sharp"]
    cond = RenormConditions({1: args.frak1, 2: args.frak2})
    rows = []
    for k in float_list(args.kappa_list):
        _check_kappa(k)
        md = counterterms_mode(F, k, ish, cond)
        row = [k, md.c[1]]
        if args.samples:
            mc = counterterms_mc(F, k, ish, args.samples, args.seed, cond, c1=md.c[1],
                                 threads=args.threads)
            row += [mc.c[1], mc.errors[1]]
        else:
            row += [float("nan")] * 2
        row += [md.c.get(2, float("nan"))]
        if args.samples and ish >= 2:
            row += [mc.c[2], mc.errors[2]]
        else:
            row += [float("nan")] * 2
        rows.append(tuple(row))
        print("kappa=%g c1=%.6g c2=%s" % (k, md.c[1], md.c.get(2)))
    f = write_csv(out / "counterterms.csv",
                  ("kappa", "c1_mode", "c1_mc", "c1_mc_err", "c2_mode", "c2_mc", "c2_mc_err"), rows)
    return [f], _derived(dim)


def cmd_solve(args, out):
    from .grid import sample_white_noise
    from .kernels import KernelFactory
    from .solver import green, picard_solve
    dim = _dimensions(args.d, args.sigma, allow_regular=True)
    g = _field_grid(args)
    der = _derived(dim)
    kappa = args.kappa
    if kappa is None:
        kappa = 0.0 if der["regime"] == "regular" else 0.125
    if kappa == 0 and der["regime"] != "regular":
        raise ConfigError("kappa = 0 is only allowed in the regular regime")
    if kappa:
        _check_kappa(kappa)
    if der["regime"] == "singular" and args.no_counterterms:
        warnings.warn("counterterms disabled in the singular regime: running as ablation")
    F = KernelFactory(g, float(dim.sigma))
    ct = {} if kappa == 0 else _counterterms(F, kappa, dim, args.no_counterterms)
    xi = sample_white_noise(g, args.seed).values
    r = picard_solve(xi, args.lam, kappa, ct, F, args.tol, args.max_iter, auto=args.auto, seed=args.seed)
    # residual of the operator form Q Phi = F[Phi] (exact only for the uncut kernel)
    Q = 1.0 / green(F, kappa).multiplier
    from .solver import force
    QPhi = np.fft.ifftn(np.fft.fftn(r.phi) * Q).real
    pde = float(np.max(np.abs(QPhi - force(r.phi, xi, r.lam, ct))))
    f1 = write_csv(out / "solve.csv",
                   ("lam", "kappa", "seed", "iterations", "residual_sup", "contraction", "pde_residual"),
                   [(r.lam, kappa, args.seed, r.iterations, r.residual_sup, r.contraction_ratio, pde)])
    f2 = write_csv(out / "phi.csv", ("index", "phi"), enumerate(r.phi.ravel()))
    der["counterterms"] = dict(getattr(ct, "c", ct))
    if r.lam != args.lam:
        print("note: Picard diverged at lambda=%g; converged at %g" % (args.lam, r.lam))
    print("lam=%g iterations=%d residual=%.3e pde_residual=%.3e"
          % (r.lam, r.iterations, r.residual_sup, pde))
    return [f1, f2], der


def cmd_converge(args, out):
    from .kernels import KernelFactory
    from .solver import convergence_study
    dim = _dimensions(args.d, args.sigma, allow_regular=True)
    g = _field_grid(args)
    der = _derived(dim)
    _check_kappa(args.kappa0)
    if der["regime"] == "singular" and args.no_counterterms:
        warnings.warn("counterterms disabled in the singular regime: running as ablation")
    F = KernelFactory(g, float(dim.sigma))
    kappas = [args.kappa0 * 2.0 ** -j for j in range(args.levels)]
    mode = None if args.no_counterterms else "mode"
    if mode == "mode" and der["i_sharp"] > 0:
        from .renorm import counterterms_mode
        cache = {k: counterterms_mode(F, k, der["i_sharp"]) for k in kappas}
        mode = cache.__getitem__
        der["counterterms"] = {k: dict(v.c) for k, v in cache.items()}
    seeds = [args.seed + s for s in range(args.seeds)]

    def run(seed):
        return convergence_study(seed, args.lam, args.beta, kappas, F, mode)

    with ThreadPoolExecutor(thread_count(args.threads)) as ex:
        tables = list(ex.map(run, seeds))
    rows = [r for t in tables for r in t.rows]
    f1 = write_csv(out / "converge.csv", ("kappa", "diff_norm", "norm", "seed", "beta", "lam", "ok"), rows)
    mono = [monotone_decrease([r[1] for r in t.rows[:-1]]) for t in tables]
    summ = [(t.seed, m, t.decay.slope if t.decay else float("nan"), len(t.failures))
            for t, m in zip(tables, mono)]
    f2 = write_csv(out / "summary.csv", ("seed", "monotone", "decay_slope", "failures"), summ)
    print("monotone decrease in %d of %d seeds" % (sum(mono), len(mono)))
    return [f1, f2], der


def monotone_decrease(vals):
    v = [x for x in vals]
    return all(np.isfinite(v)) and all(b < a for a, b in zip(v, v[1:]))


def cmd_cumulants(args, out):
    from .renorm import counterterms_mode
    from .kernels import KernelFactory
    from .stats import verify_cumulant_scaling
    dim = _dimensions(args.d, args.sigma)
    g = _field_grid(args)
    mus = float_list(args.mus) if args.mus else [2.0 ** (-j * float(dim.sigma)) for j in range(2, 8)]
    ct = None
    if args.which == "f100":
        _check_kappa(args.kappa)
        ct = counterterms_mode(KernelFactory(g, float(dim.sigma)), args.kappa, _derived(dim)["i_sharp"])
    rep = verify_cumulant_scaling(dim, g, mus, args.samples, args.seed, args.which, args.kappa, ct)
    fit = rep["fit"]
    rows = [(args.which, mu, e, s, rep["predicted"], fit.slope, fit.stderr)
            for mu, e, s in zip(rep["mu"], rep["estimate"], rep["stderr"])]
    f = write_csv(out / "cumulants.csv", ("index", "mu", "estimate", "stderr", "predicted_exponent",
                                          "fitted_slope", "slope_err"), rows)
    print("fitted slope %.4f +- %.4f, predicted %.4f" % (fit.slope, fit.stderr, rep["predicted"]))
    if rep["inconclusive"]:
        raise Inconclusive("statistical error dominates; increase --samples")
    return [f], _derived(dim)


# -- parser ------------------------------------------------------------------------------
def build_parser():
    p = argparse.ArgumentParser(prog="renormflow", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, field=True):
        sp.add_argument("--config", help="key=value file or manifest.json")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=0, help="base seed")
        sp.add_argument("--threads", type=int, default=None, help="worker pool size")
        sp.add_argument("--d", type=int, default=1)
        sp.add_argument("--sigma", type=str, default="0.4")
        if field:
            sp.add_argument("--N", type=int, default=64)

    s = sub.add_parser("classify", help="power counting table")
    common(s, field=False)
    s.add_argument("--imax", type=int, default=None)
    s.add_argument("--regular", action="store_true", help="accept sigma in (d/2, d]")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("kernels", help="kernel l1-norm scaling report")
    common(s)
    s.add_argument("--kappa", type=float, default=0.125)
    s.add_argument("--M", type=int, default=None)
    s.add_argument("--kind", choices=("dK", "PdG", "daK"), default="dK")
    s.add_argument("--g", type=int, default=1)
    s.add_argument("--a", default=None, help="derivative multi-index for kind=daK, e.g. 1")
    s.add_argument("--mus", default=None, help="comma-separated mu values")
    s.add_argument("--dump-mu", type=float, default=None, help="also dump G_{kappa,mu}")
    s.set_defaults(func=cmd_kernels)

    s = sub.add_parser("taylor-check", help="Taylor reconstruction identity (d=1)")
    common(s)
    s.add_argument("--nodes", type=int, default=16)
    s.add_argument("--tol", type=float, default=1e-5)
    s.set_defaults(func=cmd_taylor)

    s = sub.add_parser("flow", help="integrate the effective-force hierarchy")
    common(s)
    s.add_argument("--kappa", type=float, default=0.125)
    s.add_argument("--imax", type=int, default=2)
    s.add_argument("--mmax", type=int, default=3)
    s.add_argument("--musteps", type=int, default=512)
    s.set_defaults(func=cmd_flow)

    s = sub.add_parser("counterterms", help="mode-sum and Monte Carlo counterterms")
    common(s)
    s.add_argument("--kappa-list", default="0.125,0.03125")
    s.add_argument("--frak1", type=float, default=0.0)
    s.add_argument("--frak2", type=float, default=0.0)
    s.add_argument("--samples", type=int, default=1000)
    s.set_defaults(func=cmd_counterterms)

    s = sub.add_parser("solve", help="Picard solution of the mild equation")
    common(s)
    s.add_argument("--lambda", dest="lam", type=float, default=0.1)
    s.add_argument("--kappa", type=float, default=None)
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--max-iter", type=int, default=500)
    s.add_argument("--fixed-lambda", dest="auto", action="store_false",
                   help="fail instead of halving lambda when Picard diverges")
    s.add_argument("--no-counterterms", action="store_true")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("converge", help="kappa -> 0 convergence study")
    common(s)
    s.add_argument("--lambda", dest="lam", type=float, default=0.1)
    s.add_argument("--beta", type=float, default=-0.1)
    s.add_argument("--kappa0", type=float, default=0.25)
    s.add_argument("--levels", type=int, default=5)
    s.add_argument("--seeds", type=int, default=1)
    s.add_argument("--no-counterterms", action="store_true")
    s.set_defaults(func=cmd_converge)

    s = sub.add_parser("cumulants", help="scaling of mollified cumulants")
    common(s)
    s.add_argument("--which", choices=("noise", "f100"), default="noise")
    s.add_argument("--mus", default=None)
    s.add_argument("--samples", type=int, default=256)
    s.add_argument("--kappa", type=float, default=0.125)
    s.set_defaults(func=cmd_cumulants)
    return p


def parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = read_config(args.config)
        sp = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sp._actions}
        unknown = set(cfg) - known - {"command", "func"}
        if unknown:
            raise ConfigError("unknown config keys: %s" % ", ".join(sorted(unknown)))
        typed = {}
        for a in sp._actions:
            if a.dest in cfg and a.dest not in ("config", "out"):
                v = cfg[a.dest]
                if a.type is not None and isinstance(v, str):
                    v = a.type(v)
                elif a.const is True and isinstance(v, str):
                    v = v.lower() in ("1", "true", "yes")
                typed[a.dest] = v
        sp.set_defaults(**typed)
        args = parser.parse_args(argv)
    return args


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse(argv)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    out = Path(args.out or os.path.join("runs", args.command))
    out.mkdir(parents=True, exist_ok=True)
    config = {k: v for k, v in vars(args).items() if k not in ("func", "config", "out")}
    t0 = time.time()
    from .stats import InsufficientData
    try:
        files, derived = args.func(args, out)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except (Inconclusive, InsufficientData) as exc:
        print("inconclusive: %s" % exc, file=sys.stderr)
        return EXIT_INCONCLUSIVE
    except (ArithmeticError, RuntimeError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print("numeric failure: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC
    write_manifest(out, args.command, config, derived, files, time.time() - t0)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
