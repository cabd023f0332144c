"""Command-line front end.

Every run writes its outputs plus ``manifest.json`` (command, flags, seed,
library versions, output paths) into ``--out-dir``. Exit codes: 0 success,
1 usage error, 2 validation error, 3 numerical failure.
"""
import argparse
import dataclasses
import json
import math
import os
import platform
import sys
from importlib import metadata

import numpy as np

from . import analysis, committor, dynamics, markov, regions, sampling, textio, ulam
from .errors import NumericalError, ValidationError

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3

# Grid presets: (counts, samples per box).
ULAM_PRESETS = {
    "pendulum": {"quick": ((64, 64), 100), "full": ((256, 256), 1000)},
    "anderies": {"quick": ((64, 64), 50), "full": ((128, 128), 100)},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text):
    return [int(t) for t in text.split(",") if t.strip()]


def _version(dist):
    try:
        return metadata.version(dist)
    except metadata.PackageNotFoundError:
        return "unknown"


def _out(args, name):
    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, name)
    args._outputs.append(path)
    return path


def _write_manifest(args, argv):
    flags = {k: v for k, v in vars(args).items() if not k.startswith("_") and k != "func"}
    manifest = {
        "command": args.command,
        "argv": list(argv),
        "flags": flags,
        "seed": args.seed,
        "versions": {"artifact": _version("artifact"), "numpy": np.__version__,
                     "scipy": _version("scipy"), "numba": _version("numba"),
                     "python": platform.python_version()},
        "outputs": args._outputs,
    }
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)


def _system_params(args):
    return {"alpha": args.alpha, "K": args.coupling, "P": args.drive,
            **({"n": args.n} if args.n is not None else {})}


def _flow(args, tau=1.0, **extra):
    kw = {"tau": tau, "dt": args.dt, "sigma": getattr(args, "sigma_flow", 0.0), **extra}
    if args.system in ("pendulum", "pendulum-chain"):
        kw.update({k: v for k, v in _system_params(args).items() if v is not None})
        if args.system == "pendulum":
            kw.pop("n", None)
    return dynamics.make_flow(args.system, **kw)


# --- commands ---------------------------------------------------------------

def cmd_boxmodel(args):
    M = dynamics.box_model_matrix(args.model, args.delta)
    names = dynamics.BOX_MODEL_STATES[args.model]
    rho = np.full(M.n, 1.0 / M.n)
    path = _out(args, args.out)
    with open(path, "w") as fh:
        fh.write("eps," + ",".join(f"b_{s}" for s in names) + "\n")
        for eps in args.eps:
            b = [committor.eps_absorption_stability(M, [k], rho, eps) for k in range(M.n)]
            fh.write(repr(eps) + "," + ",".join(repr(x) for x in b) + "\n")
    textio.write_matrix(M, _out(args, f"boxmodel_{args.model}_matrix.txt"))


def cmd_ulam(args):
    system = args.system
    if system in ULAM_PRESETS and args.preset:
        counts, samples = ULAM_PRESETS[system][args.preset]
    else:
        counts, samples = (64, 64), 100
    counts = args.counts or counts
    samples = args.samples or samples
    mask = domain = None
    if system == "pendulum":
        lower, upper, periodic = [-math.pi, -20.0], [math.pi, 20.0], [True, False]
    elif system == "anderies":
        lower, upper, periodic = [0.0, 0.0], [1.0, 1.0], [False, False]
        mask, domain = ulam.simplex_mask, dynamics.in_simplex
    else:
        lower, upper, periodic = None, None, None
    lower = args.lower or lower
    upper = args.upper or upper
    if lower is None or upper is None:
        raise UsageError(f"--lower and --upper are required for system {system!r}")
    if args.periodic is not None:
        periodic = [bool(p) for p in args.periodic]
    if args.mask == "simplex":
        mask, domain = ulam.simplex_mask, dynamics.in_simplex
    flow = _flow(args, args.tau, **({"dim": len(lower)} if system == "identity" else {}))
    if flow.dim != len(lower):
        raise ValidationError(f"system {system!r} has dimension {flow.dim}, bounds have {len(lower)}")
    part = ulam.build_partition(lower, upper, counts, periodic, mask, domain)
    M, report = ulam.estimate_transition_matrix(part, flow, samples, args.seed,
                                                args.exterior, args.threads)
    mpath = _out(args, args.out)
    textio.write_matrix(M, mpath)
    meta = {**part.metadata(), **flow.metadata(), **report.metadata()}
    textio.write_sidecar(meta, _out(args, args.out + ".meta"))
    with open(_out(args, args.out + ".centers.csv"), "w") as fh:
        fh.write("box," + ",".join(flow.coord_names) + "\n")
        for k, c in enumerate(part.centers().tolist()):
            fh.write(f"{k}," + ",".join(repr(x) for x in c) + "\n")
    if args.target_region:
        reg = regions.parse_region(args.target_region, flow.coord_names)
        idx = np.flatnonzero(reg.contains(part.centers()))
        textio.write_region(regions.Region.from_indices(idx), _out(args, args.out + ".target.txt"))
    print(f"K={report.K} exterior_mass={report.exterior_mass:.6g}")


def cmd_committor(args):
    M = textio.read_matrix(args.matrix)
    mode = args.mode
    if mode == "fuzzy":
        if not (args.p1 and args.p2):
            raise UsageError("fuzzy mode needs --p1 and --p2 vector files")
        res = committor.fuzzy_committor(M, textio.read_vector(args.p1),
                                        textio.read_vector(args.p2), args.solver)
    else:
        if not args.target:
            raise UsageError(f"{mode} mode needs --target")
        A = textio.read_region(args.target, M.n)
        if mode == "classical":
            res = committor.committor_to(M, A, args.solver)
        elif mode == "between":
            if not args.other:
                raise UsageError("between mode needs --other")
            res = committor.committor_between(M, A, textio.read_region(args.other, M.n),
                                              args.solver)
        else:
            if args.eps is None:
                raise UsageError("eps mode needs --eps")
            res = committor.eps_committor(M, A, args.eps, args.solver)
    q = res.q
    if args.normalized:
        if mode != "eps":
            raise UsageError("--normalized applies to eps mode only")
        q = q / res.eps
    textio.write_committor_csv(q, _out(args, args.out))
    print(f"mean={float(np.mean(q)):.10g} max={float(np.max(q)):.10g} residual={res.residual:.3g}")


def cmd_ems(args):
    M = textio.read_matrix(args.matrix)
    A = textio.read_region(args.target, M.n)
    s = committor.ems_finite(M, A, args.N)
    path = _out(args, args.out)
    with open(path, "w") as fh:
        fh.write("state,s\n")
        fh.writelines(f"{i},{x!r}\n" for i, x in enumerate(s.tolist()))
    print(f"mean={float(np.mean(s)):.10g}")


def _gbs_defaults(args, flow):
    if args.system == "pendulum":
        fp = flow.params.fixed_point()
        region = f"ball:{float(fp[0])!r},{float(fp[1])!r}:0.5"
        pert = "box:-3.141592653589793,-20:3.141592653589793,20"
    elif args.system == "pendulum-chain":
        region, pert = "all-abs-lt:omega:0.5", "sync"
    else:
        region, pert = "box:0,0:1,0.1", "simplex"
    return args.region or region, args.perturbation or pert


def _perturbation(spec, flow):
    if spec == "sync":
        return dynamics.chain_perturbation(flow.params)
    if spec == "simplex":
        def simplex(rng, m):
            u = rng.random((m, 2))
            flip = u.sum(axis=1) > 1
            u[flip] = 1 - u[flip]
            return u
        return simplex
    kind, *rest = spec.split(":")
    if kind == "box" and len(rest) == 2:
        return sampling.uniform_box_sampler(_floats(rest[0]), _floats(rest[1]))
    if kind == "point" and len(rest) == 1:
        return sampling.point_sampler(_floats(rest[0]))
    raise ValidationError(f"cannot parse perturbation {spec!r}")


def cmd_gbs(args):
    rules = [sampling.TimeRule.parse(r) for r in args.rules] if args.rules else []
    for T in args.horizons or []:
        kinds = ("uniform", "exponential") if args.rule_kind == "both" else (args.rule_kind,)
        rules += [sampling.TimeRule.from_horizon(k, T, args.convention) for k in kinds]
    if not rules:
        raise UsageError("give --rules or --horizons")
    if args.system.startswith("boxmodel:"):
        M = dynamics.box_model_matrix(args.system.split(":", 1)[1], args.delta)
        system = _ChainSweep(sampling.MarkovChainSystem(M))
        region = regions.Region.from_indices(_ints(args.region or "0"), M.n)
        pert = sampling.distribution_sampler(np.full(M.n, 1.0 / M.n))
    else:
        if args.system not in ("pendulum", "pendulum-chain", "anderies"):
            raise ValidationError(f"unknown system {args.system!r}")
        flow = _flow(args)
        if args.scheme:
            flow = dataclasses.replace(flow, scheme=args.scheme)
        system = flow
        region_text, pert_text = _gbs_defaults(args, flow)
        region = regions.parse_region(region_text, flow.coord_names)
        pert = _perturbation(pert_text, flow)
    table = sampling.gbs_sweep(system, pert, region, rules, args.sigmas, args.samples,
                               args.seed, args.threads, out=_out(args, args.out))
    for e in table:
        print(f"{e.time_rule} sigma={e.sigma:g} b={e.b_hat:.4f} +- {e.stderr:.4f}")


class _ChainSweep:
    """Markov chain adapter for sweeps; only ``sigma = 0`` is meaningful."""

    def __init__(self, system):
        self.system = system
        self.noise_sigma = [0.0]

    def with_sigma(self, sigma):
        if sigma != 0:
            raise ValidationError("box-model systems take no noise strength")
        return self.system


def cmd_diffest(args):
    lams = [complex(t.replace(" ", "")) for t in args.lambdas.split(",")]
    if args.N:
        Ns = args.N
    else:
        lo, hi, num = args.N_range.split(":")
        Ns = sorted(set(np.unique(np.round(np.logspace(math.log10(float(lo)),
                                                       math.log10(float(hi)),
                                                       int(num)))).astype(int).tolist()))
    analysis.difference_curve_sweep(lams, Ns, out=_out(args, args.out))


def cmd_project(args):
    M = textio.read_matrix(args.matrix)
    P = markov.fixed_space_projection(M)
    textio.write_matrix(markov.SparseStochasticMatrix.from_dense(np.where(P > 0, P, 0.0),
                                                                 tol=1e-9),
                        _out(args, args.out))
    dists = markov.invariant_distributions(M)
    with open(_out(args, args.out + ".invariant.csv"), "w") as fh:
        fh.write("component," + ",".join(f"p{i}" for i in range(M.n)) + "\n")
        for k, d in enumerate(dists):
            fh.write(f"{k}," + ",".join(repr(x) for x in d.tolist()) + "\n")
    print(f"{len(dists)} invariant distribution(s)")


# --- parser -----------------------------------------------------------------

def _add_system(p, systems, required=True):
    p.add_argument("--system", required=required, choices=systems)
    p.add_argument("--alpha", type=float, help="damping")
    p.add_argument("--coupling", type=float, help="coupling strength K")
    p.add_argument("--drive", type=float, help="power injection P")
    p.add_argument("--n", type=_positive_int, help="chain length")
    p.add_argument("--dt", type=float, default=0.01)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--threads", type=_positive_int, default=argparse.SUPPRESS)
    common.add_argument("--out-dir", default=argparse.SUPPRESS)

    parser = _Parser(prog="stochbasin", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=_positive_int, default=None)
    parser.add_argument("--out-dir", default=".")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("boxmodel", parents=[common], help="eps-absorption stability of box models")
    p.add_argument("--model", choices=["metastable", "transient"], required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--eps", type=_floats, default=[10.0 ** -k for k in range(9)])
    p.add_argument("--out", default="boxmodel.csv")
    p.set_defaults(func=cmd_boxmodel)

    p = sub.add_parser("ulam", parents=[common], help="Ulam transition matrix of a flow map")
    _add_system(p, ["pendulum", "pendulum-chain", "anderies", "identity"])
    p.add_argument("--preset", choices=["quick", "full"])
    p.add_argument("--lower", type=_floats)
    p.add_argument("--upper", type=_floats)
    p.add_argument("--counts", type=_ints)
    p.add_argument("--periodic", type=_ints)
    p.add_argument("--mask", choices=["none", "simplex"], default="none")
    p.add_argument("--samples", type=_positive_int)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--sigma", dest="sigma_flow", type=float, default=0.0)
    p.add_argument("--exterior", choices=["absorb", "renormalize"], default="absorb")
    p.add_argument("--target-region", help="write boxes whose center lies in this region")
    p.add_argument("--out", default="ulam_matrix.txt")
    p.set_defaults(func=cmd_ulam)

    p = sub.add_parser("committor", parents=[common], help="committor functions of a chain")
    p.add_argument("--matrix", required=True)
    p.add_argument("--mode", choices=["classical", "between", "fuzzy", "eps"], default="eps")
    p.add_argument("--target")
    p.add_argument("--other")
    p.add_argument("--p1")
    p.add_argument("--p2")
    p.add_argument("--eps", type=float)
    p.add_argument("--normalized", action="store_true", help="write q_eps / eps")
    p.add_argument("--solver", choices=["auto", "direct", "krylov", "richardson"], default="auto")
    p.add_argument("--out", default="committor.csv")
    p.set_defaults(func=cmd_committor)

    p = sub.add_parser("ems", parents=[common], help="finite-horizon expected mean sojourn time")
    p.add_argument("--matrix", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--N", type=_positive_int, required=True)
    p.add_argument("--out", default="ems.csv")
    p.set_defaults(func=cmd_ems)

    p = sub.add_parser("gbs", parents=[common], help="sampling-based generalized basin stability")
    _add_system(p, None)
    p.add_argument("--delta", type=float, default=0.01, help="box-model delta")
    p.add_argument("--region")
    p.add_argument("--perturbation")
    p.add_argument("--rules", type=lambda s: s.split(","), help="e.g. exp:0.01,uniform:200")
    p.add_argument("--horizons", type=_floats)
    p.add_argument("--rule-kind", choices=["uniform", "exponential", "fixed", "both"],
                   default="both")
    p.add_argument("--convention", choices=["aligned", "reciprocal"], default="aligned")
    p.add_argument("--sigmas", type=_floats, default=[0.0])
    p.add_argument("--scheme", choices=["euler", "heun"])
    p.add_argument("--samples", type=_positive_int, default=500)
    p.add_argument("--out", default="gbs.csv")
    p.set_defaults(func=cmd_gbs)

    p = sub.add_parser("diffest", parents=[common], help="EMS vs eps-committor difference terms")
    p.add_argument("--lambdas", required=True, help="comma list, complex as 0.99+0.05j")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--N", type=_ints)
    g.add_argument("--N-range", help="log grid lo:hi:num")
    p.add_argument("--out", default="diffest.csv")
    p.set_defaults(func=cmd_diffest)

    p = sub.add_parser("project", parents=[common], help="projection onto the fixed space")
    p.add_argument("--matrix", required=True)
    p.add_argument("--out", default="projection.txt")
    p.set_defaults(func=cmd_project)
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        args._outputs = []
        args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _write_manifest(args, argv)
    return EXIT_OK
