"""Command-line interface: ``manifold-ess <command> ...``.

Exit codes are a stable contract: 0 success, 1 the precision rule failed,
2 invalid input (including a chain with zero feature variance), 3 unstable
long-run variance.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .chainio import read_chain, write_chain, write_text_atomic
from .estimator import DegenerateChainError, EssReport, WindowSpec, kernel_ess, precision_check
from .experiments import ExperimentConfig, preset, run_experiment, to_csv
from .geometry import Chain, ValidationError, uniform_sphere
from .kernels import ALIASES, GEODESIC_SEARCH_H, KernelSpec, geodesic_gauss_search, pd_audit
from .mmd import ReferenceEmbedding, mmd2_empirical

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_UNSTABLE = 3
EXIT_PRECISION_FAIL = 1


def _clean(obj):
    """Replace non-finite floats by None so the JSON stays standard."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _emit(text: str, out: str | None) -> None:
    if out:
        write_text_atomic(out, text)
    else:
        sys.stdout.write(text)


def _bandwidth(value: str):
    if value == "auto":
        return "auto"
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bandwidth must be 'auto' or an integer, got {value!r}")


def _add_kernel_flags(p: argparse.ArgumentParser, default: str | None = "sphere-poisson") -> None:
    g = p.add_argument_group("kernel")
    g.add_argument("--kernel", default=default,
                   help=f"JSON object or family shorthand ({', '.join(sorted(ALIASES))})")
    g.add_argument("--rho", type=float, help="decay for the sphere kernels, 0 < rho < 1")
    g.add_argument("--truncation", type=int, help="Gegenbauer series truncation M")
    g.add_argument("--beta", type=float, help="Gaussian scale for pullback kernels")
    g.add_argument("--h", type=float, help="bandwidth of the unsafe geodesic Gaussian")
    g.add_argument("--variant", choices=("ecm", "lecm"), help="Cholesky coordinates for correlation matrices")


def _add_window_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window", choices=("bartlett", "truncated"), default="bartlett")
    p.add_argument("--bandwidth", type=_bandwidth, default="auto", help="'auto' (floor(n^(1/3))) or an integer")


def _kernel_dict(args) -> dict:
    raw = (args.kernel or "").strip()
    if raw.startswith("{"):
        try:
            d = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"--kernel is not valid JSON: {exc}")
        if not isinstance(d, dict) or "family" not in d:
            raise ValidationError("--kernel JSON needs a 'family' field")
    else:
        d = {"family": raw}
    for name in ("rho", "truncation", "beta", "h", "variant"):
        value = getattr(args, name, None)
        if value is not None:
            d[name] = value
    return d


def kernel_from_args(args, unsafe_ok: bool = False) -> KernelSpec:
    """Parse --kernel (JSON or shorthand); explicit parameter flags override JSON fields."""
    return KernelSpec.from_dict(_kernel_dict(args), unsafe_ok=unsafe_ok)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_ess(args) -> int:
    chain = read_chain(args.input)
    spec = kernel_from_args(args)
    report = kernel_ess(chain, spec, WindowSpec(args.window, args.bandwidth))
    if args.format == "csv":
        d = report.to_dict()
        cols = ["n", "gamma0", "sigma2", "ess", "tau", "bandwidth", "window", "status"]
        text = to_csv(cols, [[d[c] for c in cols]])
    else:
        text = dumps(report.to_dict())
    _emit(text, args.out)
    return EXIT_OK if report.ok else EXIT_UNSTABLE


def cmd_mmd(args) -> int:
    a, b = read_chain(args.a), read_chain(args.b)
    spec = kernel_from_args(args)
    out = mmd2_empirical(a, b, spec).to_dict()
    if args.corrected:
        if len(b) <= 1:
            raise ValidationError("the corrected risk needs a reference (--b) with more than one point")
        emb = ReferenceEmbedding(b, spec)
        out["reference_gamma0"] = emb.gamma0
        out["d_hat"] = len(a) * (out["mmd2"] - emb.gamma0 / emb.m)
    _emit(dumps(out), args.out)
    return EXIT_OK


def cmd_pd_audit(args) -> int:
    if args.search:
        # the search sweeps its own bandwidth grid, so no h is needed here
        family = _kernel_dict(args)["family"]
        if ALIASES.get(family, family) != "sphere_geodesic_gauss_UNSAFE":
            raise ValidationError("--search applies to the geodesic Gaussian only")
        bandwidths = (args.h,) if args.h is not None else GEODESIC_SEARCH_H
        result = geodesic_gauss_search(seed=args.seed, bandwidths=bandwidths, n_sets=args.sets, set_size=args.size)
        _emit(dumps(result.to_dict()), args.out)
        return EXIT_OK
    spec = kernel_from_args(args, unsafe_ok=True)
    if args.input:
        points = read_chain(args.input)
        if points.manifold != spec.manifold:
            raise ValidationError(f"kernel {spec.family} does not apply to {points.manifold} points")
    elif args.random:
        if spec.manifold != "sphere":
            raise ValidationError("--random draws sphere points; use --input for other manifolds")
        points = Chain("sphere", uniform_sphere(args.random, args.dim, np.random.default_rng(args.seed)))
    else:
        raise ValidationError("pd-audit needs --input, --random N or --search")
    report = pd_audit(spec, points, args.tol)
    _emit(dumps(report.to_dict()), args.out)
    return EXIT_OK


def cmd_precision(args) -> int:
    if args.report:
        try:
            d = json.loads(Path(args.report).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read ESS report {args.report}: {exc}")
        report = EssReport.from_dict(d)
    elif args.input:
        report = kernel_ess(read_chain(args.input), kernel_from_args(args), WindowSpec(args.window, args.bandwidth))
    else:
        raise ValidationError("precision needs --report or --input")
    if not report.ok:
        _emit(dumps({"report": report.to_dict(), "status": report.status}), args.out)
        return EXIT_UNSTABLE
    result = precision_check(report, args.epsilon)
    _emit(dumps({**result.to_dict(), "report": report.to_dict()}), args.out)
    return EXIT_OK if result.passed else EXIT_PRECISION_FAIL


def load_config(args) -> ExperimentConfig:
    overrides = {}
    if args.config:
        try:
            overrides = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {args.config}: {exc}")
        if not isinstance(overrides, dict):
            raise ValidationError("config file must hold a JSON object")
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    base = preset(args.preset) if args.preset else None
    if base is None and "experiment" not in overrides:
        raise ValidationError("experiment needs --preset or a config with an 'experiment' key")
    return ExperimentConfig.from_dict(overrides, base)


def cmd_experiment(args) -> int:
    cfg = load_config(args)
    report = run_experiment(cfg)
    out = Path(args.out)
    write_text_atomic(out / "report.json", dumps(report.to_dict()))
    write_text_atomic(out / "summary.csv", report.summary_csv())
    write_text_atomic(out / "plot.csv", report.plot_csv())
    if report.chain is not None:
        write_chain(out / "chain.csv", report.chain)
    sys.stdout.write(report.summary_csv())
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="manifold-ess", description="Kernel effective sample size for manifold-valued MCMC output.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ess", help="kernel ESS of a chain file")
    p.add_argument("--input", required=True, help="chain file")
    _add_kernel_flags(p)
    _add_window_flags(p)
    p.add_argument("--output", dest="format", choices=("json", "csv"), default="json", help="report format")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.set_defaults(func=cmd_ess)

    p = sub.add_parser("mmd", help="V-statistic MMD^2 between two chain files")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--corrected", action="store_true",
                   help="treat --b as an iid reference and add the finite-reference corrected risk d_hat")
    _add_kernel_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_mmd)

    p = sub.add_parser("pd-audit", help="smallest Gram eigenvalue of a kernel on a point set")
    _add_kernel_flags(p)
    p.add_argument("--input", help="point set as a chain file")
    p.add_argument("--random", type=int, metavar="N", help="audit N uniform sphere points")
    p.add_argument("--dim", type=int, default=3, help="ambient dimension for --random")
    p.add_argument("--search", action="store_true", help="run the geodesic-Gaussian failure search")
    p.add_argument("--sets", type=int, default=50, help="point sets per bandwidth for --search")
    p.add_argument("--size", type=int, default=30, help="points per set for --search")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, help="pass threshold on -min eigenvalue (default scales with n K0)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_pd_audit)

    p = sub.add_parser("precision", help="kernel-MMD precision rule")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--report", help="ESS report JSON from 'ess'")
    p.add_argument("--input", help="chain file (ESS computed on the fly)")
    _add_kernel_flags(p)
    _add_window_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_precision)

    p = sub.add_parser("experiment", help="run the rotation or mixture experiment")
    p.add_argument("--preset", choices=("rotation", "mixture"))
    p.add_argument("--config", help="JSON file overriding preset fields")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, DegenerateChainError) as exc:
        print(f"manifold-ess: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
