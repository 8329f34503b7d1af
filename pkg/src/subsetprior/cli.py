"""Command-line entry point.

Every subcommand writes its outputs into ``--out`` together with a
``manifest.json`` recording argv, input hashes, seeds and library versions.
The manifest is written on failure too, with the error attached.

Exit codes: 0 success, 2 usage, 3 numeric or degeneracy failure, 4 I/O.
"""

from __future__ import annotations

import argparse
import os
import platform
import sys
import warnings
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import io
from .errors import DomainError, InputFormatError, LowESSWarning, SubsetError, SubsetWarning
from .evidence import select_nu, zhat_spline_fit
from .gaussian import GaussianApprox, sample_gaussian, tilt_gaussian
from .models import DESK_SCALE, FULL_SCALE, run_anova_study, run_ordinal_study
from .sampler_gibbs import gibbs_discrete, gibbs_gaussian
from .sampler_is import parse_probe, resample, summarize, tilted_importance_sampler
from .subspace import (
    Basis,
    Projection,
    constant_family,
    geometric_basis,
    geometric_family,
    natural_cubic_spline_basis,
    parse_phi_prior,
    power_basis,
    power_family,
    projection_from_basis,
    ratio_basis,
    ratio_family,
)
from .tilt import Provenance, WeightedDraws, compute_log_w1, ess, log_ess

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
LOW_ESS_FRACTION = 0.1
FAMILIES = ("power", "dose", "geometric", "ratio", "spline", "basis-csv")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


class Run:
    """Collects inputs, outputs and warnings for the manifest."""

    def __init__(self, argv, out: Path):
        self.argv = list(argv)
        self.out = out
        self.inputs: dict[str, str] = {}
        self.outputs: list[str] = []
        self.warnings: list[str] = []
        self.seed = None

    def input(self, path) -> str:
        p = str(path)
        if not os.path.isfile(p):
            raise FileNotFoundError(f"input file not found: {p}")
        self.inputs[p] = io.sha256_file(p)
        return p

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def warn(self, msg: str):
        self.warnings.append(msg)
        print(f"warning: {msg}", file=sys.stderr)


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"artifact": pkg, "numpy": np.__version__, "python": platform.python_version(), "scipy": scipy.__version__}


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return max(1, int(args.threads))
    env = os.environ.get("SUBSET_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise UsageError(f"SUBSET_THREADS must be an integer, got {env!r}") from exc
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# argument groups shared by several subcommands
# ---------------------------------------------------------------------------


def _common(p):
    p.add_argument("--out", default="out", help="output directory (created if missing)")
    p.add_argument("--seed", type=int, default=0, help="64-bit master seed")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: SUBSET_THREADS or all cores)")


def _floats(text: str) -> np.ndarray:
    try:
        return np.array([float(t) for t in text.split(",") if t.strip()])
    except ValueError as exc:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from exc


def _subspace_args(p, with_phi: bool = True):
    g = p.add_argument_group("subspace")
    g.add_argument("--basis", help="basis matrix CSV (p rows, one column per spanning vector)")
    g.add_argument("--projection", help="projection matrix CSV (p x p)")
    g.add_argument("--family", choices=FAMILIES, help="parametric subspace family")
    if with_phi:
        g.add_argument("--phi", type=float, help="subspace parameter for --family")
    g.add_argument("--levels", help="comma-separated levels or doses (default 1..p)")
    g.add_argument("--df", type=int, default=4, help="spline columns for --family spline")
    g.add_argument("--spline-intercept", action="store_true", help="include a constant spline column")


def _levels(args, p: int) -> np.ndarray:
    return _floats(args.levels) if args.levels else np.arange(1, p + 1, dtype=float)


def _fixed_basis(args, p: int, run: Run) -> Basis:
    if args.family == "spline":
        return natural_cubic_spline_basis(_levels(args, p), args.df, args.spline_intercept)
    M, _ = io.read_matrix_csv(run.input(args.basis))
    return Basis(M)


def _generator(args, p: int):
    """phi -> Basis for the parametric families."""
    lv = _levels(args, p)
    if args.family == "power":
        return lambda phi: power_basis(phi, lv, "power")
    if args.family == "dose":
        return lambda phi: power_basis(phi, lv, "dose")
    if args.family == "geometric":
        return lambda phi: geometric_basis(phi, p)
    if args.family == "ratio":
        return ratio_basis
    return None


def _projection(args, p: int, run: Run) -> Projection:
    if args.basis and args.family not in (None, "basis-csv"):
        raise UsageError("--basis goes with --family basis-csv or no --family")
    if sum(bool(x) for x in (args.projection, args.basis or args.family)) != 1:
        raise UsageError("give exactly one of --basis, --projection or --family")
    if args.projection:
        M, _ = io.read_matrix_csv(run.input(args.projection))
        P = Projection.from_matrix(M)
    elif args.basis or args.family in ("spline", "basis-csv"):
        if not args.basis and args.family == "basis-csv":
            raise UsageError("--family basis-csv needs --basis")
        P = projection_from_basis(_fixed_basis(args, p, run))
    else:
        if args.phi is None:
            raise UsageError(f"--family {args.family} needs --phi")
        P = projection_from_basis(_generator(args, p)(args.phi))
    if P.dim != p:
        raise UsageError(f"subspace has dimension {P.dim} but draws have {p} coordinates")
    return P


def _family(args, p: int, run: Run):
    if not args.family:
        raise UsageError("--family is required")
    try:
        support = parse_phi_prior(args.phi_prior, table_loader=lambda path: io.load_phi_table(run.input(path)))
    except DomainError as exc:
        raise UsageError(f"--phi-prior: {exc}") from exc
    if args.family == "power":
        return power_family(_levels(args, p), support, "power")
    if args.family == "dose":
        return power_family(_levels(args, p), support, "dose")
    if args.family == "geometric":
        return geometric_family(p, support)
    if args.family == "ratio":
        return ratio_family(support)
    # spline and user bases do not move with phi
    return constant_family(_fixed_basis(args, p, run), support)


def _nu_bounds(args):
    if not 0 <= args.nu_min < args.nu_max:
        raise UsageError("need 0 <= --nu-min < --nu-max")
    return (args.nu_min, args.nu_max)


def _check_ess(run: Run, value: float, K: int, label: str):
    if value < LOW_ESS_FRACTION * K:
        msg = f"{label} ESS {value:.1f} is below {LOW_ESS_FRACTION:g} of K={K}"
        warnings.warn(msg, LowESSWarning, stacklevel=2)


def _profile_csv(run: Run, name: str, selection):
    rows = [(v, lb) for v, lb in selection.log_profile]
    M = np.array([[v, np.exp(min(lb, 700.0)), lb] for v, lb in rows])
    io.write_matrix_csv(run.path(name), M, ["nu", "bf", "log_bf"])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_tilt(args, run: Run):
    post = io.read_draws_csv(run.input(args.posterior), Provenance.BASE_POSTERIOR)
    prior = io.read_draws_csv(run.input(args.prior), Provenance.PRIOR)
    P = _projection(args, post.p, run)
    if (args.nu is None) == (not args.select_nu):
        raise UsageError("give exactly one of --nu or --select-nu")
    if args.nu is not None and args.nu < 0:
        raise UsageError("--nu must be nonnegative")
    ts = tilted_importance_sampler(
        post, prior, P, _nu_bounds(args), args.nu, args.tolerance, args.min_ess_fraction or None
    )
    _check_ess(run, ess(ts.weighted), post.K, "tilted posterior")
    probes = {}
    for text in args.probe or []:
        try:
            probe = parse_probe(text)
        except (DomainError, ValueError) as exc:
            raise UsageError(f"--probe: {exc}") from exc
        probes[text] = probe
    sm = summarize(ts.weighted, 1.0 - args.alpha, probes)
    base = summarize(post, 1.0 - args.alpha, probes)
    out = {
        "nu_star": ts.nu_star,
        "bf": ts.bf.value,
        "bf_mc_se": ts.bf.mc_se,
        "log_bf": ts.bf.log_value,
        "summary": sm.to_dict(),
        "base_summary": base.to_dict(),
        "selected": ts.selection is not None,
    }
    if ts.selection is not None:
        out["profile"] = [{"nu": v, "log_bf": lb} for v, lb in ts.selection.log_profile]
        out["selection_notes"] = ts.selection.warnings
        _profile_csv(run, "profile.csv", ts.selection)
    io.write_weighted_csv(run.path("weighted_draws.csv"), ts.weighted)
    run.outputs.append("weighted_draws.csv.json")
    if args.resample:
        io.write_draws_csv(run.path("resampled.csv"), resample(ts.weighted, args.resample, args.seed))
    return out, "tilt.json"


def cmd_select_nu(args, run: Run):
    post = io.read_draws_csv(run.input(args.posterior), Provenance.BASE_POSTERIOR)
    prior = io.read_draws_csv(run.input(args.prior), Provenance.PRIOR)
    P = _projection(args, post.p, run)
    pw = WeightedDraws(post, compute_log_w1(post, P), 1.0)
    qw = WeightedDraws(prior, compute_log_w1(prior, P), 1.0)
    sel = select_nu(pw, qw, _nu_bounds(args), args.tolerance, args.min_ess_fraction or None)
    ess_star = float(np.exp(log_ess(sel.nu_star * pw.log_w1)))
    _check_ess(run, ess_star, post.K, "tilted posterior")
    _profile_csv(run, "profile.csv", sel)
    return {
        "nu_star": sel.nu_star,
        "bf": sel.bf_at_star.value,
        "bf_mc_se": sel.bf_at_star.mc_se,
        "log_bf": sel.bf_at_star.log_value,
        "ess_at_star": ess_star,
        "profile": [{"nu": v, "log_bf": lb} for v, lb in sel.log_profile],
        "selection_notes": sel.warnings,
    }, "select_nu.json"


def cmd_gibbs(args, run: Run):
    if args.nu < 0:
        raise UsageError("--nu must be nonnegative")
    if args.draws < 1:
        raise UsageError("--draws must be positive")
    prior = io.read_draws_csv(run.input(args.prior), Provenance.PRIOR)
    if args.mode == "discrete":
        if not args.posterior:
            raise UsageError("--mode discrete needs --posterior")
        post = io.read_draws_csv(run.input(args.posterior), Provenance.BASE_POSTERIOR)
        fam = _family(args, post.p, run).discrete()
        tr = gibbs_discrete(post, prior, fam, args.nu, args.draws, args.init_phi, args.seed, burn_in=args.burn_in)
        p = post.p
    else:
        if not args.gaussian:
            raise UsageError("--mode gaussian needs --gaussian")
        g = GaussianApprox.from_json(open(run.input(args.gaussian)).read())
        fam = _family(args, g.p, run)
        sur = zhat_spline_fit(fam, prior, args.nu, args.grid_size)
        tr = gibbs_gaussian(g, fam, args.nu, sur, args.draws, args.init_phi, args.seed, burn_in=args.burn_in)
        p = g.p
    kept = tr.kept()
    cols = tr.columns or tuple(f"theta_{j + 1}" for j in range(p))
    M = np.column_stack([tr.theta_draws, tr.phi_draws, np.arange(1, len(tr) + 1)])
    io.write_matrix_csv(run.path("trace.csv"), M, [*cols, "phi", "iteration"])
    _check_ess(run, float(np.min(kept.ess_per_coordinate())), len(kept), "chain")
    return {
        "mode": args.mode,
        "nu": tr.nu,
        "K_nu": len(tr),
        "burn_in": tr.burn_in,
        "accept_rate": tr.accept_rate,
        "ess_per_coordinate": dict(zip(cols, kept.ess_per_coordinate().tolist())),
        **_phi_report(fam, kept.phi_draws),
        "summary": summarize(kept.draws(), 1.0 - args.alpha).to_dict(),
    }, "gibbs.json"


def _phi_report(fam, phi: np.ndarray) -> dict:
    if fam.is_discrete:
        vals, counts = np.unique(phi, return_counts=True)
        n = counts.sum()
        return {"phi_posterior_table": [{"phi": v, "mass": c / n} for v, c in zip(vals.tolist(), counts.tolist())]}
    q = np.quantile(phi, [0.025, 0.25, 0.5, 0.75, 0.975])
    return {
        "phi_posterior_summary": {
            "mean": float(phi.mean()),
            "sd": float(phi.std()),
            "quantiles": dict(zip(["0.025", "0.25", "0.5", "0.75", "0.975"], q.tolist())),
        }
    }


def cmd_gaussian_tilt(args, run: Run):
    g = GaussianApprox.from_json(open(run.input(args.gaussian)).read())
    if args.nu < 0:
        raise UsageError("--nu must be nonnegative")
    P = _projection(args, g.p, run)
    gt = tilt_gaussian(g, P, args.nu)
    with open(run.path("tilted.json"), "w") as fh:
        fh.write(gt.to_json() + "\n")
    if args.samples:
        io.write_draws_csv(run.path("samples.csv"), sample_gaussian(gt, args.samples, args.seed, Provenance.TILTED_POSTERIOR))
    cov = gt.covariance()
    return {
        "nu": args.nu,
        "m": gt.m,
        "omega": gt.omega,
        "covariance": cov,
        "sd": np.sqrt(np.diag(cov)),
    }, "gaussian_tilt.json"


def cmd_zhat_fit(args, run: Run):
    if args.nu < 0:
        raise UsageError("--nu must be nonnegative")
    prior = io.read_draws_csv(run.input(args.prior), Provenance.PRIOR)
    fam = _family(args, prior.p, run)
    sur = zhat_spline_fit(fam, prior, args.nu, args.grid_size, args.spline_df)
    grid = sur.phi_grid
    M = np.column_stack([grid, sur.zhat_values, sur.predict(grid)])
    io.write_matrix_csv(run.path("zhat_grid.csv"), M, ["phi", "zhat", "fitted"])
    return sur.to_dict(), "zhat.json"


def cmd_simstudy(args, run: Run):
    scale = FULL_SCALE if args.full_scale else DESK_SCALE
    R = args.reps or scale["R"]
    K = args.draws or scale["K"]
    threads = _threads(args)
    if args.study == "anova":
        scenarios = ["homo", "mild", "strong"] if args.scenario == "all" else [args.scenario]
        results = [run_anova_study(s, R, K, args.seed, 1.0 - args.alpha, threads=threads) for s in scenarios]
    else:
        results = [run_ordinal_study(R, K, args.seed, 1.0 - args.alpha, threads=threads)]
    out = {"results": [r.to_dict() for r in results], "full_scale": bool(args.full_scale)}
    for r in results:
        tag = r.study + (f"_{r.scenario}" if r.scenario else "")
        rows = r.table_rows()
        with open(run.path(f"{tag}.csv"), "w") as fh:
            fh.write(",".join(rows[0]) + "\n")
            for row in rows[1:]:
                fh.write(",".join([row[0], *(format(v, ".17g") for v in row[1:])]) + "\n")
    return out, f"simstudy_{args.study}.json"


# ---------------------------------------------------------------------------
# parser and dispatch
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="subset-prior", description="Exponentially tilted priors toward linear subspaces.")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def nu_search(p):
        p.add_argument("--nu-min", type=float, default=0.0)
        p.add_argument("--nu-max", type=float, default=1e3)
        p.add_argument("--tolerance", type=float, default=1e-6)
        p.add_argument(
            "--min-ess-fraction", type=float, default=0.0,
            help="lower the upper nu bound so the posterior ESS stays above this fraction of K",
        )

    p = sub.add_parser("tilt", help="reweight base-posterior draws toward a subspace")
    _common(p)
    p.add_argument("--posterior", required=True)
    p.add_argument("--prior", required=True)
    _subspace_args(p)
    p.add_argument("--nu", type=float)
    p.add_argument("--select-nu", action="store_true")
    nu_search(p)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--probe", action="append", help="e.g. monotone:decreasing or monotone:increasing:0,2,3")
    p.add_argument("--resample", type=int, default=0, help="also write this many resampled draws")
    p.set_defaults(func=cmd_tilt)

    p = sub.add_parser("select-nu", help="Bayes-factor profile and the maximizing nu")
    _common(p)
    p.add_argument("--posterior", required=True)
    p.add_argument("--prior", required=True)
    _subspace_args(p)
    nu_search(p)
    p.set_defaults(func=cmd_select_nu)

    p = sub.add_parser("gibbs", help="MH-within-Gibbs over an unknown subspace parameter")
    _common(p)
    _subspace_args(p, with_phi=False)
    p.add_argument("--phi-prior", required=True, help="e.g. gamma:2,1:Q=15, beta:2,2, table:phi.csv")
    p.add_argument("--nu", type=float, required=True)
    p.add_argument("--draws", type=int, default=10_000)
    p.add_argument("--mode", choices=("discrete", "gaussian"), default="discrete")
    p.add_argument("--posterior")
    p.add_argument("--prior", required=True)
    p.add_argument("--gaussian", help="normal approximation JSON {m, omega} for --mode gaussian")
    p.add_argument("--grid-size", type=int, default=25)
    p.add_argument("--init-phi", type=float)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_gibbs)

    p = sub.add_parser("gaussian-tilt", help="exact tilt of a normal approximation")
    _common(p)
    p.add_argument("--gaussian", required=True)
    _subspace_args(p)
    p.add_argument("--nu", type=float, required=True)
    p.add_argument("--samples", type=int, default=0)
    p.set_defaults(func=cmd_gaussian_tilt)

    p = sub.add_parser("zhat-fit", help="spline surrogate for the normalizer over phi")
    _common(p)
    p.add_argument("--prior", required=True)
    _subspace_args(p, with_phi=False)
    p.add_argument("--phi-prior", required=True)
    p.add_argument("--nu", type=float, required=True)
    p.add_argument("--grid-size", type=int, default=25)
    p.add_argument("--spline-df", type=int, default=None, help="columns of the log Z spline")
    p.set_defaults(func=cmd_zhat_fit)

    p = sub.add_parser("simstudy", help="simulation studies at desk or full scale")
    _common(p)
    p.add_argument("study", choices=("anova", "ordinal"))
    p.add_argument("--scenario", choices=("homo", "mild", "strong", "all"), default="all")
    p.add_argument("--reps", type=int)
    p.add_argument("--draws", type=int)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--full-scale", action="store_true", help=f"R={FULL_SCALE['R']}, K={FULL_SCALE['K']}")
    p.set_defaults(func=cmd_simstudy)
    return ap


def _guess_out(argv) -> Path | None:
    for i, a in enumerate(argv):
        if a == "--out" and i + 1 < len(argv):
            return Path(argv[i + 1])
        if a.startswith("--out="):
            return Path(a.split("=", 1)[1])
    return None


def _write_manifest(run: Run | None, argv, out: Path | None, status: str, code: int, error=None):
    if out is None:
        return
    try:
        io.ensure_dir(out)
        man = {
            "argv": list(argv),
            "status": status,
            "exit_code": code,
            "versions": _versions(),
            "inputs": dict(sorted((run.inputs if run else {}).items())),
            "outputs": sorted(run.outputs) if run else [],
            "seed": run.seed if run else None,
            "warnings": run.warnings if run else [],
        }
        if error is not None:
            man["error"] = {"type": type(error).__name__, "message": str(error)}
        io.write_json(out / "manifest.json", man)
    except OSError as exc:
        print(f"error: could not write manifest: {exc}", file=sys.stderr)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    run = None
    out = _guess_out(argv)
    try:
        args = parser.parse_args(argv)
        out = Path(args.out)
        run = Run(argv, out)
        run.seed = args.seed
        if not 0 <= args.seed < 2**64:
            raise UsageError("--seed must fit in 64 bits")
        if hasattr(args, "alpha") and not 0 < args.alpha < 1:
            raise UsageError("--alpha must be in (0, 1)")
        io.ensure_dir(out)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", SubsetWarning)
            result, name = args.func(args, run)
        for w in caught:
            if issubclass(w.category, SubsetWarning):
                run.warn(f"{w.category.__name__}: {w.message}")
        result["warnings"] = list(run.warnings)
        io.write_json(run.path(name), result)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(str(exc), file=sys.stderr)
        _write_manifest(run, argv, out, "usage-error", EXIT_USAGE, exc)
        return EXIT_USAGE
    except SystemExit as exc:
        # --help and friends
        code = exc.code if isinstance(exc.code, int) else EXIT_USAGE
        if code:
            _write_manifest(run, argv, out, "usage-error", EXIT_USAGE)
        return EXIT_USAGE if code else EXIT_OK
    except InputFormatError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        _write_manifest(run, argv, out, "io-error", EXIT_IO, exc)
        return EXIT_IO
    except SubsetError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        _write_manifest(run, argv, out, "numeric-error", EXIT_NUMERIC, exc)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        _write_manifest(run, argv, out, "io-error", EXIT_IO, exc)
        return EXIT_IO
    _write_manifest(run, argv, out, "ok", EXIT_OK)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
