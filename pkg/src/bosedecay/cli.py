"""``bosedecay`` command line.

Exit codes: 0 success, 2 invalid input or missing upstream stage, 3 numerical
failure, 4 no decay certificate. ``BOSEDECAY_NUM_THREADS`` caps the BLAS
thread pool.
"""

import argparse
import json
import logging
import os
import sys

from threadpoolctl import threadpool_limits

from . import __version__
from .config import ConfigError, load, load_shipped, validate
from .pipeline import (
    MissingArtifact,
    Run,
    StageError,
    run_pipeline,
    write_assembly,
    write_certificate,
    write_coulomb_split,
    write_decay,
    write_ground_state,
    write_hartree,
    write_lemmas,
)

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_NO_CERT = 0, 2, 3, 4
THREADS_ENV = "BOSEDECAY_NUM_THREADS"

log = logging.getLogger("bosedecay")


def _csv_list(cast):
    def parse(text):
        try:
            return [cast(t) for t in text.split(",") if t.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def _common(p):
    p.add_argument("--config", help="JSON run config (default: the shipped toy_torus.json)")
    p.add_argument("--output-dir", help="overrides output_dir")
    p.add_argument("--no-cache", action="store_true", help="ignore cached stage results")
    p.add_argument("--N", type=int, help="many_body.N")
    p.add_argument("--M", type=int, help="many_body.M")
    p.add_argument("--m", type=int, help="many_body.m")
    p.add_argument("--variant", choices=["full", "bogoliubov"], help="many_body.variant")
    p.add_argument("--tol", type=float, help="solve.tol")
    p.add_argument("--seed", type=int, help="solve.seed (lemmas: sampling seed)")
    p.add_argument("--max-iter", type=int, help="solve.max_iter")


def build_parser():
    ap = argparse.ArgumentParser(prog="bosedecay", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"bosedecay {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="every stage in order, then the manifest")
    _common(p)

    p = sub.add_parser("hartree", help="mean-field minimizer and excitation modes")
    _common(p)
    p.add_argument("--hartree-tol", type=float, help="hartree.tol")
    p.add_argument("--modes", type=int, help="number of excitation modes (many_body.m)")

    p = sub.add_parser("assemble", help="sparse excitation Hamiltonian and sector table")
    _common(p)
    p.add_argument("--export", action="store_true", help="also write the operator in COO text form")

    p = sub.add_parser("solve", help="ground state by Lanczos")
    _common(p)

    p = sub.add_parser("decay", help="P(l), fit, stability and tail reports")
    _common(p)
    p.add_argument("--parity", choices=["even", "odd", "all"])
    p.add_argument("--fit-range", type=_csv_list(int), help="lo,hi")

    p = sub.add_parser("certify", help="windowed-difference certificate")
    _common(p)
    p.add_argument("--source", choices=["oracle", "full"])
    p.add_argument("--L-max", type=int, dest="L_max")

    p = sub.add_parser("lemmas", help="randomized operator-inequality checks")
    _common(p)
    p.add_argument("--which", type=_csv_list(str), help="comma list of k1,k2,k3,k4,k2c,gap")
    p.add_argument("--samples", type=int)

    p = sub.add_parser("coulomb-split", help="delta(kappa) table of the Coulomb splitting")
    p.add_argument("--kappa", type=_csv_list(float), default=[1.0, 0.5, 0.25, 0.125])
    p.add_argument("--lambda", type=float, dest="lam", default=1.0)
    p.add_argument("--n", type=int, default=512, help="radial grid points")
    p.add_argument("--output-dir", default=".")
    return ap


def _config(args):
    cfg = load(args.config) if args.config else load_shipped()
    doc = json.loads(json.dumps(cfg))
    mb, sv = doc["many_body"], doc["solve"]
    for key in ("N", "M", "m", "variant"):
        if getattr(args, key, None) is not None:
            mb[key] = getattr(args, key)
    if getattr(args, "modes", None) is not None:
        mb["m"] = args.modes
    if getattr(args, "hartree_tol", None) is not None:
        doc["hartree"]["tol"] = args.hartree_tol
    for key, attr in (("tol", "tol"), ("max_iter", "max_iter")):
        if getattr(args, attr, None) is not None:
            sv[key] = getattr(args, attr)
    if args.seed is not None:
        if args.command == "lemmas":
            doc["analyses"]["lemmas"]["seed"] = args.seed
        else:
            sv["seed"] = args.seed
    if args.output_dir:
        doc["output_dir"] = args.output_dir
    return validate(doc)


def _emit(doc):
    print(json.dumps(doc, indent=2, sort_keys=True, default=str))


def _dispatch(args):
    if args.command == "coulomb-split":
        os.makedirs(args.output_dir, exist_ok=True)
        path, rows = write_coulomb_split(args.output_dir, args.lam, args.kappa, args.n)
        print("kappa,delta")
        for k, d, _ in rows:
            print(f"{k:.12g},{d:.12g}")
        return EXIT_OK

    cfg = _config(args)
    if args.command == "run":
        m = run_pipeline(cfg, use_cache=not args.no_cache)
        _emit(m.summary)
        return EXIT_OK

    run = Run(cfg, use_cache=not args.no_cache)
    try:
        if args.command == "hartree":
            _emit(run.stage("hartree", write_hartree, run))
        elif args.command == "assemble":
            run.hartree(require_cached=True)
            _emit(run.stage("assemble", write_assembly, run, export=args.export))
        elif args.command == "solve":
            run.hartree(require_cached=True)
            gs = run.stage("solve", write_ground_state, run)
            _emit({"energy": gs.energy, "residual": gs.residual, "iterations": gs.meta.get("iterations")})
        elif args.command == "decay":
            run.hartree(require_cached=True)
            _emit(run.stage("decay", write_decay, run, require_cached=True, parity=args.parity,
                            fit_range=args.fit_range))
        elif args.command == "certify":
            run.hartree(require_cached=True)
            cert, doc = run.stage("certify", write_certificate, run, source=args.source, L_max=args.L_max,
                                  require_cached=True)
            _emit(doc)
            if cert is None:
                return EXIT_NO_CERT
        elif args.command == "lemmas":
            if args.which is None or set(args.which) != {"k2c"}:
                run.hartree(require_cached=True)
            reps = run.stage("lemmas", write_lemmas, run, which=args.which, samples=args.samples)
            _emit({k: {"violations": r.violations, "samples": r.samples, "constant": r.empirical_constant}
                   for k, r in reps.items()})
            if any(r.violations for r in reps.values()):
                return EXIT_NUMERIC
    finally:
        run.finish()
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get(THREADS_ENV)
    try:
        limit = int(threads) if threads else None
    except ValueError:
        print(f"error: {THREADS_ENV} must be an integer, got {threads!r}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        with threadpool_limits(limits=limit):
            return _dispatch(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except MissingArtifact as exc:
        print(f"error: {exc}; run `bosedecay {exc.stage}` with the same config", file=sys.stderr)
        return EXIT_VALIDATION
    except StageError as exc:
        code = EXIT_VALIDATION if isinstance(exc.cause, (ValueError, TypeError)) and not isinstance(
            exc.cause, ArithmeticError) else EXIT_NUMERIC
        print(f"error: {exc}", file=sys.stderr)
        return code
    except (ArithmeticError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
