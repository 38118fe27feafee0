"""``fioinv`` command line: factor | solve | bench | reproduce.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

import argparse
import sys

import numpy as np

from .bench import (TABLES, BenchConfig, cmd_bench, cmd_factor, cmd_reproduce, cmd_solve,
                    records_to_csv, records_to_json, scaling_series_csv)
from .errors import FioInvError, InvalidInputError, NotPositiveDefiniteError, StageError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _add_common(p):
    p.add_argument("--problem", choices=("uniform1d", "gauss1d", "ellipse2d"), default="uniform1d")
    p.add_argument("--n", type=int, default=1024, help="points per dimension")
    p.add_argument("--sigma2", type=float, help="Gaussian variance (gauss1d)")
    p.add_argument("--eps-bff", type=float, help="butterfly tolerance (default 1e-7 1-D, 1e-4 2-D)")
    p.add_argument("--eps-peel", type=float, default=1e-6, help="peeling tolerance (epsilon)")
    p.add_argument("--eps-hif", type=float, help="inversion tolerance (default: --eps-peel)")
    p.add_argument("--rank", type=int, help="peeling rank k")
    p.add_argument("--oversample", type=int, help="peeling oversampling c")
    p.add_argument("--leaf-size", type=int, help="points per hierarchical leaf")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--solve-tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=5000)
    p.add_argument("--precond", choices=("inverse", "adjoint"), default="inverse")
    p.add_argument("--output", choices=("json", "csv"), default="json")
    p.add_argument("--dense-check", action="store_true",
                   help="estimate e_a and e_s with dense products (N <= 4096)")
    p.add_argument("--out", help="write records here instead of stdout")


def build_parser():
    parser = argparse.ArgumentParser(prog="fioinv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("factor", help="build the inverse factorization")
    _add_common(p)
    p.add_argument("--save", help="write the factorization to this container file")

    p = sub.add_parser("solve", help="solve K f = u with CG")
    _add_common(p)
    p.add_argument("--load", help="read a factorization saved with 'factor --save'")
    p.add_argument("--rhs", default="random", help="'random' or a .npy file holding u")

    p = sub.add_parser("bench", help="scaling sweep over sizes")
    _add_common(p)
    p.add_argument("--ns", type=int, nargs="+", required=True, help="points per dimension")
    p.add_argument("--series", help="write the (N, time) series CSV here")

    p = sub.add_parser("reproduce", help="rerun a results table")
    _add_common(p)
    p.add_argument("table", choices=sorted(TABLES))
    p.add_argument("--max-n", type=int, default=4096, help="largest total size N to run")
    return parser


def _config(args):
    return BenchConfig(problem=args.problem, n=args.n, sigma2=args.sigma2, eps_bff=args.eps_bff,
                       eps_peel=args.eps_peel, eps_hif=args.eps_hif, rank=args.rank,
                       oversample=args.oversample, leaf_size=args.leaf_size, seed=args.seed,
                       solve_tol=args.solve_tol, max_iter=args.max_iter, precond=args.precond,
                       output=args.output, dense_check=args.dense_check)


def _emit(records, args):
    text = records_to_json(records) if args.output == "json" else records_to_csv(records)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _progress(rec):
    print(f"# {rec.problem} N={rec.N} eps={rec.eps_peel:g} build={rec.t_build:.2f}s "
          f"n_i={rec.n_i} n_i_adjoint={rec.n_i_adjoint}", file=sys.stderr, flush=True)


def _run(args):
    cfg = _config(args)
    if args.command == "factor":
        rec, _ = cmd_factor(cfg.validate(), save=args.save)
        _emit([rec], args)
    elif args.command == "solve":
        rhs = None
        if args.rhs != "random":
            try:
                rhs = np.load(args.rhs)
            except OSError as exc:
                raise InvalidInputError(f"cannot read right-hand side {args.rhs!r}: {exc}") from None
        rec, _ = cmd_solve(cfg.validate(), load=args.load, rhs=rhs)
        _emit([rec], args)
    elif args.command == "bench":
        cfg.validate()
        recs, slopes = cmd_bench(cfg, args.ns,
                                 progress=lambda r: print(f"# N={r.N} build={r.t_build:.2f}s",
                                                          file=sys.stderr, flush=True))
        for k, v in slopes.items():
            print(f"# slope {k} {v:.3f}", file=sys.stderr)
        if args.series:
            with open(args.series, "w") as fh:
                fh.write(scaling_series_csv(recs))
        _emit(recs, args)
    else:
        recs = cmd_reproduce(args.table, args.max_n, base=cfg, progress=_progress)
        _emit(recs, args)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)   # usage errors exit with 2
    try:
        _run(args)
    except (NotPositiveDefiniteError, StageError) as exc:
        if isinstance(exc, StageError) and isinstance(exc.cause, InvalidInputError):
            print(f"fioinv: configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"fioinv: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except InvalidInputError as exc:
        print(f"fioinv: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FioInvError as exc:
        print(f"fioinv: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
