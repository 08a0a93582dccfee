"""Command-line entry point: ``tensorconc <command> ...``.

Exit codes: 0 success, 2 when a cell or check is flagged, 1 on usage errors.
Thread count comes from ``TENSORCONC_THREADS``.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from pathlib import Path

import numpy as np

from .complexity import complexity_profile
from .deviation import (DeviationProcess, increment_subgauss_check, sup_tail_check,
                        verify_symmetrization)
from .distributions import DistModel, SeedTrace, SpectrumSpec, materialize_spectrum, sample_isotropic
from .experiments import ExperimentConfig, emit_report, fit_curves, read_cells, simulate, summary_path
from .order_stats import verify_lemma
from .sphere_norm import Domain

EXIT_OK, EXIT_USAGE, EXIT_FLAGGED = 0, 1, 2

LEMMA_COLUMNS = ("n", "t", "q", "k", "trials", "fitted_C_head", "fitted_C_tail",
                 "exceed_head", "exceed_tail", "seed")
DEVIATION_COLUMNS = ("kind", "index", "u", "distance", "psi2", "ratio", "fitted_C",
                     "fitted_C_half1", "fitted_C_half2", "exceed_freq", "seed")
SYMMETRIZATION_COLUMNS = ("model", "d", "p", "N", "trials", "L", "R", "se", "holds", "seed")
COMPLEXITY_COLUMNS = ("spectrum_id", "d", "eff_rank", "radius", "gauss_complexity",
                      "gauss_complexity_se", "trace", "op_norm", "seed")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


def _write(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def cmd_simulate(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.master_seed = args.seed
    out = args.out or cfg.output_path
    res = simulate(cfg)
    csv_path, spath = emit_report(res.fits, out, res.flags)
    sys.stdout.write(spath.read_text())
    return EXIT_FLAGGED if res.flagged else EXIT_OK


def cmd_fit(args) -> int:
    cells = read_cells(args.input)
    fits = fit_curves(cells)
    _, spath = emit_report(fits, args.out)
    sys.stdout.write(spath.read_text())
    return EXIT_OK


def cmd_verify_lemma(args) -> int:
    seed = 0 if args.seed is None else args.seed
    rows, flagged = [], False
    for t in args.t:
        for q in args.q:
            r = verify_lemma(args.model, args.n, t, q, args.trials, seed)
            flagged |= (not r.resolved or r.head_stability > args.stability
                        or r.tail_stability > args.stability)
            rows.append(dict(n=r.n, t=float(r.t), q=float(r.q), k=r.k, trials=r.trials,
                             fitted_C_head=r.fitted_C_head, fitted_C_tail=r.fitted_C_tail,
                             exceed_head=r.exceed_freq_head, exceed_tail=r.exceed_freq_tail,
                             seed=seed))
    _write(_csv(LEMMA_COLUMNS, rows), args.out)
    return EXIT_FLAGGED if flagged else EXIT_OK


def cmd_verify_deviation(args) -> int:
    seed = 0 if args.seed is None else args.seed
    batch = sample_isotropic(args.model, args.d, args.N, SeedTrace(seed, 0, "deviation/base"))
    proc = DeviationProcess.build(args.model, batch, args.p_dev)
    rows, flagged = [], False
    if args.pairs > 0:
        inc = increment_subgauss_check(proc, args.pairs, args.resample_trials, seed)
        flagged |= not inc.bounded
        for j in range(inc.ratios.size):
            rows.append(dict(kind="pair", index=j, distance=float(inc.distances[j]),
                             psi2=float(inc.psi2[j]), ratio=float(inc.ratios[j]), seed=seed))
    if args.trials > 0:
        tail = sup_tail_check(proc, Domain.sphere(args.d), tuple(args.u), args.trials, seed,
                              resolution=args.resolution)
        flagged |= tail.flagged or any(s > args.stability for s in tail.stability)
        for j, u in enumerate(tail.u_grid):
            rows.append(dict(kind="u", index=j, u=u, fitted_C=tail.fitted_C[j],
                             fitted_C_half1=tail.halves_C[j][0], fitted_C_half2=tail.halves_C[j][1],
                             exceed_freq=tail.exceed_freq[j], seed=seed))
    _write(_csv(DEVIATION_COLUMNS, rows), args.out)
    return EXIT_FLAGGED if flagged else EXIT_OK


def cmd_verify_symmetrization(args) -> int:
    seed = 0 if args.seed is None else args.seed
    spec = SpectrumSpec.parse(args.spectrum, args.d)
    rows, flagged = [], False
    for model in args.model:
        for p in args.p:
            r = verify_symmetrization(model, spec, args.T, p, args.N, args.trials, seed,
                                      resolution=args.resolution)
            flagged |= not r.holds
            rows.append(dict(model=r.model, d=args.d, p=p, N=r.N, trials=r.trials, L=r.L,
                             R=r.R, se=r.se, holds=r.holds, seed=seed))
    _write(_csv(SYMMETRIZATION_COLUMNS, rows), args.out)
    return EXIT_FLAGGED if flagged else EXIT_OK


def cmd_complexity(args) -> int:
    seed = 0 if args.seed is None else args.seed
    spec = SpectrumSpec.parse(args.spectrum, args.d)
    prof = complexity_profile(spec, args.trials, seed)
    row = dict(spectrum_id=spec.label, d=args.d, eff_rank=prof.eff_rank, radius=prof.radius,
               gauss_complexity=prof.gauss_complexity, gauss_complexity_se=prof.gauss_complexity_se,
               trace=prof.trace, op_norm=prof.op_norm, seed=seed)
    _write(_csv(COMPLEXITY_COLUMNS, [row]), args.out)
    return EXIT_OK


def _model(text: str) -> str:
    try:
        return DistModel.parse(text).value
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    common.add_argument("--out", default=None, help="output CSV path (stdout if omitted)")

    ap = _Parser(prog="tensorconc", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", parents=[common], help="run a config grid")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", parents=[common], help="refit rates from a cell CSV")
    s.add_argument("--input", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("verify-lemma", parents=[common], help="order-statistics constants")
    s.add_argument("--model", type=_model, default="gaussian")
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--t", type=float, action="append")
    s.add_argument("--q", type=float, action="append")
    s.add_argument("--trials", type=int, default=100_000)
    s.add_argument("--stability", type=float, default=0.25)
    s.set_defaults(func=cmd_verify_lemma)

    s = sub.add_parser("verify-deviation", parents=[common], help="deviation-process increments and sup tail")
    s.add_argument("--model", type=_model, default="gaussian")
    s.add_argument("--d", type=int, default=2)
    s.add_argument("--N", type=int, default=100)
    s.add_argument("--p-dev", type=float, default=4.0)
    s.add_argument("--pairs", type=int, default=50)
    s.add_argument("--resample-trials", type=int, default=2000)
    s.add_argument("--u", type=float, action="append")
    s.add_argument("--trials", type=int, default=10_000)
    s.add_argument("--resolution", type=int, default=2000)
    s.add_argument("--stability", type=float, default=0.30)
    s.set_defaults(func=cmd_verify_deviation)

    s = sub.add_parser("verify-symmetrization", parents=[common], help="L <= 2R check")
    s.add_argument("--model", type=_model, action="append")
    s.add_argument("--spectrum", default="identity")
    s.add_argument("--d", type=int, default=2)
    s.add_argument("--T", choices=("sphere", "ellipsoid"), default="sphere")
    s.add_argument("--p", type=int, action="append")
    s.add_argument("--N", type=int, default=50)
    s.add_argument("--trials", type=int, default=2000)
    s.add_argument("--resolution", type=int, default=1024)
    s.set_defaults(func=cmd_verify_symmetrization)

    s = sub.add_parser("complexity", parents=[common], help="effective rank, radius, gamma")
    s.add_argument("--spectrum", required=True)
    s.add_argument("--d", type=int, required=True)
    s.add_argument("--trials", type=int, default=100_000)
    s.set_defaults(func=cmd_complexity)
    return ap


_LIST_DEFAULTS = {"t": [3.0, 5.0, 8.0], "q": [2.0, 4.0], "u": [1.0, 2.0, 3.0],
                  "model": ["gaussian"], "p": [2, 4]}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for k, v in _LIST_DEFAULTS.items():
        if hasattr(args, k) and getattr(args, k) is None:
            setattr(args, k, v)
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        print(f"tensorconc: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
