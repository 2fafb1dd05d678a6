"""``pacecurve`` command line.

Exit codes: 0 success, 1 usage/config, 2 ingest, 3 fit, 4 decode.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import re
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .errors import (
    FitFailed,
    FpcaError,
    HmmError,
    IngestError,
    BasisError,
    SpecError,
    UnknownCovariateLevel,
)
from .fbasis import DEFAULT_ORDER
from .fpca import DEFAULT_N_PC, FpcaModel, eigenfunction_curve, variance_report
from .hmm import EmConfig, HmmModel, decode, design_for_distance, em_fit, select_states
from .ingest import parse_race_csv
from .pipeline import corpus_sequences, fit_corpus_fpca
from .synth import GeneratorSpec, atomic_write, default_spec, generate_dataset

log = logging.getLogger("pacecurve")

EXIT_OK, EXIT_USAGE, EXIT_INGEST, EXIT_FIT, EXIT_DECODE = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _parse_range(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"\s*(\d+)\s*(?:\.\.|-|:)\s*(\d+)\s*", text)
    if not m:
        raise argparse.ArgumentTypeError(f"expected a range like 2..7, got {text!r}")
    lo, hi = int(m.group(1)), int(m.group(2))
    if hi < lo:
        raise argparse.ArgumentTypeError(f"empty range {text!r}")
    return lo, hi


def _read_corpus(path: Path, distance: Optional[int] = None):
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CommandError(EXIT_INGEST, f"cannot read {path}: {exc}") from None
    try:
        records = parse_race_csv(data)
    except IngestError as exc:
        raise CommandError(EXIT_INGEST, f"{type(exc).__name__}: {exc}") from None
    if distance is not None:
        records = [r for r in records if r.distance_m == distance]
        if not records:
            raise CommandError(EXIT_INGEST, f"no {distance} m races in {path}")
    return records


def _require_seed(args):
    if args.seed is None:
        raise UsageError(f"{args.command} is stochastic and needs --seed")


def _load_json(path: Path, what: str) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot load {what} {path}: {exc}") from None


def _eigenfunction_csv(model: FpcaModel, step_m: float = 1.0) -> str:
    xs = np.arange(0.0, model.basis.domain_m + step_m / 2, step_m)
    cols = [eigenfunction_curve(model, j, xs) for j in range(1, model.n_pc + 1)]
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["x"] + [f"phi{j}" for j in range(1, model.n_pc + 1)])
    for i, x in enumerate(xs):
        w.writerow([f"{x:g}"] + [repr(float(c[i])) for c in cols])
    return out.getvalue()


def _variance_table(model: FpcaModel) -> str:
    lines = ["pc  fraction  cumulative"]
    for j, frac, cum in variance_report(model):
        lines.append(f"{j:>2}  {frac:8.4f}  {cum:10.4f}")
    return "\n".join(lines)


# -- commands ------------------------------------------------------------------

def cmd_fit_fpca(args) -> int:
    records = _read_corpus(args.input, args.distance)
    try:
        model, _ = fit_corpus_fpca(records, n_pc=args.n_pc, n_basis=args.basis_size, order=args.order)
    except ValueError as exc:
        raise CommandError(EXIT_INGEST, str(exc)) from None
    except (FpcaError, BasisError) as exc:
        raise CommandError(EXIT_FIT, f"{type(exc).__name__}: {exc}") from None
    out = args.out
    atomic_write(out / "fpca_model.json", _dump_json(model.to_dict()))
    atomic_write(out / "eigenfunctions.csv", _eigenfunction_csv(model))
    rows = "".join(f"{j},{f!r},{c!r}\n" for j, f, c in variance_report(model))
    atomic_write(out / "variance.csv", "pc,fraction,cumulative\n" + rows)
    print(_variance_table(model))
    return EXIT_OK


def cmd_export_plot(args) -> int:
    model = FpcaModel.from_dict(_load_json(args.model, "fPCA model"))
    text = _eigenfunction_csv(model, args.step)
    if args.out is None:
        sys.stdout.write(text)
    else:
        atomic_write(args.out, text)
    return EXIT_OK


def _fit_inputs(args):
    fpca = FpcaModel.from_dict(_load_json(args.model, "fPCA model"))
    records = _read_corpus(args.input, int(fpca.basis.domain_m))
    design = design_for_distance(int(fpca.basis.domain_m))
    try:
        seqs = corpus_sequences(records, fpca, design)
    except UnknownCovariateLevel as exc:
        raise CommandError(EXIT_FIT, str(exc)) from None
    return fpca, design, seqs


def _em_config(args) -> EmConfig:
    return EmConfig(restarts=args.restarts, covariance_type="diag" if args.diag else "full",
                    max_iter=args.max_iter)


def _sweep_csv(sweep) -> str:
    lines = ["n_states,log_likelihood,aic,n_params,error"]
    for r in sweep.rows:
        ll = "" if r.log_likelihood is None else repr(r.log_likelihood)
        a = "" if r.aic is None else repr(r.aic)
        lines.append(f"{r.n_states},{ll},{a},{r.n_params},{r.error or ''}")
    return "\n".join(lines) + "\n"


def _print_sweep(sweep):
    print("states  logL          AIC")
    for r in sweep.rows:
        if r.aic is None:
            print(f"{r.n_states:>6}  failed: {r.error}")
        else:
            print(f"{r.n_states:>6}  {r.log_likelihood:12.3f}  {r.aic:12.3f}")
    print(f"chosen: {sweep.chosen}")


def _run_sweep(args, design, seqs):
    lo, hi = args.sweep
    try:
        sweep = select_states(seqs, lo, hi, design, restarts=args.restarts, seed=args.seed, config=_em_config(args))
    except (ValueError, FitFailed, HmmError) as exc:
        raise CommandError(EXIT_FIT, f"{type(exc).__name__}: {exc}") from None
    atomic_write(args.out / "aic_sweep.csv", _sweep_csv(sweep))
    _print_sweep(sweep)
    return sweep


def _write_hmm(out: Path, fpca: FpcaModel, model: HmmModel, report):
    d = model.to_dict()
    d["fpca"] = fpca.to_dict()
    atomic_write(out / "hmm_model.json", _dump_json(d))
    atomic_write(out / "fit_report.json", _dump_json(report.to_dict()))


def cmd_fit_hmm(args) -> int:
    _require_seed(args)
    fpca, design, seqs = _fit_inputs(args)
    if args.sweep is not None:
        sweep = _run_sweep(args, design, seqs)
        model, report = sweep.models[sweep.chosen], sweep.reports[sweep.chosen]
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                model, report = em_fit(seqs, args.states, design, _em_config(args), seed=args.seed)
            except (FitFailed, HmmError, ValueError) as exc:
                raise CommandError(EXIT_FIT, f"{type(exc).__name__}: {exc}") from None
    for f in report.failures:
        log.warning("restart failure: %s", f)
    _write_hmm(args.out, fpca, model, report)
    print(f"states={model.n_states} logL={report.log_likelihood:.4f} AIC={report.aic:.4f} "
          f"k={report.n_params} iterations={report.iterations}")
    return EXIT_OK


def cmd_select_states(args) -> int:
    _require_seed(args)
    if args.sweep is None:
        raise UsageError("select-states needs --sweep n_min..n_max")
    _, design, seqs = _fit_inputs(args)
    _run_sweep(args, design, seqs)
    return EXIT_OK


def cmd_decode(args) -> int:
    d = _load_json(args.model, "HMM model")
    if "fpca" not in d:
        raise UsageError(f"{args.model} has no embedded fPCA model; use the output of fit-hmm")
    fpca = FpcaModel.from_dict(d["fpca"])
    hmm = HmmModel.from_dict(d)
    records = _read_corpus(args.input, int(fpca.basis.domain_m))
    try:
        seqs = corpus_sequences(records, fpca, hmm.design)
    except UnknownCovariateLevel as exc:
        raise CommandError(EXIT_DECODE, f"unknown covariate level {exc.level} for design {exc.design}") from None

    n = hmm.n_states
    rows = io.StringIO()
    w = csv.writer(rows, lineterminator="\n")
    w.writerow(["athlete_id", "race_date", "race_index", "state_viterbi"] + [f"p_state_{j}" for j in range(1, n + 1)])
    plot = io.StringIO()
    pw = csv.writer(plot, lineterminator="\n")
    pw.writerow(["athlete_id", "race_index", "race_date", "state"])
    for seq in seqs:
        dec = decode(hmm, seq)
        for t in range(len(seq)):
            date = seq.race_dates[t].isoformat()
            w.writerow([seq.athlete_id, date, t + 1, int(dec.viterbi_path[t])]
                       + [repr(float(p)) for p in dec.posteriors[t]])
            pw.writerow([seq.athlete_id, t + 1, date, int(dec.viterbi_path[t])])
    atomic_write(args.out / "decode.csv", rows.getvalue())
    if args.plot_data:
        atomic_write(args.out / "state_path.csv", plot.getvalue())
    print(f"decoded {sum(len(s) for s in seqs)} races for {len(seqs)} athletes")
    return EXIT_OK


def cmd_simulate(args) -> int:
    _require_seed(args)
    if args.input is not None:
        try:
            spec = GeneratorSpec.from_dict(_load_json(args.input, "generator spec"))
        except SpecError as exc:
            raise UsageError(f"invalid spec: {exc}") from None
    else:
        spec = default_spec(args.distance)
    from dataclasses import replace

    spec = replace(spec, seed=args.seed)
    races = args.races if args.races[0] != args.races[1] else args.races[0]
    ds = generate_dataset(spec, args.athletes, races)
    ds.write(args.out / "corpus.csv", args.out / "truth.json")
    print(f"wrote {len(ds.records)} races for {len(ds.careers)} athletes to {args.out}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def _races_arg(text: str) -> tuple[int, int]:
    if re.fullmatch(r"\s*\d+\s*", text):
        n = int(text)
        return n, n
    return _parse_range(text)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pacecurve", description="Pacing-profile fPCA and career HMMs.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, model=False, model_required=False):
        sp.add_argument("--input", type=Path, required=True, help="race CSV")
        if model:
            sp.add_argument("--model", type=Path, required=model_required)
        sp.add_argument("--out", type=Path, required=True, help="output directory")

    sp = sub.add_parser("fit-fpca", help="fit functional PCs to a race corpus")
    common(sp)
    sp.add_argument("--n-pc", type=int, default=DEFAULT_N_PC)
    sp.add_argument("--basis-size", type=int, default=None)
    sp.add_argument("--order", type=int, default=DEFAULT_ORDER)
    sp.add_argument("--distance", type=int, choices=(500, 1000), default=None)
    sp.add_argument("--seed", type=int, default=None, help="accepted for uniformity; the fit is deterministic")
    sp.set_defaults(func=cmd_fit_fpca)

    for name, func, helptext in (
        ("fit-hmm", cmd_fit_hmm, "fit the career HMM on PC scores"),
        ("select-states", cmd_select_states, "AIC sweep over the number of states"),
    ):
        sp = sub.add_parser(name, help=helptext)
        common(sp, model=True, model_required=True)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--states", type=int, default=4)
        sp.add_argument("--sweep", type=_parse_range, default=None, metavar="N_MIN..N_MAX")
        sp.add_argument("--restarts", type=int, default=5)
        sp.add_argument("--max-iter", type=int, default=500)
        sp.add_argument("--diag", action="store_true", help="diagonal emission covariances")
        sp.set_defaults(func=func)

    sp = sub.add_parser("decode", help="per-race state posteriors and Viterbi paths")
    common(sp, model=True, model_required=True)
    sp.add_argument("--plot-data", action="store_true")
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("simulate", help="generate a synthetic corpus and its truth file")
    sp.add_argument("--input", type=Path, default=None, help="generator spec JSON (default: built-in)")
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--distance", type=int, choices=(500, 1000), default=500)
    sp.add_argument("--athletes", type=int, default=70)
    sp.add_argument("--races", type=_races_arg, default=(10, 10), metavar="N or LO..HI")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("export-plot", help="eigenfunctions on a 1 m grid as CSV")
    sp.add_argument("--model", type=Path, required=True)
    sp.add_argument("--out", type=Path, default=None)
    sp.add_argument("--step", type=float, default=1.0)
    sp.set_defaults(func=cmd_export_plot)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    level = os.environ.get("PACECURVE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"pacecurve: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CommandError as exc:
        print(f"pacecurve: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
