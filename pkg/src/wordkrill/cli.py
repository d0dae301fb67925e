"""Command-line front end: ingest, fit, uncertainty, simulate.

Exit codes: 0 success, 2 input error, 3 fit did not converge, 4 unreliable
inference. Every run writes ``run_manifest.json`` into its output location.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
from filelock import FileLock

from . import dfm as dfm_mod
from .estimation import FitResult, align, fit
from .inference import confidence_ellipses, fisher_ses, parametric_bootstrap
from .model import FitConfig, ModelParams
from .synth import SyntheticSpec, SyntheticSpecError, generate

log = logging.getLogger("wordkrill")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NOT_CONVERGED = 3
EXIT_UNRELIABLE = 4


class InputError(Exception):
    pass


def tool_version() -> str:
    from . import __version__

    return __version__


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_inputs(paths) -> dict[str, str]:
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for f in sorted(p.rglob("*")):
                if f.is_file():
                    out[str(f)] = _sha256(f)
        elif p.is_file():
            out[str(p)] = _sha256(p)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _write_manifest(out_dir: Path, command: str, args, inputs, seed, started: str) -> None:
    config = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "version": "wordkrill-manifest-v1",
        "command": command,
        "config": json.loads(json.dumps(config, default=str)),
        "input_hashes": _hash_inputs(inputs),
        "seed": seed,
        "tool_version": tool_version(),
        "started": started,
        "finished": _now(),
    }
    _write_json(out_dir / "run_manifest.json", manifest)


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_dfm(path, fmt) -> dfm_mod.DocumentFeatureMatrix:
    try:
        return dfm_mod.load_counts(path, fmt)
    except FileNotFoundError as exc:
        raise InputError(str(exc)) from exc
    except dfm_mod.DfmError as exc:
        raise InputError(str(exc)) from exc


# -- ingest -----------------------------------------------------------------


def cmd_ingest(args) -> int:
    started = _now()
    inp = Path(args.input)
    if not inp.exists():
        raise InputError(f"input not found: {inp}")
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    report_path = Path(args.report) if args.report else out_path.parent / "report.json"
    stopwords = dfm_mod.read_stopwords(args.stopwords) if args.stopwords else None
    spec = dfm_mod.PreprocessSpec(
        lowercase=args.lowercase,
        strip_punctuation=args.strip_punct,
        strip_numbers=args.strip_numbers,
        stopword_list=stopwords,
        min_doc_count=args.min_doc_count,
        min_total_count=args.min_total_count,
    )
    report = dfm_mod.PreprocessReport()
    inputs = [inp] + ([Path(args.stopwords)] if args.stopwords else [])
    with FileLock(str(out_path.parent / ".wordkrill.lock")):
        if args.format == "text":
            docs = dfm_mod.read_text_corpus(inp) if inp.is_dir() else _read_lines(inp)
            matrix = dfm_mod.tokenize_corpus(docs, spec, report)
        else:
            matrix = _reprocess_counts(_load_dfm(inp, args.format), spec, report)
        dfm_mod.save_counts(matrix, out_path, args.out_format)
        report_obj = {"version": "wordkrill-ingest-report-v1", **report.to_dict(), "spec": {
            "lowercase": spec.lowercase,
            "strip_punctuation": spec.strip_punctuation,
            "strip_numbers": spec.strip_numbers,
            "stopwords": len(stopwords) if stopwords else 0,
            "min_doc_count": spec.min_doc_count,
            "min_total_count": spec.min_total_count,
        }}
        _write_json(report_path, report_obj)
        _write_manifest(out_path.parent, "ingest", args, inputs, None, started)
    print(f"wrote {out_path} ({matrix.n_docs} documents x {matrix.n_features} features)")
    return EXIT_OK


def _reprocess_counts(loaded, spec, report):
    """Apply stopword and frequency stages to an already counted matrix."""
    if spec.stopword_list:
        keep = [j for j, f in enumerate(loaded.feature_ids) if f not in spec.stopword_list]
        report.dropped_features += [f for f in loaded.feature_ids if f in spec.stopword_list]
        rows = np.flatnonzero(loaded.counts[:, keep].getnnz(axis=1) > 0)
        if len(keep) < 2 or rows.size < 2:
            raise dfm_mod.DegenerateCorpusError("stopwords", rows.size, len(keep))
        emptied = sorted(set(loaded.doc_ids) - {loaded.doc_ids[i] for i in rows})
        if emptied:
            report.dropped_docs["stopwords"] = emptied
        loaded = loaded.select(rows, keep)
    before_f, before_d = loaded.feature_ids, set(loaded.doc_ids)
    try:
        matrix = loaded.trim(spec.min_doc_count, spec.min_total_count)
    except dfm_mod.DfmError:
        raise dfm_mod.DegenerateCorpusError("trim", loaded.n_docs, 0) from None
    kept = set(matrix.feature_ids)
    report.dropped_features += [f for f in before_f if f not in kept]
    dropped_docs = sorted(before_d - set(matrix.doc_ids))
    if dropped_docs:
        report.dropped_docs["trim"] = dropped_docs
    report.n_docs, report.n_features = matrix.shape
    return matrix


def _read_lines(path: Path):
    """One document per line as ``doc_id<TAB>text``."""
    docs = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise InputError(f"{path}:{n}: expected 'doc_id<TAB>text'")
        doc_id, text = line.split("\t", 1)
        docs.append((doc_id, text))
    return docs


# -- fit --------------------------------------------------------------------


def _parse_anchor(values) -> dict[int, tuple[str, str]]:
    anchor = {}
    for v in values or []:
        parts = v.split(":")
        if len(parts) != 3:
            raise InputError(f"anchor {v!r} must look like DIM:DOC_LOW:DOC_HIGH")
        dim = int(parts[0]) - 1
        anchor[dim] = (parts[1], parts[2])
    return anchor


def write_positions(path: Path, params: ModelParams) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["doc_id"] + [f"theta_{k + 1}" for k in range(params.k_dims)])
        for doc, row in zip(params.doc_ids, params.theta):
            w.writerow([doc] + [repr(float(x)) for x in row])


def write_features(path: Path, params: ModelParams) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature_id", "psi"] + [f"beta_{k + 1}" for k in range(params.k_dims)])
        for feat, psi, row in zip(params.feature_ids, params.psi, params.beta):
            w.writerow([feat, repr(float(psi))] + [repr(float(x)) for x in row])


def cmd_fit(args) -> int:
    started = _now()
    matrix = _load_dfm(args.dfm, args.dfm_format)
    if args.method == "conditional" and args.k != 1:
        raise InputError("--method conditional supports only --k 1")
    try:
        config = FitConfig(
            k_dims=args.k,
            sig_level=args.sig_level,
            epsilon_override=args.epsilon,
            max_iters=args.max_iters,
            grad_tol=args.tol,
            seed=args.seed,
            anchor=_parse_anchor(args.anchor),
            rotation=args.rotation,
        )
        config.check_matrix(matrix)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    out = _out_dir(args.out)
    with FileLock(str(out / ".wordkrill.lock")):
        result = fit(matrix, config, method=args.method)
        _write_json(out / "fit.json", result.to_dict())
        write_positions(out / "positions.csv", result.params)
        write_features(out / "features.csv", result.params)
        _write_manifest(out, "fit", args, [args.dfm], args.seed, started)
    print(
        f"{args.method} fit K={args.k}: converged={result.converged} "
        f"iterations={result.iterations} loglik={result.final_loglik:.4f}"
    )
    if not result.converged:
        print(f"warning: fit did not converge ({result.diagnostics.get('message')})", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


# -- uncertainty ------------------------------------------------------------


def _load_fit(path) -> FitResult:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"fit file not found: {path}")
    try:
        return FitResult.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (ValueError, KeyError) as exc:
        raise InputError(f"{path}: {exc}") from exc


def cmd_uncertainty(args) -> int:
    started = _now()
    fit_result = _load_fit(args.fit)
    matrix = _load_dfm(args.dfm, args.dfm_format)
    if fit_result.params.doc_ids != matrix.doc_ids or fit_result.params.feature_ids != matrix.feature_ids:
        raise InputError("fit.json labels do not match the document-feature matrix")
    sig = args.sig_level if args.sig_level is not None else fit_result.config.sig_level
    out = _out_dir(args.out)
    code = EXIT_OK
    with FileLock(str(out / ".wordkrill.lock")):
        if args.method == "fisher":
            report = fisher_ses(matrix, fit_result, sig)
            if report.singular:
                names = [matrix.doc_ids[i] for i in report.singular]
                print(f"warning: singular information, no standard errors for {names}", file=sys.stderr)
        else:
            report = parametric_bootstrap(matrix, fit_result, args.reps, seed=args.seed, sig_level=sig)
            if report.unreliable:
                print(
                    f"warning: {report.n_failed} of {args.reps} bootstrap replicates failed; "
                    "report marked unreliable",
                    file=sys.stderr,
                )
                code = EXIT_UNRELIABLE
        report.write_csv(out / "uncertainty.csv")
        _write_json(out / "uncertainty.json", report.to_dict())
        if report.k_dims == 2:
            _write_ellipses(out / "ellipses.csv", confidence_ellipses(report, 1.0 - sig))
        _write_manifest(out, "uncertainty", args, [args.fit, args.dfm], args.seed, started)
    print(f"{args.method} uncertainty written to {out}")
    return code


def _write_ellipses(path: Path, rows) -> None:
    cols = ["doc_id", "center_1", "center_2", "major", "minor", "angle"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r["doc_id"]] + ["" if not np.isfinite(r[c]) else repr(float(r[c])) for c in cols[1:]])


# -- simulate ---------------------------------------------------------------


def recovery_report(truth: ModelParams, result: FitResult) -> dict:
    """Per-dimension |r| between aligned estimates and truth."""
    aligned = align(truth.theta, result.params)
    per_dim = [
        abs(float(np.corrcoef(truth.theta[:, k], aligned.theta[:, k])[0, 1]))
        for k in range(truth.k_dims)
    ]
    return {
        "version": "wordkrill-recovery-v1",
        "converged": result.converged,
        "method": result.method,
        "abs_correlation": per_dim,
        "final_loglik": result.final_loglik,
    }


def cmd_simulate(args) -> int:
    started = _now()
    try:
        spec = SyntheticSpec(
            n_docs=args.docs,
            n_features=args.features,
            k_dims=args.k,
            alpha_sd=args.alpha_sd,
            psi_mean=args.psi_mean,
            psi_sd=args.psi_sd,
            beta_sd=args.beta_sd,
            seed=args.seed,
        )
        matrix, truth = generate(spec)
    except SyntheticSpecError as exc:
        raise InputError(str(exc)) from exc
    out = _out_dir(args.out)
    code = EXIT_OK
    with FileLock(str(out / ".wordkrill.lock")):
        dfm_mod.save_counts(matrix, out / "dfm.csv", "triplet")
        _write_json(out / "truth.json", {"version": "wordkrill-truth-v1", "spec": spec.to_dict(), "params": truth.to_dict()})
        if args.fit:
            method = args.method
            if method == "conditional" and args.k != 1:
                raise InputError("--method conditional supports only --k 1")
            result = fit(matrix, FitConfig(k_dims=args.k, seed=args.seed), method=method)
            _write_json(out / "fit.json", result.to_dict())
            report = recovery_report(truth, result)
            _write_json(out / "recovery_report.json", report)
            print("recovery |r| per dimension:", ", ".join(f"{r:.3f}" for r in report["abs_correlation"]))
            if not result.converged:
                code = EXIT_NOT_CONVERGED
        _write_manifest(out, "simulate", args, [], args.seed, started)
    print(f"simulated {matrix.n_docs} x {matrix.n_features} matrix in {out}")
    return code


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wordkrill", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    ing = sub.add_parser("ingest", help="build a document-feature matrix")
    ing.add_argument("--input", required=True, help="directory of .txt files, or a count file")
    ing.add_argument("--format", choices=["text", "triplet", "mtx"], default="text")
    ing.add_argument("--lowercase", action="store_true")
    ing.add_argument("--strip-punct", action="store_true")
    ing.add_argument("--strip-numbers", action="store_true")
    ing.add_argument("--stopwords", help="file of whitespace-separated stopwords")
    ing.add_argument("--min-doc-count", type=int, default=0)
    ing.add_argument("--min-total-count", type=int, default=0)
    ing.add_argument("--out", required=True)
    ing.add_argument("--out-format", choices=list(dfm_mod.FORMATS), default="triplet")
    ing.add_argument("--report", help="report path (default: report.json beside --out)")
    ing.set_defaults(func=cmd_ingest)

    ft = sub.add_parser("fit", help="estimate positions")
    ft.add_argument("--dfm", required=True)
    ft.add_argument("--dfm-format", choices=list(dfm_mod.FORMATS), default="triplet")
    ft.add_argument("--k", type=int, default=1)
    ft.add_argument("--method", choices=["joint", "conditional"], default="joint")
    ft.add_argument("--sig-level", type=float, default=0.05)
    ft.add_argument("--epsilon", type=float, default=None, help="override the feasibility band")
    ft.add_argument("--max-iters", type=int, default=500)
    ft.add_argument("--tol", type=float, default=1e-8)
    ft.add_argument("--seed", type=int, default=0)
    ft.add_argument("--rotation", choices=["principal", "none"], default="principal")
    ft.add_argument(
        "--anchor", action="append", metavar="DIM:DOC_LOW:DOC_HIGH",
        help="require theta[DOC_LOW] < theta[DOC_HIGH] on dimension DIM (1-based)",
    )
    ft.add_argument("--out", required=True)
    ft.set_defaults(func=cmd_fit)

    un = sub.add_parser("uncertainty", help="standard errors and intervals for positions")
    un.add_argument("--fit", required=True, help="fit.json from the fit command")
    un.add_argument("--dfm", required=True)
    un.add_argument("--dfm-format", choices=list(dfm_mod.FORMATS), default="triplet")
    un.add_argument("--method", choices=["fisher", "bootstrap"], default="fisher")
    un.add_argument("--reps", type=int, default=500)
    un.add_argument("--seed", type=int, default=0)
    un.add_argument("--sig-level", type=float, default=None)
    un.add_argument("--out", required=True)
    un.set_defaults(func=cmd_uncertainty)

    sm = sub.add_parser("simulate", help="draw a corpus from known parameters")
    sm.add_argument("--docs", type=int, default=50)
    sm.add_argument("--features", type=int, default=500)
    sm.add_argument("--k", type=int, default=2)
    sm.add_argument("--alpha-sd", type=float, default=0.5)
    sm.add_argument("--psi-mean", type=float, default=0.0)
    sm.add_argument("--psi-sd", type=float, default=1.0)
    sm.add_argument("--beta-sd", type=float, default=0.3)
    sm.add_argument("--seed", type=int, default=0)
    sm.add_argument("--fit", action="store_true", help="also fit and write recovery_report.json")
    sm.add_argument("--method", choices=["joint", "conditional"], default="joint")
    sm.add_argument("--out", required=True)
    sm.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (InputError, FileNotFoundError, dfm_mod.DfmError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
