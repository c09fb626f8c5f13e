"""Command-line entry point: ``phenoct synth|extract|fit|predict|evaluate|compare|audit|curves``.

Every artifact carries a provenance block (tool version, argv, seed, resolved
config and its hash, input hashes) and no timestamps, so identical inputs
give byte-identical outputs. Exit codes: 0 success, 1 usage error, 2 data
error, 3 numerical failure. Failures print one line on stderr:

    phenoct: <subcommand>: <ErrorType>: <message>
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .audits import StratumSpec, ceteris_paribus, stratified_eval
from .descriptors import extract_cohort
from .errors import DataError, NumericalError, PhenoctError
from .features import read_table, write_table
from .metrics import EvalConfig, auc, average_precision, bootstrap_ci, macro_average, paired_delta
from .phantom import EFFECTS, PhantomPlan, default_catalog, write_cohort
from .pipeline import fit_preprocessing, train_finding
from .selection import SelectionConfig, apply_frozen_table, load_spec
from .volume_io import load_catalog, read_manifest

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

SELECTION_FIELDS = {f.name for f in dataclasses.fields(SelectionConfig)}
EVAL_FIELDS = {f.name for f in dataclasses.fields(EvalConfig)}
REPORT_METRICS = (("auc", auc), ("average_precision", average_precision))

log = logging.getLogger("phenoct")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ------------------------------------------------------------------ helpers

def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _dump_json(path, doc) -> None:
    Path(path).write_text(json.dumps(_jsonable(doc), sort_keys=True, indent=2,
                                     allow_nan=False) + "\n")


def _resolve_config(args) -> tuple[SelectionConfig, EvalConfig, dict]:
    raw: dict = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise UsageError("config file must hold a JSON object")
    # accept {"selection": {...}, "eval": {...}} or a flat mapping of field names
    sel = dict(raw.get("selection", {}))
    ev = dict(raw.get("eval", {}))
    for key, val in raw.items():
        if key in ("selection", "eval"):
            continue
        if key in SELECTION_FIELDS:
            sel[key] = val
        elif key in EVAL_FIELDS:
            ev[key] = val
        else:
            raise UsageError(f"unknown config key {key!r}")
    for key in sel:
        if key not in SELECTION_FIELDS:
            raise UsageError(f"unknown selection config key {key!r}")
    for key in ev:
        if key not in EVAL_FIELDS:
            raise UsageError(f"unknown eval config key {key!r}")
    if args.seed is not None:
        sel["fold_seed"] = args.seed
        ev["seed"] = args.seed
    try:
        scfg = SelectionConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in sel.items()})
        ecfg = EvalConfig(**ev)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config: {exc}") from exc
    resolved = {"selection": dataclasses.asdict(scfg), "eval": dataclasses.asdict(ecfg)}
    return scfg, ecfg, resolved


def _recorded_argv(argv) -> list[str]:
    """argv without --parallelism, which never changes results."""
    out, skip = [], False
    for tok in argv:
        if skip:
            skip = False
        elif tok == "--parallelism":
            skip = True
        elif not tok.startswith("--parallelism="):
            out.append(tok)
    return out


def _provenance(args, resolved: dict, inputs: dict[str, str]) -> dict:
    return {
        "tool": "phenoct",
        "version": __version__,
        "command": args.command,
        "argv": _recorded_argv(args.argv),
        "seed": args.seed,
        "config": resolved,
        "config_sha256": hashlib.sha256(_canonical(_jsonable(resolved)).encode()).hexdigest(),
        "inputs": inputs,
    }


def _catalog(args, near: Path | None = None):
    if args.catalog:
        return load_catalog(args.catalog), _sha256_file(args.catalog)
    if near is not None and (near / "catalog.json").exists():
        return load_catalog(near / "catalog.json"), _sha256_file(near / "catalog.json")
    cat = default_catalog()
    return cat, hashlib.sha256(_canonical(cat.to_dict()).encode()).hexdigest()


def _write_predictions(path, case_ids, scores, labels, provenance) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# provenance: " + _canonical(_jsonable(provenance)) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case_id", "score", "label"])
        for cid, s, y in zip(case_ids, scores, labels):
            w.writerow([cid, repr(float(s)), "NA" if y is None else str(int(y))])


def _read_predictions(path) -> tuple[str, list[str], np.ndarray, list[int | None]]:
    finding = Path(path).stem
    ids, scores, labels = [], [], []
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("# provenance: "):
            prov = json.loads(line[len("# provenance: "):])
            finding = prov.get("finding") or finding
        elif line and not line.startswith("#"):
            body.append(line)
    rows = list(csv.reader(body))
    if not rows or rows[0] != ["case_id", "score", "label"]:
        raise DataError(f"{path}: expected columns case_id,score,label")
    for row in rows[1:]:
        if len(row) != 3:
            raise DataError(f"{path}: malformed row {row}")
        ids.append(row[0])
        try:
            scores.append(float(row[1]))
        except ValueError as exc:
            raise DataError(f"{path}: bad score {row[1]!r}") from exc
        if row[2] not in ("0", "1", "NA", ""):
            raise DataError(f"{path}: label {row[2]!r} not in 1/0/NA")
        labels.append(None if row[2] in ("NA", "") else int(row[2]))
    return finding, ids, np.array(scores, dtype=np.float64), labels


def _labelled(ids, scores, labels):
    keep = [i for i, y in enumerate(labels) if y is not None]
    return ([ids[i] for i in keep], scores[keep], np.array([labels[i] for i in keep], dtype=int))


def _fmt(v, digits=4) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return f"{v:.{digits}f}"
    return str(v)


def _text_table(header: list[str], rows: list[list]) -> str:
    cells = [header] + [[_fmt(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    out = []
    for k, r in enumerate(cells):
        out.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w)
                             for i, (c, w) in enumerate(zip(r, widths))).rstrip())
        if k == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out) + "\n"


def _emit_report(args, doc: dict, text: str) -> None:
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        _dump_json(out, doc)
        out.with_suffix(".txt").write_text(text)


def _report_row(name, r):
    return [name, r["metric"], r["point"], r["ci_low"], r["ci_high"], r["n_cases"],
            r["n_positive"]]


REPORT_HEADER = ["finding", "metric", "point", "ci_low", "ci_high", "n", "n_pos"]


# -------------------------------------------------------------- subcommands

def cmd_synth(args) -> int:
    _, _, resolved = _resolve_config(args)
    shape = tuple(int(s) for s in args.shape.split(","))
    if len(shape) != 3:
        raise UsageError("--shape takes three comma-separated integers")
    try:
        plan = PhantomPlan(n=args.n, prevalence=args.prevalence, effect=args.effect,
                           noise=args.noise, seed=args.seed if args.seed is not None else 0,
                           shape=shape)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    try:
        manifest = write_cohort(plan, out)
    except OSError as exc:
        raise DataError(f"cannot write cohort to {out}: {exc}") from exc
    prov = _provenance(args, resolved, {})
    prov["plan"] = dataclasses.asdict(plan)
    _dump_json(out / "provenance.json", prov)
    records, _ = read_manifest(manifest)
    n_pos = sum(r.labels[plan.finding] == 1 for r in records)
    sys.stdout.write(f"{len(records)} cases, {n_pos} positive for {plan.finding} -> {manifest}\n")
    return EXIT_OK


def cmd_extract(args) -> int:
    _, _, resolved = _resolve_config(args)
    manifest = Path(args.manifest)
    records, _ = read_manifest(manifest)
    catalog, cat_hash = _catalog(args, manifest.parent)
    result = extract_cohort(records, catalog, args.parallelism)
    h = hashlib.sha256()
    for r in records:
        for p in (r.volume_path, r.labels_path):
            try:
                h.update(_sha256_file(p).encode())
            except OSError:
                h.update(b"unreadable")
    prov = _provenance(args, resolved, {"manifest": _sha256_file(manifest),
                                        "catalog": cat_hash, "cases": h.hexdigest()})
    prov["descriptor_catalog_sha256"] = result.table.catalog.sha256
    prov["excluded"] = result.ledger
    write_table(result.table, args.out, prov)
    for entry in result.ledger:
        print(f"phenoct: extract: skipped case {entry['case_id']}: {entry['error']}",
              file=sys.stderr)
    sys.stdout.write(f"{result.table.shape[0]} cases x {result.table.shape[1]} descriptors "
                     f"({len(result.ledger)} excluded) -> {args.out}\n")
    return EXIT_OK


def _manifest_labels(path, case_ids, findings=None) -> dict[str, list[int | None]]:
    records, names = read_manifest(path)
    by_id = {r.case_id: r.labels for r in records}
    chosen = list(findings) if findings else names
    for f in chosen:
        if f not in names:
            raise DataError(f"finding {f!r} is not a manifest column")
    return {f: [by_id.get(c, {}).get(f) for c in case_ids] for f in chosen}


def cmd_fit(args) -> int:
    scfg, _, resolved = _resolve_config(args)
    table = read_table(args.table)
    findings = args.finding.split(",") if args.finding else None
    labels = _manifest_labels(args.labels, table.case_ids, findings)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    prov = _provenance(args, resolved, {"table": _sha256_file(args.table),
                                        "labels": _sha256_file(args.labels)})
    pre = fit_preprocessing(table, scfg.correlation_threshold)
    rows = []
    for finding, lab in labels.items():
        report_name = f"selection_{finding}.json"
        tf = train_finding(pre, lab, finding, scfg, table.catalog.sha256, args.parallelism,
                           report_name)
        _dump_json(out / report_name, {"provenance": prov, "finding": finding,
                                       "n_cases": tf.n_cases, "n_positive": tf.n_positive,
                                       "correlation_kept": list(pre.kept),
                                       "report": tf.report.to_dict()})
        doc = tf.spec.to_dict()
        doc["provenance"] = prov
        _dump_json(out / f"spec_{finding}.json", doc)
        for d in tf.spec.descriptors:
            rows.append([finding, d, tf.report.retention[d], tf.spec.weights[d]])
        if not tf.spec.descriptors:
            rows.append([finding, "(intercept only)", 0, 0.0])
    sys.stdout.write(_text_table(["finding", "descriptor", "folds", "weight"], rows))
    return EXIT_OK


def cmd_predict(args) -> int:
    _, _, resolved = _resolve_config(args)
    table = read_table(args.table)
    spec = load_spec(args.spec)
    scores = apply_frozen_table(spec, table)
    if args.labels:
        labels = _manifest_labels(args.labels, table.case_ids, [spec.finding])[spec.finding]
    else:
        labels = [None] * len(table.case_ids)
    inputs = {"spec": _sha256_file(args.spec), "table": _sha256_file(args.table)}
    if args.labels:
        inputs["labels"] = _sha256_file(args.labels)
    prov = _provenance(args, resolved, inputs)
    prov["finding"] = spec.finding
    prov["spec_sha256"] = spec.sha256
    _write_predictions(args.out, table.case_ids, scores, labels, prov)
    sys.stdout.write(f"{len(scores)} predictions for {spec.finding} -> {args.out}\n")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    _, ecfg, resolved = _resolve_config(args)
    inputs, findings, rows, pairs = {}, {}, [], []
    for path in args.predictions:
        name, ids, scores, labels = _read_predictions(path)
        if name in findings:
            raise DataError(f"finding {name!r} appears twice")
        inputs[name] = _sha256_file(path)
        _, s, y = _labelled(ids, scores, labels)
        findings[name] = {}
        for mname, fn in REPORT_METRICS:
            rep = bootstrap_ci(fn, s, y, ecfg, args.parallelism).as_dict()
            findings[name][mname] = rep
            rows.append(_report_row(name, rep))
        pairs.append((s, y))
    doc = {"provenance": _provenance(args, resolved, inputs), "findings": findings}
    if len(pairs) > 1:
        doc["macro"] = {}
        for mname, fn in REPORT_METRICS:
            rep = macro_average(pairs, fn, ecfg, args.parallelism).as_dict()
            doc["macro"][mname] = rep
            rows.append(_report_row("macro", rep))
    _emit_report(args, doc, _text_table(REPORT_HEADER, rows))
    return EXIT_OK


def cmd_compare(args) -> int:
    _, ecfg, resolved = _resolve_config(args)
    fa, ida, sa, la = _read_predictions(args.a)
    fb, idb, sb, lb = _read_predictions(args.b)
    if sorted(ida) != sorted(idb):
        raise DataError("prediction files cover different cases")
    pos_b = {c: i for i, c in enumerate(idb)}
    order = [pos_b[c] for c in ida]
    sb = sb[order]
    lb = [lb[i] for i in order]
    if any(x is not None and y is not None and x != y for x, y in zip(la, lb)):
        raise DataError("prediction files disagree on labels")
    labels = [x if x is not None else y for x, y in zip(la, lb)]
    keep = [i for i, y in enumerate(labels) if y is not None]
    y = np.array([labels[i] for i in keep], dtype=int)
    doc = {"provenance": _provenance(args, resolved, {"a": _sha256_file(args.a),
                                                      "b": _sha256_file(args.b)}),
           "a": fa, "b": fb, "deltas": {}}
    rows = []
    for mname, fn in REPORT_METRICS:
        rep = paired_delta(sa[keep], sb[keep], y, fn, ecfg, args.parallelism).as_dict()
        doc["deltas"][mname] = rep
        rows.append([f"{fa} - {fb}", rep["metric"], rep["point"], rep["ci_low"], rep["ci_high"],
                     rep["n_cases"], rep["n_positive"]])
    _emit_report(args, doc, _text_table(["comparison", *REPORT_HEADER[1:]], rows))
    return EXIT_OK


def _thresholds(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --thresholds value: {text!r}") from exc


def cmd_audit(args) -> int:
    _, ecfg, resolved = _resolve_config(args)
    finding, ids, scores, labels = _read_predictions(args.predictions)
    table = read_table(args.table)
    if args.feature not in table.catalog:
        raise DataError(f"descriptor {args.feature!r} is not in the table")
    col = table.column(args.feature)
    pos = {c: i for i, c in enumerate(table.case_ids)}
    missing = [c for c in ids if c not in pos]
    if missing:
        raise DataError(f"{len(missing)} predicted cases are absent from the table")
    ids, s, y = _labelled(ids, scores, labels)
    strat = [None if math.isnan(col[pos[c]]) else float(col[pos[c]]) for c in ids]
    spec = StratumSpec(args.feature, args.direction, args.missing_as)
    metric_fn = dict(REPORT_METRICS)[args.metric]
    results = stratified_eval(s, y, strat, _thresholds(args.thresholds), spec, metric_fn, ecfg,
                              args.parallelism)
    doc = {"provenance": _provenance(args, resolved, {"predictions": _sha256_file(args.predictions),
                                                      "table": _sha256_file(args.table)}),
           "finding": finding, "feature": args.feature, "direction": args.direction,
           "missing_as": args.missing_as, "strata": [r.as_dict() for r in results]}
    rows = []
    for r in results:
        rep = r.report
        rows.append([r.threshold, None if rep is None else rep.point,
                     None if rep is None else rep.ci_low, None if rep is None else rep.ci_high,
                     r.n_negative, r.n_positive_kept, r.n_positive_excluded,
                     r.n_positive_missing_stratum, r.excluded_fraction])
    text = _text_table(["threshold", args.metric, "ci_low", "ci_high", "n_neg", "pos_kept",
                        "pos_excluded", "pos_missing", "excluded_frac"], rows)
    _emit_report(args, doc, text)
    return EXIT_OK


def cmd_curves(args) -> int:
    _, _, resolved = _resolve_config(args)
    spec = load_spec(args.spec)
    table = read_table(args.table)
    wanted = args.descriptor.split(",") if args.descriptor else list(spec.descriptors)
    curves, rows = {}, []
    for d in wanted:
        pts = ceteris_paribus(spec, table, d, args.grid_size)
        curves[d] = {"weight": spec.weights[d], "points": [[x, p] for x, p in pts]}
        rows.append([d, spec.weights[d], pts[0][0], pts[-1][0], pts[0][1], pts[-1][1]])
    doc = {"provenance": _provenance(args, resolved, {"spec": _sha256_file(args.spec),
                                                      "table": _sha256_file(args.table)}),
           "finding": spec.finding, "curves": curves}
    text = _text_table(["descriptor", "weight", "x_min", "x_max", "p(x_min)", "p(x_max)"], rows)
    _emit_report(args, doc, text)
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--catalog", help="anatomy catalog JSON")
    common.add_argument("--seed", type=int, default=None,
                        help="seed for phantoms, fold assignment and bootstrap")
    common.add_argument("--parallelism", type=int, default=1)
    common.add_argument("--config", help="JSON with SelectionConfig / EvalConfig fields")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="phenoct", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"phenoct {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth", parents=[common], help="write a synthetic phantom cohort")
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--prevalence", type=float, default=0.2)
    s.add_argument("--effect", choices=sorted(EFFECTS), default="gallstone")
    s.add_argument("--noise", type=float, default=1.0)
    s.add_argument("--shape", default="48,48,48")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("extract", parents=[common], help="descriptor table from a manifest")
    s.add_argument("manifest")
    s.add_argument("--out", required=True, help="table path (.csv or .jsonl)")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("fit", parents=[common], help="select descriptors and lock a spec")
    s.add_argument("table")
    s.add_argument("--labels", required=True, help="manifest with finding columns")
    s.add_argument("--finding", help="comma-separated findings (default: all)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("predict", parents=[common], help="score a table with a frozen spec")
    s.add_argument("spec")
    s.add_argument("table")
    s.add_argument("--labels", help="manifest supplying the label column")
    s.add_argument("--out", required=True, help="predictions CSV")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", parents=[common], help="AUC/AP with bootstrap intervals")
    s.add_argument("predictions", nargs="+")
    s.add_argument("--out", help="report JSON (a .txt table is written beside it)")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("compare", parents=[common], help="paired bootstrap difference a - b")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--out")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("audit", parents=[common], help="metric after excluding positives by stratum")
    s.add_argument("predictions")
    s.add_argument("--table", required=True)
    s.add_argument("--feature", required=True)
    s.add_argument("--thresholds", required=True, help="comma-separated, e.g. 0,500,2000,5000")
    s.add_argument("--direction", choices=("ge", "lt"), default="ge")
    s.add_argument("--missing-as", type=float, default=None,
                   help="stratum value for positives with the descriptor missing")
    s.add_argument("--metric", choices=[m for m, _ in REPORT_METRICS], default="auc")
    s.add_argument("--out")
    s.set_defaults(func=cmd_audit)

    s = sub.add_parser("curves", parents=[common], help="ceteris-paribus response curves")
    s.add_argument("spec")
    s.add_argument("table", help="reference table for medians and ranges")
    s.add_argument("--descriptor", help="comma-separated subset (default: all selected)")
    s.add_argument("--grid-size", type=int, default=50)
    s.add_argument("--out")
    s.set_defaults(func=cmd_curves)
    return p


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    command = argv[0] if argv and not argv[0].startswith("-") else "-"
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"phenoct: {command}: UsageError: {_one_line(exc)}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="phenoct: %(levelname)s: %(message)s", stream=sys.stderr)
    if args.parallelism < 1:
        print(f"phenoct: {args.command}: UsageError: --parallelism must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    previous = warnings.showwarning
    warnings.showwarning = (lambda message, category, *a, **k:
                            print(f"phenoct: {args.command}: {category.__name__}: "
                                  f"{_one_line(message)}", file=sys.stderr))
    try:
        return args.func(args)
    except UsageError as exc:
        code, kind, msg = EXIT_USAGE, "UsageError", exc
    except NumericalError as exc:
        code, kind, msg = EXIT_NUMERICAL, type(exc).__name__, exc
    except (PhenoctError, OSError, ValueError, KeyError) as exc:
        code, kind, msg = EXIT_DATA, type(exc).__name__, exc
    finally:
        warnings.showwarning = previous
    print(f"phenoct: {args.command}: {kind}: {_one_line(msg)}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
