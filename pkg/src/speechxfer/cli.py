"""Command-line front end: ``speechxfer {gen,eval-cv,eval-transfer,stats,report}``.

Every subcommand writes a CSV whose metadata lines start with ``#``.  Output
depends only on the flags and input bytes, so reruns are byte-identical; no
wall-clock timestamps are written.

Exit codes: 0 success, 2 usage or configuration error, 3 I/O or file format
error, 4 numerical or degenerate input.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    ConfigError,
    InputError,
    RunConfig,
    SpeechXferError,
    read_epo1,
    write_epo1,
)
from .eval import MODES, evaluate_transfer, fit_few, fit_full, kfold_cv
from .stats import ALPHA, compare_groups, summarize
from .synthgen import PRESETS, SynthConfig, generate_dataset

FOOTER_IDS = ("AVG.", "STD.")


# --------------------------------------------------------------------------
# flag parsing
# --------------------------------------------------------------------------


def _u64(text):
    try:
        value = int(text, 10)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an unsigned 64-bit integer: {text!r}")
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"not an unsigned 64-bit integer: {text!r}")
    return value


def _count(minimum):
    def parse(text):
        try:
            value = int(text, 10)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
        if value < minimum:
            raise argparse.ArgumentTypeError(f"must be >= {minimum}, got {value}")
        return value

    return parse


def _real(lo=None, hi=None, lo_open=False):
    def parse(text):
        try:
            value = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}")
        if not math.isfinite(value):
            raise argparse.ArgumentTypeError(f"not a finite number: {text!r}")
        if lo is not None and (value <= lo if lo_open else value < lo):
            raise argparse.ArgumentTypeError(
                f"must be {'>' if lo_open else '>='} {lo}, got {value}"
            )
        if hi is not None and value > hi:
            raise argparse.ArgumentTypeError(f"must be <= {hi}, got {value}")
        return value

    return parse


def _band(text):
    try:
        lo, hi = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LOW:HIGH in Hz, got {text!r}")
    if not (math.isfinite(lo) and math.isfinite(hi) and 0 < lo < hi):
        raise argparse.ArgumentTypeError(f"need 0 < LOW < HIGH, got {text!r}")
    return (lo, hi)


def _add_pipeline_flags(p):
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--band", type=_band, default=(0.5, 40.0), help="band-pass LOW:HIGH in Hz")
    p.add_argument("--m-pairs", type=_count(1), default=3)
    p.add_argument("--gamma", type=_real(0.0, 1.0), default=1e-6)
    p.add_argument("--svm-c", type=_real(0.0, lo_open=True), default=1.0)
    p.add_argument("--svm-tol", type=_real(0.0, lo_open=True), default=1e-6)
    p.add_argument("--car", action="store_true", help="common-average re-reference")
    p.add_argument("--jobs", type=_count(1), default=1, help="worker threads (no effect on results)")
    p.add_argument("--run-id", default=None, help="row label used by the report command")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="speechxfer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic EPO1 dataset")
    g.add_argument("--classes", type=_count(2), default=5)
    g.add_argument("--channels", type=_count(4), default=16)
    g.add_argument("--trials", type=_count(1), default=50, help="trials per class")
    g.add_argument("--rho", type=_real(0.0, 1.0), default=None)
    g.add_argument("--preset", choices=sorted(PRESETS), default=None,
                   help="named relatedness; also used as the paradigm tag")
    g.add_argument("--snr", type=_real(0.0, lo_open=True), default=5.0)
    g.add_argument("--fs", type=_real(0.0, lo_open=True), default=250.0)
    g.add_argument("--duration", type=_real(0.0, lo_open=True), default=2.0)
    g.add_argument("--band", type=_band, default=(8.0, 30.0), help="source band LOW:HIGH in Hz")
    g.add_argument("--seed", type=_u64, default=0)
    g.add_argument("--out", required=True, type=Path)

    cv = sub.add_parser("eval-cv", help="within-paradigm k-fold cross-validation")
    cv.add_argument("--data", required=True, type=Path)
    cv.add_argument("--folds", type=_count(2), default=10)
    _add_pipeline_flags(cv)

    tr = sub.add_parser("eval-transfer", help="fit on source, evaluate frozen model on target")
    tr.add_argument("--source", required=True, type=Path)
    tr.add_argument("--target", required=True, type=Path)
    tr.add_argument("--few", type=_count(1), default=None, help="trials per class drawn from source")
    _add_pipeline_flags(tr)

    st = sub.add_parser("stats", help="Kruskal-Wallis + paired bootstrap over accuracy columns")
    st.add_argument("--groups", required=True,
                    help="comma-separated FILE or FILE:COLUMN items, one per group")
    st.add_argument("--names", default=None, help="comma-separated group names")
    st.add_argument("--bootstrap", type=_count(100), default=10000)
    st.add_argument("--seed", type=_u64, default=0)
    st.add_argument("--reference-h", type=_real(0.0), default=None,
                    help="published H to compare against; the difference is noted")
    st.add_argument("--out", required=True, type=Path)

    rp = sub.add_parser("report", help="merge eval reports into a runs x modes table")
    rp.add_argument("--inputs", required=True, nargs="+", type=Path)
    rp.add_argument("--out", required=True, type=Path)
    return parser


# --------------------------------------------------------------------------
# CSV helpers
# --------------------------------------------------------------------------


def _fmt(x) -> str:
    return repr(float(x))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _write(path: Path, meta: list, header: list, rows: list) -> None:
    buf = io.StringIO()
    for key, value in meta:
        buf.write(f"# {key}: {value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_bytes(buf.getvalue().encode("utf-8"))


def read_table(path: Path):
    """Return (metadata dict, header, rows) of a ``#``-commented CSV."""
    meta, lines = {}, []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            meta[key.strip()] = value.strip()
        elif line.strip():
            lines.append(line)
    rows = list(csv.reader(lines))
    if not rows:
        raise InputError(f"{path}: no data rows")
    return meta, rows[0], rows[1:]


def read_column(path: Path, column=None) -> list:
    """Accuracy values from one CSV column, skipping AVG./STD. footers.

    Without ``column`` the ``accuracy`` column is used if present, otherwise
    the only column.  A file whose first row is numeric has no header.
    """
    _, header, rows = read_table(path)
    try:
        float(header[0])
        rows, header = [header] + rows, [f"col{i}" for i in range(len(header))]
    except ValueError:
        pass
    width = len(header)
    for n, row in enumerate(rows, start=2):
        if len(row) != width:
            raise InputError(f"{path}: ragged row {n} has {len(row)} fields, header has {width}")
    if column is None:
        if "accuracy" in header:
            column = "accuracy"
        elif width == 1:
            column = header[0]
        else:
            raise InputError(f"{path}: several columns {header}; name one as FILE:COLUMN")
    if column not in header:
        raise InputError(f"{path}: no column {column!r} (have {header})")
    j = header.index(column)
    values = []
    for n, row in enumerate(rows, start=2):
        if row[0] in FOOTER_IDS:
            continue
        cell = row[j].strip()
        if cell == "":
            raise InputError(f"{path}: column {column!r} row {n} is empty")
        try:
            values.append(float(cell))
        except ValueError:
            raise InputError(f"{path}: column {column!r} row {n} is not a number: {cell!r}")
    if not values:
        raise InputError(f"{path}: column {column!r} is empty")
    return values


def _run_config(args, folds=10, few=10) -> RunConfig:
    return RunConfig(
        seed=args.seed, band=args.band, m_pairs=args.m_pairs, gamma=args.gamma,
        svm_c=args.svm_c, svm_tol=args.svm_tol, folds=folds,
        few_trials_per_class=few, car=args.car,
    )


def _eval_meta(command, report, config, inputs, class_names, run_id, extra=()):
    payload = {
        "command": command,
        "config": config.as_dict(),
        "inputs": {str(k): v for k, v in inputs},
        "extra": {str(k): str(v) for k, v in extra},
    }
    meta = [
        ("tool", f"speechxfer {__version__}"),
        ("command", command),
        ("config_hash", _config_hash(payload)),
        ("seed", config.seed),
        ("config", json.dumps(config.as_dict(), sort_keys=True)),
    ]
    meta += [(f"input {name}", digest) for name, digest in inputs]
    meta += list(extra)
    meta += [
        ("run_id", run_id),
        ("mode", report.mode),
        ("source_paradigm", report.source_paradigm),
        ("target_paradigm", report.target_paradigm),
        ("classes", ";".join(class_names)),
        ("confusion", ";".join(" ".join(str(int(v)) for v in row) for row in report.confusion)),
        ("evaluated_trials", report.total),
        ("pooled_accuracy", _fmt(report.pooled_accuracy)),
    ]
    return meta


def _accuracy_rows(report, ids):
    rows = [[i, report.mode, _fmt(a)] for i, a in zip(ids, report.accuracies)]
    rows.append(["AVG.", report.mode, _fmt(report.mean)])
    rows.append(["STD.", report.mode, _fmt(report.std)])
    return rows


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_gen(args) -> str:
    if args.rho is not None and args.preset is not None:
        raise ConfigError("--rho and --preset are mutually exclusive")
    rho = PRESETS[args.preset] if args.preset else (1.0 if args.rho is None else args.rho)
    config = SynthConfig(
        n_classes=args.classes, n_channels=args.channels, fs=args.fs,
        duration=args.duration, trials_per_class=args.trials, rho=rho,
        snr=args.snr, band=args.band, seed=args.seed,
    )
    dataset = generate_dataset(config)
    if args.preset:
        dataset = type(dataset)(
            dataset.data, dataset.labels, dataset.fs, dataset.class_names,
            args.preset, dataset.relatedness,
        )
    write_epo1(dataset, args.out)
    return (
        f"wrote {args.out}: {dataset.n_trials} trials, K={dataset.n_classes}, "
        f"C={dataset.n_channels}, S={dataset.n_samples}, rho={rho}, snr={args.snr}, "
        f"seed={args.seed}"
    )


def cmd_eval_cv(args) -> str:
    dataset = read_epo1(args.data)
    config = _run_config(args, folds=args.folds)
    report = kfold_cv(dataset, config, n_jobs=args.jobs)
    run_id = args.run_id or f"seed-{args.seed}"
    meta = _eval_meta(
        "eval-cv", report, config, [("data", _sha256(args.data))],
        dataset.class_names, run_id,
    )
    ids = [f"fold-{i}" for i in range(len(report.accuracies))]
    _write(args.out, meta, ["run", "mode", "accuracy"], _accuracy_rows(report, ids))
    return f"cv: mean {report.mean:.2f}% std {report.std:.2f}% over {config.folds} folds -> {args.out}"


def cmd_eval_transfer(args) -> str:
    source = read_epo1(args.source)
    target = read_epo1(args.target)
    if (source.n_classes, source.n_channels) != (target.n_classes, target.n_channels):
        raise ConfigError(
            f"source shape (K={source.n_classes}, channels={source.n_channels}) does not match "
            f"target shape (K={target.n_classes}, channels={target.n_channels})"
        )
    few = args.few if args.few is not None else 10
    config = _run_config(args, few=few)
    if args.few is not None:
        model, mode = fit_few(source, config), "transfer_few"
    else:
        model, mode = fit_full(source, config), "transfer_full"
    report = evaluate_transfer(model, target, mode=mode)
    run_id = args.run_id or f"seed-{args.seed}"
    extra = [
        ("few_trials_per_class", "none" if args.few is None else args.few),
        ("source_trials_per_class", ";".join(map(str, model.trials_per_class))),
    ]
    meta = _eval_meta(
        "eval-transfer", report, config,
        [("source", _sha256(args.source)), ("target", _sha256(args.target))],
        target.class_names, run_id, extra,
    )
    _write(args.out, meta, ["run", "mode", "accuracy"], _accuracy_rows(report, ["run-0"]))
    return f"{mode}: accuracy {report.mean:.2f}% on {report.total} target trials -> {args.out}"


def _parse_group_spec(item: str):
    path, sep, column = item.rpartition(":")
    if sep and path and not os.path.exists(item):
        return Path(path), column
    return Path(item), None


def cmd_stats(args) -> str:
    specs = [_parse_group_spec(s.strip()) for s in args.groups.split(",") if s.strip()]
    if len(specs) < 2:
        raise InputError("--groups needs at least two FILE[:COLUMN] items")
    groups = [read_column(path, column) for path, column in specs]
    if args.names:
        names = [n.strip() for n in args.names.split(",")]
        if len(names) != len(groups):
            raise InputError(f"--names has {len(names)} entries for {len(groups)} groups")
    else:
        names = [f"{p.stem}:{c}" if c else p.stem for p, c in specs]
    lengths = {len(g) for g in groups}
    if len(lengths) != 1:
        detail = ", ".join(f"{p}{':' + c if c else ''} has {len(g)}" for (p, c), g in zip(specs, groups))
        raise InputError(f"paired groups need equal lengths: {detail}")
    res = compare_groups(groups, names=names, n_resamples=args.bootstrap, seed=args.seed)

    notes = "tie-corrected Kruskal-Wallis H on pooled mid-ranks; p from chi-square(k-1)"
    if args.reference_h is not None:
        diff = res.h - args.reference_h
        notes += (
            f"; reference H {args.reference_h!r} vs recomputed {res.h:.4f} "
            f"(difference {diff:+.4f}{', MISMATCH' if abs(diff) > 0.01 else ''})"
        )
    payload = {
        "command": "stats", "seed": args.seed, "bootstrap": args.bootstrap,
        "names": names, "groups": [[_fmt(v) for v in g] for g in groups],
    }
    meta = [
        ("tool", f"speechxfer {__version__}"),
        ("command", "stats"),
        ("config_hash", _config_hash(payload)),
        ("seed", args.seed),
        ("bootstrap_resamples", args.bootstrap),
        ("alpha", ALPHA),
        ("notes", notes),
    ]
    rows = [
        ["kruskal_h", "", "", _fmt(res.h)],
        ["kruskal_df", "", "", str(res.df)],
        ["kruskal_p", "", "", _fmt(res.p)],
        ["kruskal_significant", "", "", str(res.significant).lower()],
    ]
    for name, g, m, s in zip(names, groups, res.means, res.stds):
        rows.append(["n", name, "", str(len(g))])
        rows.append(["mean", name, "", _fmt(m)])
        rows.append(["std", name, "", _fmt(s)])
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            rows.append(["bootstrap_p", names[i], names[j], _fmt(res.pairwise_p[i, j])])
    _write(args.out, meta, ["statistic", "group_a", "group_b", "value"], rows)
    return f"H={res.h:.4f} df={res.df} p={res.p:.4g} -> {args.out}"


def cmd_report(args) -> str:
    cells, run_order, modes = {}, [], set()
    for path in args.inputs:
        meta, header, _ = read_table(path)
        if "mode" not in meta or "run_id" not in meta:
            raise InputError(f"{path}: not an eval report (missing mode/run_id metadata)")
        mode, run = meta["mode"], meta["run_id"]
        if (run, mode) in cells:
            raise InputError(f"{path}: duplicate cell run={run!r} mode={mode!r}")
        cells[(run, mode)] = float(np.mean(read_column(path, "accuracy")))
        if run not in run_order:
            run_order.append(run)
        modes.add(mode)
    columns = [m for m in MODES if m in modes] + sorted(modes - set(MODES))
    rows = []
    for run in run_order:
        row = [run]
        for mode in columns:
            if (run, mode) not in cells:
                raise InputError(f"no report for run={run!r} mode={mode!r}")
            row.append(_fmt(cells[(run, mode)]))
        rows.append(row)
    if len(run_order) >= 2:
        stats = [summarize([cells[(r, m)] for r in run_order]) for m in columns]
        rows.append(["AVG."] + [_fmt(m) for m, _ in stats])
        rows.append(["STD."] + [_fmt(s) for _, s in stats])
    meta = [
        ("tool", f"speechxfer {__version__}"),
        ("command", "report"),
        ("inputs", ";".join(f"{p.name}={_sha256(p)[:16]}" for p in args.inputs)),
    ]
    _write(args.out, meta, ["run"] + columns, rows)
    return f"{len(run_order)} runs x {len(columns)} modes -> {args.out}"


COMMANDS = {
    "gen": cmd_gen,
    "eval-cv": cmd_eval_cv,
    "eval-transfer": cmd_eval_transfer,
    "stats": cmd_stats,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        message = COMMANDS[args.command](args)
    except SpeechXferError as exc:
        print(f"speechxfer {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"speechxfer {args.command}: I/O error: {exc}", file=sys.stderr)
        return 3
    print(message)
    return 0


if __name__ == "__main__":
    sys.exit(main())
