"""Command-line entry point ``crossmap``.

Exit status: 0 on success, 1 on invalid input, 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from crossmap.errors import CrossmapError, NumericalError, ParseError, StageError, ValidationError
from crossmap.harness import io
from crossmap.harness.metrics import average_precision
from crossmap.harness.pipeline import run_pipeline
from crossmap.harness.synth import SyntheticSpec, generate_synthetic

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


def write_synthetic(spec_path, out_dir) -> Path:
    """Generate the dataset described by a JSON spec and write it with a manifest.

    Optional ``fmbsd`` and ``m2cpc`` objects in the spec are copied into the
    manifest unchanged.
    """
    spec_path = Path(spec_path)
    try:
        raw = json.loads(spec_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError(f"{spec_path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{spec_path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ParseError(f"{spec_path}: spec must be a JSON object")
    extra = {k: raw.pop(k) for k in ("fmbsd", "m2cpc") if k in raw}
    try:
        spec = SyntheticSpec.from_dict(raw)
    except TypeError as exc:
        raise ValidationError(f"{spec_path}: {exc}") from None
    ds = generate_synthetic(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for m, X in enumerate(ds.features):
        mid = f"m{m + 1}"
        entry = {"id": mid, "features": f"{mid}.csv", "labels": f"{mid}_labels.csv", "truth": f"{mid}_truth.csv"}
        io.write_features(out / entry["features"], X)
        io.write_labels(out / entry["labels"], ds.labels[m])
        io.write_labels(out / entry["truth"], ds.truth[m])
        if ds.test_features:
            entry["test_features"] = f"{mid}_test.csv"
            entry["test_labels"] = f"{mid}_test_labels.csv"
            io.write_features(out / entry["test_features"], ds.test_features[m])
            io.write_labels(out / entry["test_labels"], ds.test_labels[m])
        entries.append(entry)
    manifest = {"modalities": entries, "classes": spec.classes, **extra}
    if len(ds.features) >= 2:
        gt = {}
        for m in range(1, len(ds.features)):
            name = "ground_truth.csv" if len(ds.features) == 2 else f"ground_truth_m{m + 1}.csv"
            io.write_correspondences(out / name, ds.ground_truth(m))
            gt[f"m{m + 1}"] = name
        manifest["ground_truth"] = gt["m2"] if len(gt) == 1 else gt
    path = out / "manifest.json"
    io.write_json(path, manifest)
    return path


def evaluate(pred, truth, metric):
    """Score a prediction file against a truth file; returns a dict of results.

    ``acc`` compares two label files row by row, skipping rows whose truth is
    ``?``. ``map`` reads 1-based ranked lists and a relevance file in label
    format (the relevant target indices per query, ``?`` for none).
    """
    if metric == "acc":
        p, t = io.read_labels(pred), io.read_labels(truth)
        if len(p) != len(t):
            raise ValidationError(f"{pred}: {len(p)} rows, {truth}: {len(t)} rows")
        rows = [(a, b) for a, b in zip(p, t) if b is not None]
        if not rows:
            raise ValidationError(f"{truth}: no labeled rows")
        if any(isinstance(a, tuple) or isinstance(b, tuple) for a, b in rows):
            raise ValidationError("accuracy needs single labels")
        correct = sum(a == b for a, b in rows)
        return {"metric": "acc", "value": correct / len(rows), "scored": len(rows), "skipped": len(p) - len(rows)}
    if metric == "map":
        ranks, rel = io.read_ranked_lists(pred), io.read_labels(truth)
        if len(ranks) != len(rel):
            raise ValidationError(f"{pred}: {len(ranks)} queries, {truth}: {len(rel)} relevance rows")
        aps = []
        for r, s in zip(ranks, rel):
            if s is None:
                continue
            s = {x - 1 for x in (s if isinstance(s, tuple) else (s,))}
            aps.append(average_precision([t in s for t in r] or [0], len(s)))
        value = float(np.mean(aps)) if aps else float("nan")
        return {"metric": "map", "value": value, "scored": len(aps), "skipped": len(rel) - len(aps)}
    raise ValidationError(f"unknown metric {metric!r}")


def build_parser():
    ap = argparse.ArgumentParser(prog="crossmap", description="Cross-modal functional maps and classification.")
    ap.add_argument("-v", "--verbose", action="count", default=0, help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multimodal dataset")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)

    for name, helptext in (("correspond", "fit maps and extract pointwise correspondences"),
                           ("retrieve", "cross-modal retrieval with MAP"),
                           ("classify", "multimodal classification")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--manifest", required=True)
        p.add_argument("--out", required=True)
        if name == "retrieve":
            p.add_argument("--k", type=int, required=True)
        p.add_argument("--no-figures", action="store_true", help="skip PNG output")

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--metric", choices=("map", "acc"), required=True)
    return ap


def _exit_code(exc):
    cause = exc.cause if isinstance(exc, StageError) else exc
    return EXIT_NUMERICAL if isinstance(cause, (NumericalError, ArithmeticError, np.linalg.LinAlgError)) else EXIT_INVALID


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            path = write_synthetic(args.spec, args.out)
            print(f"wrote {path}")
        elif args.command == "eval":
            res = evaluate(args.pred, args.truth, args.metric)
            print(f"{res['metric']}: {res['value']:.6f}")
            print(f"scored: {res['scored']}")
            print(f"skipped: {res['skipped']}")
        else:
            rep = run_pipeline(args.manifest, args.command, args.out,
                               k=getattr(args, "k", None), figures=not args.no_figures)
            sys.stdout.write(rep.text())
    except (CrossmapError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"crossmap: error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
