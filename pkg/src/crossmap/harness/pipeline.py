"""Chaining map fitting, correspondence extraction, retrieval and classification.

Each task writes a line-oriented ``report.txt``, its ``report.json`` twin,
CSV outputs and PNG figures into the output directory. Nothing time- or
host-dependent goes into the outputs, so identical inputs give identical
bytes.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations, permutations
from pathlib import Path

import numpy as np

from crossmap.errors import CrossmapError, StageError, ValidationError
from crossmap.fmbsd import extract_correspondences, fit_map, prepare_modalities, retrieve_all
from crossmap.graph import COMBINATORIAL, build_knn_graph, laplacian
from crossmap.harness import io, plotting
from crossmap.harness.metrics import SAME_LABEL, SHARED_LABEL, accuracy, map_score
from crossmap.m2cpc import M2CPC

log = logging.getLogger(__name__)

TASKS = ("correspond", "retrieve", "classify")


@dataclass
class Report:
    task: str
    data: dict
    lines: list = field(default_factory=list)
    files: list = field(default_factory=list)

    def text(self):
        return "\n".join(self.lines) + "\n"


class _Stage:
    """Context manager that tags any failure with the stage name."""

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, et, ev, tb):
        if ev is None or isinstance(ev, StageError):
            return False
        if isinstance(ev, (CrossmapError, ValueError, ArithmeticError, np.linalg.LinAlgError)):
            raise StageError(self.name, ev) from ev
        return False


def _num(v):
    if v is None:
        return "n/a"
    if isinstance(v, float):
        return "nan" if np.isnan(v) else f"{v:.6g}"
    return str(v)


def _json_num(v):
    return None if isinstance(v, float) and np.isnan(v) else v


# -- shared pieces --------------------------------------------------------


def _bundles(ds):
    if len(ds.modalities) < 2:
        raise ValidationError("map fitting needs at least two modalities")
    return prepare_modalities([m.features.data for m in ds.modalities], ds.fmbsd, ds.ids)


def _fit_pairs(ds, bundles, pairs):
    """Fit every requested map; pairs run concurrently, results keep pair order."""
    def one(pair):
        i, j = pair
        return fit_map(bundles[i], bundles[j], ds.fmbsd)

    with ThreadPoolExecutor(max_workers=min(4, len(pairs)) or 1) as pool:
        return dict(zip(pairs, pool.map(one, pairs)))


def _tag(ds, i, j):
    return f"{ds.ids[i]}_{ds.ids[j]}"


def _header(task, ds):
    lines = [f"crossmap {task} report", f"manifest: {ds.source.name if ds.source else '-'}"]
    for m in ds.modalities:
        lines.append(f"modality {m.id}: samples={m.n} features={m.features.n_features}")
    cfg = ds.fmbsd
    lines.append(
        "fmbsd: " + " ".join(f"{k}={getattr(cfg, k)}" for k in io.FMBSD_KEYS)
    )
    return lines


def _config_json(ds):
    return {
        "fmbsd": {k: getattr(ds.fmbsd, k) for k in io.FMBSD_KEYS},
        "m2cpc": {k: getattr(ds.m2cpc, k) for k in io.M2CPC_KEYS},
        "classes": ds.classes,
        "modalities": [
            {"id": m.id, "samples": m.n, "features": m.features.n_features} for m in ds.modalities
        ],
    }


# -- tasks ----------------------------------------------------------------


def _correspond(ds, out, figures):
    with _Stage("geometry"):
        bundles = _bundles(ds)
    pairs = list(combinations(range(len(bundles)), 2))
    with _Stage("fmbsd"):
        maps = _fit_pairs(ds, bundles, pairs)
    lines = _header("correspond", ds)
    data = {"task": "correspond", "config": _config_json(ds), "pairs": []}
    files = []
    histories = {}
    for i, j in pairs:
        fm = maps[(i, j)]
        with _Stage("correspondences"):
            cm = extract_correspondences(bundles[i].Delta, fm.C, bundles[j].Delta)
        tag = _tag(ds, i, j)
        cpath = out / f"correspondence_{tag}.csv"
        io.write_correspondences(cpath, cm.rho)
        mpath = out / f"map_{tag}.csv"
        io.write_features(mpath, fm.C)
        files += [cpath.name, mpath.name]
        entry = {
            "source": ds.ids[i], "target": ds.ids[j],
            "objective": fm.objective, "iterations": fm.iterations, "converged": fm.converged,
            "accuracy": None, "identity_accuracy": None,
        }
        lines.append(f"[pair {ds.ids[i]} -> {ds.ids[j]}]")
        lines.append(f"objective: {_num(fm.objective)}")
        lines.append(f"iterations: {fm.iterations}")
        lines.append(f"converged: {'yes' if fm.converged else 'no'}")
        if (i, j) in ds.ground_truth:
            truth = ds.ground_truth[(i, j)]
            ident = extract_correspondences(bundles[i].Delta, np.eye(*fm.C.shape), bundles[j].Delta)
            entry["accuracy"] = cm.accuracy(truth)
            entry["identity_accuracy"] = ident.accuracy(truth)
            lines.append(f"accuracy: {_num(entry['accuracy'])}")
            lines.append(f"identity_accuracy: {_num(entry['identity_accuracy'])}")
        lines.append(f"correspondences: {cpath.name}")
        data["pairs"].append(entry)
        histories[f"{ds.ids[i]} -> {ds.ids[j]}"] = fm.history
        if figures:
            files.append(plotting.plot_map(fm.C, f"{ds.ids[i]} -> {ds.ids[j]}", out / f"map_{tag}.png").name)
    if figures:
        files.append(plotting.plot_convergence(histories, out / "convergence.png").name)
    return lines, data, files


def _label_key(labels, multi):
    """Labels in a form the relevance rules accept; unlabeled never matches."""
    if multi:
        return [frozenset() if v is None else frozenset(v if isinstance(v, tuple) else (v,)) for v in labels]
    return labels


def _relevance_sets(qlab, tlab, multi):
    if multi:
        return [[t for t, b in enumerate(tlab) if a & b] for a in qlab]
    return [[t for t, b in enumerate(tlab) if a is not None and a == b] for a in qlab]


def _score(rankings, qlab, tlab, multi):
    if multi:
        return map_score(rankings, qlab, tlab, SHARED_LABEL)
    # unlabeled queries and targets get codes no real class can equal
    q = np.array([-1 if v is None else v for v in qlab])
    t = np.array([-2 if v is None else v for v in tlab])
    return map_score(rankings, q, t, SAME_LABEL)


def _retrieve(ds, out, figures, k):
    with _Stage("geometry"):
        bundles = _bundles(ds)
    pairs = list(permutations(range(len(bundles)), 2))
    for i, j in pairs:
        if not 1 <= k <= ds.modalities[j].n:
            raise StageError("retrieval", ValidationError(
                f"k must lie in 1..{ds.modalities[j].n} for target {ds.ids[j]}, got {k}"))
    with _Stage("fmbsd"):
        maps = _fit_pairs(ds, bundles, pairs)
    labeled = all(m.eval_labels is not None for m in ds.modalities)
    multi = labeled and any(isinstance(v, tuple) for m in ds.modalities for v in m.eval_labels)
    rule = SHARED_LABEL if multi else SAME_LABEL
    lines = _header("retrieve", ds)
    lines.append(f"k: {k}")
    lines.append(f"relevance: {rule if labeled else 'n/a (labels missing)'}")
    data = {"task": "retrieve", "k": k, "relevance": rule if labeled else None,
            "config": _config_json(ds), "directions": []}
    files, curves = [], {}
    for i, j in pairs:
        with _Stage("retrieval"):
            ranks = retrieve_all(bundles[i].Delta, maps[(i, j)].C, bundles[j].Delta, k)
        tag = f"{ds.ids[i]}_to_{ds.ids[j]}"
        rpath = out / f"rankings_{tag}.csv"
        io.write_ranked_lists(rpath, ranks)
        files.append(rpath.name)
        entry = {"query": ds.ids[i], "target": ds.ids[j], "map": None, "admissible": None, "skipped": None}
        lines.append(f"[direction {ds.ids[i]} -> {ds.ids[j]}]")
        if labeled:
            with _Stage("evaluate"):
                qlab = _label_key(ds.modalities[i].eval_labels, multi)
                tlab = _label_key(ds.modalities[j].eval_labels, multi)
                res = _score(ranks, qlab, tlab, multi)
                rel = _relevance_sets(qlab, tlab, multi)
            relpath = out / f"relevance_{tag}.csv"
            io.write_labels(relpath, [tuple(t + 1 for t in r) if r else None for r in rel])
            files.append(relpath.name)
            entry.update(map=_json_num(res.map), admissible=int(res.admissible.sum()), skipped=res.n_skipped)
            lines.append(f"map: {_num(res.map)}")
            lines.append(f"admissible_queries: {int(res.admissible.sum())}")
            lines.append(f"skipped_queries: {res.n_skipped}")
            if res.defined:
                hits = np.array([[ranks[r, p] in set(rel[r]) for p in range(k)] for r in np.flatnonzero(res.admissible)])
                curves[f"{ds.ids[i]} -> {ds.ids[j]}"] = (np.cumsum(hits, axis=1) / np.arange(1, k + 1)).mean(axis=0)
        lines.append(f"rankings: {rpath.name}")
        data["directions"].append(entry)
    if figures and curves:
        files.append(plotting.plot_precision_at_rank(curves, out / "precision_at_rank.png").name)
    return lines, data, files


def _class_labels(labels, where):
    out = []
    for v in labels:
        if isinstance(v, tuple):
            raise ValidationError(f"{where}: classification needs single labels, found {v}")
        out.append(0 if v is None else int(v))
    return np.array(out, dtype=int)


def _classify(ds, out, figures):
    st = ds.m2cpc
    mods = ds.modalities
    for m in mods:
        if m.labels is None:
            raise StageError("load", ValidationError(f"modality {m.id} has no label file"))
    with _Stage("labels"):
        labels = [_class_labels(m.labels, m.id) for m in mods]
        observed = max(int(v.max()) for v in labels)
        c = ds.classes or observed
        if observed == 0:
            raise ValidationError("no labeled sample in any modality")

    corr = {}
    knn = st.knn or ds.fmbsd.knn
    if st.correspondences == "fmbsd" and len(mods) >= 2:
        with _Stage("geometry"):
            bundles = _bundles(ds)
        pairs = list(combinations(range(len(mods)), 2))
        with _Stage("fmbsd"):
            maps = _fit_pairs(ds, bundles, pairs)
        with _Stage("correspondences"):
            for (i, j), fm in maps.items():
                corr[(i, j)] = extract_correspondences(bundles[i].Delta, fm.C, bundles[j].Delta).rho
    elif st.correspondences == "ground_truth":
        if not ds.ground_truth:
            raise StageError("load", ValidationError("m2cpc.correspondences is 'ground_truth' but no ground_truth file"))
        corr = dict(ds.ground_truth)

    with _Stage("graph"):
        laps = [laplacian(build_knn_graph(m.features.data, knn), COMBINATORIAL) for m in mods]
    with _Stage("m2cpc"):
        model = M2CPC(st.gamma_a, st.gamma_w, st.gamma_b, st.kernel_width, st.mp_mode)
        model.fit([m.features.data for m in mods], labels, c, laps, corr or None)

    lines = _header("classify", ds)
    lines.append("m2cpc: " + " ".join(f"{k}={getattr(st, k)}" for k in io.M2CPC_KEYS))
    lines.append(f"classes: {c}")
    lines.append(f"residual: {_num(model.model_.residual)}")
    data = {"task": "classify", "classes": c, "config": _config_json(ds),
            "residual": model.model_.residual, "correspondence_pairs": len(corr), "modalities": []}
    files, bars = [], {}
    for i, m in enumerate(mods):
        with _Stage("predict"):
            pred = model.predict(m.features.data, i)
        ppath = out / f"predictions_{m.id}.csv"
        io.write_labels(ppath, pred)
        files.append(ppath.name)
        entry = {"id": m.id, "labeled": int(np.sum(labels[i] > 0)), "transductive_accuracy": None,
                 "test_accuracy": None}
        lines.append(f"[modality {m.id}]")
        lines.append(f"labeled: {entry['labeled']}")
        bars[m.id] = {}
        if m.truth is not None:
            truth = _class_labels(m.truth, m.id)
            hidden = (labels[i] == 0) & (truth > 0)
            if hidden.any():
                entry["transductive_accuracy"] = accuracy(pred[hidden], truth[hidden])
                bars[m.id]["unlabeled"] = entry["transductive_accuracy"]
            lines.append(f"transductive_accuracy: {_num(entry['transductive_accuracy'])}")
        if m.test_features is not None:
            with _Stage("predict"):
                tpred = model.predict(m.test_features.data, i)
            tpath = out / f"test_predictions_{m.id}.csv"
            io.write_labels(tpath, tpred)
            files.append(tpath.name)
            if m.test_labels is not None:
                entry["test_accuracy"] = accuracy(tpred, _class_labels(m.test_labels, m.id))
                bars[m.id]["test"] = entry["test_accuracy"]
            lines.append(f"test_accuracy: {_num(entry['test_accuracy'])}")
        lines.append(f"predictions: {ppath.name}")
        data["modalities"].append(entry)
        if figures:
            files.append(plotting.plot_embedding(m.features.data, pred, f"{m.id}: predicted classes",
                                                 out / f"predictions_{m.id}.png").name)
    if figures and any(bars.values()):
        files.append(plotting.plot_accuracies(bars, out / "accuracy.png").name)
    return lines, data, files


def run_pipeline(manifest, task: str, out_dir, k: int | None = None, figures: bool = True) -> Report:
    """Run one task and write its outputs; returns the report.

    ``manifest`` is a path or an already loaded :class:`~crossmap.harness.io.Dataset`.
    Failures surface as :class:`~crossmap.errors.StageError` naming the stage.
    """
    if task not in TASKS:
        raise ValidationError(f"task must be one of {TASKS}, got {task!r}")
    if task == "retrieve" and (k is None or k < 1):
        raise ValidationError("retrieve needs a positive k")
    with _Stage("load"):
        ds = manifest if isinstance(manifest, io.Dataset) else io.load_dataset(manifest)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if task == "correspond":
        lines, data, files = _correspond(ds, out, figures)
    elif task == "retrieve":
        lines, data, files = _retrieve(ds, out, figures, k)
    else:
        lines, data, files = _classify(ds, out, figures)
    data["files"] = sorted(files + ["report.txt", "report.json"])
    rep = Report(task, data, lines, data["files"])
    with _Stage("write"):
        (out / "report.txt").write_text(rep.text(), encoding="utf-8")
        io.write_json(out / "report.json", data)
    return rep
