"""Reading and writing the on-disk formats.

Feature CSVs have no header and one sample per row. Label CSVs hold one row
per sample: a class in ``1..c``, several classes joined by ``;``, or ``?``.
Correspondence CSVs hold 1-based ``source_index,target_index`` rows.
Every parse failure names the file and the 1-based line (and column).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from crossmap.errors import ParseError, ValidationError
from crossmap.fmbsd import FmbsdConfig
from crossmap.graph import FeatureMatrix
from crossmap.m2cpc import MP_MODES, LAPLACIAN_EXACT

UNLABELED_TOKEN = "?"
M2CPC_KEYS = ("gamma_a", "gamma_w", "gamma_b", "kernel_width", "mp_mode", "correspondences", "knn")
FMBSD_KEYS = ("alpha", "beta", "lambda_b", "lambda_w", "k_basis", "knn", "resolution",
              "max_iters", "grad_tol", "sigma_mode", "within_laplacian", "method")
MODALITY_KEYS = ("id", "features", "labels", "truth", "test_features", "test_labels")
MANIFEST_KEYS = ("modalities", "ground_truth", "classes", "fmbsd", "m2cpc")
P_SOURCES = ("fmbsd", "ground_truth", "none")


# -- readers --------------------------------------------------------------


def _open(path):
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"{path}: file not found")
    try:
        return path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from exc


def _rows(path):
    """Non-blank CSV rows with their 1-based line numbers."""
    with _open(path) as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if row and any(cell.strip() for cell in row):
                yield lineno, [cell.strip() for cell in row]


def read_features(path, modality: str = "m1") -> FeatureMatrix:
    data, width = [], None
    for lineno, row in _rows(path):
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ParseError(f"{path}:{lineno}: ragged row with {len(row)} columns, expected {width}")
        vals = []
        for col, cell in enumerate(row, start=1):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"{path}:{lineno}:{col}: non-numeric cell {cell!r}") from None
            if not np.isfinite(v):
                raise ParseError(f"{path}:{lineno}:{col}: non-finite value {cell!r}")
            vals.append(v)
        data.append(vals)
    if not data:
        raise ParseError(f"{path}: no feature rows")
    try:
        return FeatureMatrix(np.array(data, dtype=float), modality)
    except ValidationError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def _label_cell(cell, path, lineno, c):
    if cell == UNLABELED_TOKEN:
        return None
    parts = cell.split(";")
    out = []
    for part in parts:
        part = part.strip()
        try:
            v = int(part)
        except ValueError:
            raise ParseError(f"{path}:{lineno}: invalid label {part!r}") from None
        if v < 1 or (c is not None and v > c):
            bound = f"1..{c}" if c is not None else ">= 1"
            raise ParseError(f"{path}:{lineno}: label {v} outside {bound}")
        out.append(v)
    return out[0] if len(out) == 1 else tuple(sorted(set(out)))


def read_labels(path, n_classes: int | None = None) -> list:
    """Per-row labels: ``int``, a sorted ``tuple`` (multi-label) or ``None``."""
    labels = []
    for lineno, row in _rows(path):
        if len(row) != 1:
            raise ParseError(f"{path}:{lineno}: expected one label field, got {len(row)}")
        labels.append(_label_cell(row[0], path, lineno, n_classes))
    return labels


def read_correspondences(path, n_source: int, n_target: int) -> np.ndarray:
    """0-based assignment vector ``rho`` from a 1-based correspondence file."""
    rho = np.full(n_source, -1, dtype=int)
    for lineno, row in _rows(path):
        if len(row) != 2:
            raise ParseError(f"{path}:{lineno}: expected 'source_index,target_index'")
        try:
            s, t = int(row[0]), int(row[1])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: indices must be integers") from None
        if not (1 <= s <= n_source and 1 <= t <= n_target):
            raise ParseError(f"{path}:{lineno}: index pair ({s}, {t}) outside 1..{n_source} x 1..{n_target}")
        if rho[s - 1] >= 0:
            raise ParseError(f"{path}:{lineno}: source index {s} assigned twice")
        rho[s - 1] = t - 1
    missing = np.flatnonzero(rho < 0)
    if missing.size:
        raise ParseError(f"{path}: no target for source index {int(missing[0]) + 1}")
    return rho


def read_ranked_lists(path) -> list:
    """Rows of 1-based indices, returned 0-based (rows may differ in length)."""
    out = []
    for lineno, row in _rows(path):
        try:
            out.append([int(v) - 1 for v in row])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: indices must be integers") from None
        if any(v < 0 for v in out[-1]):
            raise ParseError(f"{path}:{lineno}: indices are 1-based")
    return out


# -- writers --------------------------------------------------------------


def _fmt(v) -> str:
    # shortest repr that round-trips; stable across runs
    return repr(float(v))


def write_features(path, X):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for row in np.asarray(X, dtype=float):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def format_label(v) -> str:
    if v is None or (isinstance(v, (int, np.integer)) and v == 0):
        return UNLABELED_TOKEN
    if isinstance(v, (tuple, list, set, frozenset)):
        return ";".join(str(int(x)) for x in sorted(v))
    return str(int(v))


def write_labels(path, labels):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for v in labels:
            fh.write(format_label(v) + "\n")


def write_correspondences(path, rho):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for s, t in enumerate(np.asarray(rho, dtype=int), start=1):
            fh.write(f"{s},{int(t) + 1}\n")


def write_ranked_lists(path, rankings):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for row in rankings:
            fh.write(",".join(str(int(v) + 1) for v in row) + "\n")


def write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


# -- manifest -------------------------------------------------------------


@dataclass(frozen=True)
class M2cpcSettings:
    gamma_a: float = 1e-3
    gamma_w: float = 1e-3
    gamma_b: float = 1e-1
    kernel_width: object = None
    mp_mode: str = LAPLACIAN_EXACT
    correspondences: str = "fmbsd"
    knn: int | None = None

    def __post_init__(self):
        for name in ("gamma_a", "gamma_w", "gamma_b"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v) and v >= 0):
                raise ValidationError(f"m2cpc.{name} must be a nonnegative number, got {v!r}")
        if self.mp_mode not in MP_MODES:
            raise ValidationError(f"m2cpc.mp_mode must be one of {MP_MODES}, got {self.mp_mode!r}")
        if self.correspondences not in P_SOURCES:
            raise ValidationError(f"m2cpc.correspondences must be one of {P_SOURCES}, got {self.correspondences!r}")
        if self.knn is not None and (not isinstance(self.knn, int) or self.knn < 1):
            raise ValidationError(f"m2cpc.knn must be a positive integer, got {self.knn!r}")


@dataclass
class ModalityData:
    id: str
    features: FeatureMatrix
    labels: list | None = None
    truth: list | None = None
    test_features: FeatureMatrix | None = None
    test_labels: list | None = None

    @property
    def n(self):
        return self.features.n_samples

    @property
    def eval_labels(self):
        """Labels used for scoring: ``truth`` when given, else ``labels``."""
        return self.truth if self.truth is not None else self.labels


@dataclass
class Dataset:
    modalities: list
    ground_truth: dict = field(default_factory=dict)
    classes: int | None = None
    fmbsd: FmbsdConfig = field(default_factory=FmbsdConfig)
    m2cpc: M2cpcSettings = field(default_factory=M2cpcSettings)
    source: Path | None = None

    @property
    def ids(self):
        return [m.id for m in self.modalities]


def _section(raw, key, allowed, factory, where):
    sec = raw.get(key, {}) or {}
    if not isinstance(sec, dict):
        raise ParseError(f"{where}: '{key}' must be an object")
    unknown = sorted(set(sec) - set(allowed))
    if unknown:
        raise ParseError(f"{where}: unknown '{key}' keys {unknown}")
    try:
        return factory(**sec)
    except (TypeError, ValidationError) as exc:
        raise ParseError(f"{where}: invalid '{key}' section: {exc}") from exc


def _aligned(labels, n, path, what):
    if labels is not None and len(labels) != n:
        raise ParseError(f"{path}: {len(labels)} {what} rows for {n} feature rows")
    return labels


def load_dataset(manifest) -> Dataset:
    """Load a manifest and everything it references.

    Paths are resolved relative to the manifest's directory. ``ground_truth``
    is either one correspondence file (first modality to second) or an
    object mapping a modality id to the file that maps the first modality
    onto it.
    """
    where = Path(manifest)
    try:
        with _open(where) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{where}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"{where}: manifest must be a JSON object")
    unknown = sorted(set(raw) - set(MANIFEST_KEYS))
    if unknown:
        raise ParseError(f"{where}: unknown manifest keys {unknown}")
    base = where.parent
    classes = raw.get("classes")
    if classes is not None and (not isinstance(classes, int) or isinstance(classes, bool) or classes < 1):
        raise ParseError(f"{where}: 'classes' must be a positive integer")

    mods_raw = raw.get("modalities")
    if not isinstance(mods_raw, list) or not mods_raw:
        raise ParseError(f"{where}: 'modalities' must be a non-empty array")
    mods, seen = [], set()
    for pos, entry in enumerate(mods_raw, start=1):
        if not isinstance(entry, dict) or "features" not in entry:
            raise ParseError(f"{where}: modality #{pos} needs at least a 'features' path")
        bad = sorted(set(entry) - set(MODALITY_KEYS))
        if bad:
            raise ParseError(f"{where}: modality #{pos} has unknown keys {bad}")
        mid = str(entry.get("id", f"m{pos}"))
        if mid in seen:
            raise ParseError(f"{where}: duplicate modality id {mid!r}")
        seen.add(mid)
        X = read_features(base / entry["features"], mid)
        m = ModalityData(mid, X)
        for key in ("labels", "truth"):
            if key in entry:
                path = base / entry[key]
                setattr(m, key, _aligned(read_labels(path, classes), m.n, path, key))
        if "test_features" in entry:
            m.test_features = read_features(base / entry["test_features"], mid)
            if m.test_features.n_features != X.n_features:
                raise ParseError(f"{base / entry['test_features']}: {m.test_features.n_features} columns, "
                                 f"training features have {X.n_features}")
        if "test_labels" in entry:
            if m.test_features is None:
                raise ParseError(f"{where}: modality {mid!r} has test_labels without test_features")
            path = base / entry["test_labels"]
            m.test_labels = _aligned(read_labels(path, classes), m.test_features.n_samples, path, "test label")
        mods.append(m)

    gt = {}
    gt_raw = raw.get("ground_truth")
    if gt_raw is not None:
        if len(mods) < 2:
            raise ParseError(f"{where}: ground_truth needs at least two modalities")
        if isinstance(gt_raw, str):
            gt_raw = {mods[1].id: gt_raw}
        if not isinstance(gt_raw, dict):
            raise ParseError(f"{where}: 'ground_truth' must be a path or an object")
        ids = [m.id for m in mods]
        for mid, rel in gt_raw.items():
            if mid not in ids or ids.index(mid) == 0:
                raise ParseError(f"{where}: ground_truth target {mid!r} is not a non-first modality")
            k = ids.index(mid)
            gt[(0, k)] = read_correspondences(base / rel, mods[0].n, mods[k].n)

    fm = _section(raw, "fmbsd", FMBSD_KEYS, FmbsdConfig, where)
    m2 = _section(raw, "m2cpc", M2CPC_KEYS, M2cpcSettings, where)
    return Dataset(mods, gt, classes, fm, m2, where)
