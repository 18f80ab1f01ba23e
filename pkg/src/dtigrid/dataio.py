"""Data ingestion, rasterization, the synthetic cohort generator, and all
file-format handling (CSV tables, layout JSON, PGM export)."""

import csv
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, ParseError
from .grid_embed import GRID_SIZE, CentroidSet, GridLayout, embed_grid

DEFAULT_N_TRACTS = 74


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    label: int
    fa: np.ndarray  # (n_tracts,) in [0, 1]


@dataclass
class FactorTable:
    names: list
    values: np.ndarray  # (n_subjects, n_factors) integer codes


@dataclass
class Dataset:
    records: list
    layout: GridLayout
    factors: FactorTable = None

    def images(self):
        return np.stack([rasterize(r, self.layout) for r in self.records])

    def labels(self):
        return np.array([r.label for r in self.records], dtype=np.int64)


def _atomic_write_text(path, text):
    path = os.fspath(path)
    dirname = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=dirname, prefix=".out-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_subjects_csv(path, n_tracts=DEFAULT_N_TRACTS):
    """Strict parse of `subject_id,label,fa_1..fa_n`; rejects bad rows."""
    expected = ["subject_id", "label"] + [f"fa_{i}" for i in range(1, n_tracts + 1)]
    records = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if header != expected:
            raise ParseError(
                f"{path}: bad header; expected {expected[:3]}...fa_{n_tracts}"
            )
        for rownum, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise ParseError(f"{path}: row {rownum}: wrong column count")
            sid = row[0]
            if sid in seen:
                raise ParseError(f"{path}: row {rownum}: duplicate id {sid!r}")
            seen.add(sid)
            if row[1] not in ("0", "1"):
                raise ParseError(f"{path}: row {rownum}: label must be 0 or 1")
            try:
                fa = np.array([float(v) for v in row[2:]], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"{path}: row {rownum}: {exc}") from None
            bad = np.flatnonzero(~((fa >= 0.0) & (fa <= 1.0)))
            if bad.size:
                raise ParseError(
                    f"{path}: row {rownum}: fa_{bad[0] + 1} out of [0,1]"
                )
            records.append(SubjectRecord(sid, int(row[1]), fa))
    return records


def save_subjects_csv(path, records):
    n_tracts = len(records[0].fa) if records else DEFAULT_N_TRACTS
    header = ["subject_id", "label"] + [f"fa_{i}" for i in range(1, n_tracts + 1)]
    lines = [",".join(header)]
    for r in records:
        lines.append(
            ",".join([r.subject_id, str(r.label)] + [repr(float(v)) for v in r.fa])
        )
    _atomic_write_text(path, "\n".join(lines) + "\n")


def load_centroids_csv(path):
    """Parse `tract_id,x,y,z` into a CentroidSet."""
    ids = []
    pos = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if header != ["tract_id", "x", "y", "z"]:
            raise ParseError(f"{path}: expected header tract_id,x,y,z")
        for rownum, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise ParseError(f"{path}: row {rownum}: wrong column count")
            try:
                xyz = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ParseError(f"{path}: row {rownum}: {exc}") from None
            ids.append(row[0])
            pos.append(xyz)
    if not ids:
        raise ParseError(f"{path}: no centroid rows")
    try:
        return CentroidSet(tuple(ids), np.array(pos))
    except InvalidInputError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def save_centroids_csv(path, centroids):
    lines = ["tract_id,x,y,z"]
    for tid, p in zip(centroids.tract_ids, centroids.positions):
        lines.append(",".join([tid] + [repr(float(v)) for v in p]))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def load_factors_csv(path):
    """Parse `subject_id,<factor>...`; returns (subject_ids, FactorTable)."""
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if not header or header[0] != "subject_id" or len(header) < 2:
            raise ParseError(f"{path}: expected header subject_id,<factor>...")
        names = header[1:]
        sids = []
        rows = []
        for rownum, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"{path}: row {rownum}: wrong column count")
            sids.append(row[0])
            try:
                rows.append([int(v) for v in row[1:]])
            except ValueError as exc:
                raise ParseError(f"{path}: row {rownum}: {exc}") from None
    if not sids:
        raise ParseError(f"{path}: no factor rows")
    return sids, FactorTable(names, np.array(rows, dtype=np.int64))


def save_factors_csv(path, subject_ids, factors):
    lines = [",".join(["subject_id"] + list(factors.names))]
    for sid, row in zip(subject_ids, factors.values):
        lines.append(",".join([sid] + [str(int(v)) for v in row]))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def rasterize(record, layout):
    """Place per-tract FA values at their layout cells; background stays 0."""
    if len(record.fa) != layout.occupied_count:
        raise InvalidInputError(
            f"record has {len(record.fa)} tracts, layout has "
            f"{layout.occupied_count}"
        )
    img = np.zeros((GRID_SIZE, GRID_SIZE))
    for value, (r, c) in zip(record.fa, layout.assignment.values()):
        img[r - 1, c - 1] = value
    return img


def occupancy_mask(layout):
    mask = np.zeros((GRID_SIZE, GRID_SIZE), dtype=bool)
    for r, c in layout.assignment.values():
        mask[r - 1, c - 1] = True
    return mask


@dataclass
class FactorSpec:
    name: str
    tract_indices: list
    effect: float
    signed: bool = False  # signed: value 0/1 -> effect -e/+e; else 0/1 -> 0/+e

    def delta(self, value):
        if self.signed:
            return self.effect * (2 * value - 1)
        return self.effect * value


@dataclass
class SyntheticSpec:
    n_subjects: int = 105
    n_tracts: int = DEFAULT_N_TRACTS
    factors: list = field(default_factory=list)
    baseline_mean: float = 0.45
    baseline_sigma: float = 0.05
    noise_sigma: float = 0.07
    class_balance: float = 0.5
    centroid_scale: float = 30.0

    def __post_init__(self):
        if not self.factors:
            self.factors = default_factors(self.n_tracts)
        for f in self.factors:
            if any(i >= self.n_tracts for i in f.tract_indices):
                raise InvalidInputError(
                    f"factor {f.name} touches a tract index >= {self.n_tracts}"
                )
        if not any(f.name == "class" for f in self.factors):
            raise InvalidInputError("a 'class' factor is required")


def default_factors(n_tracts=DEFAULT_N_TRACTS):
    """Binary class effect on 3 tracts plus a signed nuisance on 5 tracts."""
    return [
        FactorSpec("class", [5, 23, 61], 0.15),
        FactorSpec("nuisance", [10, 30, 40, 55, 70], 0.1, signed=True),
    ]


def spec_from_dict(d):
    factors = [
        FactorSpec(
            f["name"],
            list(f["tract_indices"]),
            float(f["effect"]),
            bool(f.get("signed", False)),
        )
        for f in d.get("factors", [])
    ]
    kwargs = {k: v for k, v in d.items() if k != "factors"}
    return SyntheticSpec(factors=factors, **kwargs)


def generate_synthetic(spec, seed):
    """Synthetic cohort with known generative factors.

    Per-tract baselines are drawn once; per subject each binary factor is
    drawn, its effect added on its tracts, Gaussian noise added, and FA
    clipped to [0, 1].  A layout is derived from random 3D centroids so the
    full pipeline is exercised end to end.  Deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    baseline = np.clip(
        rng.normal(spec.baseline_mean, spec.baseline_sigma, size=spec.n_tracts),
        0.0,
        1.0,
    )
    centroids = CentroidSet(
        tuple(f"tract_{i:02d}" for i in range(1, spec.n_tracts + 1)),
        rng.normal(0.0, spec.centroid_scale, size=(spec.n_tracts, 3)),
    )
    layout = embed_grid(centroids)
    records = []
    fvalues = np.zeros((spec.n_subjects, len(spec.factors)), dtype=np.int64)
    for s in range(spec.n_subjects):
        fa = baseline.copy()
        for kf, factor in enumerate(spec.factors):
            if factor.name == "class":
                value = int(rng.random() < spec.class_balance)
            else:
                value = int(rng.random() < 0.5)
            fvalues[s, kf] = value
            fa[factor.tract_indices] += factor.delta(value)
        fa = fa + rng.normal(0.0, spec.noise_sigma, size=spec.n_tracts)
        fa = np.clip(fa, 0.0, 1.0)
        label = int(fvalues[s, [f.name for f in spec.factors].index("class")])
        records.append(SubjectRecord(f"subj_{s:04d}", label, fa))
    factors = FactorTable([f.name for f in spec.factors], fvalues)
    return Dataset(records, layout, factors)


def save_layout(path, layout):
    obj = {
        "grid_size": GRID_SIZE,
        "assignment": {tid: [int(r), int(c)] for tid, (r, c) in layout.assignment.items()},
    }
    # assignment order is the tract input order and carries the positional
    # fa_i <-> tract correspondence, so keys are not sorted
    _atomic_write_text(path, json.dumps(obj, indent=2) + "\n")


def load_layout(path):
    with open(path, encoding="utf-8") as f:
        obj = json.load(f)
    if obj.get("grid_size") != GRID_SIZE:
        raise ParseError(f"{path}: unsupported grid size {obj.get('grid_size')}")
    assignment = {tid: (int(rc[0]), int(rc[1])) for tid, rc in obj["assignment"].items()}
    return GridLayout(assignment)


def export_image(path_base, image):
    """Write a 9x9 image as CSV and 8-bit PGM (P2); pixel = round(255*value)."""
    img = np.asarray(image, dtype=np.float64)
    csv_lines = [",".join(repr(float(v)) for v in row) for row in img]
    _atomic_write_text(str(path_base) + ".csv", "\n".join(csv_lines) + "\n")
    levels = np.floor(img * 255.0 + 0.5).astype(np.int64)
    pgm = [f"P2", f"{img.shape[1]} {img.shape[0]}", "255"]
    for row in levels:
        pgm.append(" ".join(str(int(v)) for v in row))
    _atomic_write_text(str(path_base) + ".pgm", "\n".join(pgm) + "\n")
