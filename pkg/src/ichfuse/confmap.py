"""Confidence-map data model: label spaces, slices, scans and datasets.

A *confidence map* is the set of per-slice class-probability vectors produced
by a slice-level classifier.  Scans group slices; a :class:`Dataset` binds a
list of scans to a fixed :class:`LabelSpace`.

Two on-disk forms are supported and round-trip exactly:

CSV
    ``scan_id,slice_id,p_EDH,p_IPH,p_IVH,p_SAH,p_SDH[,label]`` -- one row per
    slice, UTF-8, ``.`` decimal point, floats written in shortest round-trip
    form.  The probability columns follow the label-space order.  The optional
    ``label`` column holds the scan's class identifier (repeated on every row
    of the scan, empty when unknown).

JSON manifest
    ``{"classes": [...], "scans": [{"scan_id", "label", "slices":
    [{"slice_id", "p": [...]}]}]}``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DEFAULT_CLASSES = ("EDH", "IPH", "IVH", "SAH", "SDH")

SIMPLEX_TOL = 1e-9


class DegenerateVectorError(ValueError):
    """Raised when a raw score vector cannot be normalized onto the simplex."""


class DatasetFormatError(ValueError):
    """Raised when a CSV/JSON confidence map cannot be parsed."""


@dataclass(frozen=True)
class LabelSpace:
    classes: tuple[str, ...] = DEFAULT_CLASSES

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if len(self.classes) < 2:
            raise ValueError("a label space needs at least two classes")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError(f"duplicate class identifiers in {self.classes}")

    @property
    def C(self) -> int:
        return len(self.classes)

    def index(self, label: str) -> int:
        try:
            return self.classes.index(label)
        except ValueError:
            raise KeyError(f"unknown class label {label!r}") from None

    def columns(self) -> list[str]:
        return [f"p_{c}" for c in self.classes]


@dataclass(frozen=True)
class SliceRecord:
    slice_id: str
    confidence: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "confidence", tuple(float(p) for p in self.confidence))


@dataclass(frozen=True)
class ScanRecord:
    scan_id: str
    slices: tuple[SliceRecord, ...]
    true_label: str | None = None
    _probs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "slices", tuple(self.slices))
        widths = {len(s.confidence) for s in self.slices}
        if len(widths) > 1:
            probs = None  # ragged: representable so validation can report it
        else:
            probs = np.array([s.confidence for s in self.slices], dtype=np.float64)
            probs = probs.reshape(len(self.slices), widths.pop() if widths else 0)
            probs.setflags(write=False)
        object.__setattr__(self, "_probs", probs)

    @property
    def n(self) -> int:
        return len(self.slices)

    @property
    def probs(self) -> np.ndarray:
        """Read-only ``(n, C)`` array of slice confidence vectors."""
        if self._probs is None:
            raise ValueError(f"scan {self.scan_id!r} mixes confidence vectors of different lengths")
        return self._probs

    @property
    def slice_ids(self) -> list[str]:
        return [s.slice_id for s in self.slices]

    @classmethod
    def from_array(cls, scan_id, probs, true_label=None, slice_ids=None) -> ScanRecord:
        probs = np.asarray(probs, dtype=np.float64)
        if slice_ids is None:
            slice_ids = [str(i) for i in range(len(probs))]
        slices = tuple(SliceRecord(sid, tuple(row)) for sid, row in zip(slice_ids, probs))
        return cls(scan_id, slices, true_label)


@dataclass(frozen=True)
class Dataset:
    label_space: LabelSpace
    scans: tuple[ScanRecord, ...]

    def __post_init__(self):
        object.__setattr__(self, "scans", tuple(self.scans))

    def __len__(self):
        return len(self.scans)

    def __iter__(self):
        return iter(self.scans)

    def labels(self) -> np.ndarray:
        """Class indices of the scans' true labels; raises if any is missing."""
        out = []
        for scan in self.scans:
            if scan.true_label is None:
                raise ValueError(f"scan {scan.scan_id!r} has no true label")
            out.append(self.label_space.index(scan.true_label))
        return np.asarray(out, dtype=np.int64)

    @property
    def is_labeled(self) -> bool:
        return all(s.true_label is not None for s in self.scans)

    def subset(self, scan_ids: Iterable[str]) -> Dataset:
        wanted = set(scan_ids)
        return Dataset(self.label_space, tuple(s for s in self.scans if s.scan_id in wanted))


def normalize_confidence(v) -> np.ndarray:
    """Scale a nonnegative score vector onto the probability simplex.

    >>> normalize_confidence([2, 1, 1, 0, 0]).tolist()
    [0.5, 0.25, 0.25, 0.0, 0.0]
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DegenerateVectorError("expected a nonempty 1-D vector")
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise DegenerateVectorError("negative or non-finite entries: degenerate vector")
    total = v.sum()
    if total <= 0:
        raise DegenerateVectorError("all-zero input: degenerate vector")
    return v / total


def validate_dataset(d: Dataset) -> list[str]:
    """Return a list of human-readable invariant violations (empty if valid)."""
    violations = []
    C = d.label_space.C
    seen_scans = set()
    for scan in d.scans:
        sid = scan.scan_id
        if sid in seen_scans:
            violations.append(f"scan {sid!r}: duplicate scan_id")
        seen_scans.add(sid)
        if scan.n < 1:
            violations.append(f"scan {sid!r}: no slices")
        if scan.true_label is not None and scan.true_label not in d.label_space.classes:
            violations.append(f"scan {sid!r}: unknown label {scan.true_label!r}")
        seen_slices = set()
        for sl in scan.slices:
            where = f"scan {sid!r} slice {sl.slice_id!r}"
            if sl.slice_id in seen_slices:
                violations.append(f"{where}: duplicate slice_id within scan")
            seen_slices.add(sl.slice_id)
            violations += [f"{where}: {msg}" for msg in slice_problems(sl.confidence, C)]
    return violations


def slice_problems(p, C: int) -> list[str]:
    """Reasons a single confidence vector is not a valid ``C``-class distribution."""
    p = np.asarray(p, dtype=np.float64)
    if p.size != C:
        return [f"expected {C} probabilities, got {p.size}"]
    if not np.all(np.isfinite(p)):
        return ["non-finite probability"]
    out = []
    if np.any(p < 0) or np.any(p > 1):
        out.append("probability outside [0, 1]")
    if abs(p.sum() - 1.0) > SIMPLEX_TOL:
        out.append(f"probabilities sum to {p.sum():.12g}, not 1")
    return out


def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv(d: Dataset, fp) -> None:
    """Write ``d`` as a confidence-map CSV to an open text stream."""
    w = csv.writer(fp, lineterminator="\n")
    with_label = any(s.true_label is not None for s in d.scans)
    header = ["scan_id", "slice_id", *d.label_space.columns()]
    if with_label:
        header.append("label")
    w.writerow(header)
    for scan in d.scans:
        for sl in scan.slices:
            row = [scan.scan_id, sl.slice_id, *(_fmt(p) for p in sl.confidence)]
            if with_label:
                row.append(scan.true_label or "")
            w.writerow(row)


def read_csv(fp) -> Dataset:
    """Parse a confidence-map CSV.

    Rows of one scan need not be contiguous; scans keep first-appearance
    order and slices keep file order.  Class names are taken from the
    ``p_<class>`` header columns.
    """
    reader = csv.reader(fp)
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetFormatError("empty CSV") from None
    if header[:2] != ["scan_id", "slice_id"]:
        raise DatasetFormatError("header must start with scan_id,slice_id")
    rest = header[2:]
    with_label = bool(rest) and rest[-1] == "label"
    pcols = rest[:-1] if with_label else rest
    if not all(c.startswith("p_") for c in pcols):
        raise DatasetFormatError(f"unexpected columns {pcols}")
    space = LabelSpace(tuple(c[2:] for c in pcols))

    order: list[str] = []
    slices: dict[str, list[SliceRecord]] = {}
    labels: dict[str, str | None] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DatasetFormatError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        scan_id, slice_id = row[0], row[1]
        try:
            p = tuple(float(x) for x in row[2 : 2 + space.C])
        except ValueError as exc:
            raise DatasetFormatError(f"line {lineno}: {exc}") from None
        label = (row[-1] or None) if with_label else None
        if scan_id not in slices:
            order.append(scan_id)
            slices[scan_id] = []
            labels[scan_id] = label
        elif labels[scan_id] != label:
            raise DatasetFormatError(f"line {lineno}: conflicting labels for scan {scan_id!r}")
        slices[scan_id].append(SliceRecord(slice_id, p))
    scans = tuple(ScanRecord(sid, tuple(slices[sid]), labels[sid]) for sid in order)
    return Dataset(space, scans)


def to_json(d: Dataset) -> dict:
    return {
        "classes": list(d.label_space.classes),
        "scans": [
            {
                "scan_id": s.scan_id,
                "label": s.true_label,
                "slices": [{"slice_id": sl.slice_id, "p": list(sl.confidence)} for sl in s.slices],
            }
            for s in d.scans
        ],
    }


def from_json(obj: dict) -> Dataset:
    try:
        space = LabelSpace(tuple(obj["classes"]))
        scans = tuple(
            ScanRecord(
                s["scan_id"],
                tuple(SliceRecord(sl["slice_id"], tuple(sl["p"])) for sl in s["slices"]),
                s.get("label"),
            )
            for s in obj["scans"]
        )
    except (KeyError, TypeError) as exc:
        raise DatasetFormatError(f"malformed manifest: {exc}") from None
    return Dataset(space, scans)


def dumps_csv(d: Dataset) -> str:
    buf = io.StringIO()
    write_csv(d, buf)
    return buf.getvalue()


def loads_csv(text: str) -> Dataset:
    return read_csv(io.StringIO(text))


def dumps_json(d: Dataset) -> str:
    return json.dumps(to_json(d), indent=1) + "\n"


def loads_json(text: str) -> Dataset:
    return from_json(json.loads(text))


def load(path) -> Dataset:
    """Load a dataset from ``.csv`` or ``.json`` by extension."""
    path = str(path)
    with open(path, encoding="utf-8", newline="") as fp:
        if path.endswith(".json"):
            return from_json(json.load(fp))
        return read_csv(fp)


def dataset_from_arrays(
    probs: Sequence[np.ndarray],
    labels: Sequence[int] | None = None,
    label_space: LabelSpace | None = None,
    prefix: str = "scan",
) -> Dataset:
    """Build a dataset from a list of ``(n_j, C)`` arrays and optional class indices."""
    space = label_space or LabelSpace()
    width = max(3, len(str(len(probs))))
    scans = []
    for j, P in enumerate(probs):
        lab = None if labels is None else space.classes[int(labels[j])]
        scans.append(ScanRecord.from_array(f"{prefix}{j:0{width}d}", P, lab))
    return Dataset(space, tuple(scans))
