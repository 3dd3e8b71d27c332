"""Latent feature space: PCA reduction followed by Shapley-value screening."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

EXACT_MAX_FEATURES = 15


@dataclass
class FeatureTable:
    """Samples x features matrix with ``(scan_id, slice_id)`` row identifiers.

    ``labels`` is optional and holds class identifiers (strings) per row.
    """

    sample_ids: list[tuple[str, str]]
    X: np.ndarray
    feature_names: list[str]
    labels: list[str] | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            raise ValueError("feature matrix must be 2-D")
        n, d = self.X.shape
        if d < 1:
            raise ValueError("need at least one feature")
        if len(self.sample_ids) != n:
            raise ValueError("sample_ids length does not match the matrix")
        if len(self.feature_names) != d:
            raise ValueError("feature_names length does not match the matrix")
        if len(set(self.feature_names)) != d:
            raise ValueError("feature names must be unique")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("feature table contains missing or non-finite values")
        if self.labels is not None and len(self.labels) != n:
            raise ValueError("labels length does not match the matrix")

    @property
    def shape(self):
        return self.X.shape

    def with_matrix(self, X, feature_names) -> FeatureTable:
        return FeatureTable(list(self.sample_ids), X, list(feature_names), self.labels)

    def rows(self, idx) -> FeatureTable:
        idx = np.asarray(idx, dtype=np.int64)
        labels = None if self.labels is None else [self.labels[i] for i in idx]
        return FeatureTable([self.sample_ids[i] for i in idx], self.X[idx], list(self.feature_names), labels)

    def select(self, names: Sequence[str]) -> FeatureTable:
        idx = [self.feature_names.index(n) for n in names]
        return self.with_matrix(self.X[:, idx], names)

    def label_indices(self, classes: Sequence[str]) -> np.ndarray:
        if self.labels is None:
            raise ValueError("feature table has no labels")
        lookup = {c: i for i, c in enumerate(classes)}
        try:
            return np.array([lookup[l] for l in self.labels], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"unknown label {exc.args[0]!r}") from None


def write_table(t: FeatureTable, fp) -> None:
    """CSV: ``scan_id,slice_id,<feature names...>[,label]``."""
    w = csv.writer(fp, lineterminator="\n")
    w.writerow(["scan_id", "slice_id", *t.feature_names, *(["label"] if t.labels is not None else [])])
    for i, (scan_id, slice_id) in enumerate(t.sample_ids):
        row = [scan_id, slice_id, *(repr(float(v)) for v in t.X[i])]
        if t.labels is not None:
            row.append(t.labels[i])
        w.writerow(row)


def read_table(fp) -> FeatureTable:
    reader = csv.reader(fp)
    header = next(reader)
    if header[:2] != ["scan_id", "slice_id"]:
        raise ValueError("feature CSV header must start with scan_id,slice_id")
    has_label = header[-1] == "label"
    names = header[2:-1] if has_label else header[2:]
    ids, rows, labels = [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ValueError(f"line {lineno}: expected {len(header)} fields")
        ids.append((row[0], row[1]))
        try:
            rows.append([float(v) for v in row[2 : 2 + len(names)]])
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
        if has_label:
            labels.append(row[-1])
    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(names))
    return FeatureTable(ids, X, names, labels if has_label else None)


def dumps_table(t: FeatureTable) -> str:
    buf = io.StringIO()
    write_table(t, buf)
    return buf.getvalue()


def loads_table(text: str) -> FeatureTable:
    return read_table(io.StringIO(text))


# --------------------------------------------------------------------- PCA


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (k, d), orthonormal rows
    explained_variance: np.ndarray  # (k,), non-increasing

    @property
    def k(self) -> int:
        return self.components.shape[0]

    def to_json(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance": self.explained_variance.tolist(),
        }

    @classmethod
    def from_json(cls, obj) -> PcaModel:
        return cls(np.array(obj["mean"]), np.array(obj["components"]), np.array(obj["explained_variance"]))


def fit_pca(t: FeatureTable | np.ndarray, k: int) -> PcaModel:
    """Principal axes from the eigendecomposition of the sample covariance.

    Each component's largest-magnitude coordinate is made positive so that
    fits are reproducible.
    """
    X = t.X if isinstance(t, FeatureTable) else np.asarray(t, dtype=np.float64)
    n, d = X.shape
    if n < 2:
        raise ValueError("PCA needs at least two samples")
    if not 1 <= k <= min(n - 1, d):
        raise ValueError(f"k={k} outside 1..min(samples-1, features)={min(n - 1, d)}")
    mean = X.mean(axis=0)
    cov = np.cov(X - mean, rowvar=False, ddof=1).reshape(d, d)
    if not np.any(np.diag(cov) > 0):
        raise ValueError("zero-variance feature table")
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(-evals, kind="stable")[:k]
    comps = evecs[:, order].T.copy()
    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(k), pivot])
    comps *= signs[:, None]
    ev = np.clip(evals[order], 0.0, None)
    return PcaModel(mean, comps, ev)


def transform_pca(m: PcaModel, t: FeatureTable | np.ndarray):
    """Project onto the principal axes: ``(x - mean) @ components.T``."""
    X = t.X if isinstance(t, FeatureTable) else np.asarray(t, dtype=np.float64)
    if X.shape[1] != m.mean.size:
        raise ValueError(f"table has {X.shape[1]} columns, model expects {m.mean.size}")
    Z = (X - m.mean) @ m.components.T
    if isinstance(t, FeatureTable):
        return t.with_matrix(Z, [f"pc{i + 1}" for i in range(m.k)])
    return Z


def reduce_features(t: FeatureTable, k: int = 50) -> tuple[PcaModel, FeatureTable]:
    """Fit and apply PCA, clamping ``k`` to what the table supports."""
    n, d = t.shape
    limit = min(n - 1, d)
    if k > limit:
        logger.warning("PCA k=%d exceeds table rank bound %d; using %d", k, limit, limit)
        k = limit
    m = fit_pca(t, k)
    return m, transform_pca(m, t)


def reduce_features_grouped(t: FeatureTable, groups: dict[str, Sequence[str]], k: int = 50):
    """PCA per feature group (e.g. one per extractor), components concatenated."""
    models, blocks, names = {}, [], []
    for gname, cols in groups.items():
        m, z = reduce_features(t.select(list(cols)), k)
        models[gname] = m
        blocks.append(z.X)
        names += [f"{gname}_{c}" for c in z.feature_names]
    return models, t.with_matrix(np.hstack(blocks), names)


# ----------------------------------------------------------------- Shapley


@dataclass
class ImportanceReport:
    feature_names: list[str]
    scores: np.ndarray
    shares: np.ndarray
    threshold: float = 0.01
    selected: list[str] = field(default_factory=list)
    mode: str = "exact"

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "threshold": self.threshold,
            "features": [
                {"name": n, "score": float(s), "share": float(sh)}
                for n, s, sh in zip(self.feature_names, self.scores, self.shares)
            ],
            "selected": list(self.selected),
        }


def _shapley_weights(d: int) -> np.ndarray:
    """Weight ``|S|! (d-|S|-1)! / d!`` indexed by coalition size."""
    return np.array([math.factorial(s) * math.factorial(d - s - 1) / math.factorial(d) for s in range(d)])


def _as_2d(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    return values[:, None] if values.ndim == 1 else values


def exact_shapley(model_fn: Callable, x: np.ndarray, baseline: np.ndarray) -> np.ndarray:
    """Shapley values by enumerating all ``2**d`` coalitions.

    Absent features take their ``baseline`` value.  ``model_fn`` maps an
    ``(m, d)`` array to ``(m,)`` or ``(m, K)`` outputs; the result has shape
    ``(d,)`` or ``(d, K)`` accordingly.
    """
    x = np.asarray(x, dtype=np.float64)
    baseline = np.asarray(baseline, dtype=np.float64)
    d = x.size
    if d > EXACT_MAX_FEATURES:
        raise ValueError(f"exact Shapley limited to d <= {EXACT_MAX_FEATURES}, got {d}")
    masks = np.arange(2**d)
    member = ((masks[:, None] >> np.arange(d)) & 1).astype(bool)
    points = np.where(member, x, baseline)
    raw = np.asarray(model_fn(points))
    v = _as_2d(raw)
    sizes = member.sum(axis=1)
    w = _shapley_weights(d)
    phi = np.zeros((d, v.shape[1]))
    for i in range(d):
        without = masks[~member[:, i]]
        phi[i] = (w[sizes[without]][:, None] * (v[without | (1 << i)] - v[without])).sum(axis=0)
    return phi[:, 0] if raw.ndim == 1 else phi


def permutation_shapley(model_fn: Callable, x: np.ndarray, baseline: np.ndarray, samples: int, rng) -> np.ndarray:
    """Monte-Carlo Shapley values from ``samples`` random feature orderings."""
    x = np.asarray(x, dtype=np.float64)
    baseline = np.asarray(baseline, dtype=np.float64)
    d = x.size
    perms = np.argsort(rng.random((samples, d)), axis=1)
    # row j of a permutation block: first j features of the ordering present
    points = np.repeat(baseline[None, :], samples * (d + 1), axis=0).reshape(samples, d + 1, d)
    for j in range(1, d + 1):
        points[np.arange(samples), j:, perms[:, j - 1]] = x[perms[:, j - 1]][:, None]
    raw = np.asarray(model_fn(points.reshape(-1, d)))
    v = _as_2d(raw).reshape(samples, d + 1, -1)
    marginal = np.diff(v, axis=1)  # (samples, d, K) contribution of perms[:, j]
    phi = np.zeros((d, v.shape[2]))
    np.add.at(phi, perms.ravel(), marginal.reshape(samples * d, -1))
    phi /= samples
    return phi[:, 0] if raw.ndim == 1 else phi


def shapley_values(model_fn, X, background, mode="exact", samples=1000, seed=0) -> np.ndarray:
    """Per-sample Shapley values, shape ``(m, d)`` or ``(m, d, K)``."""
    X = np.atleast_2d(np.asarray(X.X if isinstance(X, FeatureTable) else X, dtype=np.float64))
    bg = background.X if isinstance(background, FeatureTable) else np.asarray(background, dtype=np.float64)
    bg = np.atleast_2d(bg)
    if bg.shape[0] == 0:
        raise ValueError("empty background table")
    baseline = bg.mean(axis=0)
    if mode == "exact":
        return np.stack([exact_shapley(model_fn, x, baseline) for x in X])
    if mode == "montecarlo":
        if samples < 1:
            raise ValueError("montecarlo mode needs samples >= 1")
        rng = np.random.default_rng(seed)
        return np.stack([permutation_shapley(model_fn, x, baseline, samples, rng) for x in X])
    raise ValueError(f"unknown mode {mode!r}")


def shapley_importance(
    model_fn,
    t: FeatureTable,
    background: FeatureTable,
    mode: str = "exact",
    samples: int = 1000,
    seed: int = 0,
    threshold: float = 0.01,
) -> ImportanceReport:
    """Mean-|Shapley| importance per feature, normalized to shares.

    For multi-output models the absolute values are summed over outputs.
    """
    phi = shapley_values(model_fn, t, background, mode, samples, seed)
    mag = np.abs(phi)
    if mag.ndim == 3:
        mag = mag.sum(axis=2)
    scores = mag.mean(axis=0)
    total = scores.sum()
    if total <= 0:
        raise ValueError("model output does not depend on any feature")
    shares = scores / total
    report = ImportanceReport(list(t.feature_names), scores, shares, threshold, mode=mode)
    report.selected = select_features(report, threshold)
    return report


def select_features(r: ImportanceReport, threshold: float = 0.01) -> list[str]:
    """Features whose share strictly exceeds ``threshold``, in original order."""
    return [n for n, s in zip(r.feature_names, r.shares) if s > threshold]
