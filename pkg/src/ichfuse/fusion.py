"""Scan-level decision fusion with an entropy-aware Sugeno lambda-measure.

Every slice of a scan carries a class-probability vector.  The slice's fuzzy
density is its top-class probability (``g = 1 - E`` with the ambiguity score
``E = 1 - max_k p_k``).  The densities generate a Sugeno lambda-measure on
the set of slices, and each class score is the Choquet integral of that
class's slice probabilities against the measure.  The scan decision is the
arg-max class.

Two measure modes are provided:

``exact``
    lambda is the root of ``prod(1 + lambda * g_i) = 1 + lambda`` in
    ``(-1, inf)``, so the measure is normalized (``mu(all slices) = 1``).
``grid``
    lambda is a fixed hyper-parameter (typically picked by
    :func:`grid_search_lambda` on labelled scans).  The tail measures are
    divided by ``mu(all slices)`` to restore normalization; this rescales all
    class scores of a scan by one positive constant and leaves the decision
    unchanged.

and two orderings for the Choquet sum:

``paper``
    slices are sorted once by their top-class confidence and that single
    order is used for every class.  Increments may then be negative.
``classical``
    the textbook Choquet integral: slices are sorted by the integrand of
    each class separately.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .confmap import Dataset, ScanRecord

MEASURE_MODES = ("exact", "grid")
SORT_MODES = ("paper", "classical")
BASELINES = ("mean", "majority", "learned")

_SUM_TOL = 1e-12


class SingleSliceMeasureError(ValueError):
    """A one-slice scan with density below one admits no normalized measure."""


@dataclass(frozen=True)
class FusionConfig:
    measure: str = "exact"
    sort: str = "paper"
    lam: float | None = None
    grid_start: float = -0.99
    grid_stop: float = -0.01
    grid_step: float = 0.01
    normalize: bool = True

    def __post_init__(self):
        if self.measure not in MEASURE_MODES:
            raise ValueError(f"measure must be one of {MEASURE_MODES}, got {self.measure!r}")
        if self.sort not in SORT_MODES:
            raise ValueError(f"sort must be one of {SORT_MODES}, got {self.sort!r}")
        if not self.grid_step > 0:
            raise ValueError("grid_step must be positive")
        if not (-1.0 < self.grid_start <= self.grid_stop < 0.0):
            raise ValueError("grid range must lie inside (-1, 0)")
        if self.lam is not None and not self.lam > -1.0:
            raise ValueError("lambda must be greater than -1")

    def grid(self) -> np.ndarray:
        """Candidate lambdas ``grid_start, grid_start + step, ..., <= grid_stop``."""
        count = int(math.floor((self.grid_stop - self.grid_start) / self.grid_step + 1e-9)) + 1
        values = self.grid_start + self.grid_step * np.arange(count)
        return np.round(values, 12)


@dataclass(frozen=True)
class FuzzyDensities:
    g: np.ndarray
    lam: float
    mode: str
    normalized: bool


@dataclass
class FusedScan:
    scan_id: str
    F: np.ndarray
    decision: int
    lam: float | None = None
    mu_full: float = 1.0
    order: tuple[int, ...] | None = None
    method: str = "fuzzy"
    diagnostics: dict = field(default_factory=dict)


def entropy_weight(p) -> tuple[float, float]:
    """Ambiguity score and fuzzy density of one confidence vector.

    Returns ``(E, g)`` with ``g = max_k p_k`` and ``E = 1 - g``.
    """
    g = float(np.max(p))
    return 1.0 - g, g


def densities(P: np.ndarray) -> np.ndarray:
    """Row-wise fuzzy densities of an ``(n, C)`` probability array."""
    return np.asarray(P, dtype=np.float64).max(axis=1)


def solve_lambda(g) -> float:
    """Solve ``1 + lam = prod(1 + lam * g_i)`` for the non-trivial root.

    The root is negative when the densities sum to more than one, positive
    when they sum to less than one, and zero when they sum to one.  If some
    density equals one and the sum exceeds one, the normalizing measure is
    the ``lam -> -1`` limit and ``-1.0`` is returned; the same value comes
    back when the true root lies within one ulp of -1.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 1 or g.size == 0:
        raise ValueError("densities must be a nonempty 1-D array")
    if not np.all(np.isfinite(g)) or np.any(g < 0) or np.any(g > 1):
        raise ValueError("densities must lie in [0, 1]")
    total = float(g.sum())
    if g.size == 1:
        if abs(g[0] - 1.0) <= _SUM_TOL:
            return 0.0
        raise SingleSliceMeasureError("single-slice measure not normalizable")
    if abs(total - 1.0) <= _SUM_TOL:
        return 0.0
    if np.count_nonzero(g) < 2:
        raise ValueError("at least two positive densities are needed to normalize the measure")

    def f(lam):
        return np.prod(1.0 + lam * g) - (1.0 + lam)

    if total > 1.0:
        if np.any(g >= 1.0):
            return -1.0
        # f is convex with f(0) = 0 and f'(0) = total - 1 > 0, so it is
        # negative just left of zero and nonnegative at -1.
        lo, hi = -1.0, -0.5
        while f(hi) >= 0.0:
            hi *= 0.5
            if hi > -1e-300:
                return 0.0
    else:
        lo = 1.0
        while f(lo) >= 0.0:
            lo *= 0.5
            if lo < 1e-300:
                return 0.0
        hi = 2.0 * lo
        while f(hi) <= 0.0:
            lo, hi = hi, 2.0 * hi
    return float(brentq(f, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500))


def tail_measures(g_sorted, lam: float) -> np.ndarray:
    """Measures of the tail sets ``A_i = {s_i, ..., s_n}`` for ordered densities.

    Uses the Sugeno composition ``mu(A_i) = g_i + mu(A_{i+1}) + lam * g_i *
    mu(A_{i+1})`` starting from ``mu(A_n) = g_n``.
    """
    g = np.asarray(g_sorted, dtype=np.float64)
    mu = np.empty_like(g)
    acc = 0.0
    for i in range(g.size - 1, -1, -1):
        acc = g[i] + acc + lam * g[i] * acc
        mu[i] = acc
    return mu


def subset_measure(g, lam: float, i: int) -> float:
    """``mu(A_i)`` for 1-based start index ``i`` of the ordered densities ``g``."""
    g = np.asarray(g, dtype=np.float64)
    if not 1 <= i <= g.size:
        raise IndexError(f"start index {i} outside 1..{g.size}")
    return float(tail_measures(g[i - 1 :], lam)[0])


def fuzzy_densities(scan: ScanRecord, cfg: FusionConfig) -> FuzzyDensities:
    g = densities(scan.probs)
    if cfg.measure == "exact":
        # sorted so that rounding in the product cannot depend on slice order
        lam = solve_lambda(np.sort(g))
    else:
        lam = _grid_lambda(cfg)
    return FuzzyDensities(g, lam, cfg.measure, cfg.normalize)


def _grid_lambda(cfg: FusionConfig) -> float:
    if cfg.lam is None:
        raise ValueError("grid mode needs a lambda (run grid_search_lambda first)")
    return float(cfg.lam)


def max_confidence_order(P: np.ndarray) -> np.ndarray:
    """Ascending order by top-class confidence.

    Ties are broken by the full probability vector so that the result does
    not depend on the input order of the slices.
    """
    P = np.asarray(P)
    keys = [P[:, k] for k in range(P.shape[1] - 1, -1, -1)]
    keys.append(P.max(axis=1))
    return np.lexsort(keys)


def class_order(P: np.ndarray, k: int) -> np.ndarray:
    """Ascending order by class ``k`` probability, content-based tie-break."""
    P = np.asarray(P)
    keys = [P[:, j] for j in range(P.shape[1] - 1, -1, -1)]
    keys.append(P.max(axis=1))
    keys.append(P[:, k])
    return np.lexsort(keys)


def choquet_scores(P: np.ndarray, lam: float, sort: str = "paper", normalize: bool = True):
    """Per-class Choquet integrals of an ``(n, C)`` probability array.

    Returns ``(F, mu_full, order)``; ``order`` is the global slice order in
    paper mode and ``None`` in classical mode.
    """
    P = np.asarray(P, dtype=np.float64)
    g = P.max(axis=1)
    n, C = P.shape
    if sort == "paper":
        order = max_confidence_order(P)
        mu = tail_measures(g[order], lam)
        increments = np.diff(P[order], axis=0, prepend=np.zeros((1, C)))
        F = mu @ increments
        mu_full = float(mu[0])
    else:
        order = None
        F = np.empty(C)
        mu_full = None
        for k in range(C):
            ok = class_order(P, k)
            mu = tail_measures(g[ok], lam)
            col = P[ok, k]
            F[k] = mu @ np.diff(col, prepend=0.0)
            mu_full = float(mu[0])
    if normalize and mu_full > 0:
        F = F / mu_full
    return F, mu_full, None if order is None else tuple(int(i) for i in order)


def choquet_fuse(scan: ScanRecord, cfg: FusionConfig | None = None) -> FusedScan:
    """Fuse a scan's slices into class scores and an arg-max decision."""
    cfg = cfg or FusionConfig()
    P = scan.probs
    if scan.n == 1:
        F = P[0].copy()
        return FusedScan(scan.scan_id, F, int(np.argmax(F)), None, 1.0, (0,), "fuzzy")
    fd = fuzzy_densities(scan, cfg)
    F, mu_full, order = choquet_scores(P, fd.lam, cfg.sort, cfg.normalize)
    return FusedScan(scan.scan_id, F, int(np.argmax(F)), fd.lam, mu_full, order, "fuzzy")


def fuse_dataset(d: Dataset, cfg: FusionConfig | None = None) -> list[FusedScan]:
    return [choquet_fuse(s, cfg) for s in d.scans]


def _grid_scores(P: np.ndarray, lams: np.ndarray, sort: str) -> np.ndarray:
    """Class scores for every candidate lambda at once, shape ``(G, C)``.

    Normalization by ``mu(all slices)`` is skipped: it never changes the
    arg-max.
    """
    g = P.max(axis=1)
    n, C = P.shape
    if n == 1:
        return np.broadcast_to(P[0], (lams.size, C))

    def tails(gs):
        mu = np.empty((lams.size, n))
        acc = np.zeros(lams.size)
        for i in range(n - 1, -1, -1):
            acc = gs[i] + acc + lams * gs[i] * acc
            mu[:, i] = acc
        return mu

    if sort == "paper":
        order = max_confidence_order(P)
        inc = np.diff(P[order], axis=0, prepend=np.zeros((1, C)))
        return tails(g[order]) @ inc
    out = np.empty((lams.size, C))
    for k in range(C):
        ok = class_order(P, k)
        out[:, k] = tails(g[ok]) @ np.diff(P[ok, k], prepend=0.0)
    return out


def grid_search_lambda(validation: Dataset, cfg: FusionConfig | None = None, return_scores=False):
    """Pick the grid lambda with the best scan-level accuracy on labelled scans.

    Accuracy ties go to the candidate closest to zero.  With
    ``return_scores=True`` the ``(grid, accuracies)`` arrays are returned as
    well.
    """
    cfg = cfg or FusionConfig(measure="grid")
    if not validation.is_labeled:
        raise ValueError("grid search needs a labelled validation set")
    if len(validation) == 0:
        raise ValueError("empty validation set")
    lams = cfg.grid()
    y = validation.labels()
    correct = np.zeros(lams.size, dtype=np.int64)
    for scan, label in zip(validation.scans, y):
        scores = _grid_scores(scan.probs, lams, cfg.sort)
        correct += np.argmax(scores, axis=1) == label
    acc = correct / len(y)
    by_closeness = np.argsort(-lams, kind="stable")  # -0.01 first, -0.99 last
    best = by_closeness[np.argmax(acc[by_closeness])]
    lam = float(lams[best])
    if return_scores:
        return lam, lams, acc
    return lam


def scan_summary(P: np.ndarray) -> np.ndarray:
    """Fixed-length scan descriptor: per-class mean, max, min and std."""
    P = np.asarray(P, dtype=np.float64)
    return np.concatenate([P.mean(0), P.max(0), P.min(0), P.std(0)])


class LearnedFusion:
    """Small neural network mapping a scan summary to class probabilities.

    Wraps a single-component :class:`~ichfuse.boostnet.BoostEnsemble`
    trained on :func:`scan_summary` features.
    """

    def __init__(self, ensemble=None):
        self.ensemble = ensemble

    @staticmethod
    def default_config(seed=0):
        from .boostnet import TrainConfig

        return TrainConfig(learning_rate=0.01, epochs=300, batch_size=16, n_components=1, seed=seed)

    def fit(self, d: Dataset, cfg=None) -> LearnedFusion:
        from .boostnet import train_boost

        X = np.stack([scan_summary(s.probs) for s in d.scans])
        y = d.labels()
        self.ensemble = train_boost(X, y, d.label_space.C, cfg or self.default_config())
        return self

    def predict_proba(self, scan: ScanRecord) -> np.ndarray:
        if self.ensemble is None:
            raise ValueError("learned fusion has no trained model")
        from .boostnet import ensemble_proba

        return ensemble_proba(self.ensemble, scan_summary(scan.probs)[None, :])[0]


def fuse_baseline(scan: ScanRecord, method: str = "mean", model: LearnedFusion | None = None) -> FusedScan:
    """Reference fusion rules: class-mean, majority vote or a learned network."""
    P = scan.probs
    C = P.shape[1]
    if method == "mean":
        F = P.mean(axis=0)
    elif method in ("majority", "mv"):
        method = "majority"
        votes = np.bincount(np.argmax(P, axis=1), minlength=C)
        F = votes / votes.sum()
    elif method in ("learned", "mlp"):
        method = "learned"
        if model is None or model.ensemble is None:
            raise ValueError("learned fusion needs a trained model")
        F = model.predict_proba(scan)
    else:
        raise ValueError(f"unknown baseline {method!r}")
    return FusedScan(scan.scan_id, F, int(np.argmax(F)), method=method)
