"""Seeded synthetic confidence maps and feature tables, plus a brute-force fusion oracle.

Generator model
---------------
Each scan gets a true class and a slice count ``n`` (``min_slices +
Binomial(max_slices - min_slices, q)`` with ``q`` set so the mean is
``mean_slices``).  Each slice is *informative* with probability ``f``, where
``f`` is the configured informative fraction, optionally drawn per scan
from a Beta distribution (``informative_spread > 0``) to make scans
heterogeneous.

* informative slices draw ``Dirichlet(confident_concentration * m)`` with
  mean ``m`` placing ``confident_peak`` on the true class;
* ambiguous slices draw ``Dirichlet(ambiguous_concentration * m)`` with ``m``
  uniform, tilted by ``distractor_weight`` toward one per-scan distractor
  class drawn uniformly from all classes (so it matches the true class one
  time in ``C``).

Per-class scan counts default to the proportions of the reference cohort
(267, 547, 440, 411, 282 CT scans for EDH, IPH, IVH, SAH, SDH), multiplied by
``scale``.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, replace

import numpy as np

from .confmap import DEFAULT_CLASSES, Dataset, LabelSpace, ScanRecord, SliceRecord, dumps_csv
from .featsel import FeatureTable
from .fusion import FusedScan, solve_lambda

COHORT_SCANS = (267, 547, 440, 411, 282)
ORACLE_MAX_SLICES = 12


class OracleError(AssertionError):
    """The enumerated measure violated monotonicity or normalization."""


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 42
    classes: tuple[str, ...] = DEFAULT_CLASSES
    scans_per_class: tuple[int, ...] = COHORT_SCANS
    scale: float = 1.0
    min_slices: int = 4
    max_slices: int = 30
    mean_slices: float = 18.8
    informative_fraction: float = 0.35
    informative_spread: float = 0.0
    confident_peak: float = 0.85
    confident_concentration: float = 30.0
    ambiguous_concentration: float = 20.0
    distractor_weight: float = 0.0
    n_features: int = 20
    n_informative_features: int = 2
    class_shift: float = 3.0
    feature_noise: float = 1.0

    def __post_init__(self):
        if len(self.scans_per_class) != len(self.classes):
            raise ValueError("scans_per_class must have one entry per class")
        if min(self.counts()) < 1:
            raise ValueError("every class needs at least one scan")
        if not 1 <= self.min_slices <= self.max_slices:
            raise ValueError("need 1 <= min_slices <= max_slices")
        if not self.min_slices <= self.mean_slices <= self.max_slices:
            raise ValueError("mean_slices outside [min_slices, max_slices]")
        for name in ("informative_fraction", "distractor_weight", "confident_peak"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("confident_concentration", "ambiguous_concentration"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.informative_spread < 0:
            raise ValueError("informative_spread must be >= 0")
        if not 0 <= self.n_informative_features <= self.n_features:
            raise ValueError("n_informative_features must lie in 0..n_features")

    def counts(self) -> list[int]:
        return [max(1, int(round(c * self.scale))) for c in self.scans_per_class]

    def to_json(self) -> dict:
        return asdict(self)


def fig6_config(seed: int = 42) -> SynthConfig:
    """Preset for the four-way fusion comparison: ~970 scans, mixed informativeness."""
    return SynthConfig(
        seed=seed,
        scale=0.5,
        informative_fraction=0.3,
        informative_spread=4.0,
        confident_peak=0.8,
        confident_concentration=20.0,
        ambiguous_concentration=10.0,
        distractor_weight=0.25,
    )


def _scan_layout(cfg: SynthConfig):
    """Yield ``(label, n_slices, informative flags, distractor)`` per scan, classes interleaved.

    Drawn from its own stream so the confidence map and the feature table of
    one config describe the same scans.
    """
    rng = np.random.default_rng([cfg.seed, 0])
    labels = np.concatenate([np.full(c, k) for k, c in enumerate(cfg.counts())])
    labels = labels[rng.permutation(labels.size)]
    span = cfg.max_slices - cfg.min_slices
    q = 0.0 if span == 0 else (cfg.mean_slices - cfg.min_slices) / span
    for y in labels:
        n = cfg.min_slices + int(rng.binomial(span, q))
        f = cfg.informative_fraction
        if cfg.informative_spread > 0 and 0 < f < 1:
            f = rng.beta(f * cfg.informative_spread, (1 - f) * cfg.informative_spread)
        informative = rng.random(n) < f
        distractor = int(rng.integers(len(cfg.classes)))
        yield int(y), n, informative, distractor


def _dirichlet(rng, alpha, size):
    # floor keeps draws strictly inside the simplex for tiny concentrations
    x = rng.dirichlet(np.maximum(alpha, 1e-3), size=size)
    return x / x.sum(axis=1, keepdims=True)


def generate_confidence_dataset(cfg: SynthConfig | None = None) -> Dataset:
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    C = len(cfg.classes)
    space = LabelSpace(cfg.classes)
    total = sum(cfg.counts())
    width = len(str(total))
    scans = []
    for j, (y, n, informative, distractor) in enumerate(_scan_layout(cfg)):
        conf_mean = np.full(C, (1 - cfg.confident_peak) / (C - 1))
        conf_mean[y] = cfg.confident_peak
        amb_mean = np.full(C, (1 - cfg.distractor_weight) / C)
        amb_mean[distractor] += cfg.distractor_weight
        P = np.empty((n, C))
        k = int(informative.sum())
        if k:
            P[informative] = _dirichlet(rng, cfg.confident_concentration * conf_mean, k)
        if n - k:
            P[~informative] = _dirichlet(rng, cfg.ambiguous_concentration * amb_mean, n - k)
        slices = tuple(SliceRecord(f"s{i:02d}", tuple(P[i])) for i in range(n))
        scans.append(ScanRecord(f"scan{j:0{width}d}", slices, cfg.classes[y]))
    return Dataset(space, tuple(scans))


def class_means(cfg: SynthConfig) -> np.ndarray:
    """Class centroids: points on a circle in the first two informative features."""
    C = len(cfg.classes)
    means = np.zeros((C, cfg.n_features))
    m = cfg.n_informative_features
    if m == 0:
        return means
    angles = 2 * np.pi * np.arange(C) / C
    for k in range(C):
        if m == 1:
            means[k, 0] = cfg.class_shift * (k - (C - 1) / 2) / max(C - 1, 1) * 2
        else:
            means[k, 0] = cfg.class_shift * np.cos(angles[k])
            means[k, 1] = cfg.class_shift * np.sin(angles[k])
            # further informative features repeat the pattern with a phase shift
            for extra in range(2, m):
                means[k, extra] = cfg.class_shift * np.cos(angles[k] + extra)
    return means


def generate_feature_dataset(cfg: SynthConfig | None = None) -> FeatureTable:
    """Gaussian slice features; informative slices are shifted to their class centroid."""
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng([cfg.seed, 1])
    means = class_means(cfg)
    total = sum(cfg.counts())
    width = len(str(total))
    ids, rows, labels = [], [], []
    for j, (y, n, informative, _) in enumerate(_scan_layout(cfg)):
        noise = rng.normal(scale=cfg.feature_noise, size=(n, cfg.n_features))
        X = noise + informative[:, None] * means[y]
        for i in range(n):
            ids.append((f"scan{j:0{width}d}", f"s{i:02d}"))
            labels.append(cfg.classes[y])
        rows.append(X)
    names = [f"f{i:02d}" for i in range(cfg.n_features)]
    return FeatureTable(ids, np.vstack(rows), names, labels)


def dataset_checksum(d: Dataset) -> str:
    return hashlib.sha256(dumps_csv(d).encode("utf-8")).hexdigest()


# ------------------------------------------------------------------ oracle


def enumerate_measure(g, lam: float) -> np.ndarray:
    """Lambda-measure of every subset, indexed by bitmask (bit i = slice i).

    Built by pairwise composition ``mu(A | B) = mu(A) + mu(B) + lam mu(A) mu(B)``
    of the lowest member with the rest of the set.
    """
    g = np.asarray(g, dtype=np.float64)
    n = g.size
    mu = np.zeros(1 << n)
    for mask in range(1, 1 << n):
        low = mask & -mask
        i = low.bit_length() - 1
        rest = mu[mask ^ low]
        mu[mask] = g[i] + rest + lam * g[i] * rest
    return mu


def check_measure(mu: np.ndarray, n: int, tol: float = 1e-9) -> None:
    """Raise :class:`OracleError` unless ``mu`` is monotone, ``mu(empty)=0`` and ``mu(all)=1``."""
    if mu[0] != 0.0:
        raise OracleError("measure of the empty set is not 0")
    full = (1 << n) - 1
    if abs(mu[full] - 1.0) > tol:
        raise OracleError(f"measure of the full set is {mu[full]!r}, not 1")
    masks = np.arange(1 << n)
    for i in range(n):
        without = masks[(masks >> i) & 1 == 0]
        if np.any(mu[without | (1 << i)] < mu[without] - tol):
            raise OracleError(f"measure not monotone when adding slice {i}")


def brute_force_fuse(scan: ScanRecord) -> FusedScan:
    """Classical Choquet fusion evaluated from the full subset lattice.

    ``F_k = sum_j (v_j - v_{j-1}) * mu({s : P(s, k) >= v_j})`` over the
    distinct probability levels ``v_1 < ... < v_m`` of class ``k`` (``v_0 = 0``).
    """
    P = scan.probs
    n, C = P.shape
    if n > ORACLE_MAX_SLICES:
        raise ValueError(f"oracle enumerates 2**n subsets; n={n} exceeds {ORACLE_MAX_SLICES}")
    if n == 1:
        F = P[0].copy()
        return FusedScan(scan.scan_id, F, int(np.argmax(F)), None, 1.0, (0,), "oracle")
    g = P.max(axis=1)
    lam = solve_lambda(g)
    mu = enumerate_measure(g, lam)
    check_measure(mu, n)
    bits = 1 << np.arange(n)
    F = np.zeros(C)
    for k in range(C):
        prev = 0.0
        for v in np.unique(P[:, k]):
            level_set = int(bits[P[:, k] >= v].sum())
            F[k] += (v - prev) * mu[level_set]
            prev = v
    return FusedScan(scan.scan_id, F, int(np.argmax(F)), lam, float(mu[-1]), None, "oracle")


def oracle_check(d: Dataset, tol: float = 1e-12, max_slices: int = 6):
    """Compare classical exact-lambda fusion with the oracle on small scans.

    Returns ``(checked, mismatches)`` where ``mismatches`` lists
    ``(scan_id, max_abs_diff)``.
    """
    from .fusion import FusionConfig, choquet_fuse

    cfg = FusionConfig(measure="exact", sort="classical")
    checked, mismatches = 0, []
    for scan in d.scans:
        if scan.n > max_slices:
            continue
        fast = choquet_fuse(scan, cfg).F
        ref = brute_force_fuse(scan).F
        diff = float(np.max(np.abs(fast - ref)))
        checked += 1
        if diff > tol:
            mismatches.append((scan.scan_id, diff))
    return checked, mismatches


def small_scan_config(seed: int = 42) -> SynthConfig:
    """Variant of the fig6 preset with 1..6 slices per scan, for oracle runs."""
    return replace(fig6_config(seed), min_slices=1, max_slices=6, mean_slices=3.5)


def separable_toy_set(n: int = 60, seed: int = 0, margin: float = 0.5):
    """Two Gaussian-ish clouds split by the line ``x0 + x1 = 0`` with a gap.

    Returns ``(X, y)`` with ``X`` of shape ``(n, 2)`` and labels in {0, 1}.
    Points closer than ``margin`` to the separating line are redrawn.
    """
    rng = np.random.default_rng([seed, 3])
    X = np.empty((0, 2))
    while X.shape[0] < n:
        cand = rng.uniform(-2.0, 2.0, size=(2 * n, 2))
        keep = np.abs(cand.sum(axis=1)) / np.sqrt(2.0) >= margin
        X = np.vstack([X, cand[keep]])
    X = X[:n]
    return X, (X.sum(axis=1) > 0).astype(np.int64)
