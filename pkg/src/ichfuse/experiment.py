"""Desk-scale comparison of scan-level fusion rules on a synthetic cohort.

Mean fusion, majority vote, a learned fusion network and the entropy-aware
fuzzy integral are scored on the same held-out scans.  Fuzzy fusion uses
the single max-confidence ordering with lambda picked by grid search on the training scans;
the exact-lambda variant is reported alongside.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metrics
from .confmap import Dataset
from .fusion import FusedScan, FusionConfig, LearnedFusion, choquet_fuse, fuse_baseline, grid_search_lambda
from .synth import SynthConfig, fig6_config, generate_confidence_dataset

METHODS = ("mean", "majority", "learned", "fuzzy", "fuzzy_exact")


def split_scans(d: Dataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Random scan-level split into ``(train, test)``."""
    rng = np.random.default_rng([seed, 2])
    ids = [s.scan_id for s in d.scans]
    perm = rng.permutation(len(ids))
    n_test = max(1, int(round(test_fraction * len(ids))))
    test_ids = {ids[i] for i in perm[:n_test]}
    train = Dataset(d.label_space, tuple(s for s in d.scans if s.scan_id not in test_ids))
    test = Dataset(d.label_space, tuple(s for s in d.scans if s.scan_id in test_ids))
    return train, test


def slice_level(d: Dataset):
    """Slice argmax predictions with every slice labelled by its scan's class."""
    y, pred, prob = [], [], []
    for scan, label in zip(d.scans, d.labels()):
        y.extend([label] * scan.n)
        pred.extend(np.argmax(scan.probs, axis=1))
        prob.append(scan.probs)
    return np.array(y), np.array(pred), np.vstack(prob)


def _as_probabilities(F: np.ndarray) -> np.ndarray:
    F = np.clip(F, 0.0, None)
    s = F.sum()
    return F / s if s > 0 else np.full(F.size, 1.0 / F.size)


@dataclass
class Fig6Result:
    config: SynthConfig
    lam: float
    reports: dict
    slice_report: metrics.EvalReport
    fused: dict
    test: Dataset
    n_train: int

    def accuracy(self, method: str) -> float:
        return self.reports[method].classification.accuracy

    def summary(self) -> dict:
        out = {
            "seed": self.config.seed,
            "n_train_scans": self.n_train,
            "n_test_scans": len(self.test),
            "grid_lambda": self.lam,
            "slice_accuracy": self.slice_report.classification.accuracy,
        }
        for m in METHODS:
            c = self.reports[m].classification
            out[m] = {"accuracy": c.accuracy, "precision": c.precision, "sensitivity": c.sensitivity,
                      "specificity": c.specificity, "f1": c.f1}
        return out

    def table(self) -> str:
        head = f"{'method':<14}{'A_c':>8}{'P_r':>8}{'S_e':>8}{'S_p':>8}{'F_1':>8}"
        lines = [head]
        rows = [("slice-argmax", self.slice_report)] + [(m, self.reports[m]) for m in METHODS]
        for name, rep in rows:
            c = rep.classification
            lines.append(f"{name:<14}{c.accuracy:>8.4f}{c.precision:>8.4f}{c.sensitivity:>8.4f}"
                         f"{c.specificity:>8.4f}{c.f1:>8.4f}")
        lines.append(f"grid lambda = {self.lam:g}; test scans = {len(self.test)}")
        return "\n".join(lines) + "\n"


def run_fig6(cfg: SynthConfig | None = None, test_fraction: float = 0.2, sort: str = "paper") -> Fig6Result:
    cfg = cfg or fig6_config()
    d = generate_confidence_dataset(cfg)
    train, test = split_scans(d, test_fraction, cfg.seed)

    grid_cfg = FusionConfig(measure="grid", sort=sort)
    lam = grid_search_lambda(train, grid_cfg)
    grid_cfg = FusionConfig(measure="grid", sort=sort, lam=lam)
    exact_cfg = FusionConfig(measure="exact", sort=sort)
    learned = LearnedFusion().fit(train, LearnedFusion.default_config(cfg.seed))

    fused: dict[str, list[FusedScan]] = {
        "mean": [fuse_baseline(s, "mean") for s in test.scans],
        "majority": [fuse_baseline(s, "majority") for s in test.scans],
        "learned": [fuse_baseline(s, "learned", learned) for s in test.scans],
        "fuzzy": [choquet_fuse(s, grid_cfg) for s in test.scans],
        "fuzzy_exact": [choquet_fuse(s, exact_cfg) for s in test.scans],
    }
    y = test.labels()
    classes = test.label_space.classes
    reports = {}
    for m, fs in fused.items():
        pred = np.array([f.decision for f in fs])
        prob = np.stack([_as_probabilities(f.F) for f in fs])
        reports[m] = metrics.evaluate(y, pred, classes, prob)
    ys, ps, probs = slice_level(test)
    slice_report = metrics.evaluate(ys, ps, classes, probs)
    return Fig6Result(cfg, lam, reports, slice_report, fused, test, len(train))
