"""Classification and fit statistics for multi-class predictions.

Classification metrics are computed one-vs-rest per class from the confusion
matrix and macro-averaged (unweighted mean over classes).  A per-class rate
whose denominator is zero contributes 0 and is recorded in ``undefined``.

Fit statistics compare predicted probability vectors with one-hot truth:

* ``LL``   -- log-likelihood of the true classes (``binary=True`` gives the
  one-vs-rest sum ``sum_i sum_k y log p + (1 - y) log(1 - p)`` instead);
* ``LL0``  -- same, for the class-frequency null model;
* ``R2_G`` -- ``1 - exp((LL0 - LL) / N)``;
* ``R2_E`` -- ``(LL0 - LL) / LL0`` (1 for a perfect model, 0 for the null);
* ``RASE`` -- root mean squared error over samples and classes;
* ``MAD``  -- mean absolute error over samples and classes.

Arguments of logarithms are floored at ``1e-12`` so confident mistakes give
a finite log-likelihood while exact hits still contribute exactly 0.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

EPS = 1e-12


@dataclass
class ClassificationReport:
    accuracy: float
    precision: float
    sensitivity: float
    specificity: float
    f1: float
    per_class: dict
    undefined: list = field(default_factory=list)


@dataclass
class FitStatistics:
    R2_G: float
    R2_E: float
    RASE: float
    MAD: float
    LL: float
    LL0: float


@dataclass
class EvalReport:
    confusion: list
    classes: list
    classification: ClassificationReport
    fit: FitStatistics | None = None
    n: int = 0

    def to_json(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def table(self) -> str:
        """Aligned plain-text summary."""
        c = self.classification
        rows = [("N", f"{self.n}"), ("A_c", c.accuracy), ("P_r", c.precision), ("S_e", c.sensitivity),
                ("S_p", c.specificity), ("F_1", c.f1)]
        if self.fit is not None:
            f = self.fit
            rows += [("R2_G", f.R2_G), ("R2_E", f.R2_E), ("RASE", f.RASE), ("MAD", f.MAD), ("LL", f.LL)]
        lines = [f"{k:<6}{v:>12.4f}" if not isinstance(v, str) else f"{k:<6}{v:>12}" for k, v in rows]
        width = max(len(x) for x in self.classes) + 2
        lines.append("")
        lines.append("true\\pred".ljust(width) + "".join(f"{x:>8}" for x in self.classes))
        for name, row in zip(self.classes, self.confusion):
            lines.append(name.ljust(width) + "".join(f"{v:>8d}" for v in row))
        return "\n".join(lines) + "\n"


def confusion(y_true, y_pred, n_classes: int) -> np.ndarray:
    """``counts[i, j]`` = number of samples with true class i predicted as j."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1 or y_true.size == 0:
        raise ValueError("y_true and y_pred must be equal-length nonempty 1-D sequences")
    for arr in (y_true, y_pred):
        if arr.min() < 0 or arr.max() >= n_classes:
            raise ValueError("label outside the label space")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (y_true, y_pred), 1)
    return counts


def _ratio(num, den, name, k, undefined):
    if den == 0:
        undefined.append(f"{name}[{k}]")
        return 0.0
    return num / den


def classification_metrics(m) -> ClassificationReport:
    m = np.asarray(m, dtype=np.int64)
    N = int(m.sum())
    if N < 1:
        raise ValueError("empty confusion matrix")
    C = m.shape[0]
    tp = np.diag(m)
    fp = m.sum(axis=0) - tp
    fn = m.sum(axis=1) - tp
    tn = N - tp - fp - fn
    undefined: list[str] = []
    pr, se, sp, f1 = [], [], [], []
    for k in range(C):
        p = _ratio(tp[k], tp[k] + fp[k], "precision", k, undefined)
        s = _ratio(tp[k], tp[k] + fn[k], "sensitivity", k, undefined)
        pr.append(float(p))
        se.append(float(s))
        sp.append(float(_ratio(tn[k], tn[k] + fp[k], "specificity", k, undefined)))
        f1.append(float(_ratio(2 * p * s, p + s, "f1", k, undefined)))
    per_class = {
        "tp": tp.tolist(), "fp": fp.tolist(), "fn": fn.tolist(), "tn": tn.tolist(),
        "precision": pr, "sensitivity": se, "specificity": sp, "f1": f1,
    }
    return ClassificationReport(
        accuracy=float(tp.sum() / N),
        precision=float(np.mean(pr)),
        sensitivity=float(np.mean(se)),
        specificity=float(np.mean(sp)),
        f1=float(np.mean(f1)),
        per_class=per_class,
        undefined=undefined,
    )


def _safe_log(x):
    return np.log(np.maximum(x, EPS))


def log_likelihood(y_true, y_prob, binary: bool = False) -> float:
    y_true = np.asarray(y_true, dtype=np.int64)
    P = np.asarray(y_prob, dtype=np.float64)
    if binary:
        Y = np.eye(P.shape[1])[y_true]
        return float((Y * _safe_log(P) + (1 - Y) * _safe_log(1 - P)).sum())
    return float(_safe_log(P[np.arange(y_true.size), y_true]).sum())


def fit_statistics(y_true, y_prob, binary: bool = False) -> FitStatistics:
    y_true = np.asarray(y_true, dtype=np.int64)
    P = np.asarray(y_prob, dtype=np.float64)
    if y_true.size == 0:
        raise ValueError("empty input")
    if P.ndim != 2 or P.shape[0] != y_true.size:
        raise ValueError("y_prob must be (N, C) with N == len(y_true)")
    N, C = P.shape
    Y = np.eye(C)[y_true]
    freq = np.bincount(y_true, minlength=C) / N
    LL = log_likelihood(y_true, P, binary)
    LL0 = log_likelihood(y_true, np.broadcast_to(freq, P.shape), binary)
    r2g = 1.0 - np.exp((LL0 - LL) / N)
    r2e = (LL0 - LL) / LL0 if LL0 != 0 else 0.0
    err = P - Y
    return FitStatistics(
        R2_G=float(r2g),
        R2_E=float(r2e),
        RASE=float(np.sqrt(np.mean(err**2))),
        MAD=float(np.mean(np.abs(err))),
        LL=LL,
        LL0=LL0,
    )


def evaluate(y_true, y_pred, classes, y_prob=None, binary_ll: bool = False) -> EvalReport:
    C = len(classes)
    cm = confusion(y_true, y_pred, C)
    fit = None if y_prob is None else fit_statistics(y_true, y_prob, binary_ll)
    return EvalReport(cm.tolist(), list(classes), classification_metrics(cm), fit, int(cm.sum()))
