"""Selective-classification and calibration metrics.

All detector scores follow one direction: higher means more out-of-distribution.
Confidences (for risk-coverage and reliability) follow the opposite one:
higher means more willing to answer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

DEFAULT_GRID = tuple(round(0.05 * k, 2) for k in range(1, 21))
DEFAULT_BINS = 15


def auroc(scores_id, scores_ood) -> float:
    """P(s_ood > s_id) + 0.5 P(s_ood == s_id), via the Mann-Whitney rank sum with midranks."""
    s_id = np.asarray(scores_id, dtype=np.float64).ravel()
    s_ood = np.asarray(scores_ood, dtype=np.float64).ravel()
    if s_id.size == 0 or s_ood.size == 0:
        raise ValueError("auroc needs non-empty ID and OOD score lists")
    ranks = rankdata(np.concatenate([s_id, s_ood]), method="average")
    n_id, n_ood = s_id.size, s_ood.size
    u = ranks[n_id:].sum() - n_ood * (n_ood + 1) / 2.0
    return float(u / (n_id * n_ood))


@dataclass
class RiskCoverageCurve:
    kappa: np.ndarray
    risk: np.ndarray
    wsr: np.ndarray
    accepted: np.ndarray

    def at(self, kappa: float) -> tuple[float, float]:
        """(risk, wsr) at a grid point."""
        i = int(np.flatnonzero(np.isclose(self.kappa, kappa))[0])
        return float(self.risk[i]), float(self.wsr[i])

    def wsr_identity_error(self) -> float:
        return float(np.max(np.abs(self.wsr - self.risk * self.kappa)))

    def rows(self):
        return zip(self.kappa, self.risk, self.wsr, self.accepted)


def accepted_count(kappa: float, n: int) -> int:
    # ceil with a small guard: 0.15 * 20 evaluates to 3.0000000000000004
    return min(n, max(1, math.ceil(kappa * n - 1e-9)))


def selection_order(confidences) -> np.ndarray:
    """Indices by descending confidence; equal confidences keep ascending index order."""
    conf = np.asarray(confidences, dtype=np.float64)
    return np.lexsort((np.arange(conf.size), -conf))


def risk_coverage(confidences, correct, grid=DEFAULT_GRID) -> RiskCoverageCurve:
    """Risk among the ceil(kappa * n) most confident samples, for every kappa in ``grid``.

    WSR (wrong-spoke rate) is risk * kappa: the share of *all* inputs that get
    a confident wrong answer.
    """
    conf = np.asarray(confidences, dtype=np.float64).ravel()
    ok = np.asarray(correct, dtype=bool).ravel()
    if conf.size == 0 or conf.size != ok.size:
        raise ValueError("risk_coverage needs equal-length, non-empty inputs")
    kappa = np.asarray(grid, dtype=np.float64)
    if np.any(np.diff(kappa) <= 0) or kappa[0] <= 0 or kappa[-1] > 1:
        raise ValueError("coverage grid must be strictly increasing within (0, 1]")
    errors = np.cumsum(~ok[selection_order(conf)])
    accepted = np.array([accepted_count(k, conf.size) for k in kappa])
    risk = errors[accepted - 1] / accepted
    return RiskCoverageCurve(kappa, risk, risk * kappa, accepted)


@dataclass
class ReliabilityBins:
    lo: np.ndarray
    hi: np.ndarray
    confidence: np.ndarray  # mean confidence per bin, nan when empty
    accuracy: np.ndarray
    count: np.ndarray
    ece: float

    def rows(self):
        return zip(self.lo, self.hi, self.confidence, self.accuracy, self.count)


def ece(confidences, correct, bins: int = DEFAULT_BINS) -> ReliabilityBins:
    """Expected calibration error over equal-width bins.

    A confidence on an interior edge belongs to the upper bin; 1.0 goes to the last.
    """
    if bins < 1:
        raise ValueError("need at least one bin")
    conf = np.asarray(confidences, dtype=np.float64).ravel()
    ok = np.asarray(correct, dtype=np.float64).ravel()
    if np.any((conf < 0) | (conf > 1)):
        raise ValueError("confidences must lie in [0, 1]")
    idx = np.minimum((conf * bins).astype(np.int64), bins - 1)
    count = np.bincount(idx, minlength=bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_conf = np.bincount(idx, weights=conf, minlength=bins) / count
        acc = np.bincount(idx, weights=ok, minlength=bins) / count
    gap = np.where(count > 0, np.abs(acc - mean_conf), 0.0)
    value = float(np.sum(count * gap) / conf.size) if conf.size else 0.0
    edges = np.arange(bins + 1) / bins
    return ReliabilityBins(edges[:-1], edges[1:], mean_conf, acc, count, value)


def per_class_accuracy(preds, labels, class_names) -> dict:
    """Accuracy per true class; a class with no samples maps to None."""
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError("preds and labels must have equal length")
    out = {}
    for c, name in enumerate(class_names):
        mask = labels == c
        out[name] = float(np.mean(preds[mask] == c)) if mask.any() else None
    return out
