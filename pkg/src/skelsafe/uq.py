"""Uncertainty and OOD scores, and the fitting they need.

Detector direction (higher = more OOD) used everywhere downstream:

    msp            -> 1 - msp
    msp_temp       -> 1 - msp_temp
    mc_entropy     -> mc_entropy
    disagreement   -> disagreement
    energy         -> energy
    mahalanobis    -> mahalanobis
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .model import ModelState, forward
from .numerics import SeededRng, entropy, log_softmax, log_sum_exp, softmax
from .skeldata import DatasetBundle

SCORES = ("msp", "msp_temp", "mc_entropy", "disagreement", "energy", "mahalanobis")
T_RANGE = (0.05, 10.0)
GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def ood_score(name: str, values) -> np.ndarray:
    """Map a stored score column to the higher-is-more-OOD convention."""
    v = np.asarray(values, dtype=np.float64)
    return 1.0 - v if name in ("msp", "msp_temp") else v


def confidence(name: str, values) -> np.ndarray:
    """Map a stored score column to a higher-is-more-confident value for abstention."""
    v = np.asarray(values, dtype=np.float64)
    return v if name in ("msp", "msp_temp") else -v


def msp(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=np.float64)
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-6):
        raise ValueError("msp expects normalised probabilities")
    return p.max(axis=-1)


def scale_logits(logits, T: float) -> np.ndarray:
    if not T > 0:
        raise ValueError("temperature must be positive")
    return np.asarray(logits, dtype=np.float64) / T


# --- temperature -----------------------------------------------------------------------------

@dataclass
class TemperatureParam:
    T_star: float
    nll_before: float
    nll_after: float
    iterations: int


def nll(logits, labels, T: float = 1.0) -> float:
    lp = log_softmax(scale_logits(logits, T), axis=1)
    return float(-np.mean(lp[np.arange(len(labels)), labels]))


def fit_temperature(logits, labels) -> TemperatureParam:
    """Minimise validation NLL over T: 64-point log grid on [0.05, 10] plus T=1, then golden section.

    The refinement runs inside the bracket around the best grid point until it
    is narrower than 1e-3; the grid winner is kept if refinement does not beat it.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(np.unique(labels)) < 2:
        raise ValueError("temperature fitting needs at least two classes present")
    grid = np.union1d(np.geomspace(*T_RANGE, 64), [1.0])
    losses = np.array([nll(logits, labels, t) for t in grid])
    i = int(np.argmin(losses))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    f = lambda t: nll(logits, labels, t)  # noqa: E731
    a, b = hi - GOLDEN * (hi - lo), lo + GOLDEN * (hi - lo)
    fa, fb = f(a), f(b)
    its = 0
    while hi - lo > 1e-3:
        its += 1
        if fa < fb:
            hi, b, fb = b, a, fa
            a = hi - GOLDEN * (hi - lo)
            fa = f(a)
        else:
            lo, a, fa = a, b, fb
            b = lo + GOLDEN * (hi - lo)
            fb = f(b)
    t_ref = 0.5 * (lo + hi)
    best_t, best = (t_ref, f(t_ref)) if f(t_ref) <= losses[i] else (grid[i], losses[i])
    return TemperatureParam(float(best_t), nll(logits, labels, 1.0), float(best), its)


# --- MC dropout and ensembles ----------------------------------------------------------------

def mc_dropout_probs(state: ModelState, x, n_passes: int, rng: SeededRng | np.random.Generator) -> np.ndarray:
    """Softmax outputs of ``n_passes`` dropout-enabled forward passes, shape (N, n, C)."""
    if n_passes < 1:
        raise ValueError("need at least one pass")
    gen = rng.generator if isinstance(rng, SeededRng) else rng
    return np.stack([softmax(forward(state, x, "mc_dropout", gen)[1], axis=1) for _ in range(n_passes)])


def mc_dropout_entropy(state: ModelState, x, n_passes: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Mean predictive distribution over stochastic passes and its entropy."""
    pbar = mc_dropout_probs(state, x, n_passes, rng).mean(axis=0)
    return pbar, entropy(pbar, axis=1)


def mutual_information(member_probs) -> np.ndarray:
    """Entropy of the mean member distribution minus the mean member entropy; shape (K, n, C) in."""
    p = np.asarray(member_probs, dtype=np.float64)
    if p.ndim != 3 or p.shape[0] < 2:
        raise ValueError("need probabilities from at least two members, shape (K, n, C)")
    mi = entropy(p.mean(axis=0), axis=1) - entropy(p, axis=2).mean(axis=0)
    return np.maximum(mi, 0.0)


def ensemble_disagreement(states, x) -> np.ndarray:
    if len(states) < 2:
        raise ValueError("ensemble disagreement needs K >= 2 members")
    return mutual_information([softmax(forward(s, x)[1], axis=1) for s in states])


# --- energy ----------------------------------------------------------------------------------

def energy_score(logits, T: float = 1.0) -> np.ndarray:
    """-T log sum_c exp(f_c / T). Higher energy = more OOD."""
    return -T * log_sum_exp(scale_logits(logits, T), axis=-1)


# --- Mahalanobis -----------------------------------------------------------------------------

@dataclass
class MahalanobisParams:
    means: np.ndarray      # (C, d)
    precision: np.ndarray  # (d, d)
    shrinkage: float


def fit_mahalanobis(features, labels, n_classes: int | None = None, shrinkage: float = 1e-3) -> MahalanobisParams:
    """Class means and the inverse of the shrunk pooled within-class covariance.

    Shrinkage adds ``shrinkage * trace / d`` to the diagonal; a covariance that
    is exactly zero gets an absolute ``shrinkage`` instead so the precision
    stays defined.
    """
    z = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n, d = z.shape
    C = int(n_classes if n_classes is not None else y.max() + 1)
    counts = np.bincount(y, minlength=C)
    if np.any(counts < 2):
        raise ValueError(f"every class needs >= 2 samples, got counts {counts.tolist()}")
    if d > n:
        raise ValueError("feature dimension exceeds sample count")
    means = np.stack([z[y == c].mean(axis=0) for c in range(C)])
    centred = z - means[y]
    cov = centred.T @ centred / n
    if not shrinkage > 0:
        raise ValueError("shrinkage must be positive")
    lam = shrinkage * np.trace(cov) / d
    if lam == 0.0:
        lam = shrinkage
    try:
        factor = cho_factor(cov + lam * np.eye(d))
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"covariance factorisation failed: {exc}") from exc
    prec = cho_solve(factor, np.eye(d))
    return MahalanobisParams(means, 0.5 * (prec + prec.T), float(lam))


def mahalanobis_distance(features, params: MahalanobisParams) -> np.ndarray:
    """min over classes of (z - mu_c)^T P (z - mu_c)."""
    z = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if z.shape[1] != params.means.shape[1]:
        raise ValueError(f"feature dim {z.shape[1]} does not match fitted dim {params.means.shape[1]}")
    diff = z[:, None, :] - params.means[None]
    q = np.einsum("ncd,de,nce->nc", diff, params.precision, diff)
    return np.maximum(q.min(axis=1), 0.0)


# --- score tables ----------------------------------------------------------------------------

COLUMNS = ("index", "domain", "label", "pred", "correct") + SCORES


@dataclass
class ScoreTable:
    domain: str
    label: np.ndarray
    pred: np.ndarray
    scores: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.label)

    @property
    def correct(self) -> np.ndarray:
        return self.pred == self.label

    def column(self, name: str) -> np.ndarray:
        return self.scores.get(name, np.full(len(self), np.nan))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        cols = [self.column(s) for s in SCORES]
        for i in range(len(self)):
            w.writerow([i, self.domain, int(self.label[i]), int(self.pred[i]), int(self.correct[i])]
                       + [f"{c[i]:.9g}" for c in cols])
        return buf.getvalue()

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_csv())
        return path

    @classmethod
    def read(cls, path) -> "ScoreTable":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        domain = rows[0]["domain"] if rows else ""
        label = np.array([int(r["label"]) for r in rows], dtype=np.int64)
        pred = np.array([int(r["pred"]) for r in rows], dtype=np.int64)
        scores = {}
        for s in SCORES:
            col = np.array([float(r[s]) for r in rows])
            if not np.all(np.isnan(col)):
                scores[s] = col
        return cls(domain, label, pred, scores)


def build_score_table(state: ModelState, bundle: DatasetBundle, *, temperature: TemperatureParam | None = None,
                      mahalanobis: MahalanobisParams | None = None, ensemble=None, mc_passes: int = 20,
                      rng: SeededRng | None = None, energy_T: float = 1.0, scores=SCORES,
                      post_gate_features: bool = False) -> ScoreTable:
    """One row per sample with every requested score; predictions come from ``state`` in eval mode.

    Unrequested scores are left out (written as nan).
    """
    scores = tuple(scores)
    missing = [name for name, need, have in (
        ("msp_temp", "msp_temp" in scores, temperature is not None),
        ("mahalanobis", "mahalanobis" in scores, mahalanobis is not None),
        ("disagreement", "disagreement" in scores, ensemble is not None and len(ensemble) >= 2),
        ("mc_entropy", "mc_entropy" in scores, rng is not None),
    ) if need and not have]
    if missing:
        raise ValueError(f"missing fitted artifacts for scores: {', '.join(missing)}")
    n = len(bundle)
    if n == 0:
        return ScoreTable(bundle.domain_tag, np.zeros(0, np.int64), np.zeros(0, np.int64),
                          {s: np.zeros(0) for s in scores})
    z, logits = forward(state, bundle.coords)
    out = {}
    probs = softmax(logits, axis=1)
    if "msp" in scores:
        out["msp"] = msp(probs)
    if "msp_temp" in scores:
        out["msp_temp"] = msp(softmax(scale_logits(logits, temperature.T_star), axis=1))
    if "mc_entropy" in scores:
        out["mc_entropy"] = mc_dropout_entropy(state, bundle.coords, mc_passes, rng)[1]
    if "disagreement" in scores:
        out["disagreement"] = ensemble_disagreement(ensemble, bundle.coords)
    if "energy" in scores:
        out["energy"] = energy_score(logits, energy_T)
    if "mahalanobis" in scores:
        if post_gate_features and state.has_gate:
            from .model import GATE, apply_gate
            z = apply_gate(z, state.params[GATE])
        out["mahalanobis"] = mahalanobis_distance(z, mahalanobis)
    return ScoreTable(bundle.domain_tag, bundle.labels.copy(), logits.argmax(axis=1), out)
