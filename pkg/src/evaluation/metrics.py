"""
Quality Metrics for AHGCN
Five-parameter logistic mapping, PLCC/SROCC/RMSE and the pairwise
different/similar and better/worse analysis.
"""

import logging
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit
from scipy.stats import pearsonr, rankdata

from src.errors import FitError, MetricError

logger = logging.getLogger(__name__)

MIN_FIT_POINTS = 5
FIT_TOLERANCE = 1e-8
FIT_MAX_ITER = 20000
FIT_RESTARTS = 4


@dataclass(frozen=True)
class LogisticParams:
    beta1: float
    beta2: float
    beta3: float
    beta4: float
    beta5: float

    def as_array(self) -> np.ndarray:
        return np.array([self.beta1, self.beta2, self.beta3, self.beta4, self.beta5])

    @classmethod
    def from_array(cls, values: Sequence[float]) -> 'LogisticParams':
        return cls(*(float(v) for v in values))


def logistic_map(q, p: LogisticParams):
    """beta1 * (1/2 - 1/(1 + exp(beta2 (q - beta3)))) + beta4 q + beta5."""
    q = np.asarray(q, dtype=np.float64)
    sigmoid = expit(-p.beta2 * (q - p.beta3))
    mapped = p.beta1 * (0.5 - sigmoid) + p.beta4 * q + p.beta5
    return float(mapped) if mapped.ndim == 0 else mapped


def _as_pair(x, y, minimum: int = 2):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise MetricError(f"Length mismatch: {x.size} vs {y.size}")
    if x.size < minimum:
        raise MetricError(f"Need at least {minimum} samples, got {x.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise MetricError("Inputs contain non-finite values")
    return x, y


def fit_logistic(preds, mos) -> LogisticParams:
    """
    Least-squares fit of the five-parameter logistic by Nelder-Mead.

    Starts from the usual heuristic (beta1 = range of MOS, beta2 = 1/std(preds),
    beta3 = mean(preds), beta4 = 0, beta5 = mean(MOS)) and from the best affine
    fit, restarting each until the objective stops improving; the best result wins.

    Raises:
        FitError: fewer than 5 points or constant predictions
    """
    preds = np.asarray(preds, dtype=np.float64).ravel()
    mos = np.asarray(mos, dtype=np.float64).ravel()
    if preds.shape != mos.shape:
        raise FitError(f"Length mismatch: {preds.size} predictions, {mos.size} MOS values")
    if preds.size < MIN_FIT_POINTS:
        raise FitError(f"Logistic fit needs at least {MIN_FIT_POINTS} points, got {preds.size}")
    if np.ptp(preds) == 0:
        raise FitError("Logistic fit is undefined for constant predictions")

    def objective(beta):
        residual = logistic_map(preds, LogisticParams.from_array(beta)) - mos
        return float(residual @ residual)

    spread = 1.0 / np.std(preds)
    slope, intercept = np.polyfit(preds, mos, 1)
    starts = [
        np.array([np.ptp(mos), spread, preds.mean(), 0.0, mos.mean()]),
        np.array([0.0, spread, preds.mean(), slope, intercept]),
    ]

    options = {'xatol': FIT_TOLERANCE, 'fatol': 1e-14, 'maxiter': FIT_MAX_ITER, 'maxfev': 2 * FIT_MAX_ITER}
    best_x, best_f = None, np.inf
    for start in starts:
        x, f = start, objective(start)
        for _ in range(FIT_RESTARTS):
            result = minimize(objective, x, method='Nelder-Mead', options=options)
            if result.fun >= f:
                break
            x, f = result.x, result.fun
        if f < best_f:
            best_x, best_f = x, f

    params = LogisticParams.from_array(best_x)
    logger.debug(f"Logistic fit: {params} (sse={best_f:.6g})")
    return params


def plcc(x, y) -> float:
    """Pearson linear correlation."""
    x, y = _as_pair(x, y)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise MetricError("PLCC is undefined for constant input")
    return float(pearsonr(x, y)[0])


def srocc(x, y) -> float:
    """Spearman rank correlation, average ranks for ties."""
    x, y = _as_pair(x, y)
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise MetricError("SROCC is undefined for constant input")
    return float(pearsonr(rankdata(x), rankdata(y))[0])


def rmse(x, y) -> float:
    x, y = _as_pair(x, y)
    return float(np.sqrt(np.mean((x - y) ** 2)))


def _rank_auc(positives: np.ndarray, negatives: np.ndarray) -> Optional[float]:
    """P(positive > negative) + 0.5 P(tie), from the Mann-Whitney rank sum."""
    n_pos, n_neg = positives.size, negatives.size
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(np.concatenate([positives, negatives]))
    u = ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class KrasulaResult:
    auc_ds: Optional[float]
    auc_bw: Optional[float]
    c0: Optional[float]
    n_pairs: int
    n_different: int

    def to_dict(self) -> Dict:
        return asdict(self)


def pair_indices(n: int) -> List[tuple]:
    """Unordered pairs (i, j), i < j, in the order pair labels are given."""
    return list(combinations(range(n), 2))


def krasula_analysis(preds, mos, pair_labels: Optional[Sequence[int]] = None,
                     threshold: float = 0.5) -> KrasulaResult:
    """
    Different/similar and better/worse analysis over all unordered pairs.

    Args:
        preds: Predicted scores
        mos: Ground-truth MOS
        pair_labels: Optional label per pair (order of pair_indices): +1 when the
            second sample is significantly better, -1 when worse, 0 when similar
        threshold: |dMOS| above which a pair counts as different (no labels given)

    Returns:
        KrasulaResult; auc_bw and c0 are None without different pairs, auc_ds is
        None unless both different and similar pairs exist
    """
    preds, mos = _as_pair(preds, mos)
    first, second = np.array(pair_indices(preds.size)).T
    d_pred = preds[second] - preds[first]
    if pair_labels is None:
        d_mos = mos[second] - mos[first]
        labels = np.where(np.abs(d_mos) > threshold, np.sign(d_mos), 0.0)
    else:
        labels = np.asarray(pair_labels, dtype=np.float64).ravel()
        if labels.size != d_pred.size:
            raise MetricError(f"Expected {d_pred.size} pair labels, got {labels.size}")
        if not np.all(np.isin(labels, (-1.0, 0.0, 1.0))):
            raise MetricError("Pair labels must be -1, 0 or +1")

    different = labels != 0
    auc_ds = _rank_auc(np.abs(d_pred[different]), np.abs(d_pred[~different]))

    oriented = labels[different] * d_pred[different]
    auc_bw = _rank_auc(oriented, -oriented)
    c0 = float(np.mean(np.sign(d_pred[different]) == labels[different])) if different.any() else None

    return KrasulaResult(auc_ds, auc_bw, c0, int(d_pred.size), int(different.sum()))


def _optional(metric, x, y) -> Optional[float]:
    try:
        return metric(x, y)
    except MetricError:
        return None


@dataclass
class EvalReport:
    """Everything cmd_evaluate reports."""
    plcc: float
    srocc: float
    rmse: float
    logistic: LogisticParams
    krasula: KrasulaResult
    samples: List[Dict] = field(default_factory=list)
    groups: Dict[str, Dict] = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            'n_samples': len(self.samples),
            'plcc': self.plcc,
            'srocc': self.srocc,
            'rmse': self.rmse,
            'logistic': asdict(self.logistic),
            'krasula': self.krasula.to_dict(),
            'groups': self.groups,
            'samples': self.samples,
        }


def build_report(ids: Sequence[str], preds, mos, distortions: Optional[Sequence[Optional[str]]] = None,
                 threshold: float = 0.5, pair_labels: Optional[Sequence[int]] = None) -> EvalReport:
    """
    Fit the logistic and compute every metric.

    PLCC and RMSE use the mapped predictions, SROCC the raw ones. When
    distortion types are given, each type gets its own block computed on the
    globally mapped predictions.
    """
    preds = np.asarray(preds, dtype=np.float64).ravel()
    mos = np.asarray(mos, dtype=np.float64).ravel()
    if len(ids) != preds.size or preds.size != mos.size:
        raise MetricError("ids, predictions and MOS must have equal lengths")

    logistic = fit_logistic(preds, mos)
    mapped = np.asarray(logistic_map(preds, logistic), dtype=np.float64)

    samples = []
    for index, sample_id in enumerate(ids):
        row = {'id': sample_id, 'mos': float(mos[index]), 'raw_pred': float(preds[index]),
               'mapped_pred': float(mapped[index])}
        if distortions is not None:
            row['distortion'] = distortions[index]
        samples.append(row)

    groups: Dict[str, Dict] = {}
    if distortions is not None and any(d is not None for d in distortions):
        labels = np.array([d if d is not None else '' for d in distortions], dtype=object)
        for name in sorted(set(labels) - {''}):
            member = labels == name
            groups[name] = {
                'n': int(member.sum()),
                'plcc': _optional(plcc, mapped[member], mos[member]),
                'srocc': _optional(srocc, preds[member], mos[member]),
                'rmse': _optional(rmse, mapped[member], mos[member]),
            }

    report = EvalReport(
        plcc=plcc(mapped, mos),
        srocc=srocc(preds, mos),
        rmse=rmse(mapped, mos),
        logistic=logistic,
        krasula=krasula_analysis(preds, mos, pair_labels, threshold),
        samples=samples,
        groups=groups,
    )
    logger.info(f"Evaluation: PLCC={report.plcc:.4f} SROCC={report.srocc:.4f} RMSE={report.rmse:.4f}")
    return report
