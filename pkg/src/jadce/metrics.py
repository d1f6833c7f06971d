"""Recovery and activity-detection metrics on lifted estimates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NMSE_FLOOR_DB = -300.0


class MetricError(ValueError):
    pass


def nmse_db(X_hat, X_true) -> float:
    """``10 log10( sum ||X_hat - X||^2 / sum ||X||^2 )`` over the whole set.

    Energies are averaged before the log (ratio of mean energies).  Exact
    recovery clamps to ``NMSE_FLOOR_DB``.
    """
    X_hat = np.asarray(X_hat, dtype=np.float64)
    X_true = np.asarray(X_true, dtype=np.float64)
    if X_hat.shape != X_true.shape:
        raise MetricError(f"estimate {X_hat.shape} and truth {X_true.shape} differ in shape")
    truth = float(np.sum(X_true ** 2))
    if truth == 0.0:
        raise MetricError("ground truth has zero energy; NMSE is undefined")
    return _to_db(float(np.sum((X_hat - X_true) ** 2)) / truth)


def nmse_db_per_sample(X_hat, X_true) -> np.ndarray:
    """Per-sample NMSE in dB for batches shaped (B, ...); zero-energy truths give NaN."""
    X_hat = np.asarray(X_hat, dtype=np.float64)
    X_true = np.asarray(X_true, dtype=np.float64)
    if X_hat.shape != X_true.shape:
        raise MetricError(f"estimate {X_hat.shape} and truth {X_true.shape} differ in shape")
    axes = tuple(range(1, X_true.ndim))
    err = np.sum((X_hat - X_true) ** 2, axis=axes)
    truth = np.sum(X_true ** 2, axis=axes)
    out = np.full(len(truth), np.nan)
    ok = truth > 0
    out[ok] = [_to_db(e / t) for e, t in zip(err[ok], truth[ok])]
    return out


def _to_db(ratio: float) -> float:
    if ratio <= 0.0:
        return NMSE_FLOOR_DB
    return max(NMSE_FLOOR_DB, 10.0 * np.log10(ratio))


def group_norms(Xt) -> np.ndarray:
    """Device norms of a lifted stack (..., 2N, M): rows n and n+N form group n."""
    Xt = np.asarray(Xt, dtype=np.float64)
    N = Xt.shape[-2] // 2
    return np.sqrt(np.sum(Xt[..., :N, :] ** 2 + Xt[..., N:, :] ** 2, axis=-1))


def default_threshold(M: int, channel_std: float = 1.0) -> float:
    return 0.1 * np.sqrt(M) * channel_std


def detect_activity(Xt, tau: float) -> np.ndarray:
    """Device n is declared active iff its group norm exceeds ``tau``."""
    if tau < 0:
        raise MetricError(f"threshold must be >= 0, got {tau}")
    return group_norms(Xt) > tau


def pmd_pfa(estimated, truth) -> tuple[float | None, float | None]:
    """Missed-detection and false-alarm rates; ``None`` when a denominator is zero.

    Inputs may be single activity vectors or stacked batches; counts are
    pooled over all entries.
    """
    est = np.asarray(estimated, dtype=bool)
    tru = np.asarray(truth, dtype=bool)
    if est.shape != tru.shape:
        raise MetricError(f"activity shapes differ: {est.shape} vs {tru.shape}")
    actives = int(tru.sum())
    inactives = int(tru.size - actives)
    pmd = int(np.sum(tru & ~est)) / actives if actives else None
    pfa = int(np.sum(~tru & est)) / inactives if inactives else None
    return pmd, pfa


@dataclass(frozen=True)
class DetectionReport:
    estimated_activity: np.ndarray
    pmd: float | None
    pfa: float | None
    threshold: float


def detection_report(Xt, truth, tau: float) -> DetectionReport:
    est = detect_activity(Xt, tau)
    pmd, pfa = pmd_pfa(est, truth)
    return DetectionReport(est, pmd, pfa, tau)


def roc_sweep(Xt, truth, taus) -> list[tuple[float, float | None, float | None]]:
    """``(tau, pmd, pfa)`` for each threshold in increasing order."""
    norms = group_norms(Xt)
    truth = np.asarray(truth, dtype=bool)
    if norms.shape != truth.shape:
        raise MetricError(f"activity shapes differ: {norms.shape} vs {truth.shape}")
    return [(float(t), *pmd_pfa(norms > t, truth)) for t in sorted(taus)]
