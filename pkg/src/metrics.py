"""Closed-set, open-set and verification error rates, DET curves and EER."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Literal, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from errors import ContractViolation
from schemas import DETCurve, DETPoint, EERResult

Polarity = Literal["higher", "lower"]


class ClosedSetAccuracy(NamedTuple):
    fnir: float
    gar: float


@dataclass(frozen=True)
class ScoreSet:
    """Mated (score, rank-1 correct) pairs and non-mated top scores."""

    mated: List[Tuple[float, bool]] = field(default_factory=list)
    nonmated: List[float] = field(default_factory=list)
    polarity: Polarity = "higher"

    def __post_init__(self):
        if self.polarity not in ("higher", "lower"):
            raise ContractViolation(f"polarity must be 'higher' or 'lower', got {self.polarity!r}")
        values = [s for s, _ in self.mated] + list(self.nonmated)
        if not np.all(np.isfinite(values)):
            raise ContractViolation("scores must be finite")


def closed_set_accuracy(results: Sequence[bool]) -> ClosedSetAccuracy:
    if len(results) == 0:
        raise ContractViolation("closed-set accuracy needs at least one search")
    wrong = sum(1 for correct in results if not correct)
    fnir = wrong / len(results)
    return ClosedSetAccuracy(fnir=fnir, gar=1.0 - fnir)


def default_thresholds(*score_lists: Sequence[float]) -> List[float]:
    """Every observed score, sorted, between -inf and +inf sentinels."""
    observed = sorted({float(s) for scores in score_lists for s in scores})
    return [-np.inf, *observed, np.inf]


def _passing(scores: np.ndarray, thresholds: np.ndarray, polarity: Polarity) -> np.ndarray:
    """Count of scores passing each threshold."""
    ordered = np.sort(scores)
    if polarity == "higher":
        return len(ordered) - np.searchsorted(ordered, thresholds, side="left")
    return np.searchsorted(ordered, thresholds, side="right")


def _check_sorted(thresholds: Sequence[float]) -> np.ndarray:
    array = np.asarray(thresholds, dtype=np.float64)
    if len(array) == 0 or np.any(np.diff(array) < 0):
        raise ContractViolation("thresholds must be a non-empty ascending sequence")
    return array


def _is_monotone(xs: np.ndarray, ys: np.ndarray, polarity: Polarity) -> bool:
    # Ascending thresholds tighten for higher-is-better scores and loosen otherwise.
    if polarity == "lower":
        xs, ys = xs[::-1], ys[::-1]
    return bool(np.all(np.diff(xs) <= 0) and np.all(np.diff(ys) >= 0))


def open_set_sweep(scores: ScoreSet, thresholds: Optional[Sequence[float]] = None) -> DETCurve:
    """FPIR (error_x) and FNIR (error_y) at each threshold."""
    if not scores.mated or not scores.nonmated:
        raise ContractViolation("open-set sweeps need mated and non-mated searches")
    mated = np.array([s for s, _ in scores.mated], dtype=np.float64)
    correct = np.array([c for _, c in scores.mated], dtype=bool)
    nonmated = np.asarray(scores.nonmated, dtype=np.float64)
    grid = _check_sorted(thresholds if thresholds is not None else default_thresholds(mated, nonmated))

    fpir = _passing(nonmated, grid, scores.polarity) / len(nonmated)
    hits = _passing(mated[correct], grid, scores.polarity) if correct.any() else np.zeros(len(grid), dtype=int)
    fnir = (len(mated) - hits) / len(mated)
    points = [DETPoint(threshold=t, error_x=x, error_y=y) for t, x, y in zip(grid, fpir, fnir)]
    return DETCurve(axes="fpir_fnir", points=points, monotone=_is_monotone(fpir, fnir, scores.polarity))


def verification_sweep(
    genuine: Sequence[float],
    impostor: Sequence[float],
    thresholds: Optional[Sequence[float]] = None,
    *,
    polarity: Polarity = "lower",
) -> DETCurve:
    """FAR (error_x) and FRR (error_y) at each threshold."""
    genuine = np.asarray(genuine, dtype=np.float64)
    impostor = np.asarray(impostor, dtype=np.float64)
    if genuine.size == 0 or impostor.size == 0:
        raise ContractViolation("verification sweeps need genuine and impostor scores")
    if not (np.all(np.isfinite(genuine)) and np.all(np.isfinite(impostor))):
        raise ContractViolation("scores must be finite")
    grid = _check_sorted(thresholds if thresholds is not None else default_thresholds(genuine, impostor))

    far = _passing(impostor, grid, polarity) / impostor.size
    frr = (genuine.size - _passing(genuine, grid, polarity)) / genuine.size
    points = [DETPoint(threshold=t, error_x=x, error_y=y) for t, x, y in zip(grid, far, frr)]
    return DETCurve(axes="far_frr", points=points, monotone=_is_monotone(far, frr, polarity))


def compute_eer(curve: DETCurve) -> EERResult:
    """Error where error_x equals error_y, linearly interpolated between thresholds."""
    if len(curve.points) < 2:
        raise ContractViolation("EER needs a curve with at least 2 points")
    xs = np.array([p.error_x for p in curve.points])
    ys = np.array([p.error_y for p in curve.points])
    ts = np.array([p.threshold for p in curve.points])
    diff = xs - ys

    exact = np.flatnonzero(diff == 0)
    if exact.size:
        i = exact[0]
        return EERResult(eer=float(xs[i]), threshold=float(ts[i]))

    crossings = np.flatnonzero(np.sign(diff[:-1]) * np.sign(diff[1:]) < 0)
    if crossings.size:
        i = crossings[0]
        w = diff[i] / (diff[i] - diff[i + 1])
        eer = xs[i] + w * (xs[i + 1] - xs[i])
        t0, t1 = ts[i], ts[i + 1]
        if np.isfinite(t0) and np.isfinite(t1):
            threshold = t0 + w * (t1 - t0)
        else:
            threshold = t0 if np.isfinite(t0) else t1
        return EERResult(eer=float(eer), threshold=float(threshold))

    i = int(np.argmin(np.abs(diff)))
    return EERResult(eer=float((xs[i] + ys[i]) / 2), threshold=float(ts[i]), no_crossing=True)


def gar_at(curve: DETCurve, max_false_accept: float) -> float:
    """Best GAR (1 - error_y) among points whose error_x is at most the target."""
    eligible = [1.0 - p.error_y for p in curve.points if p.error_x <= max_false_accept]
    return max(eligible) if eligible else 0.0
