"""Template-matching protocols: 1:1 verification, closed- and open-set 1:N.

Conventions, fixed and tested rather than configurable:
  - a score >= threshold counts as accept/identify (ties accept)
  - ranking ties break by gallery index order
  - thresholds come from step quantiles over the realized scores, never
    interpolated; candidate sets include a sentinel just above the top
    score so the zero-accept operating point is always reachable
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import core
from .backend import kernels as K


@dataclass
class TpirPoint:
    target_fpir: float
    tpir: float
    threshold: float
    achieved_fpir: float
    flagged: bool  # true when no threshold realizes a positive FPIR <= target


@dataclass
class TarPoint:
    target_far: float
    tar: float
    threshold: float
    achieved_far: float


@dataclass
class PairwiseResult:
    mean_accuracy: float
    std_accuracy: float
    fold_accuracies: list[float]
    fold_thresholds: list[float]


@dataclass
class EvalReport:
    cmc: list[tuple[int, float]]
    tpir_fpir: list[TpirPoint]
    tar_far: list[TarPoint]
    pairs: PairwiseResult | None = None


def score_matrix(probe_vectors, gallery_vectors) -> np.ndarray:
    """P x G cosine similarities; zero-norm vectors score -1 everywhere."""
    P = core.as_matrix(probe_vectors)
    G = core.as_matrix(gallery_vectors)
    if P.shape[1] != G.shape[1]:
        raise ValueError("probe and gallery dimensions differ")
    return K.cosine_matrix(P, G)


def _ranks(scores: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Retrieval rank of each probe's true gallery entry, ties by index."""
    P, G = scores.shape
    s_true = scores[np.arange(P), truth]
    greater = (scores > s_true[:, None]).sum(axis=1)
    earlier_tie = (
        (scores == s_true[:, None]) & (np.arange(G)[None, :] < truth[:, None])
    ).sum(axis=1)
    return 1 + greater + earlier_tie


def closed_set_ir(scores, truth, ranks=(1, 5, 10)) -> dict[int, float]:
    """Identification rate at each rank; every probe must be mated."""
    scores = core.as_matrix(scores)
    truth = np.asarray(truth)
    if truth.shape[0] != scores.shape[0]:
        raise ValueError("need one truth index per probe")
    if truth.min(initial=0) < 0 or (truth >= scores.shape[1]).any():
        raise ValueError("closed-set identification requires every probe mated")
    r = _ranks(scores, truth)
    return {int(k): float((r <= k).mean()) for k in ranks}


def cmc_curve(scores, truth, max_rank: int) -> np.ndarray:
    scores = core.as_matrix(scores)
    truth = np.asarray(truth)
    r = _ranks(scores, truth)
    return np.array([(r <= k).mean() for k in range(1, max_rank + 1)])


def _top_matches(scores: np.ndarray):
    # argmax returns the first maximum, which is the lowest gallery index
    idx = scores.argmax(axis=1)
    return idx, scores[np.arange(scores.shape[0]), idx]


def _rate_at_or_above(values: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Fraction of values >= each threshold, via one sort instead of an
    all-pairs comparison (score lists reach 1e5+ entries)."""
    ordered = np.sort(values)
    below = np.searchsorted(ordered, thresholds, side="left")
    return (ordered.shape[0] - below) / ordered.shape[0]


def open_set_tpir(scores, truth, mated, fpir_targets=(0.01, 0.10)) -> list[TpirPoint]:
    """True-positive identification rate at fixed false-positive rates.

    The threshold for a target is the smallest candidate value whose FPIR
    (fraction of unmated probes with top score >= threshold) does not
    exceed the target. When even the loosest positive operating point
    overshoots the target, the only compliant threshold is the sentinel
    above every score: the point is reported at FPIR 0 and flagged, since
    the target was unreachable rather than met.
    """
    scores = core.as_matrix(scores)
    truth = np.asarray(truth)
    mated = np.asarray(mated, dtype=bool)
    if mated.shape[0] != scores.shape[0] or truth.shape[0] != scores.shape[0]:
        raise ValueError("need one truth index and one mated flag per probe")
    if not (~mated).any():
        raise ValueError("open-set evaluation requires at least one unmated probe")
    top_idx, top_score = _top_matches(scores)
    unmated_top = top_score[~mated]
    candidates = np.unique(unmated_top)
    sentinel = np.nextafter(candidates[-1], np.inf)
    candidates = np.append(candidates, sentinel)
    mated_correct = top_idx[mated] == truth[mated]
    mated_top = top_score[mated]
    fpir = _rate_at_or_above(unmated_top, candidates)
    out = []
    for target in fpir_targets:
        k = int(np.argmax(fpir <= target))  # first (smallest) compliant candidate
        tau = float(candidates[k])
        achieved = float(fpir[k])
        flagged = bool(tau == sentinel and target > 0)
        if mated_top.shape[0] == 0:
            tpir = 0.0
        else:
            tpir = float((mated_correct & (mated_top >= tau)).mean())
        out.append(TpirPoint(float(target), tpir, tau, achieved, flagged))
    return out


def verification_tar(genuine, impostor, far_targets=(0.001, 0.01)) -> list[TarPoint]:
    """True accept rate at fixed false accept rates, impostor-quantile
    thresholds (smallest candidate whose FAR is within the target, which
    maximizes TAR subject to the constraint)."""
    genuine = core.as_vector(genuine)
    impostor = core.as_vector(impostor)
    if genuine.shape[0] == 0 or impostor.shape[0] == 0:
        raise ValueError("need at least one genuine and one impostor score")
    candidates = np.unique(np.concatenate([genuine, impostor]))
    candidates = np.append(candidates, np.nextafter(candidates[-1], np.inf))
    far = _rate_at_or_above(impostor, candidates)
    out = []
    for target in far_targets:
        k = int(np.argmax(far <= target))
        tau = float(candidates[k])
        out.append(
            TarPoint(
                float(target),
                float((genuine >= tau).mean()),
                tau,
                float(far[k]),
            )
        )
    return out


def pairwise_protocol(scores, same, n_folds: int = 10) -> PairwiseResult:
    """Verification accuracy with per-fold threshold selection.

    Pairs are assigned to folds round-robin by index. For each fold the
    threshold maximizing accuracy on the other folds is chosen (lowest
    candidate on ties) and applied to the held-out fold. Reports the mean
    and population std of the fold accuracies.
    """
    scores = core.as_vector(scores)
    same = np.asarray(same, dtype=bool)
    if scores.shape[0] != same.shape[0]:
        raise ValueError("need one label per pair score")
    if scores.shape[0] < n_folds:
        raise ValueError(f"need at least {n_folds} pairs for {n_folds}-fold evaluation")
    folds = np.arange(scores.shape[0]) % n_folds
    accs, taus = [], []
    for f in range(n_folds):
        test = folds == f
        tr_s, tr_y = scores[~test], same[~test]
        candidates = np.unique(tr_s)
        candidates = np.append(candidates, np.nextafter(candidates[-1], np.inf))
        # accuracy at threshold c = (#same with score >= c) + (#different
        # with score < c), counted from one sorted pass
        order = np.argsort(tr_s, kind="stable")
        y_sorted = tr_y[order]
        below = np.searchsorted(tr_s[order], candidates, side="left")
        same_before = np.concatenate([[0], np.cumsum(y_sorted)])[below]
        same_at_or_above = tr_y.sum() - same_before
        diff_below = below - same_before
        acc = (same_at_or_above + diff_below) / tr_s.shape[0]
        tau = float(candidates[int(np.argmax(acc))])
        accs.append(float(((scores[test] >= tau) == same[test]).mean()))
        taus.append(tau)
    return PairwiseResult(
        float(np.mean(accs)), float(np.std(accs)), accs, taus
    )


def identification_arrays(gallery_ids, probe_ids):
    """Map probe subject ids onto gallery indices.

    Returns (truth, mated): truth[i] is the gallery index of probe i's
    subject, or -1 when the subject is not enrolled (mated[i] False).
    Gallery ids must be unique.
    """
    index = {}
    for g, sid in enumerate(gallery_ids):
        if sid in index:
            raise ValueError(f"duplicate gallery subject {sid!r}")
        index[sid] = g
    truth = np.array([index.get(s, -1) for s in probe_ids], dtype=int)
    return truth, truth >= 0
