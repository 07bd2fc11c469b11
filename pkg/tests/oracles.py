"""Independent reference implementations shared by the test modules."""

import numpy as np


def brute_force_recall(pairs):
    """Best recall over an explicit sweep of every observed similarity as a
    >= threshold, subject to zero accepted false pairs."""
    sims = np.array([s for s, _ in pairs], dtype=np.float64)
    truth = np.array([t for _, t in pairs], dtype=bool)
    n_true = truth.sum()
    assert n_true > 0
    best = 0.0
    for t in list(sims) + [np.inf]:
        accept = sims >= t
        if (accept & ~truth).sum() == 0:
            best = max(best, (accept & truth).sum() / n_true)
    return best


def summarize_by_hand(r):
    """Direct transcription of the lifelong summary formulas."""
    r = np.asarray(r, dtype=np.float64)
    t = r.shape[0]
    ap = sum(r[i, j] for i in range(t) for j in range(i + 1)) / (t * (t + 1) / 2)
    if t < 2:
        return ap, None, None
    pairs = t * (t - 1) / 2
    bwt = sum(r[i, j] - r[j, j] for i in range(1, t) for j in range(i)) / pairs
    fwt = sum(r[i, j] for i in range(t) for j in range(i + 1, t)) / pairs
    return ap, bwt, fwt
