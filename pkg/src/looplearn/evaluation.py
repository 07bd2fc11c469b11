"""Retrieval scoring and lifelong summary metrics.

Performance on one environment is recall at 100% precision over all
admissible test-frame pairs: the largest recall any similarity threshold can
reach while admitting zero negative pairs. Evaluating every boundary
checkpoint on every environment's test split gives a T x T matrix that is
summarized into average performance (AP), backward transfer (BWT, the
forgetting signature) and forward transfer (FWT).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Label, PlaceRing, pair_label_matrix
from .model import DescriptorModel, cosine_sim

_BATCH = 512


def retrieve(query_desc, database_descs, epsilon: float, ids=None) -> list:
    """Database entries with cosine similarity >= 1 - epsilon to the query,
    ranked by descending similarity, as (id, similarity) pairs."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    db = np.asarray(database_descs, dtype=np.float64)
    if db.ndim != 2 or db.shape[0] == 0:
        raise ValueError("database must be a non-empty (n, d) array")
    q = np.asarray(query_desc, dtype=np.float64)
    sims = np.array([cosine_sim(q, row) for row in db])
    if ids is None:
        ids = np.arange(db.shape[0])
    keep = np.flatnonzero(sims >= 1.0 - epsilon)
    order = keep[np.argsort(-sims[keep], kind="stable")]
    return [(ids[i], float(sims[i])) for i in order]


def recall_at_full_precision(pair_scores) -> float:
    """Largest recall reachable with zero accepted false pairs.

    pair_scores: iterable of (similarity, is_true_loop). A true pair tied
    with the best-scoring false pair does not count (strict inequality), so
    ties bias the metric down, never up.
    """
    pairs = list(pair_scores)
    sims = np.array([s for s, _ in pairs], dtype=np.float64)
    truth = np.array([bool(t) for _, t in pairs])
    return _recall_arrays(sims, truth)


def _recall_arrays(sims: np.ndarray, truth: np.ndarray) -> float:
    n_true = int(truth.sum())
    if n_true == 0:
        raise ValueError("undefined recall: no true pairs")
    false_sims = sims[~truth]
    if false_sims.size == 0:
        return 1.0
    cut = false_sims.max()
    return float((sims[truth] > cut).sum()) / n_true


def extract_descriptors(model: DescriptorModel, frames) -> np.ndarray:
    out = np.empty((len(frames), model.arch.descriptor_dim))
    for lo in range(0, len(frames), _BATCH):
        chunk = frames[lo:lo + _BATCH]
        images = np.stack([f.image for f in chunk])
        out[lo:lo + len(chunk)] = model.forward(images)
    return out


def _admissible_mask(frames, window: int) -> np.ndarray:
    """Upper-triangle pair mask, excluding same-sequence pairs within a
    temporal window of each other."""
    n = len(frames)
    mask = np.triu(np.ones((n, n), dtype=bool), k=1)
    if window > 0:
        seq_ids = {name: i for i, name in enumerate(dict.fromkeys(f.seq for f in frames))}
        seqs = np.array([seq_ids[f.seq] for f in frames])
        idxs = np.array([f.index for f in frames], dtype=np.int64)
        near = (seqs[:, None] == seqs[None, :]) & (
            np.abs(idxs[:, None] - idxs[None, :]) <= window
        )
        mask &= ~near
    return mask


def environment_recall(model: DescriptorModel, env_spec, split: str = "test",
                       window: int | None = None, per_query: bool = False) -> float:
    """recall@100%-precision of one model on one environment's split."""
    frames = env_spec.frames(split)
    if not frames:
        raise ValueError(f"environment {env_spec.name!r} has no {split!r} frames")
    if window is None:
        window = 0 if isinstance(env_spec.rule, PlaceRing) else 10
    descs = extract_descriptors(model, frames)
    sims = descs @ descs.T
    labels = pair_label_matrix(frames, env_spec.rule)
    mask = _admissible_mask(frames, window) & (labels != Label.AMBIGUOUS.value)
    truth = labels == Label.POSITIVE.value
    if not per_query:
        return _recall_arrays(sims[mask], truth[mask])
    return _per_query_recall(sims, truth, mask)


def _per_query_recall(sims, truth, mask) -> float:
    """Per-query variant: a query counts as recalled when any of its true
    pairs clears the zero-false-positive threshold."""
    full_mask = mask | mask.T
    full_truth = truth & full_mask
    has_true = full_truth.any(axis=1)
    if not has_true.any():
        raise ValueError("undefined recall: no true pairs")
    false_sims = sims[mask & ~truth]
    cut = false_sims.max() if false_sims.size else -np.inf
    recalled = (full_truth & (sims > cut)).any(axis=1)
    return float(recalled[has_true].sum()) / float(has_true.sum())


def build_performance_matrix(models, manifest, split: str = "test",
                             window: int | None = None,
                             per_query: bool = False) -> np.ndarray:
    """R[i][j]: recall@100%-precision on environment j's split using the
    model snapshot taken after training environment i."""
    envs = manifest.environments
    if len(models) != len(envs):
        raise ValueError("need exactly one model snapshot per environment")
    r = np.empty((len(envs), len(envs)))
    for i, m in enumerate(models):
        for j, env in enumerate(envs):
            r[i, j] = environment_recall(m, env, split, window, per_query)
    return r


@dataclass(frozen=True)
class LifelongSummary:
    ap: float
    bwt: float | None
    fwt: float | None

    def to_dict(self) -> dict:
        return {"ap": self.ap, "bwt": self.bwt, "fwt": self.fwt}


def summarize(r: np.ndarray) -> LifelongSummary:
    """AP over the lower triangle incl. diagonal, BWT from drops relative to
    the just-trained diagonal, FWT over the upper triangle. BWT/FWT are None
    for a single environment."""
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 2 or r.shape[0] != r.shape[1] or r.shape[0] < 1:
        raise ValueError("performance matrix must be square and non-empty")
    t = r.shape[0]
    ap = sum(r[i, j] for i in range(t) for j in range(i + 1)) / (t * (t + 1) / 2)
    if t < 2:
        return LifelongSummary(ap=float(ap), bwt=None, fwt=None)
    pairs = t * (t - 1) / 2
    bwt = sum(r[i, j] - r[j, j] for i in range(1, t) for j in range(i)) / pairs
    fwt = sum(r[i, j] for i in range(t) for j in range(i + 1, t)) / pairs
    return LifelongSummary(ap=float(ap), bwt=float(bwt), fwt=float(fwt))
