"""Training objectives for lifelong descriptor learning.

All loss functions are duck-typed over plain floats/arrays and autodiff
Tensors: call them with numbers to get numbers, or thread a Tensor through
to get a differentiable graph. The relational terms act on the 3x3 Gram
matrix of pairwise descriptor similarities for a (anchor, positive,
negative) triplet.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad


def triplet_loss(s_ap, s_an, margin: float):
    """Hinge on similarity gap: max(s_an - s_ap + margin, 0)."""
    if margin <= 0:
        raise ValueError("margin must be positive")
    return ad.relu(ad.add(ad.sub(s_an, s_ap), margin))


def quadratic_penalty(theta, state: "LifelongState", variant: str):
    """Importance-weighted drift from the previous-environment parameters:
    sum_i omega_i (theta_i - teacher_i)^2."""
    if state.env_index < 2:
        raise ValueError("penalty undefined before the second environment")
    omega = state.omega[variant].values
    teacher = state.teacher_theta
    n = ad.value_of(theta).shape[0]
    if omega.shape[0] != n or teacher.shape[0] != n:
        raise ValueError("parameter / importance length mismatch")
    diff = ad.sub(theta, teacher)
    return ad.sum_all(ad.mul(omega, ad.mul(diff, diff)))


def rkd_loss(student_gram, teacher_gram):
    """Frobenius distance between the student and teacher triplet Gram
    matrices; preserves pairwise similarity structure, not raw descriptors."""
    return ad.frobenius(ad.sub(student_gram, teacher_gram))


def kd_loss(student_descs, teacher_descs):
    """Frobenius distance between stacked student and teacher descriptors
    (the non-relational baseline: preserves absolute descriptor values)."""
    if ad.value_of(student_descs).shape != ad.value_of(teacher_descs).shape:
        raise ValueError("descriptor shape mismatch")
    return ad.frobenius(ad.sub(student_descs, teacher_descs))


def combined_loss(triplet_term, reg_term, kd_term, lambda1: float, lambda2: float):
    """triplet + lambda1 * regularizer + lambda2 * distillation. Callers pass
    0 for terms that are inactive (first environment has no teacher)."""
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("loss weights must be non-negative")
    return ad.add(triplet_term, ad.add(ad.mul(reg_term, lambda1), ad.mul(kd_term, lambda2)))


def gram_frobenius_graph(model, theta: ad.Tensor, images):
    """Scalar ||G||_F of the triplet Gram matrix, as a graph node. Its
    squared parameter gradient is the relational importance contribution."""
    descs = model.graph_descriptors(theta, images)
    return ad.frobenius(ad.gram(descs))


def rmas_importance_step(model, images) -> np.ndarray:
    """Squared gradient of the triplet Gram Frobenius norm w.r.t. every
    parameter; one accumulation step of the relational importance."""
    leaf = ad.Tensor(model.theta.copy())
    root = gram_frobenius_graph(model, leaf, images)
    ad.backward(root)
    return leaf.grad ** 2


def mas_importance_step(model, image) -> np.ndarray:
    """Squared gradient of the descriptor norm w.r.t. every parameter (the
    non-relational baseline). The model normalizes descriptors in forward,
    which would make this gradient identically zero, so the norm is taken on
    the head output before normalization."""
    leaf = ad.Tensor(model.theta.copy())
    pre = model.graph_descriptors(leaf, image, stage="prenorm")
    root = ad.sqrt(ad.sum_all(ad.mul(pre, pre)))
    ad.backward(root)
    return leaf.grad ** 2


def rmas_pairwise_reference(model, images) -> np.ndarray:
    """All-pairs expectation of the squared similarity gradient over a small
    image set. Exact but quadratic in the set size; kept for side-by-side
    inspection against the triplet Gram approximation on tiny inputs."""
    images = np.asarray(images, dtype=np.float64)
    n = images.shape[0]
    total = np.zeros(model.n_params)
    count = 0
    for i in range(n):
        for j in range(i + 1, n):
            leaf = ad.Tensor(model.theta.copy())
            descs = model.graph_descriptors(leaf, images[[i, j]])
            sim = ad.pick(ad.gram(descs), (0, 1))
            ad.backward(sim)
            total += leaf.grad ** 2
            count += 1
    return total / max(count, 1)


@dataclass
class ImportanceVector:
    """Non-negative per-parameter importance plus how many accumulation
    steps produced it."""

    values: np.ndarray
    sample_count: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("importance must be a flat vector")
        if not np.isfinite(self.values).all() or (self.values < 0).any():
            raise ValueError("importance entries must be finite and >= 0")


@dataclass
class LifelongState:
    """Cross-environment training state: the previous environment's
    parameter snapshot (teacher), finalized importance per variant, and the
    running accumulators for the current environment."""

    n_params: int
    env_index: int = 1
    steps_in_env: int = 0
    teacher_theta: np.ndarray | None = None
    omega: dict = field(default_factory=dict)
    accum_sum: dict = field(default_factory=dict)
    accum_count: dict = field(default_factory=dict)

    def has_teacher(self) -> bool:
        return self.env_index >= 2 and self.teacher_theta is not None

    def penalty_ready(self, variant: str) -> bool:
        return self.has_teacher() and variant in self.omega

    def accumulate(self, variant: str, squared_grads: np.ndarray, count: int = 1) -> None:
        if squared_grads.shape != (self.n_params,):
            raise ValueError("importance contribution has wrong length")
        if variant not in self.accum_sum:
            self.accum_sum[variant] = np.zeros(self.n_params)
            self.accum_count[variant] = 0
        self.accum_sum[variant] += squared_grads
        self.accum_count[variant] += count

    def finalize_environment(self, theta: np.ndarray, cumulative: bool = True) -> None:
        """Close out the current environment: freeze accumulated importance
        (blended with the prior one when cumulative), snapshot the teacher,
        advance the environment index, reset per-environment counters."""
        for variant, total in self.accum_sum.items():
            count = self.accum_count[variant]
            if count == 0:
                continue
            fresh = total / count
            if cumulative and variant in self.omega:
                prior = self.omega[variant]
                values = 0.5 * (prior.values + fresh)
                samples = prior.sample_count + count
            else:
                values = fresh
                samples = count
            self.omega[variant] = ImportanceVector(values, samples)
        self.teacher_theta = np.asarray(theta, dtype=np.float64).copy()
        self.accum_sum = {}
        self.accum_count = {}
        self.env_index += 1
        self.steps_in_env = 0

    def skip_environment(self) -> None:
        """Advance past an environment that produced no completed steps:
        importance and teacher stay untouched."""
        self.accum_sum = {}
        self.accum_count = {}
        self.env_index += 1
        self.steps_in_env = 0
