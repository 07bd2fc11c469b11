"""Finite-difference verification of every training loss.

Each case builds a scalar loss of the flat parameter vector on a small
model, compares the tape gradient against central differences coordinate by
coordinate, and reports the max relative error |g - fd| / max(|g|, |fd|,
1e-6). The floor makes the ratio well-defined at zero-gradient coordinates
while staying far stricter than the 1e-4 acceptance tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import losses as L
from .model import ArchConfig, DescriptorModel

TOLERANCE = 1e-4
STEP = 1e-5
FLOOR = 1e-6


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    passed: bool


def finite_difference(loss_of_theta: Callable[[np.ndarray], float],
                      theta: np.ndarray, h: float = STEP) -> np.ndarray:
    grad = np.empty_like(theta)
    work = theta.copy()
    for i in range(theta.size):
        orig = work[i]
        work[i] = orig + h
        up = loss_of_theta(work)
        work[i] = orig - h
        down = loss_of_theta(work)
        work[i] = orig
        grad[i] = (up - down) / (2.0 * h)
    return grad


def compare(analytic: np.ndarray, fd: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), FLOOR)
    return float(np.max(np.abs(analytic - fd) / denom))


def _check(name, model, build) -> CheckResult:
    """build(theta_like) -> scalar (Tensor for Tensor input, float for array)."""
    leaf = ad.Tensor(model.theta.copy())
    root = build(leaf)
    ad.backward(root)
    fd = finite_difference(lambda th: float(ad.value_of(build_plain(build, th))), model.theta)
    err = compare(leaf.grad, fd)
    return CheckResult(name=name, max_rel_error=err, passed=err <= TOLERANCE)


def build_plain(build, theta):
    out = build(theta)
    return out.data if isinstance(out, ad.Tensor) else out


def small_model(seed: int = 0) -> DescriptorModel:
    arch = ArchConfig(input_shape=(3, 8, 8), conv_channels=(4,), kernel_size=3,
                      hidden_dim=24, descriptor_dim=16, gem_p=1.0)
    return DescriptorModel(arch, rng=np.random.default_rng(seed))


def default_cases(seed: int = 0):
    """(name, model, builder) triples covering every loss in the package."""
    rng = np.random.default_rng(seed)
    model = small_model(seed)
    images = rng.uniform(0.0, 1.0, (3, 3, 8, 8))
    margin = 0.5  # wide enough that the hinge stays active at random init

    teacher_theta = model.theta + rng.normal(0.0, 0.05, model.n_params)
    teacher_descs = model.forward(images, theta=teacher_theta)
    teacher_gram = teacher_descs @ teacher_descs.T

    state = L.LifelongState(n_params=model.n_params)
    state.env_index = 2
    state.teacher_theta = teacher_theta
    state.omega = {
        "rmas": L.ImportanceVector(rng.uniform(0.0, 2.0, model.n_params), 1),
        "mas": L.ImportanceVector(rng.uniform(0.0, 2.0, model.n_params), 1),
    }

    def descs_of(theta):
        return model.graph_descriptors(theta, images)

    def gram_of(theta):
        return ad.gram(descs_of(theta))

    def triplet(theta):
        g = gram_of(theta)
        return L.triplet_loss(ad.pick(g, (0, 1)), ad.pick(g, (0, 2)), margin)

    def penalty_rmas(theta):
        return L.quadratic_penalty(theta, state, "rmas")

    def penalty_mas(theta):
        return L.quadratic_penalty(theta, state, "mas")

    def gram_frobenius(theta):
        return ad.frobenius(gram_of(theta))

    def rkd(theta):
        return L.rkd_loss(gram_of(theta), teacher_gram)

    def kd(theta):
        return L.kd_loss(descs_of(theta), teacher_descs)

    def mas_norm(theta):
        pre = model.graph_descriptors(theta, images[:1], stage="prenorm")
        return ad.sqrt(ad.sum_all(ad.mul(pre, pre)))

    def combined(theta):
        return L.combined_loss(triplet(theta), penalty_rmas(theta), rkd(theta),
                               lambda1=2.0, lambda2=3.0)

    return [
        ("triplet", model, triplet),
        ("quadratic_penalty_rmas", model, penalty_rmas),
        ("quadratic_penalty_mas", model, penalty_mas),
        ("gram_frobenius", model, gram_frobenius),
        ("rkd", model, rkd),
        ("kd", model, kd),
        ("mas_descriptor_norm", model, mas_norm),
        ("combined", model, combined),
    ]


def run_all(seed: int = 0) -> list[CheckResult]:
    return [_check(name, model, build) for name, model, build in default_cases(seed)]
