"""Descriptor network: conv stack -> generalized-mean pooling -> 2-layer
perceptron -> L2 normalization, over a single flat float64 parameter vector.

The network body is written once against the autodiff ops, which double as
plain numpy functions: pass the flat ndarray and you get a fast inference
path, pass a Tensor leaf and you get the differentiable graph.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import serialization

PARAMS_FORMAT = "looplearn-params"
PARAMS_VERSION = 1


@dataclass(frozen=True)
class ArchConfig:
    input_shape: tuple = (3, 16, 16)
    conv_channels: tuple = (8, 16)
    kernel_size: int = 3
    hidden_dim: int = 64
    descriptor_dim: int = 64
    gem_p: float = 1.0

    def __post_init__(self):
        c, h, w = self.input_shape
        if min(c, h, w) < 1 or self.hidden_dim < 1 or self.descriptor_dim < 1:
            raise ValueError("architecture dimensions must be positive")
        if self.gem_p < 1.0:
            raise ValueError("gem_p must be >= 1")
        k = self.kernel_size
        for _ in self.conv_channels:
            h, w = h - k + 1, w - k + 1
        if h < 1 or w < 1:
            raise ValueError("conv stack consumes the whole spatial extent")
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "conv_channels": list(self.conv_channels),
            "kernel_size": self.kernel_size,
            "hidden_dim": self.hidden_dim,
            "descriptor_dim": self.descriptor_dim,
            "gem_p": self.gem_p,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(
            input_shape=tuple(d["input_shape"]),
            conv_channels=tuple(d["conv_channels"]),
            kernel_size=d["kernel_size"],
            hidden_dim=d["hidden_dim"],
            descriptor_dim=d["descriptor_dim"],
            gem_p=d["gem_p"],
        )


@dataclass(frozen=True)
class _Slot:
    name: str
    shape: tuple
    start: int
    stop: int


def _layout(arch: ArchConfig) -> list[_Slot]:
    slots, pos = [], 0
    c_in = arch.input_shape[0]
    k = arch.kernel_size
    for li, c_out in enumerate(arch.conv_channels):
        for name, shape in ((f"conv{li}.w", (c_out, c_in, k, k)), (f"conv{li}.b", (c_out,))):
            size = int(np.prod(shape))
            slots.append(_Slot(name, shape, pos, pos + size))
            pos += size
        c_in = c_out
    for name, shape in (
        ("fc1.w", (c_in, arch.hidden_dim)),
        ("fc1.b", (arch.hidden_dim,)),
        ("fc2.w", (arch.hidden_dim, arch.descriptor_dim)),
        ("fc2.b", (arch.descriptor_dim,)),
    ):
        size = int(np.prod(shape))
        slots.append(_Slot(name, shape, pos, pos + size))
        pos += size
    return slots


class DescriptorModel:
    """f(image; theta) -> unit descriptor in R^D, with gradient support."""

    def __init__(self, arch: ArchConfig, rng: np.random.Generator | None = None,
                 theta: np.ndarray | None = None):
        self.arch = arch
        self._slots = _layout(arch)
        self._by_name = {s.name: s for s in self._slots}
        self.n_params = self._slots[-1].stop
        if theta is not None:
            theta = np.asarray(theta, dtype=np.float64)
            if theta.shape != (self.n_params,):
                raise ValueError(
                    f"theta has {theta.shape}, architecture needs ({self.n_params},)"
                )
            self.theta = theta.copy()
        else:
            rng = rng if rng is not None else np.random.default_rng(0)
            self.theta = self._init_params(rng)

    def _init_params(self, rng) -> np.ndarray:
        theta = np.zeros(self.n_params)
        for s in self._slots:
            if s.name.endswith(".w"):
                fan_in = int(np.prod(s.shape[1:])) if len(s.shape) == 4 else s.shape[0]
                theta[s.start:s.stop] = rng.normal(
                    0.0, np.sqrt(2.0 / fan_in), s.stop - s.start
                )
        return theta

    # network body, duck-typed over ndarray / Tensor theta

    def _param(self, theta, name):
        s = self._by_name[name]
        return ad.segment(theta, s.start, s.shape)

    def _net(self, theta, images, stage: str = "descriptor"):
        x = self._as_batch(images)
        if not np.isfinite(x).all():
            raise ValueError("non-finite values in input images")
        for li in range(len(self.arch.conv_channels)):
            w = self._param(theta, f"conv{li}.w")
            b = self._param(theta, f"conv{li}.b")
            x = ad.relu(ad.conv2d(x, w, b))
            self._check_finite(x, f"conv{li}")
        pooled = ad.gem_pool(x, self.arch.gem_p)
        if stage == "pooled":
            return pooled
        h = ad.relu(ad.add(ad.matmul(pooled, self._param(theta, "fc1.w")),
                           self._param(theta, "fc1.b")))
        self._check_finite(h, "fc1")
        pre = ad.add(ad.matmul(h, self._param(theta, "fc2.w")),
                     self._param(theta, "fc2.b"))
        self._check_finite(pre, "fc2")
        if stage == "prenorm":
            return pre
        return ad.l2norm_rows(pre)

    @staticmethod
    def _check_finite(x, layer):
        if not np.isfinite(ad.value_of(x)).all():
            raise RuntimeError(f"non-finite activations after layer {layer}")

    def _as_batch(self, images) -> np.ndarray:
        x = np.asarray(images, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or x.shape[1:] != self.arch.input_shape:
            raise ValueError(
                f"image batch shape {x.shape} does not match input {self.arch.input_shape}"
            )
        return x

    # public inference

    def forward(self, images, theta: np.ndarray | None = None) -> np.ndarray:
        """Unit-norm descriptors, (n, D) for a batch or (D,) for one image."""
        th = self.theta if theta is None else np.asarray(theta, dtype=np.float64)
        out = self._net(th, images)
        return out[0] if np.asarray(images).ndim == 3 else out

    def prenorm(self, images, theta: np.ndarray | None = None) -> np.ndarray:
        """Head output before L2 normalization."""
        th = self.theta if theta is None else np.asarray(theta, dtype=np.float64)
        out = self._net(th, images, stage="prenorm")
        return out[0] if np.asarray(images).ndim == 3 else out

    def pooled(self, images, theta: np.ndarray | None = None) -> np.ndarray:
        """Pooled conv features before the perceptron head."""
        th = self.theta if theta is None else np.asarray(theta, dtype=np.float64)
        out = self._net(th, images, stage="pooled")
        return out[0] if np.asarray(images).ndim == 3 else out

    def gram_triplet(self, images) -> np.ndarray:
        """3x3 matrix of pairwise cosine similarities of (anchor, positive,
        negative) descriptors; symmetric with unit diagonal."""
        x = self._as_batch(images)
        if x.shape[0] != 3:
            raise ValueError("gram_triplet expects exactly 3 images")
        return ad.gram(self._net(self.theta, x))

    # graph building for the losses

    def graph_descriptors(self, theta: ad.Tensor, images, stage: str = "descriptor"):
        """Differentiable version of forward/prenorm/pooled on a Tensor leaf."""
        return self._net(theta, images, stage=stage)

    def loss_gradient(self, loss_fn: Callable[[ad.Tensor], ad.Tensor]) -> np.ndarray:
        """Exact gradient of a scalar loss of the parameters.

        loss_fn receives the flat parameter vector as a Tensor leaf and must
        return a scalar Tensor built from the autodiff ops.
        """
        leaf = ad.Tensor(self.theta.copy())
        loss = loss_fn(leaf)
        if not isinstance(loss, ad.Tensor) or loss.data.shape != ():
            raise ValueError("loss_fn must return a scalar Tensor")
        if not np.isfinite(loss.data):
            raise RuntimeError("non-finite loss value")
        ad.backward(loss)
        grad = leaf.grad
        if not np.isfinite(grad).all():
            raise RuntimeError("non-finite gradient")
        return grad

    # parameter serialization

    def save_params(self, path) -> None:
        serialization.write_json(path, {
            "format": PARAMS_FORMAT,
            "version": PARAMS_VERSION,
            "arch": self.arch.to_dict(),
            "theta": serialization.pack_array(self.theta),
        })

    @classmethod
    def load_params(cls, path) -> "DescriptorModel":
        blob = serialization.read_json(path)
        if blob.get("format") != PARAMS_FORMAT or blob.get("version") != PARAMS_VERSION:
            raise ValueError("unrecognized parameter container")
        arch = ArchConfig.from_dict(blob["arch"])
        return cls(arch, theta=serialization.unpack_array(blob["theta"]))


def cosine_sim(a, b) -> float:
    """Cosine similarity of two vectors; rejects zero vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero vectors")
    return float(a @ b / (na * nb))
