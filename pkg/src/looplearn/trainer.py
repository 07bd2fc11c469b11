"""Sequential lifelong training: one pass over each environment's frame
stream, per-frame buffer insert + triplet sampling + momentum-SGD step on
the combined loss, importance accumulation, and boundary bookkeeping
(teacher snapshot, importance freeze, buffer reset, checkpoint).
"""

from __future__ import annotations

import csv
import json
import os
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import losses as L
from .memory import MemoryBuffer
from .model import ArchConfig, DescriptorModel
from .serialization import config_digest, pack_array, read_json, unpack_array, write_json

METHODS = ("finetune", "mas", "kd", "rmas", "rkd", "airloop")
CHECKPOINT_FORMAT = "looplearn-checkpoint"
CHECKPOINT_VERSION = 1
ENV_PREFIX = "LOOPLEARN_"


@dataclass
class TrainConfig:
    learning_rate: float = 0.002
    momentum: float = 0.9
    seed: int = 0
    method: str = "airloop"
    triplets_per_step: int = 1
    epochs_per_env: int = 1
    momentum_reset: bool = False
    memory_capacity: int = 1000
    redraw_cap: int = 16
    margin: float = 0.2
    lambda1: float = 0.1
    lambda2: float = 0.1
    rmas_cumulative: bool = True
    descriptor_dim: int = 64
    conv_channels: tuple = (8, 16)
    kernel_size: int = 3
    hidden_dim: int = 64
    gem_p: float = 1.0
    input_shape: tuple = (3, 16, 16)
    eval_per_query: bool = False
    eval_exclusion_window: int | None = None
    eval_epsilon: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.memory_capacity < 3:
            raise ValueError("memory capacity must be >= 3")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.margin <= 0 or self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("invalid loss hyperparameters")
        if self.triplets_per_step < 1 or self.epochs_per_env < 1:
            raise ValueError("triplets_per_step and epochs_per_env must be >= 1")
        self.conv_channels = tuple(self.conv_channels)
        self.input_shape = tuple(self.input_shape)

    def arch(self) -> ArchConfig:
        return ArchConfig(
            input_shape=self.input_shape,
            conv_channels=self.conv_channels,
            kernel_size=self.kernel_size,
            hidden_dim=self.hidden_dim,
            descriptor_dim=self.descriptor_dim,
            gem_p=self.gem_p,
        )


# config file sections <-> TrainConfig fields
_SECTIONS = {
    "train": {
        "learning_rate": "learning_rate",
        "momentum": "momentum",
        "seed": "seed",
        "method": "method",
        "triplets_per_step": "triplets_per_step",
        "epochs_per_env": "epochs_per_env",
        "momentum_reset": "momentum_reset",
    },
    "memory": {"capacity": "memory_capacity", "redraw_cap": "redraw_cap"},
    "loss": {"margin": "margin", "lambda1": "lambda1", "lambda2": "lambda2"},
    "rmas": {"cumulative": "rmas_cumulative"},
    "model": {
        "descriptor_dim": "descriptor_dim",
        "conv_channels": "conv_channels",
        "kernel_size": "kernel_size",
        "hidden_dim": "hidden_dim",
        "gem_p": "gem_p",
        "input_shape": "input_shape",
    },
    "eval": {
        "per_query": "eval_per_query",
        "exclusion_window": "eval_exclusion_window",
        "epsilon": "eval_epsilon",
    },
}


def config_from_sections(sections: dict) -> TrainConfig:
    kwargs = {}
    for section, keys in sections.items():
        if section not in _SECTIONS:
            raise ValueError(f"unknown config section {section!r}")
        for key, value in keys.items():
            if key not in _SECTIONS[section]:
                raise ValueError(f"unknown config key {section}.{key}")
            kwargs[_SECTIONS[section][key]] = value
    return TrainConfig(**kwargs)


def config_to_sections(config: TrainConfig) -> dict:
    out = {}
    for section, keys in _SECTIONS.items():
        out[section] = {}
        for key, attr in keys.items():
            value = getattr(config, attr)
            out[section][key] = list(value) if isinstance(value, tuple) else value
    return out


def _env_overrides() -> dict:
    found = {}
    for name, raw in os.environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        section, _, key = rest.partition("_")
        if section in _SECTIONS and key in _SECTIONS[section]:
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw
            found.setdefault(section, {})[key] = value
    return found


def load_config(path=None, apply_env: bool = True) -> TrainConfig:
    """Config file (JSON sections) -> TrainConfig, with LOOPLEARN_<SECTION>_
    <KEY> environment overrides applied on top."""
    sections = read_json(path) if path is not None else {}
    if apply_env:
        for section, keys in _env_overrides().items():
            sections.setdefault(section, {}).update(keys)
    return config_from_sections(sections)


@dataclass
class StepReport:
    step: int
    env: int
    skipped: bool
    loss_triplet: float = 0.0
    loss_reg: float = 0.0
    loss_kd: float = 0.0
    loss_total: float = 0.0


class Trainer:
    """Owns all mutable training state; strictly single-pass over the stream."""

    def __init__(self, config: TrainConfig, manifest, out_dir=None):
        self.config = config
        self.manifest = manifest
        self.out_dir = Path(out_dir) if out_dir is not None else None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        seeds = np.random.SeedSequence(config.seed).spawn(2)
        self.model = DescriptorModel(config.arch(), rng=np.random.default_rng(seeds[0]))
        self.rng = np.random.default_rng(seeds[1])
        self.state = L.LifelongState(n_params=self.model.n_params)
        self.velocity = np.zeros(self.model.n_params)
        self.buffer: MemoryBuffer | None = None
        self.global_step = 0
        self.env_pos = 0
        self.frame_pos = 0
        self.epoch = 0
        self._consumed: set = set()

    # per-environment lifecycle

    def begin_environment(self, env_spec) -> None:
        self.buffer = MemoryBuffer(self.config.memory_capacity, env_spec.rule,
                                   self.config.redraw_cap)

    def train_step(self, frame) -> StepReport:
        """Insert the frame, sample a triplet, apply one momentum-SGD step on
        the combined loss, and accumulate importance. Returns a skipped
        report when no valid triplet exists yet."""
        if self.buffer is None:
            raise RuntimeError("begin_environment must be called before train_step")
        self.buffer.insert(frame)
        cfg = self.config
        triplets = []
        for _ in range(cfg.triplets_per_step):
            t = self.buffer.sample_triplet(self.rng)
            if t is not None:
                triplets.append(t)
        if not triplets:
            return StepReport(step=self.global_step, env=self.state.env_index,
                              skipped=True)

        leaf = ad.Tensor(self.model.theta.copy())
        totals, trip_vals, reg_vals, kd_vals, frobs = [], [], [], [], []
        for t in triplets:
            images = np.stack([t.anchor.image, t.positive.image, t.negative.image])
            total, parts, frob = self._loss_graph(leaf, images)
            totals.append(total)
            trip_vals.append(parts[0])
            reg_vals.append(parts[1])
            kd_vals.append(parts[2])
            frobs.append(frob)
        loss = totals[0]
        for extra in totals[1:]:
            loss = ad.add(loss, extra)
        loss = loss / len(totals)

        if not np.isfinite(loss.data):
            self._diagnostic_abort(float(loss.data), triplets)
        ad.backward(loss)
        grad = leaf.grad.copy()
        if not np.isfinite(grad).all():
            self._diagnostic_abort(float(loss.data), triplets)

        # importance at this step's parameters, before the update
        if cfg.method in ("rmas", "airloop"):
            for frob in frobs:
                ad.backward(frob)
                self.state.accumulate("rmas", leaf.grad ** 2)
        elif cfg.method == "mas":
            for t in triplets:
                for f in (t.anchor, t.positive, t.negative):
                    self.state.accumulate("mas", L.mas_importance_step(self.model, f.image))

        self.velocity = cfg.momentum * self.velocity + grad
        self.model.theta -= cfg.learning_rate * self.velocity

        self.state.steps_in_env += 1
        self.global_step += 1
        k = len(totals)
        return StepReport(
            step=self.global_step,
            env=self.state.env_index,
            skipped=False,
            loss_triplet=sum(trip_vals) / k,
            loss_reg=sum(reg_vals) / k,
            loss_kd=sum(kd_vals) / k,
            loss_total=float(loss.data),
        )

    def _loss_graph(self, leaf, images):
        cfg = self.config
        descs = self.model.graph_descriptors(leaf, images)
        gram = ad.gram(descs)
        s_ap = ad.pick(gram, (0, 1))
        s_an = ad.pick(gram, (0, 2))
        l_trip = L.triplet_loss(s_ap, s_an, cfg.margin)

        reg = 0.0
        if cfg.method in ("mas", "rmas", "airloop"):
            variant = "mas" if cfg.method == "mas" else "rmas"
            if self.state.penalty_ready(variant):
                reg = L.quadratic_penalty(leaf, self.state, variant)

        kd = 0.0
        if cfg.method in ("kd", "rkd", "airloop") and self.state.has_teacher():
            teacher_descs = self.model.forward(images, theta=self.state.teacher_theta)
            if cfg.method == "kd":
                kd = L.kd_loss(descs, teacher_descs)
            else:
                kd = L.rkd_loss(gram, teacher_descs @ teacher_descs.T)

        total = L.combined_loss(l_trip, reg, kd, cfg.lambda1, cfg.lambda2)
        frob = ad.frobenius(gram) if cfg.method in ("rmas", "airloop") else None
        parts = (float(ad.value_of(l_trip)), float(ad.value_of(reg)),
                 float(ad.value_of(kd)))
        return total, parts, frob

    def _diagnostic_abort(self, loss_value, triplets):
        snap = {
            "global_step": self.global_step,
            "env_index": self.state.env_index,
            "loss": loss_value,
            "theta_norm": float(np.linalg.norm(self.model.theta)),
            "theta_finite": bool(np.isfinite(self.model.theta).all()),
            "velocity_norm": float(np.linalg.norm(self.velocity)),
            "triplets": [[list(t.anchor.key()), list(t.positive.key()),
                          list(t.negative.key())] for t in triplets],
        }
        where = ""
        if self.out_dir is not None:
            path = self.out_dir / "diagnostic.json"
            write_json(path, snap)
            where = f"; snapshot written to {path}"
        raise RuntimeError(
            f"non-finite loss at step {self.global_step}{where}: {json.dumps(snap)}"
        )

    def finish_environment(self) -> None:
        """Freeze this environment's importance, snapshot the teacher, clear
        the buffer, advance the environment index. With zero completed steps
        the learning state is left untouched (warning) but the stream
        bookkeeping still advances."""
        if self.state.steps_in_env == 0:
            warnings.warn("finish_environment with zero completed steps is a no-op "
                          "for importance and teacher")
            if self.buffer is not None:
                self.buffer.reset()
            self.state.skip_environment()
        else:
            self.state.finalize_environment(self.model.theta,
                                            cumulative=self.config.rmas_cumulative)
            if self.buffer is not None:
                self.buffer.reset()
        if self.config.momentum_reset:
            self.velocity[:] = 0.0

    # full run

    def run(self, save_every: int | None = None) -> dict:
        """Train over every environment in manifest order; emits loss_log.csv,
        env_{t}.ckpt per boundary, final.ckpt, and run_report.json when an
        output directory is set. Returns the report dict."""
        started = time.time()
        log_fh, log_writer = self._open_log()
        checkpoints = []
        envs = self.manifest.environments
        try:
            while self.env_pos < len(envs):
                env = envs[self.env_pos]
                frames = env.frames("train")
                if self.epoch == 0 and self.frame_pos == 0:
                    self.begin_environment(env)
                while self.epoch < self.config.epochs_per_env:
                    while self.frame_pos < len(frames):
                        frame = frames[self.frame_pos]
                        if frame.env != env.name:
                            raise ValueError(
                                f"stream not sequential: frame from {frame.env!r} "
                                f"inside environment {env.name!r}"
                            )
                        stamp = (frame.env, frame.seq, frame.index, self.epoch)
                        if stamp in self._consumed:
                            raise RuntimeError(f"frame consumed twice: {stamp}")
                        self._consumed.add(stamp)
                        report = self.train_step(frame)
                        self.frame_pos += 1
                        if log_writer is not None and not report.skipped:
                            log_writer.writerow([
                                report.step, self.env_pos + 1,
                                f"{report.loss_triplet:.10g}",
                                f"{report.loss_reg:.10g}",
                                f"{report.loss_kd:.10g}",
                                f"{report.loss_total:.10g}",
                            ])
                        if (save_every and self.out_dir is not None
                                and not report.skipped
                                and self.global_step % save_every == 0):
                            self.save_checkpoint(
                                self.out_dir / f"step_{self.global_step}.ckpt")
                    self.frame_pos = 0
                    self.epoch += 1
                finished = self.env_pos + 1
                self.finish_environment()
                self.env_pos += 1
                self.epoch = 0
                if self.out_dir is not None:
                    path = self.out_dir / f"env_{finished}.ckpt"
                    self.save_checkpoint(path)
                    checkpoints.append(str(path))
        finally:
            if log_fh is not None:
                log_fh.close()

        report = {
            "method": self.config.method,
            "seed": self.config.seed,
            "config": config_to_sections(self.config),
            "environments": self.manifest.env_names(),
            "checkpoints": checkpoints,
            "global_steps": self.global_step,
            "elapsed_seconds": time.time() - started,
        }
        if self.out_dir is not None:
            self.save_checkpoint(self.out_dir / "final.ckpt")
            report["loss_log"] = str(self.out_dir / "loss_log.csv")
            report["final_checkpoint"] = str(self.out_dir / "final.ckpt")
            write_json(self.out_dir / "run_report.json", report)
        return report

    def _open_log(self):
        if self.out_dir is None:
            return None, None
        path = self.out_dir / "loss_log.csv"
        fresh = not path.exists() or self.global_step == 0
        fh = open(path, "w" if fresh else "a", newline="")
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(["step", "env", "L_triplet", "L_reg", "L_kd", "total"])
        return fh, writer

    # checkpointing

    def save_checkpoint(self, path) -> None:
        sections = config_to_sections(self.config)
        st = self.state
        blob = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": sections,
            "config_sha256": config_digest(sections),
            "arch": self.model.arch.to_dict(),
            "theta": pack_array(self.model.theta),
            "velocity": pack_array(self.velocity),
            "lifelong": {
                "env_index": st.env_index,
                "steps_in_env": st.steps_in_env,
                "teacher": None if st.teacher_theta is None else pack_array(st.teacher_theta),
                "omega": {
                    k: {"values": pack_array(v.values), "sample_count": v.sample_count}
                    for k, v in st.omega.items()
                },
                "accum": {
                    k: {"sum": pack_array(v), "count": st.accum_count[k]}
                    for k, v in st.accum_sum.items()
                },
            },
            "rng_state": self.rng.bit_generator.state,
            "cursor": {"env_pos": self.env_pos, "frame_pos": self.frame_pos,
                       "epoch": self.epoch},
            "buffer": None if self.buffer is None else self.buffer.state_dict(),
            "global_step": self.global_step,
        }
        write_json(path, blob)

    @classmethod
    def resume(cls, path, manifest, out_dir=None) -> "Trainer":
        """Rebuild a trainer mid-run; training continues bit-exactly."""
        blob = read_json(path)
        if blob.get("format") != CHECKPOINT_FORMAT or blob.get("version") != CHECKPOINT_VERSION:
            raise ValueError("unrecognized checkpoint container")
        if config_digest(blob["config"]) != blob["config_sha256"]:
            raise ValueError("checkpoint config digest mismatch")
        config = config_from_sections(blob["config"])
        trainer = cls(config, manifest, out_dir=out_dir)
        trainer.model = DescriptorModel(ArchConfig.from_dict(blob["arch"]),
                                        theta=unpack_array(blob["theta"]))
        trainer.velocity = unpack_array(blob["velocity"])
        lf = blob["lifelong"]
        st = trainer.state
        st.env_index = lf["env_index"]
        st.steps_in_env = lf["steps_in_env"]
        st.teacher_theta = None if lf["teacher"] is None else unpack_array(lf["teacher"])
        st.omega = {
            k: L.ImportanceVector(unpack_array(v["values"]), v["sample_count"])
            for k, v in lf["omega"].items()
        }
        st.accum_sum = {k: unpack_array(v["sum"]) for k, v in lf["accum"].items()}
        st.accum_count = {k: v["count"] for k, v in lf["accum"].items()}
        trainer.rng.bit_generator.state = blob["rng_state"]
        cur = blob["cursor"]
        trainer.env_pos = cur["env_pos"]
        trainer.frame_pos = cur["frame_pos"]
        trainer.epoch = cur["epoch"]
        trainer.global_step = blob["global_step"]
        if blob["buffer"] is not None and blob["buffer"]["env"] is not None:
            bstate = blob["buffer"]
            env = next(e for e in manifest.environments if e.name == bstate["env"])
            by_key = {(f.seq, f.index): f for f in env.frames(None)}
            frames = [by_key[(fd["seq"], fd["index"])] for fd in bstate["frames"]]
            trainer.begin_environment(env)
            trainer.buffer.restore(bstate, frames)
        elif trainer.env_pos < len(manifest.environments) and trainer.frame_pos > 0:
            trainer.begin_environment(manifest.environments[trainer.env_pos])
        return trainer
