"""Dataset manifests and the synthetic benchmark generator.

A dataset is a directory with a `manifest.json` at its root:

    {"format_version": 1,
     "environments": [
       {"name": "summer",
        "label_rule": {"type": "frame_distance", "max_frames": 3},
        "sequences": [
          {"name": "run0", "split": "train",
           "frames": [
             {"index": 0, "image": "summer/run0/000000.png",
              "pose": [tx, ty, tz, qw, qx, qy, qz],
              "depth": "summer/run0/000000_d.png",
              "intrinsics": {"fx":.., "fy":.., "cx":.., "cy":.., "width":.., "height":..},
              "place_id": 7}]}]}]}

Environment order defines the lifelong stream order. `pose`, `depth`,
`intrinsics` and `place_id` are optional per frame but validated against the
environment's label rule. Images are 8-bit grayscale or RGB PNG; depth maps
are 16-bit grayscale PNG in millimeters (0 = invalid). Rule types:
frame_distance {max_frames}, pose_threshold {max_dist_m, max_yaw_deg},
siou {positive, negative, grid, occlusion}, place_ring {max_ring_dist,
num_places}.

The synthetic generator draws latent place codes on a smooth random closed
curve, renders them through one random linear-plus-tanh map per environment,
and walks the place ring; it exhibits measurable forgetting at desk scale.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import (CameraPose, FrameDistance, Intrinsics, LabelRule,
                       PlaceRing, PoseThreshold, SiouRule)
from .serialization import read_json, write_json

MANIFEST_VERSION = 1


class Frame:
    """One observation: image plus metadata, with lazy file-backed loading."""

    __slots__ = ("env", "seq", "index", "image_path", "depth_path", "pose",
                 "intrinsics", "place_id", "root", "_image", "_depth")

    def __init__(self, env, seq, index, image_path=None, depth_path=None,
                 pose=None, intrinsics=None, place_id=None, root=None,
                 image=None, depth=None):
        self.env = env
        self.seq = seq
        self.index = int(index)
        self.image_path = image_path
        self.depth_path = depth_path
        self.pose = pose
        self.intrinsics = intrinsics
        self.place_id = place_id
        self.root = Path(root) if root is not None else None
        self._image = None if image is None else np.asarray(image, dtype=np.float64)
        self._depth = None if depth is None else np.asarray(depth, dtype=np.float64)

    def _resolve(self, rel):
        p = Path(rel)
        return p if self.root is None else self.root / p

    @property
    def image(self) -> np.ndarray:
        """(C,H,W) float64 in [0,1]; loaded from PNG and cached."""
        if self._image is None:
            if self.image_path is None:
                raise ValueError(f"frame {self.key()} has no image")
            path = self._resolve(self.image_path)
            try:
                with Image.open(path) as im:
                    arr = np.asarray(im, dtype=np.float64) / 255.0
            except OSError as e:
                raise ValueError(f"unreadable image for frame {self.key()}: {e}") from e
            if arr.ndim == 2:
                arr = arr[None]
            else:
                arr = arr.transpose(2, 0, 1)
            self._image = arr
        return self._image

    @property
    def depth(self) -> np.ndarray | None:
        """(H,W) float64 meters; 16-bit millimeter PNG on disk, 0 = invalid."""
        if self._depth is None and self.depth_path is not None:
            path = self._resolve(self.depth_path)
            with Image.open(path) as im:
                self._depth = np.asarray(im, dtype=np.float64) / 1000.0
        return self._depth

    def key(self) -> tuple:
        return (self.env, self.seq, self.index)

    def drop_cache(self) -> None:
        if self.image_path is not None:
            self._image = None
        if self.depth_path is not None:
            self._depth = None


@dataclass
class SequenceSpec:
    name: str
    frames: list
    split: str = "train"


@dataclass
class EnvironmentSpec:
    name: str
    rule: LabelRule
    sequences: list

    def frames(self, split: str | None = None) -> list:
        out = []
        for seq in self.sequences:
            if split is None or seq.split == split:
                out.extend(seq.frames)
        return out


@dataclass
class DatasetManifest:
    environments: list
    root: Path | None = None

    def env_names(self) -> list:
        return [e.name for e in self.environments]


def rule_to_dict(rule: LabelRule) -> dict:
    if isinstance(rule, FrameDistance):
        return {"type": "frame_distance", "max_frames": rule.max_frames}
    if isinstance(rule, PoseThreshold):
        return {"type": "pose_threshold", "max_dist_m": rule.max_dist_m,
                "max_yaw_deg": rule.max_yaw_deg}
    if isinstance(rule, SiouRule):
        return {"type": "siou", "positive": rule.positive, "negative": rule.negative,
                "grid": rule.grid, "occlusion": rule.occlusion}
    if isinstance(rule, PlaceRing):
        return {"type": "place_ring", "max_ring_dist": rule.max_ring_dist,
                "num_places": rule.num_places}
    raise TypeError(f"unknown rule {rule!r}")


def rule_from_dict(d: dict) -> LabelRule:
    kind = d.get("type")
    if kind == "frame_distance":
        return FrameDistance(max_frames=int(d["max_frames"]))
    if kind == "pose_threshold":
        return PoseThreshold(max_dist_m=float(d["max_dist_m"]),
                             max_yaw_deg=float(d["max_yaw_deg"]))
    if kind == "siou":
        return SiouRule(positive=float(d.get("positive", 0.7)),
                        negative=float(d.get("negative", 0.1)),
                        grid=int(d.get("grid", 16)),
                        occlusion=float(d.get("occlusion", 0.03)))
    if kind == "place_ring":
        return PlaceRing(max_ring_dist=int(d["max_ring_dist"]),
                         num_places=int(d["num_places"]))
    raise ValueError(f"label_rule.type: unknown rule type {kind!r}")


def _frame_from_dict(d: dict, env: str, seq: str, root, where: str) -> Frame:
    pose = None
    if d.get("pose") is not None:
        p = d["pose"]
        if len(p) != 7:
            raise ValueError(f"{where}.pose: expected 7 values (tx ty tz qw qx qy qz)")
        pose = CameraPose(quaternion=tuple(p[3:7]), translation=tuple(p[0:3]))
    intr = None
    if d.get("intrinsics") is not None:
        i = d["intrinsics"]
        intr = Intrinsics(fx=i["fx"], fy=i["fy"], cx=i["cx"], cy=i["cy"],
                          width=i["width"], height=i["height"])
    return Frame(env=env, seq=seq, index=d["index"], image_path=d.get("image"),
                 depth_path=d.get("depth"), pose=pose, intrinsics=intr,
                 place_id=d.get("place_id"), root=root)


_RULE_NEEDS = {
    PoseThreshold: ("pose",),
    SiouRule: ("pose", "depth_ref", "intrinsics"),
    PlaceRing: ("place_id",),
    FrameDistance: (),
}


def _validate_env(env: EnvironmentSpec) -> None:
    needs = _RULE_NEEDS[type(env.rule)]
    for seq in env.sequences:
        last = None
        for f in seq.frames:
            if last is not None and f.index <= last:
                raise ValueError(
                    f"environments[{env.name}].sequences[{seq.name}]: frame "
                    f"indices must be strictly increasing (saw {f.index} after {last})"
                )
            last = f.index
            for need in needs:
                attr = "depth_path" if need == "depth_ref" else need
                if getattr(f, attr) is None and (need != "depth_ref" or f._depth is None):
                    raise ValueError(
                        f"environments[{env.name}].sequences[{seq.name}].frames"
                        f"[{f.index}]: label rule requires {need.replace('_ref', '')}"
                    )


def load_manifest(path) -> DatasetManifest:
    """Parse and validate a manifest file; referenced images are checked
    lazily at first access."""
    path = Path(path)
    blob = read_json(path)
    if blob.get("format_version") != MANIFEST_VERSION:
        raise ValueError("format_version: unsupported manifest version")
    root = path.parent
    envs = []
    for ed in blob["environments"]:
        rule = rule_from_dict(ed["label_rule"])
        seqs = []
        for sd in ed["sequences"]:
            frames = [
                _frame_from_dict(fd, ed["name"], sd["name"], root,
                                 f"environments[{ed['name']}].sequences[{sd['name']}]")
                for fd in sd["frames"]
            ]
            seqs.append(SequenceSpec(name=sd["name"], frames=frames,
                                     split=sd.get("split", "train")))
        env = EnvironmentSpec(name=ed["name"], rule=rule, sequences=seqs)
        _validate_env(env)
        envs.append(env)
    return DatasetManifest(environments=envs, root=root)


def save_manifest(manifest: DatasetManifest, path) -> None:
    envs = []
    for env in manifest.environments:
        seqs = []
        for seq in env.sequences:
            frames = []
            for f in seq.frames:
                fd = {"index": f.index}
                if f.image_path is not None:
                    fd["image"] = str(f.image_path)
                if f.depth_path is not None:
                    fd["depth"] = str(f.depth_path)
                if f.pose is not None:
                    fd["pose"] = list(f.pose.translation) + list(f.pose.quaternion)
                if f.intrinsics is not None:
                    i = f.intrinsics
                    fd["intrinsics"] = {"fx": i.fx, "fy": i.fy, "cx": i.cx,
                                        "cy": i.cy, "width": i.width, "height": i.height}
                if f.place_id is not None:
                    fd["place_id"] = int(f.place_id)
                frames.append(fd)
            seqs.append({"name": seq.name, "split": seq.split, "frames": frames})
        envs.append({"name": env.name, "label_rule": rule_to_dict(env.rule),
                     "sequences": seqs})
    write_json(path, {"format_version": MANIFEST_VERSION, "environments": envs})


def stream(manifest: DatasetManifest, split: str = "train"):
    """Yield (frame, end_of_environment) in lifelong order, each frame once."""
    for env in manifest.environments:
        frames = env.frames(split)
        for k, frame in enumerate(frames):
            yield frame, k == len(frames) - 1


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic place-ring benchmark."""

    envs: int = 3
    places: int = 32
    latent_dim: int = 16
    image_shape: tuple = (3, 16, 16)
    frames_per_env: int = 3000
    noise: float = 0.02
    ring_positive_dist: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.places < 4:
            raise ValueError("places must be >= 4")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.envs < 1 or self.frames_per_env < 2 or self.latent_dim < 1:
            raise ValueError("invalid synthetic spec")
        if self.frames_per_env < 10 * self.places:
            warnings.warn("fewer than 10 frames per place; coverage may be thin")
        object.__setattr__(self, "image_shape", tuple(self.image_shape))

    def to_dict(self) -> dict:
        return {"envs": self.envs, "places": self.places,
                "latent_dim": self.latent_dim, "image_shape": list(self.image_shape),
                "frames_per_env": self.frames_per_env, "noise": self.noise,
                "ring_positive_dist": self.ring_positive_dist, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        d = dict(d)
        if "image_shape" in d:
            d["image_shape"] = tuple(d["image_shape"])
        return cls(**d)


TEST_FRACTION = 0.2


def _place_codes(rng, places: int, dim: int) -> np.ndarray:
    # smooth random closed curve: low-frequency Fourier features of the ring
    # angle, so adjacent places have nearby codes
    angles = 2.0 * np.pi * np.arange(places) / places
    codes = np.zeros((places, dim))
    for k in (1, 2, 3):
        a = rng.normal(0.0, 1.0 / k, dim)
        b = rng.normal(0.0, 1.0 / k, dim)
        codes += np.outer(np.cos(k * angles), a) + np.outer(np.sin(k * angles), b)
    return codes


def _render(codes, w, b, noise, rng, shape):
    vec = np.tanh(codes @ w.T + b)
    img = 0.5 * (vec + 1.0)
    if noise > 0:
        img = img + rng.normal(0.0, noise, img.shape)
    return np.clip(img, 0.0, 1.0).reshape((-1,) + shape)


def generate_synthetic(spec: SynthSpec, out_dir) -> DatasetManifest:
    """Materialize PNG frames plus manifest.json under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    c, h, w = spec.image_shape
    pixels = c * h * w
    codes = _place_codes(rng, spec.places, spec.latent_dim)

    n_test = max(1, int(round(spec.frames_per_env * TEST_FRACTION)))
    n_train = spec.frames_per_env - n_test
    rule = PlaceRing(max_ring_dist=spec.ring_positive_dist, num_places=spec.places)

    envs = []
    for t in range(spec.envs):
        name = f"env{t + 1}"
        wmat = rng.normal(0.0, 1.0 / np.sqrt(spec.latent_dim), (pixels, spec.latent_dim))
        bias = rng.normal(0.0, 0.3, pixels)
        place = int(rng.integers(spec.places))
        walk = np.empty(spec.frames_per_env, dtype=np.int64)
        for k in range(spec.frames_per_env):
            walk[k] = place
            place = (place + int(rng.integers(-1, 2))) % spec.places
        imgs = _render(codes[walk], wmat, bias, spec.noise, rng, spec.image_shape)

        env_dir = out / name
        env_dir.mkdir(exist_ok=True)
        seqs = []
        for split, lo, hi in (("train", 0, n_train), ("test", n_train, spec.frames_per_env)):
            frames = []
            for k in range(lo, hi):
                rel = f"{name}/{split}_{k - lo:06d}.png"
                arr = np.round(imgs[k] * 255.0).astype(np.uint8)
                pil = Image.fromarray(arr[0] if c == 1 else arr.transpose(1, 2, 0))
                pil.save(out / rel)
                frames.append(Frame(env=name, seq=split, index=k - lo, image_path=rel,
                                    place_id=int(walk[k]), root=out))
            seqs.append(SequenceSpec(name=split, frames=frames, split=split))
        envs.append(EnvironmentSpec(name=name, rule=rule, sequences=seqs))

    manifest = DatasetManifest(environments=envs, root=out)
    save_manifest(manifest, out / "manifest.json")
    return manifest
