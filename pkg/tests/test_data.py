"""Synthetic generator reproducibility, manifest round-trips, stream order."""

import hashlib
import json

import numpy as np
import pytest

from looplearn import data
from looplearn.geometry import Label, PlaceRing, ring_distance
from looplearn.data import Frame, SynthSpec


SPEC = SynthSpec(envs=2, places=8, latent_dim=6, image_shape=(3, 8, 8),
                 frames_per_env=80, noise=0.0, seed=11)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    manifest = data.generate_synthetic(SPEC, out)
    return out, manifest


def _tree_hash(root):
    digest = hashlib.sha256()
    for p in sorted(root.rglob("*.png")):
        digest.update(p.name.encode())
        digest.update(p.read_bytes())
    return digest.hexdigest()


def test_generation_reproducible(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    data.generate_synthetic(SPEC, a)
    data.generate_synthetic(SPEC, b)
    assert _tree_hash(a) == _tree_hash(b)
    c = tmp_path / "c"
    data.generate_synthetic(SynthSpec(**{**SPEC.to_dict(), "seed": 12,
                                         "image_shape": SPEC.image_shape}), c)
    assert _tree_hash(a) != _tree_hash(c)


def test_zero_noise_same_place_identical_images(dataset):
    _, manifest = dataset
    env = manifest.environments[0]
    frames = env.frames(None)
    by_place = {}
    for f in frames:
        by_place.setdefault(f.place_id, []).append(f)
    repeated = next(v for v in by_place.values() if len(v) >= 2)
    assert np.array_equal(repeated[0].image, repeated[1].image)


def test_same_place_differs_across_environments(dataset):
    _, manifest = dataset
    first = {f.place_id: f for f in manifest.environments[0].frames(None)}
    second = {f.place_id: f for f in manifest.environments[1].frames(None)}
    common = set(first) & set(second)
    assert common
    pid = common.pop()
    assert not np.array_equal(first[pid].image, second[pid].image)


def test_labels_match_exhaustive_ring_oracle(dataset):
    _, manifest = dataset
    env = manifest.environments[0]
    assert isinstance(env.rule, PlaceRing)
    frames = env.frames("train")[:30]
    from looplearn.geometry import pair_label_matrix
    got = pair_label_matrix(frames, env.rule)
    for i, a in enumerate(frames):
        for j, b in enumerate(frames):
            d = ring_distance(a.place_id, b.place_id, SPEC.places)
            want = Label.POSITIVE if d <= 1 else Label.NEGATIVE
            assert got[i, j] == want.value


def test_split_sizes(dataset):
    _, manifest = dataset
    for env in manifest.environments:
        train = env.frames("train")
        test = env.frames("test")
        assert len(train) == 64 and len(test) == 16
        assert len(env.frames(None)) == 80


def test_manifest_roundtrip(dataset, tmp_path):
    root, manifest = dataset
    loaded = data.load_manifest(root / "manifest.json")
    assert loaded.env_names() == manifest.env_names()
    again = tmp_path / "again.json"
    data.save_manifest(loaded, again)
    assert json.loads(again.read_text()) == json.loads((root / "manifest.json").read_text())
    env0 = loaded.environments[0]
    assert env0.rule == manifest.environments[0].rule
    f0 = env0.frames("train")[0]
    assert np.array_equal(f0.image, manifest.environments[0].frames("train")[0].image)


def test_out_of_order_indices_rejected(dataset, tmp_path):
    root, _ = dataset
    blob = json.loads((root / "manifest.json").read_text())
    frames = blob["environments"][0]["sequences"][0]["frames"]
    frames[0], frames[1] = frames[1], frames[0]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(blob))
    with pytest.raises(ValueError, match="strictly increasing"):
        data.load_manifest(bad)


def test_rule_metadata_validated(tmp_path):
    manifest = {
        "format_version": 1,
        "environments": [{
            "name": "e", "label_rule": {"type": "place_ring",
                                        "max_ring_dist": 1, "num_places": 4},
            "sequences": [{"name": "s", "frames": [{"index": 0, "image": "x.png"}]}],
        }],
    }
    bad = tmp_path / "m.json"
    bad.write_text(json.dumps(manifest))
    with pytest.raises(ValueError, match="place_id"):
        data.load_manifest(bad)


def test_unknown_rule_type_identified(tmp_path):
    manifest = {"format_version": 1, "environments": [{
        "name": "e", "label_rule": {"type": "astrology"}, "sequences": []}]}
    bad = tmp_path / "m.json"
    bad.write_text(json.dumps(manifest))
    with pytest.raises(ValueError, match="label_rule.type"):
        data.load_manifest(bad)


def test_stream_order_and_boundaries(dataset):
    _, manifest = dataset
    items = list(data.stream(manifest, split="train"))
    assert len(items) == 128
    flags = [end for _, end in items]
    assert flags.count(True) == 2
    assert flags[63] and flags[127]
    assert all(not f for i, f in enumerate(flags) if i not in (63, 127))
    again = list(data.stream(manifest, split="train"))
    assert [f.key() for f, _ in items] == [f.key() for f, _ in again]


def test_missing_image_errors():
    f = Frame(env="e", seq="s", index=0, image_path="nope.png", root="/tmp/definitely-missing")
    with pytest.raises(ValueError, match="unreadable image"):
        _ = f.image


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(places=2)
    with pytest.raises(ValueError):
        SynthSpec(noise=-0.1)
    with pytest.warns(UserWarning):
        SynthSpec(places=16, frames_per_env=40)


def test_depth_png_millimeter_roundtrip(tmp_path):
    from PIL import Image
    depth_m = np.array([[0.0, 1.234], [2.5, 65.535]])
    arr = np.round(depth_m * 1000.0).astype(np.uint16)
    path = tmp_path / "d.png"
    Image.fromarray(arr).save(path)
    f = Frame(env="e", seq="s", index=0, depth_path="d.png", root=tmp_path)
    got = f.depth
    assert got.dtype == np.float64
    assert np.allclose(got, depth_m)
    assert got[0, 0] == 0.0  # zero stays the invalid sentinel
