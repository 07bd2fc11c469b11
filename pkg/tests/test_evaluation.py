"""Retrieval thresholding, recall@100%-precision against a brute-force
threshold sweep, and exact summary formulas."""

import numpy as np
import pytest

from looplearn import data, evaluation
from looplearn.data import SynthSpec
from looplearn.evaluation import (build_performance_matrix,
                                  recall_at_full_precision, retrieve, summarize)
from looplearn.geometry import Label, classify_pair
from looplearn.model import DescriptorModel, cosine_sim


def brute_force_recall(pairs):
    """Oracle: sweep every observed similarity as a >= threshold and keep the
    best recall among those admitting zero false pairs."""
    sims = np.array([s for s, _ in pairs])
    truth = np.array([t for _, t in pairs], dtype=bool)
    n_true = truth.sum()
    assert n_true > 0
    best = 0.0
    for t in list(sims) + [np.inf]:
        accept = sims >= t
        if (accept & ~truth).sum() == 0:
            best = max(best, (accept & truth).sum() / n_true)
    return best


def test_recall_simple_cases():
    assert recall_at_full_precision([(0.9, True), (0.8, True), (0.5, False)]) == 1.0
    assert recall_at_full_precision([(0.9, False), (0.8, True)]) == 0.0
    # tie at the cut: the tied true pair is not counted
    assert recall_at_full_precision(
        [(0.8, True), (0.8, False), (0.9, True)]) == pytest.approx(0.5)
    assert recall_at_full_precision([(0.3, True), (0.1, True)]) == 1.0
    with pytest.raises(ValueError, match="undefined recall"):
        recall_at_full_precision([(0.5, False)])


def test_recall_matches_brute_force_on_random_fixtures():
    rng = np.random.default_rng(42)
    for trial in range(20):
        n = int(rng.integers(5, 200))
        sims = rng.uniform(-1, 1, n)
        if rng.random() < 0.3:
            sims = np.round(sims, 1)  # encourage ties
        truth = rng.random(n) < rng.uniform(0.2, 0.8)
        if not truth.any():
            truth[0] = True
        pairs = list(zip(sims.tolist(), truth.tolist()))
        assert recall_at_full_precision(pairs) == brute_force_recall(pairs)


def test_recall_invariances(rng):
    sims = rng.uniform(-1, 1, 60)
    truth = rng.random(60) < 0.5
    truth[0] = True
    base = recall_at_full_precision(zip(sims, truth))
    # strictly monotone transform leaves the metric unchanged
    transformed = np.tanh(3.0 * sims) + 2.0
    assert recall_at_full_precision(zip(transformed, truth)) == base
    # adding a false pair below every true pair changes nothing
    lowest = sims[truth].min() - 1.0
    assert recall_at_full_precision(
        list(zip(sims, truth)) + [(lowest, False)]) == base


def test_retrieve_thresholding():
    a80 = np.deg2rad(80)
    db = np.array([[1.0, 0.0], [np.cos(a80), np.sin(a80)], [-1.0, 0.0],
                   [np.cos(0.1), np.sin(0.1)]])
    hits = retrieve([1.0, 0.0], db, epsilon=0.01)
    assert [i for i, _ in hits] == [0, 3]
    assert hits[0][1] == pytest.approx(1.0)
    # epsilon near 1 admits everything with positive similarity
    wide = retrieve([1.0, 0.0], db, epsilon=0.999999)
    assert [i for i, _ in wide] == [0, 3, 1]
    with pytest.raises(ValueError):
        retrieve([1.0, 0.0], np.empty((0, 2)), epsilon=0.1)
    with pytest.raises(ValueError):
        retrieve([1.0, 0.0], db, epsilon=0.0)


def test_retrieve_hand_built_angles():
    angles = np.deg2rad([0, 10, 40, 90, 180])
    db = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    eps = 1.0 - np.cos(np.deg2rad(15))
    hits = retrieve([1.0, 0.0], db, epsilon=eps + 1e-12)
    assert [i for i, _ in hits] == [0, 1]


def test_summarize_exact_fixtures():
    r2 = np.array([[0.8, 0.2], [0.6, 0.7]])
    s = summarize(r2)
    assert abs(s.ap - 0.7) <= 1e-12
    assert abs(s.bwt - (-0.2)) <= 1e-12
    assert abs(s.fwt - 0.2) <= 1e-12

    for value in (0.0, 0.37, 1.0):
        const = summarize(np.full((4, 4), value))
        assert abs(const.ap - value) <= 1e-12
        assert abs(const.bwt) <= 1e-12
        assert abs(const.fwt - value) <= 1e-12

    eye = summarize(np.eye(3))
    assert abs(eye.ap - 0.5) <= 1e-12
    assert abs(eye.bwt - (-1.0)) <= 1e-12
    assert abs(eye.fwt) <= 1e-12


def test_summarize_single_environment():
    s = summarize(np.array([[0.9]]))
    assert s.ap == pytest.approx(0.9)
    assert s.bwt is None and s.fwt is None


def test_summarize_linear(rng):
    r = rng.uniform(0, 1, (3, 3))
    s1, s2 = summarize(r), summarize(0.5 * r)
    assert s2.ap == pytest.approx(0.5 * s1.ap)
    assert s2.bwt == pytest.approx(0.5 * s1.bwt)
    assert s2.fwt == pytest.approx(0.5 * s1.fwt)


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    spec = SynthSpec(envs=2, places=8, latent_dim=6, image_shape=(3, 8, 8),
                     frames_per_env=60, noise=0.01, seed=5)
    return data.generate_synthetic(spec, tmp_path_factory.mktemp("evalset"))


def _models(arch, n, base_seed=0):
    return [DescriptorModel(arch, rng=np.random.default_rng(base_seed + i))
            for i in range(n)]


def test_performance_matrix_shape_and_frozen_rows(tiny_dataset, tiny_arch):
    model = _models(tiny_arch, 1, base_seed=3)[0]
    r = build_performance_matrix([model, model], tiny_dataset)
    assert r.shape == (2, 2)
    assert np.allclose(r[0], r[1])  # identical checkpoints, identical rows

    single = build_performance_matrix(
        [model], data.DatasetManifest(environments=tiny_dataset.environments[:1],
                                      root=tiny_dataset.root))
    assert single.shape == (1, 1)


def test_performance_matrix_matches_duplicate_pipeline(tiny_dataset, tiny_arch):
    models = _models(tiny_arch, 2, base_seed=10)
    r = build_performance_matrix(models, tiny_dataset)
    # independent recomputation: per-frame forward, explicit cosine loops,
    # per-pair labels, brute-force threshold sweep
    for i, m in enumerate(models):
        for j, env in enumerate(tiny_dataset.environments):
            frames = env.frames("test")
            descs = [m.forward(f.image) for f in frames]
            pairs = []
            for a in range(len(frames)):
                for b in range(a + 1, len(frames)):
                    lab = classify_pair(frames[a], frames[b], env.rule)
                    if lab is Label.AMBIGUOUS:
                        continue
                    pairs.append((cosine_sim(descs[a], descs[b]),
                                  lab is Label.POSITIVE))
            assert r[i, j] == pytest.approx(brute_force_recall(pairs), abs=1e-12)


def test_per_query_variant_runs(tiny_dataset, tiny_arch):
    model = _models(tiny_arch, 1, base_seed=2)[0]
    r = build_performance_matrix([model] * 2, tiny_dataset, per_query=True)
    assert ((0 <= r) & (r <= 1)).all()


def test_temporal_window_excludes_neighbors(tiny_arch):
    # frame-distance rule marks close indices positive; with a window wider
    # than the rule distance every positive pair is excluded -> undefined
    from looplearn.geometry import FrameDistance
    from looplearn.data import EnvironmentSpec, Frame, SequenceSpec

    rng = np.random.default_rng(0)
    frames = [Frame(env="e", seq="s", index=i,
                    image=rng.uniform(0, 1, (3, 8, 8)))
              for i in range(12)]
    env = EnvironmentSpec(name="e", rule=FrameDistance(max_frames=2),
                          sequences=[SequenceSpec(name="s", frames=frames, split="test")])
    model = DescriptorModel(tiny_arch, rng=rng)
    with pytest.raises(ValueError, match="undefined recall"):
        evaluation.environment_recall(model, env, window=5)
    value = evaluation.environment_recall(model, env, window=0)
    assert 0.0 <= value <= 1.0
