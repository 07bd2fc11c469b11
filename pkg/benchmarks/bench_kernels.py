#!/usr/bin/env python3
"""Compare the numba and pure-numpy conv kernels, plus an end-to-end
training-step timing under each backend.

Run directly:  python3 benchmarks/bench_kernels.py
The training-step section respawns itself under LOOPLEARN_KERNELS=numpy to
time the fallback path in a clean process (backend choice is import-time).
"""

import os
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

REPEATS = 30
SHAPES = [
    # (n, c, h, w, f, k): first and second conv layer of the benchmark net
    (3, 3, 16, 16, 8, 3),
    (3, 8, 14, 14, 16, 3),
    (512, 3, 16, 16, 8, 3),
]


def time_conv(impl, n, c, h, w, f, k):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(n, c, h, w))
    wt = rng.normal(size=(f, c, k, k))
    b = rng.normal(size=f)
    y = impl.conv2d_forward(x, wt, b)  # warm-up / JIT
    dy = rng.normal(size=y.shape)
    impl.conv2d_backward(x, wt, dy)

    t0 = time.perf_counter()
    for _ in range(REPEATS):
        impl.conv2d_forward(x, wt, b)
    fwd = (time.perf_counter() - t0) / REPEATS

    t0 = time.perf_counter()
    for _ in range(REPEATS):
        impl.conv2d_backward(x, wt, dy)
    bwd = (time.perf_counter() - t0) / REPEATS
    return fwd, bwd


def bench_convs():
    from looplearn.kernels import numpy_impl
    try:
        from looplearn.kernels import numba_impl
    except ImportError:
        numba_impl = None

    print(f"{'shape (n,c,h,w,f,k)':<26} {'numpy fwd':>10} {'numpy bwd':>10} "
          f"{'numba fwd':>10} {'numba bwd':>10} {'speedup':>8}")
    for shape in SHAPES:
        np_fwd, np_bwd = time_conv(numpy_impl, *shape)
        if numba_impl is not None:
            nb_fwd, nb_bwd = time_conv(numba_impl, *shape)
            speed = (np_fwd + np_bwd) / (nb_fwd + nb_bwd)
            print(f"{str(shape):<26} {np_fwd * 1e3:>9.2f}m {np_bwd * 1e3:>9.2f}m "
                  f"{nb_fwd * 1e3:>9.2f}m {nb_bwd * 1e3:>9.2f}m {speed:>7.1f}x")
        else:
            print(f"{str(shape):<26} {np_fwd * 1e3:>9.2f}m {np_bwd * 1e3:>9.2f}m "
                  f"{'-':>10} {'-':>10} {'-':>8}")


def bench_train_step():
    from looplearn import data, kernels
    from looplearn.data import SynthSpec
    from looplearn.trainer import TrainConfig, Trainer

    with tempfile.TemporaryDirectory() as tmp:
        spec = SynthSpec(envs=1, places=16, latent_dim=8, image_shape=(3, 16, 16),
                         frames_per_env=260, noise=0.02, seed=0)
        manifest = data.generate_synthetic(spec, Path(tmp) / "d")
        cfg = TrainConfig(method="airloop", memory_capacity=128, seed=0)
        trainer = Trainer(cfg, manifest)
        env = manifest.environments[0]
        trainer.begin_environment(env)
        frames = env.frames("train")
        for f in frames[:30]:
            trainer.train_step(f)
        t0 = time.perf_counter()
        for f in frames[30:200]:
            trainer.train_step(f)
        per_step = (time.perf_counter() - t0) / 170
        print(f"train_step ({kernels.BACKEND:>5} backend): {per_step * 1e3:6.2f} ms")


def main():
    if os.environ.get("_BENCH_STEP_ONLY"):
        bench_train_step()
        return
    print(f"conv kernels, mean of {REPEATS} calls (m = milliseconds)\n")
    bench_convs()
    print()
    bench_train_step()
    sys.stdout.flush()
    env = dict(os.environ, LOOPLEARN_KERNELS="numpy", _BENCH_STEP_ONLY="1")
    subprocess.run([sys.executable, __file__], env=env, check=True)


if __name__ == "__main__":
    main()
