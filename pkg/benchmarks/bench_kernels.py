"""Compare the numba and pure-numpy kernel backends.

Times the hot kernels (im2col/col2im for conv3d, bilinear point sampling and
its adjoint) plus one full training step, on both backends, and checks the
two agree. Run with::

    python3 benchmarks/bench_kernels.py [--repeat N]

The numpy backend is what ``STAA_NUMBA=0`` selects at import time.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from staa import _kernels
from staa.trainer import TrainConfig, init_state, sample_batch, train_step
from staa.volume import synthetic_corpus


def best_of(fn, repeat):
    fn()  # warm-up (includes JIT compilation for numba)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases():
    g = np.random.default_rng(0)
    x = g.standard_normal((2, 16, 4, 32, 32)).astype(np.float32)
    cols = _kernels.im2col3d(x, (3, 3, 3), (1, 1, 1))
    feat = g.standard_normal((2, 16, 32, 32)).astype(np.float32)
    P = 9 * 32 * 32  # 3x3 taps at every pixel, as in a deformable conv
    py = g.uniform(-1, 32, (2, P)).astype(np.float32)
    px = g.uniform(-1, 32, (2, P)).astype(np.float32)
    gv = g.standard_normal((2, P, 16)).astype(np.float32)
    return {
        "im2col3d 2x16x4x32x32": lambda: _kernels.im2col3d(x, (3, 3, 3), (1, 1, 1)),
        "col2im3d 2x16x4x32x32": lambda: _kernels.col2im3d(cols, x.shape, (3, 3, 3), (1, 1, 1)),
        "sample_points 16ch 9 taps": lambda: _kernels.sample_points(feat, py, px),
        "sample_points_backward": lambda: _kernels.sample_points_backward(gv, feat, py, px),
    }


def train_step_case():
    corpus = synthetic_corpus(10, (8, 32, 32), seed=0)
    cfg = TrainConfig(patch=(4, 32, 32))
    batch = sample_batch(corpus, cfg, np.random.default_rng(0))
    state = init_state(cfg)
    return lambda: train_step(state, batch)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    backends = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])
    if len(backends) == 1:
        print("numba is not installed; only the numpy backend is timed")
    prev = _kernels.backend()
    rows: dict[str, dict[str, float]] = {}
    outputs: dict[str, dict[str, object]] = {}
    try:
        for be in backends:
            _kernels.set_backend(be)
            for name, fn in cases().items():
                rows.setdefault(name, {})[be] = best_of(fn, args.repeat)
                outputs.setdefault(name, {})[be] = fn()
            rows.setdefault("train_step (F=16, DTM)", {})[be] = best_of(train_step_case(), args.repeat)
    finally:
        _kernels.set_backend(prev)

    print(f"{'kernel':32s} " + " ".join(f"{b:>11s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, t in rows.items():
        line = f"{name:32s} " + " ".join(f"{t[b] * 1e3:9.2f}ms" for b in backends)
        if len(backends) > 1:
            line += f"  {t['numpy'] / t['numba']:9.2f}x"
        print(line)

    if len(backends) > 1:
        for name, out in outputs.items():
            a, b = out["numpy"], out["numba"]
            a, b = (a if isinstance(a, tuple) else (a,)), (b if isinstance(b, tuple) else (b,))
            err = max(float(np.abs(np.asarray(u) - np.asarray(v)).max()) for u, v in zip(a, b))
            print(f"max |numpy - numba| {name}: {err:.2e}")


if __name__ == "__main__":
    main()
