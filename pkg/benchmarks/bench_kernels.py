"""Compiled vs pure-Python kernel timings.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints microseconds per call for each hot kernel on both backends, plus the
wall time of one 400-step filtered episode.
"""
import argparse
import time

import numpy as np

from resdob import _pykernels
from resdob.env import Env, preset
from resdob.harness import SafetyLayer, seed_streams

try:
    from resdob import _ckernels
except ImportError:
    _ckernels = None


def _cases(rng):
    x = rng.normal(size=6)
    u = rng.uniform(-1, 1, size=2)
    params = np.array([3.0, 1.5, 3.0, 4.0, 1.0, 0.1])
    wind = np.array([0.2, -0.1])
    Q = np.eye(3)
    Q[2, 2] = 1.0
    G = rng.normal(size=(8, 3))
    h = rng.normal(size=8)
    F = rng.normal(size=6)
    Gm = rng.normal(size=(6, 2))
    Jp = rng.normal(size=(2, 6))
    dhat = rng.normal(size=6) * 0.1
    circles = np.column_stack([rng.uniform(-2, 2, (4, 2)), rng.normal(size=(4, 2)) * 0.2, np.full(4, 0.55)])
    walls = np.zeros((0, 3))
    return {
        "plant_deriv": lambda k: k.plant_deriv(0, x, u, params, wind),
        "plant_step": lambda k: k.plant_step(0, x, u, params, wind, 0.02),
        "qp_enumerate": lambda k: k.qp_enumerate(Q, np.zeros(3), G, h, 3, 1e-9),
        "hocbf_rows": lambda k: k.hocbf_rows(F, Gm, Jp, dhat, x[:2].copy(), circles, walls, 2.0, 2.0, 0.3),
    }


def _time(fn, repeat):
    fn()
    start = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - start) / repeat * 1e6


def _episode(backend):
    import resdob.kernels as kernels

    impl = _ckernels if backend == "cython" else _pykernels
    names = ("plant_deriv", "plant_step", "qp_enumerate", "hocbf_rows")
    saved = {n: getattr(kernels, n) for n in names}
    # every module calls through resdob.kernels, so swapping its attributes is enough
    for n in names:
        setattr(kernels, n, getattr(impl, n))
    try:
        env = Env(preset("goal2"))
        streams = seed_streams(0)
        env.reset(streams["layout"])
        layer = SafetyLayer(env, use_cbf=True, use_dob=True, error_bound=0.3)
        layer.reset()
        rng = streams["actions"]
        start = time.perf_counter()
        for _ in range(400):
            layer.step(rng.uniform(-1, 1, size=2))
        return time.perf_counter() - start
    finally:
        for n, fn in saved.items():
            setattr(kernels, n, fn)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=2000)
    args = parser.parse_args()
    cases = _cases(np.random.default_rng(0))
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels is not None else [])
    print(f"{'kernel':<14}" + "".join(f"{name:>12}" for name, _ in backends) + "     speedup")
    for label, fn in cases.items():
        times = [_time(lambda: fn(k), args.repeat) for _, k in backends]
        speed = f"{times[0] / times[1]:10.1f}x" if len(times) == 2 else ""
        print(f"{label:<14}" + "".join(f"{t:10.2f}us" for t in times) + speed)
    ep = [_episode(name) for name, _ in backends]
    speed = f"{ep[0] / ep[1]:10.1f}x" if len(ep) == 2 else ""
    print(f"{'episode(400)':<14}" + "".join(f"{t:11.3f}s" for t in ep) + speed)


if __name__ == "__main__":
    main()
