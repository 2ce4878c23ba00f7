"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one CSV row per (kernel, backend) with the median wall time in ms and
the speedup of the compiled version.
"""

import argparse
import statistics
import time

import numpy as np

from ranklsd import kernels


def cases(rng):
    m = rng.random((16, 64, 64))
    px, py = rng.uniform(0, 63, 4000), rng.uniform(0, 63, 4000)
    g = rng.normal(size=(4000, 16))
    segs_px = rng.uniform(0, 127, size=(6, 4))
    ranked = rng.uniform(0, 64, size=(1500, 4))
    d2 = rng.uniform(0, 40, size=(500, 6))
    mh = rng.random((64, 64, 4, 16))  # one encoder level: [H, W, heads, channels]
    hx, hy = rng.uniform(0, 63, (4, 4000)), rng.uniform(0, 63, (4, 4000))
    gh = rng.normal(size=(4, 4000, 16))
    return {
        "bilinear_forward": lambda k: k.bilinear_forward(m, px, py),
        "bilinear_backward": lambda k: k.bilinear_backward(m, px, py, g),
        "bilinear_heads_forward": lambda k: k.bilinear_heads_forward(mh, hx, hy),
        "bilinear_heads_backward": lambda k: k.bilinear_heads_backward(mh, hx, hy, gh),
        "raster_edges": lambda k: k.raster_edges(segs_px, 128, 128),
        "nms_greedy": lambda k: k.nms_greedy(ranked, 2.0),
        "match_greedy": lambda k: k.match_greedy(d2, 10.0),
    }


def median_ms(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t) * 1e3)
    return statistics.median(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    impls = kernels.implementations()
    if "cython" not in impls:
        print("# compiled extension not built; timing the fallback only")
    print("kernel,backend,median_ms,speedup")
    for name, fn in cases(np.random.default_rng(0)).items():
        base = median_ms(lambda: fn(impls["python"]), args.repeat)
        print(f"{name},python,{base:.3f},1.00")
        if "cython" in impls:
            t = median_ms(lambda: fn(impls["cython"]), args.repeat)
            print(f"{name},cython,{t:.3f},{base / t:.2f}")


if __name__ == "__main__":
    main()
