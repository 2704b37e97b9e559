"""Benchmark the compiled convolution kernels against the numpy fallback.

Shapes mirror the training hot path (desk-scale encoder forward and the
two backward kernels). Run: python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from omniplace import kernels

# (name, padded input HxWxC, kernel khxkwxCinxCout, stride)
CASES = [
    ("conv1 32x64x3 -> 16", (34, 66, 3), (3, 3, 3, 16), 1),
    ("conv2 16x32x16 -> 32", (18, 34, 16), (3, 3, 16, 32), 1),
    ("conv3 8x16x32 -> 32", (10, 18, 32), (3, 3, 32, 32), 1),
]


def timeit(fn, *args, repeat=50):
    fn(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def main():
    rng = np.random.default_rng(0)
    backends = kernels.available_backends()
    print(f"default backend: {kernels.BACKEND}")
    header = f"{'case':<28}{'op':<12}" + "".join(f"{name:>12}" for name in backends)
    print(header)
    print("-" * len(header))
    for name, xshape, kshape, stride in CASES:
        xp = rng.normal(size=xshape).astype(np.float32)
        k = rng.normal(size=kshape).astype(np.float32)
        ref = backends["numpy"].conv2d_forward(xp, k, stride, stride)
        gy = rng.normal(size=ref.shape).astype(np.float32)
        ops = {
            "forward": lambda mod: mod.conv2d_forward(xp, k, stride, stride),
            "bwd input": lambda mod: mod.conv2d_backward_input(
                gy, k, stride, stride, xshape[0], xshape[1]
            ),
            "bwd kernel": lambda mod: mod.conv2d_backward_kernel(
                xp, gy, kshape[0], kshape[1], stride, stride
            ),
        }
        for op_name, op in ops.items():
            row = f"{name:<28}{op_name:<12}"
            for mod in backends.values():
                row += f"{timeit(op, mod) * 1e6:>10.0f}us"
            print(row)
        for mod_name, mod in backends.items():
            got = mod.conv2d_forward(xp, k, stride, stride)
            assert np.abs(got - ref).max() <= 1e-4, f"{mod_name} disagrees on {name}"
    print("all backends agree on forward outputs")


if __name__ == "__main__":
    main()
