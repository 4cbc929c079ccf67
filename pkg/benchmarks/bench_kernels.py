"""Benchmark the geometry kernels: compiled extension vs pure numpy.

Times the per-vertex width kernel and its backward pass on synthetic
part-chain geometry at several sizes, for every available backend, and
cross-checks that the backends agree numerically.

Run from the repository root:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --sizes 576x12,6890x24 --repeats 50
"""

import argparse
import time

import numpy as np

from shapekit.kernels import available_backends, get_backend


def make_case(num_vertices: int, num_joints: int, seed: int):
    """Random mesh/joints with every vertex assigned to a chain part."""
    rng = np.random.default_rng(seed)
    mesh = rng.standard_normal((num_vertices, 3))
    joints = np.cumsum(rng.uniform(0.1, 0.3, (num_joints, 3)), axis=0)
    num_parts = num_joints
    bone_a = np.maximum(np.arange(num_parts) - 1, 0).astype(np.int64)
    bone_b = np.arange(num_parts, dtype=np.int64)
    bone_b[0] = 1
    part = rng.integers(0, num_parts, num_vertices).astype(np.int64)
    grad_w = rng.standard_normal(num_vertices)
    return mesh, joints, bone_a, bone_b, part, grad_w


def best_of(repeats: int, fn, *args) -> float:
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument(
        "--sizes",
        default="576x12,6890x24,55120x24",
        help="comma list of VERTICESxJOINTS case sizes",
    )
    parser.add_argument("--repeats", type=int, default=30, help="timing repeats (best-of)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    backends = available_backends()
    print(f"available backends: {', '.join(backends)}")
    if len(backends) < 2:
        print("compiled extension not built - timing the numpy backend only")

    header = f"{'case':>12} {'kernel':>16}" + "".join(f" {b:>12}" for b in backends)
    if len(backends) == 2:
        header += f" {'speedup':>9} {'max |diff|':>11}"
    print(header)

    for size in args.sizes.split(","):
        num_vertices, num_joints = (int(v) for v in size.lower().split("x"))
        case = make_case(num_vertices, num_joints, args.seed)
        mesh, joints, bone_a, bone_b, part, grad_w = case
        for kernel, call_args in (
            ("widths", (mesh, joints, bone_a, bone_b, part)),
            ("widths_backward", (mesh, joints, bone_a, bone_b, part, grad_w)),
        ):
            times = []
            results = []
            for name in backends:
                fn = getattr(get_backend(name), kernel)
                times.append(best_of(args.repeats, fn, *call_args))
                results.append(fn(*call_args))
            row = f"{size:>12} {kernel:>16}" + "".join(
                f" {t * 1e6:>10.1f}us" for t in times
            )
            if len(backends) == 2:
                ref, other = results
                if kernel == "widths_backward":
                    diff = max(
                        float(np.abs(r - o).max()) for r, o in zip(ref, other)
                    )
                else:
                    diff = float(np.abs(ref - other).max())
                row += f" {times[0] / times[1]:>8.2f}x {diff:>11.2e}"
                if diff > 1e-10:
                    print(row)
                    print(f"error: backends disagree on {kernel} ({diff:.3e})")
                    return 1
            print(row)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
