"""Compare the compiled and pure-Python kinematic kernels.

Usage: python3 benchmarks/bench_kernels.py [--persons 500] [--repeat 5]
"""

import argparse
import time

import numpy as np

from bodyik import _pykernels
from bodyik.bodymodel import NUM_BETAS, generate_synthetic_model, shaped_rest_joints_batch
from bodyik.harness import sample_poses

try:
    from bodyik import _ckernels
except ImportError:
    _ckernels = None


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--persons", type=int, default=500)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    model = generate_synthetic_model(0)
    tree = model.tree
    rng = np.random.default_rng(0)
    betas = rng.uniform(-2.0, 2.0, (args.persons, NUM_BETAS))
    rots = sample_poses(model, rng, betas)
    rest = shaped_rest_joints_batch(model, betas)
    joints, _ = _pykernels.fk_batch(tree.parents, rest, rots)
    twists = _pykernels.twist_batch(tree.parents, tree.primary_child, rest, rots)

    backends = {"python": _pykernels}
    if _ckernels is not None:
        backends["cython"] = _ckernels
    else:
        print("compiled extension not built; run `python3 setup.py build_ext --inplace`")

    results = {}
    for name, k in backends.items():
        results[name] = {
            "fk": _best(lambda: k.fk_batch(tree.parents, rest, rots), args.repeat),
            "ik": _best(lambda: k.ik_batch(tree.parents, tree.primary_child, tree.secondary_children,
                                           rest, joints, twists), args.repeat),
            "twist": _best(lambda: k.twist_batch(tree.parents, tree.primary_child, rest, rots), args.repeat),
        }

    print(f"{args.persons} persons, best of {args.repeat}")
    print(f"{'kernel':8s}" + "".join(f"{n:>12s}" for n in backends) + ("     speedup" if len(backends) > 1 else ""))
    for op in ("fk", "ik", "twist"):
        line = f"{op:8s}" + "".join(f"{results[n][op] * 1e3:10.2f}ms" for n in backends)
        if len(backends) > 1:
            line += f"{results['python'][op] / results['cython'][op]:11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
