"""Time the compiled element kernels against the numpy fallback.

    python benchmarks/bench_kernels.py --sizes 16 32 64 --repeat 20

Also times one tracer Hessian action, which re-assembles the advection matrix.
"""
import argparse
import timeit

import numpy as np

from gqoed import fem
from gqoed.config import example2_defaults
from gqoed.experiments import build_experiment
from gqoed.kernels import _fallback

try:
    from gqoed.kernels import _assembly
except ImportError:
    _assembly = None


def kernel_cases(mesh):
    rng = np.random.default_rng(0)
    ne = len(mesh.elements)
    diff, react = rng.random(ne) + 0.5, rng.random(ne)
    vel = np.ascontiguousarray(rng.standard_normal((ne, 2)))
    u = rng.standard_normal(mesh.num_nodes)
    return {
        "diffusion_reaction": lambda m: m.diffusion_reaction_data(
            mesh.areas, mesh.grads, diff, react, mesh.scatter, mesh.nnz),
        "advection": lambda m: m.advection_data(
            mesh.areas, mesh.grads, vel, mesh.scatter, mesh.nnz, True),
        "element_gradients": lambda m: m.element_gradients(mesh.elements, mesh.grads, u),
    }


def best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 64, 128])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if _assembly is None:
        print("compiled extension not built; only the fallback is timed")
    print(f"{'n':>5} {'kernel':<20} {'numpy [ms]':>11} {'cython [ms]':>12} {'speedup':>8}")
    for n in args.sizes:
        mesh = fem.build_mesh(n)
        for name, call in kernel_cases(mesh).items():
            t_py = best(lambda: call(_fallback), args.repeat) * 1e3
            if _assembly is None:
                print(f"{n:>5} {name:<20} {t_py:>11.3f} {'-':>12} {'-':>8}")
                continue
            ref, got = call(_fallback), call(_assembly)
            assert np.allclose(ref, got, rtol=1e-12, atol=1e-12), name
            t_cy = best(lambda: call(_assembly), args.repeat) * 1e3
            print(f"{n:>5} {name:<20} {t_py:>11.3f} {t_cy:>12.3f} {t_py / t_cy:>8.2f}")

    exp = build_experiment(example2_defaults())
    m = exp.prior.sample(1, 0)[0]
    exp.goal.gradient(m)
    t = best(lambda: exp.goal.hess_action(m, m), args.repeat) * 1e3
    print(f"tracer Hessian action at n=16 ({exp.goal.__class__.__name__}): {t:.3f} ms")


if __name__ == "__main__":
    main()
