"""Compare the compiled and pure-Python kernel backends.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel and backend with the best wall time of N runs,
and the speed-up of the compiled backend where it is available.
"""
import argparse
import time

import numpy as np

from hierexplore import kernels
from hierexplore.gridmap import FREE, OCCUPIED
from hierexplore.sim import generate_world


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(world):
    passable = world.truth == FREE
    occupied = world.truth == OCCUPIED
    start = world.spawns[0]
    free = np.argwhere(passable)
    goal = tuple(int(v) for v in free[-1][::-1])
    return {
        "dijkstra_octile": lambda impl: kernels.dijkstra_octile(passable, start, impl=impl),
        "astar_octile": lambda impl: kernels.astar_octile(passable, start, goal, impl=impl),
        "scanline_fill": lambda impl: kernels.scanline_fill(~passable, start, impl=impl),
        "visible_cells r=20": lambda impl: kernels.visible_cells(occupied, start, 20, impl=impl),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--size-class", default="middle")
    args = parser.parse_args()
    world = generate_world(0, args.size_class)
    backends = kernels.backends()
    print(f"world {args.size_class} {world.width}x{world.height}, default backend: {kernels.BACKEND}")
    for name, run in cases(world).items():
        timing = {b: best_of(lambda: run(impl), args.repeat) for b, impl in backends.items()}
        line = "  ".join(f"{b} {t * 1e3:9.3f} ms" for b, t in timing.items())
        if "cython" in timing:
            line += f"  speed-up x{timing['python'] / timing['cython']:.1f}"
        print(f"{name:<20} {line}")


if __name__ == "__main__":
    main()
