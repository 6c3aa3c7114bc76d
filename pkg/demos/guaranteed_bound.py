"""Guaranteed energy-norm error bound on a smooth problem.

For each uniform refinement level the script solves the Poisson problem,
reconstructs an equilibrated flux, and prints the exact energy error next
to the computed bound.  The bound holds with constant one: the efficiency
column never drops below 1, and with exact data projection the squared
error and squared flux distance add up to the squared bound exactly
(hypercircle identity; the defect column is pure round-off).

Run:
    python3 demos/guaranteed_bound.py --problem square_poly --degree 2
"""

import argparse

import numpy as np

from afemflux import (
    FeSpace,
    bisect,
    energy_error,
    equilibrate,
    get_problem,
    prager_synge_terms,
    solve_poisson,
)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--problem", default="square_poly",
                    choices=["square_poly", "square_sine"])
    ap.add_argument("--degree", type=int, default=2)
    ap.add_argument("--max-elements", type=int, default=4096)
    args = ap.parse_args(argv)

    prob = get_problem(args.problem)
    mesh = prob.mesh_factory()
    print(f"problem={prob.name} degree={args.degree}")
    print(f"{'elems':>7} {'dofs':>7} {'error':>12} {'bound':>12} "
          f"{'efficiency':>10} {'identity defect':>15}")
    while True:
        space = FeSpace(mesh, args.degree)
        u = solve_poisson(space, prob.f)
        flux = equilibrate(u, prob.f)
        err, dist, bound = prager_synge_terms(u, flux, prob.grad_exact)
        eta = float(np.sqrt((flux.eta_delta ** 2).sum()))
        defect = abs(err ** 2 + dist ** 2 - bound ** 2) / bound ** 2
        exact = energy_error(u, prob.grad_exact)
        print(f"{mesh.n_triangles:>7} {space.n_dofs:>7} {exact:>12.4e} "
              f"{eta:>12.4e} {eta / exact:>10.4f} {defect:>15.2e}")
        if mesh.n_triangles >= args.max_elements:
            break
        mesh = bisect(mesh, np.arange(mesh.n_triangles), 1)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
