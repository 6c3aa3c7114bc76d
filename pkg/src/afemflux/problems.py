"""Model problem registry.

Each entry bundles an initial mesh, a load, and (when available) the exact
solution gradient for error evaluation.  All problems are homogeneous
Dirichlet for -lap u = f.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .mesh import Mesh, lshape, unit_square_crisscross


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    description: str
    mesh_factory: Callable[[], Mesh]
    f: Callable
    u_exact: Optional[Callable] = None
    grad_exact: Optional[Callable] = None

    @property
    def has_exact(self) -> bool:
        return self.grad_exact is not None


def _f_sine(x, y):
    return 2 * np.pi ** 2 * np.sin(np.pi * x) * np.sin(np.pi * y)


def _u_sine(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


def _grad_sine(x, y):
    return (np.pi * np.cos(np.pi * x) * np.sin(np.pi * y),
            np.pi * np.sin(np.pi * x) * np.cos(np.pi * y))


def _f_poly(x, y):
    return 2 * (y * (1 - y) + x * (1 - x))


def _u_poly(x, y):
    return x * (1 - x) * y * (1 - y)


def _grad_poly(x, y):
    return ((1 - 2 * x) * y * (1 - y), x * (1 - x) * (1 - 2 * y))


def _f_linear(x, y):
    return x + y


def _f_one(x, y):
    return np.ones_like(np.asarray(x, dtype=np.float64))


REGISTRY: dict[str, ProblemSpec] = {}


def register_problem(spec: ProblemSpec) -> ProblemSpec:
    if spec.name in REGISTRY:
        raise ValueError(f"problem {spec.name!r} already registered")
    REGISTRY[spec.name] = spec
    return spec


def get_problem(name: str) -> ProblemSpec:
    try:
        return REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(REGISTRY))
        raise ValueError(f"unknown problem {name!r}; known: {known}") from None


register_problem(ProblemSpec(
    name="square_sine",
    description="unit square, u = sin(pi x) sin(pi y)",
    mesh_factory=unit_square_crisscross,
    f=_f_sine, u_exact=_u_sine, grad_exact=_grad_sine,
))

register_problem(ProblemSpec(
    name="square_poly",
    description="unit square, u = x(1-x) y(1-y)",
    mesh_factory=unit_square_crisscross,
    f=_f_poly, u_exact=_u_poly, grad_exact=_grad_poly,
))

register_problem(ProblemSpec(
    name="square_linear",
    description="unit square, smooth load f = x + y, no closed form",
    mesh_factory=unit_square_crisscross,
    f=_f_linear,
))

register_problem(ProblemSpec(
    name="lshape_one",
    description="L-shaped domain, f = 1, re-entrant corner singularity",
    mesh_factory=lshape,
    f=_f_one,
))
