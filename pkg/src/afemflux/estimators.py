"""A posteriori error estimators and data oscillation.

Four families of local indicators for the Poisson problem, all derived from
a discrete solution u_h:

  * delta:    L2 norms of the equilibrated flux correction per element;
              summing squares gives a guaranteed upper bound for the energy
              error with constant one, up to oscillation.
  * star:     L2 norms of the vertex-patch corrections; localised variant
              of the same reconstruction.
  * residual: the classical elementwise estimator combining the scaled
              interior residual with the normal jumps of the gradient.
  * residual_star: hat-weighted patchwise residual estimator, the residual
              counterpart of the star indicators.

Totals follow two conventions for patchwise quantities: the element-major
double sum over triangles and their vertices, sum_T sum_{nu in T} eta_nu^2,
which counts each patch norm once per incident triangle, and the plain root
sum of squares over vertices ("single count").
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .equilibration import EquilibratedFlux, equilibrate
from .galerkin import (
    FeSpace,
    ScalarField,
    element_laplacians,
    energy_error,
    monomial_exponents,
    monomial_values,
    normal_jumps,
)
from .mesh import Mesh
from .quadrature import triangle_rule

_CHUNK = 4096


def _volume_residual_sq(u_h: ScalarField, f, weighted: bool):
    """Per-element integrals of (f + lap u_h)^2, optionally per hat weight.

    Returns (nt,) when weighted is False, else (nt, 3) with one column per
    local vertex carrying the phi_nu^2-weighted integral.
    """
    space = u_h.space
    mesh = space.mesh
    rule = space.rule_fine
    nt = mesh.n_triangles
    out = np.empty((nt, 3)) if weighted else np.empty(nt)
    for lo in range(0, nt, _CHUNK):
        els = np.arange(lo, min(lo + _CHUNK, nt))
        X = space.physical_points(rule.points, els)
        r = f(X[..., 0], X[..., 1]) + element_laplacians(u_h, rule.points, els)
        if weighted:
            out[els] = np.einsum("q,qs,tq,t->ts", rule.weights,
                                 rule.bary ** 2, r * r, mesh.areas[els])
        else:
            out[els] = np.einsum("q,tq,t->t", rule.weights, r * r,
                                 mesh.areas[els])
    return out


def _edge_jump_sq(u_h: ScalarField, weighted: bool):
    """Per-edge integrals of the squared gradient jump.

    Returns (ne,) when weighted is False, else (ne, 2) with the phi^2
    weight of the lower / higher endpoint.  Boundary edges are zero.
    """
    space = u_h.space
    mesh = space.mesh
    k = space.degree
    J, interior = normal_jumps(u_h, 2 * k + 2)
    er = space.edge_rule_main
    hE = mesh.edge_lengths
    if weighted:
        s = er.points
        phis = np.column_stack([1.0 - s, s]) ** 2
        sq = np.einsum("q,qv,eq->ev", er.weights, phis, J * J) * hE[:, None]
        sq[~interior] = 0.0
    else:
        sq = (J * J) @ er.weights * hE
        sq[~interior] = 0.0
    return sq, interior


def residual_indicators(u_h: ScalarField, f) -> np.ndarray:
    """Classical elementwise residual indicators.

    eta_T^2 = h_T^2 |f + lap u_h|_T^2 + sum over the interior edges of T of
    h_E |jump of normal gradient|_E^2.  Every interior edge contributes to
    both neighbouring elements.
    """
    mesh = u_h.space.mesh
    vol = _volume_residual_sq(u_h, f, weighted=False)
    esq, _ = _edge_jump_sq(u_h, weighted=False)
    eta_sq = mesh.diameters ** 2 * vol
    eta_sq += (esq * mesh.edge_lengths)[mesh.edge_of_triangle].sum(axis=1)
    return np.sqrt(eta_sq)


def patch_residual_indicators(u_h: ScalarField, f) -> np.ndarray:
    """Hat-weighted patchwise residual indicators, one per vertex.

    eta_nu^2 = sum_{T in patch} h_T^2 |phi_nu (f + lap u_h)|_T^2
             + sum_{interior spokes E} h_E |phi_nu jump|_E^2.
    """
    mesh = u_h.space.mesh
    nv = mesh.n_vertices
    vol = _volume_residual_sq(u_h, f, weighted=True)  # (nt, 3)
    esq, _ = _edge_jump_sq(u_h, weighted=True)        # (ne, 2)
    eta_sq = np.zeros(nv)
    h2vol = mesh.diameters[:, None] ** 2 * vol
    np.add.at(eta_sq, mesh.triangles.ravel(), h2vol.ravel())
    hesq = esq * mesh.edge_lengths[:, None]
    np.add.at(eta_sq, mesh.edges.ravel(), hesq.ravel())
    return np.sqrt(eta_sq)


def oscillation(u_h_or_space, f, degree: int | None = None) -> np.ndarray:
    """Elementwise data oscillation h_T |f - (projection of f)|_T.

    The projection degree defaults to k - 1 for a degree-k space.  The
    projection is evaluated pointwise and the squared remainder integrated,
    so resolved data give zero to round-off rather than a sqrt(eps) floor.
    """
    space = u_h_or_space.space if isinstance(u_h_or_space, ScalarField) \
        else u_h_or_space
    mesh = space.mesh
    if degree is None:
        degree = space.degree - 1
    exps = monomial_exponents(degree) if degree >= 0 else []
    rule = space.rule_fine
    nt = mesh.n_triangles
    c = mesh.centroids
    h = mesh.diameters
    out = np.empty(nt)
    for lo in range(0, nt, _CHUNK):
        els = np.arange(lo, min(lo + _CHUNK, nt))
        X = space.physical_points(rule.points, els)
        fX = f(X[..., 0], X[..., 1])
        if exps:
            xh = (X - c[els, None, :]) / h[els, None, None]
            mono = monomial_values(exps, xh[..., 0], xh[..., 1])
            M = np.einsum("q,tqa,tqb->tab", rule.weights, mono, mono,
                          optimize=True)
            r = np.einsum("q,tq,tqa->ta", rule.weights, fX, mono,
                          optimize=True)
            coef = np.linalg.solve(M, r[..., None])[..., 0]
            rem = fX - np.einsum("tqa,ta->tq", mono, coef)
        else:
            rem = fX
        sq = np.einsum("q,tq,t->t", rule.weights, rem * rem, mesh.areas[els])
        out[els] = h[els] * np.sqrt(sq)
    return out


def patch_oscillation(u_h_or_space, f, degree: int | None = None) -> np.ndarray:
    """Patchwise oscillation: root sum of squares over each vertex patch."""
    space = u_h_or_space.space if isinstance(u_h_or_space, ScalarField) \
        else u_h_or_space
    mesh = space.mesh
    osc = oscillation(space, f, degree)
    out = np.zeros(mesh.n_vertices)
    np.add.at(out, mesh.triangles.ravel(),
              np.repeat(osc ** 2, 3))
    return np.sqrt(out)


def _patch_counts(mesh: Mesh) -> np.ndarray:
    """Number of triangles incident to each vertex."""
    return np.bincount(mesh.triangles.ravel(), minlength=mesh.n_vertices)


@dataclass(frozen=True)
class EstimatorReport:
    """All indicator families for one discrete solution.

    Per-element arrays are indexed by triangle, per-vertex arrays by vertex.
    Elementwise totals are root sums of squares; patchwise totals use the
    element-major double sum, weighting each vertex value by the number of
    incident triangles, with a plain root-sum variant alongside.
    """

    mesh: Mesh = dc_field(repr=False)
    eta_delta: np.ndarray = dc_field(repr=False)
    eta_star: np.ndarray = dc_field(repr=False)
    eta_res: np.ndarray = dc_field(repr=False)
    eta_res_star: np.ndarray = dc_field(repr=False)
    osc: np.ndarray = dc_field(repr=False)
    osc_star: np.ndarray = dc_field(repr=False)
    flux: EquilibratedFlux | None = dc_field(repr=False, default=None)

    @property
    def eta_delta_total(self) -> float:
        return float(np.sqrt((self.eta_delta ** 2).sum()))

    @property
    def eta_star_total(self) -> float:
        """Double-count total: each patch norm once per incident triangle."""
        m = _patch_counts(self.mesh)
        return float(np.sqrt((m * self.eta_star ** 2).sum()))

    @property
    def eta_star_single(self) -> float:
        return float(np.sqrt((self.eta_star ** 2).sum()))

    @property
    def eta_res_total(self) -> float:
        return float(np.sqrt((self.eta_res ** 2).sum()))

    @property
    def eta_res_star_total(self) -> float:
        m = _patch_counts(self.mesh)
        return float(np.sqrt((m * self.eta_res_star ** 2).sum()))

    @property
    def osc_total(self) -> float:
        return float(np.sqrt((self.osc ** 2).sum()))

    @property
    def osc_star_total(self) -> float:
        m = _patch_counts(self.mesh)
        return float(np.sqrt((m * self.osc_star ** 2).sum()))

    def restricted(self, elements: np.ndarray) -> float:
        """eta_delta total over a subset of elements."""
        return float(np.sqrt((self.eta_delta[elements] ** 2).sum()))

    def restricted_star(self, elements: np.ndarray) -> float:
        """Element-major starwise total over a subset of elements."""
        verts = self.mesh.triangles[np.asarray(elements, dtype=np.int64)]
        return float(np.sqrt((self.eta_star[verts] ** 2).sum()))

    def restricted_res(self, elements: np.ndarray) -> float:
        return float(np.sqrt((self.eta_res[elements] ** 2).sum()))

    def restricted_osc(self, elements: np.ndarray) -> float:
        return float(np.sqrt((self.osc[elements] ** 2).sum()))

    def restricted_osc_star(self, elements: np.ndarray) -> float:
        """Element-major patch-oscillation total over an element subset."""
        verts = self.mesh.triangles[np.asarray(elements, dtype=np.int64)]
        return float(np.sqrt((self.osc_star[verts] ** 2).sum()))

    def indicator(self, which: str) -> np.ndarray:
        """Marking indicators for a named estimator family.

        delta and residual mark elements; star families mark elements by
        accumulating the vertex values onto incident triangles.
        """
        if which == "delta":
            return self.eta_delta
        if which == "residual":
            return self.eta_res
        if which in ("star", "residual_star"):
            vals = self.eta_star if which == "star" else self.eta_res_star
            per_el = (vals[self.mesh.triangles] ** 2).sum(axis=1)
            return np.sqrt(per_el)
        raise ValueError(f"unknown estimator family {which!r}")


def estimate(u_h: ScalarField, f,
             flux: EquilibratedFlux | None = None) -> EstimatorReport:
    """Compute every indicator family for a discrete solution."""
    if flux is None:
        flux = equilibrate(u_h, f)
    space = u_h.space
    return EstimatorReport(
        mesh=space.mesh,
        eta_delta=flux.eta_delta,
        eta_star=flux.eta_star,
        eta_res=residual_indicators(u_h, f),
        eta_res_star=patch_residual_indicators(u_h, f),
        osc=oscillation(u_h, f),
        osc_star=patch_oscillation(u_h, f),
        flux=flux,
    )


def total_error(u_h: ScalarField, grad_exact=None, qdeg: int | None = None,
                ) -> float:
    """Energy error against a closed-form gradient.

    Raises ValueError when no exact gradient is available; callers that
    need an error bound without one should use the estimator totals.
    """
    if grad_exact is None:
        raise ValueError("no exact solution available; use an estimator "
                         "total as the error proxy")
    return energy_error(u_h, grad_exact, qdeg=qdeg)
