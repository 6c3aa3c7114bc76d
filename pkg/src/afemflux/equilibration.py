"""Equilibrated flux reconstruction by vertex-patch corrections.

Builds a piecewise Raviart-Thomas correction q so that sigma = grad u_h + q
is normal-continuous and satisfies the elementwise balance
div sigma = -(projection of f).  The L2 norm of q then bounds the energy
error of u_h with reliability constant one (up to data oscillation), by the
hypercircle identity.

The correction is assembled from independent vertex-patch problems.  On the
patch of vertex nu the conditions are

  * div q_nu = -(L2 projection of phi_nu (f + lap u_h)) on every element,
  * normal jump of q_nu kills the phi_nu-weighted jump of grad u_h across
    the interior edges through nu,
  * zero normal trace on the patch boundary away from the domain boundary,

with phi_nu the P1 hat function.  Each patch admits a solution because the
discrete solution satisfies Galerkin orthogonality against phi_nu; the
minimal-L2-norm solution is selected.  Summing the patch corrections yields
the global conditions exactly, so the verification residuals here are zero
to round-off by construction, not merely small.

Implementation notes.  All element integrals use the same quadrature rule
as the stiffness/load assembly, which makes the compatibility of the patch
systems hold in floating point, not just analytically.  Each element carries
a Cholesky factor of its Raviart-Thomas mass matrix; patch problems are
solved in the whitened coordinates z = L^T q, where the squared L2 norm is
the plain Euclidean norm and corrections from different patches add
linearly.  Patches with the same shape signature are solved together with
batched SVDs.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from functools import lru_cache

import numpy as np

from .galerkin import (
    FeSpace,
    ScalarField,
    element_gradients,
    element_laplacians,
    energy_error,
    monomial_exponents,
    monomial_values,
    normal_jumps,
)
from .mesh import Mesh
from .quadrature import edge_rule, triangle_rule

_CHUNK = 2048
_SOLVE_BYTES = 8e6  # patch-matrix bytes per solver batch; cache-sized chunks win
_RCOND = 1e-12


class EquilibrationError(RuntimeError):
    """An inconsistent or unsolvable patch problem."""


def rt_dim(k: int) -> int:
    """Dimension of the local flux space on one triangle."""
    return (k + 1) * (k + 3)


@lru_cache(maxsize=None)
def rt_divergence_matrix(k: int) -> np.ndarray:
    """D with div v_j = (1/h_T) sum_c D[c, j] m_c in the scaled monomials.

    Columns follow the local basis: (m_a, 0) for all degree <= k monomials,
    then (0, m_a), then the k+1 fields xhat * (xhat^(k-b) yhat^b) whose
    divergence is (k+2) times the homogeneous factor.
    """
    exps = monomial_exponents(k)
    n_p = len(exps)
    idx = {e: i for i, e in enumerate(exps)}
    D = np.zeros((n_p, rt_dim(k)))
    for j, (a, b) in enumerate(exps):
        if a:
            D[idx[(a - 1, b)], j] = a
        if b:
            D[idx[(a, b - 1)], n_p + j] = b
    for b in range(k + 1):
        D[idx[(k - b, b)], 2 * n_p + b] = k + 2
    return D


def rt_values(k: int, xhat: np.ndarray) -> np.ndarray:
    """Local flux basis at scaled-centred points xhat (..., 2) -> (..., N, 2).

    On a straight edge the normal component of every basis field is a
    polynomial of degree <= k in the arc parameter: the monomial pairs
    restrict to polynomials, and xhat . n is constant along a straight line.
    """
    exps = monomial_exponents(k)
    n_p = len(exps)
    mono = monomial_values(exps, xhat[..., 0], xhat[..., 1])
    out = np.zeros(xhat.shape[:-1] + (rt_dim(k), 2))
    out[..., :n_p, 0] = mono
    out[..., n_p:2 * n_p, 1] = mono
    hom0 = k * (k + 1) // 2  # first index of the total-degree-k monomials
    for b in range(k + 1):
        out[..., 2 * n_p + b, 0] = xhat[..., 0] * mono[..., hom0 + b]
        out[..., 2 * n_p + b, 1] = xhat[..., 1] * mono[..., hom0 + b]
    return out


def _phys_points(mesh: Mesh, ref_pts: np.ndarray, elements=None) -> np.ndarray:
    tris = mesh.triangles if elements is None else mesh.triangles[elements]
    p = mesh.points[tris]
    J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
    return p[:, None, 0, :] + np.einsum("tcd,qd->tqc", J, ref_pts)


def _centres(mesh: Mesh) -> np.ndarray:
    return mesh.centroids


@dataclass(frozen=True)
class FluxField:
    """A piecewise polynomial vector field in the local flux basis.

    coeffs has shape (n_triangles, rt_dim(degree)); each row expands the
    field on that element in the basis of `rt_values` about the element
    centroid, scaled by the element diameter.
    """

    mesh: Mesh = dc_field(repr=False)
    degree: int
    coeffs: np.ndarray = dc_field(repr=False)

    def __post_init__(self):
        expected = (self.mesh.n_triangles, rt_dim(self.degree))
        if self.coeffs.shape != expected:
            raise ValueError(f"coefficient shape {self.coeffs.shape}, "
                             f"expected {expected}")

    def _xhat(self, ref_pts, elements):
        X = _phys_points(self.mesh, ref_pts, elements)
        els = slice(None) if elements is None else elements
        c = _centres(self.mesh)[els]
        h = self.mesh.diameters[els]
        return (X - c[:, None, :]) / h[:, None, None], X

    def element_values(self, ref_pts: np.ndarray, elements=None) -> np.ndarray:
        """Field at reference points of each element -> (nt, nq, 2)."""
        xh, _ = self._xhat(ref_pts, elements)
        V = rt_values(self.degree, xh)
        ec = self.coeffs if elements is None else self.coeffs[elements]
        return np.einsum("tqjc,tj->tqc", V, ec, optimize=True)

    def divergence(self, ref_pts: np.ndarray, elements=None) -> np.ndarray:
        """div of the field at reference points -> (nt, nq)."""
        xh, _ = self._xhat(ref_pts, elements)
        els = slice(None) if elements is None else elements
        mono = monomial_values(monomial_exponents(self.degree),
                               xh[..., 0], xh[..., 1])
        dcoef = np.einsum("cj,tj->tc", rt_divergence_matrix(self.degree),
                          self.coeffs[els])
        dcoef = dcoef / self.mesh.diameters[els][:, None]
        return np.einsum("tqc,tc->tq", mono, dcoef)

    def element_norms(self) -> np.ndarray:
        """L2 norm of the field on each element."""
        rule = triangle_rule(2 * self.degree + 2)
        nt = self.mesh.n_triangles
        out = np.empty(nt)
        for lo in range(0, nt, _CHUNK):
            els = np.arange(lo, min(lo + _CHUNK, nt))
            v = self.element_values(rule.points, els)
            sq = np.einsum("q,tqc,tqc->t", rule.weights, v, v)
            out[els] = np.sqrt(sq * self.mesh.areas[els])
        return out

    def norm(self) -> float:
        return float(np.sqrt((self.element_norms() ** 2).sum()))

    def _combine(self, other, sign):
        if not isinstance(other, FluxField):
            return NotImplemented
        if other.mesh is not self.mesh or other.degree != self.degree:
            raise ValueError("flux fields live on different spaces")
        return FluxField(self.mesh, self.degree,
                         self.coeffs + sign * other.coeffs)

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def save_txt(self, path) -> None:
        """One line of coefficients per element, reproducible formatting."""
        with open(path, "w") as fh:
            fh.write(f"# piecewise flux coefficients, degree {self.degree}\n")
            fh.write(f"{self.mesh.n_triangles} {rt_dim(self.degree)}\n")
            for row in self.coeffs:
                fh.write(" ".join(f"{float(v)!r}" for v in row) + "\n")


def gradient_flux(u_h: ScalarField) -> FluxField:
    """grad u_h expanded exactly in the local flux basis of each element."""
    space = u_h.space
    mesh = space.mesh
    k = space.degree
    rule = space.rule_main
    exps = monomial_exponents(k)
    n_p = len(exps)
    c = _centres(mesh)
    h = mesh.diameters
    nt = mesh.n_triangles
    coeffs = np.zeros((nt, rt_dim(k)))
    for lo in range(0, nt, _CHUNK):
        els = np.arange(lo, min(lo + _CHUNK, nt))
        X = space.physical_points(rule.points, els)
        xh = (X - c[els, None, :]) / h[els, None, None]
        mono = monomial_values(exps, xh[..., 0], xh[..., 1])
        M = np.einsum("q,tqa,tqb->tab", rule.weights, mono, mono)
        g = element_gradients(u_h, rule.points, els)
        rhs = np.einsum("q,tqc,tqa->tac", rule.weights, g, mono)
        sol = np.linalg.solve(M, rhs)  # (t, n_p, 2)
        coeffs[els, :n_p] = sol[..., 0]
        coeffs[els, n_p:2 * n_p] = sol[..., 1]
    return FluxField(mesh, k, coeffs)


# -- per-element data ---------------------------------------------------


def _compute_blocks(u_h: ScalarField, f, els: np.ndarray):
    """Raw and whitened constraint blocks for the given elements.

    Returns a dict with the local mass Cholesky inverse Li, divergence
    moment blocks (raw and whitened), per-edge zero-trace moment blocks
    (raw and whitened) and the hat-weighted divergence right-hand sides,
    one per local vertex.
    """
    space = u_h.space
    mesh = space.mesh
    k = space.degree
    rule = space.rule_main
    er = space.edge_rule_main
    exps = monomial_exponents(k)
    n_p = len(exps)
    N = rt_dim(k)
    Dref = rt_divergence_matrix(k)
    tris = mesh.triangles[els]
    areas = mesh.areas[els]
    c = _centres(mesh)[els]
    h = mesh.diameters[els]
    w = rule.weights

    X = space.physical_points(rule.points, els)
    xh = (X - c[:, None, :]) / h[:, None, None]
    V = rt_values(k, xh)
    # mass in matmul form: rows are the flattened (point, component) axis
    Vf = V.transpose(0, 1, 3, 2).reshape(els.size, -1, N)
    M = Vf.transpose(0, 2, 1) @ (Vf * np.repeat(w, 2)[None, :, None])
    M *= areas[:, None, None]
    L = np.linalg.cholesky(M)
    Li = np.linalg.inv(L)
    LiT = Li.transpose(0, 2, 1)

    mono = V[..., :n_p, 0]
    Msc = mono.transpose(0, 2, 1) @ (mono * w[None, :, None])
    Msc *= areas[:, None, None]
    Draw = (Msc @ Dref) / h[:, None, None]

    lap = element_laplacians(u_h, rule.points, els)
    res = f(X[..., 0], X[..., 1]) + lap
    rdiv = -np.einsum("q,qs,tq,tqa,t->tsa", w, rule.bary, res, mono, areas,
                      optimize=True)

    spow = er.points[:, None] ** np.arange(k + 1)[None, :]
    wspow = (er.weights[:, None] * spow).T  # (k+1, nq_e) moment weights
    Traw = np.empty((els.size, 3, k + 1, N))
    for le in range(3):
        a, b = (le + 1) % 3, (le + 2) % 3
        ga, gb = tris[:, a], tris[:, b]
        lo_ = np.minimum(ga, gb)
        hi_ = np.maximum(ga, gb)
        pl, ph = mesh.points[lo_], mesh.points[hi_]
        ep = pl[:, None, :] + er.points[None, :, None] * (ph - pl)[:, None, :]
        xhe = (ep - c[:, None, :]) / h[:, None, None]
        Ve = rt_values(k, xhe)
        tang = mesh.points[gb] - mesh.points[ga]  # directed local edge
        elen = np.hypot(tang[:, 0], tang[:, 1])
        nrm = np.column_stack([tang[:, 1], -tang[:, 0]]) / elen[:, None]
        tr = (Ve.reshape(els.size, -1, 2) @ nrm[:, :, None])
        tr = tr.reshape(els.size, -1, N)
        Traw[:, le] = (wspow[None] @ tr) * elen[:, None, None]

    return {
        "Li": Li, "LiT": LiT, "mass": M,
        "Draw": Draw, "Dt": Draw @ LiT,
        "Traw": Traw,
        "Trt": (Traw.reshape(els.size, -1, N) @ LiT).reshape(Traw.shape),
        "rdiv": rdiv,
    }


def _edge_rhs(u_h: ScalarField):
    """Hat-weighted jump moments per edge.

    Returns (ne, 2, k+1): variant 0 weights with the hat of the lower
    endpoint (1 - s in the global edge parameter), variant 1 with s.
    Boundary edge rows are zero and never used.
    """
    space = u_h.space
    mesh = space.mesh
    k = space.degree
    er = space.edge_rule_main
    J, _ = normal_jumps(u_h, 2 * k + 2)
    s = er.points
    phis = np.column_stack([1.0 - s, s])
    spow = s[:, None] ** np.arange(k + 1)[None, :]
    hE = mesh.edge_lengths
    return -np.einsum("q,qv,qb,eq,e->evb", er.weights, phis, spow, J, hE,
                      optimize=True)


# -- patch systems ------------------------------------------------------


def _patch_tables(mesh: Mesh):
    """Flat per-vertex tables: elements, interior spokes, trace counts."""
    ptr, ind, slot = mesh._vertex_triangles
    eptr, eind = mesh._vertex_edges
    bed = mesh.boundary_edge
    nv = mesh.n_vertices

    vert_of = np.repeat(np.arange(nv), np.diff(eptr))
    keep = ~bed[eind]
    scnt = np.bincount(vert_of[keep], minlength=nv)
    sptr = np.zeros(nv + 1, dtype=np.int64)
    np.cumsum(scnt, out=sptr[1:])
    sind = eind[keep]

    rim = mesh.edge_of_triangle[ind, slot]  # edge opposite nu in each element
    imposed = ~bed[rim]
    vt = np.repeat(np.arange(nv), np.diff(ptr))
    tcnt = np.bincount(vt, weights=imposed, minlength=nv).astype(np.int64)
    return ptr, ind, slot, sptr, sind, tcnt, scnt


def _assemble_patches(vs, mg, sg, tg, mesh, blocks, Jr, n_p, K1, N):
    """Constraint systems for patches vs, all sharing one shape signature."""
    P = vs.size
    ptr, ind, slotv = mesh._vertex_triangles
    R = mg * n_p + (sg + tg) * K1
    C = mg * N
    A = np.zeros((P, R, C))
    bb = np.zeros((P, R))
    take = ptr[vs][:, None] + np.arange(mg)[None, :]
    els = ind[take]
    slots = slotv[take]
    Dt, Trt, rdiv = blocks["Dt"], blocks["Trt"], blocks["rdiv"]

    for j in range(mg):
        A[:, j * n_p:(j + 1) * n_p, j * N:(j + 1) * N] = Dt[els[:, j]]
        bb[:, j * n_p:(j + 1) * n_p] = rdiv[els[:, j], slots[:, j]]

    row0 = mg * n_p
    spokes = None
    if sg:
        sptr, sind = blocks["sptr"], blocks["sind"]
        spokes = sind[sptr[vs][:, None] + np.arange(sg)[None, :]]
        var = (mesh.edges[spokes, 0] != vs[:, None]).astype(np.int64)
        bb[:, row0:row0 + sg * K1] = Jr[spokes, var].reshape(P, sg * K1)
        pidx = np.arange(P)[:, None, None]
        ncols = np.arange(N)[None, None, :]
        for sidx in range(sg):
            rows = (row0 + sidx * K1 + np.arange(K1))[None, :, None]
            for side in (0, 1):
                t = mesh.edge_triangles[spokes[:, sidx], side]
                le = mesh.edge_local[spokes[:, sidx], side]
                pos = (els < t[:, None]).sum(axis=1)
                cols = pos[:, None, None] * N + ncols
                A[pidx, rows, cols] = Trt[t, le]

    row1 = row0 + sg * K1
    if tg:
        rim = mesh.edge_of_triangle[els, slots]
        imp = ~mesh.boundary_edge[rim]
        rank = np.cumsum(imp, axis=1) - imp
        for j in range(mg):
            selp = np.nonzero(imp[:, j])[0]
            if selp.size == 0:
                continue
            rows = row1 + rank[selp, j, None] * K1 + np.arange(K1)[None, :]
            cols = (j * N + np.arange(N))[None, None, :]
            A[selp[:, None, None], rows[:, :, None], cols] = \
                Trt[els[selp, j], slots[selp, j]]

    return A, bb, els, spokes


def _minnorm_solve(A, bb, deficient: bool = False):
    """Batched minimal-norm solutions and row residuals.

    The systems are underdetermined and consistent.  Rows are scaled to
    unit norm (the divergence and jump rows carry different mesh-size
    powers; scaling changes neither the row space nor the minimum-norm
    solution).  On fully interior patches — every patch boundary edge
    constrained — the divergence theorem makes the constant divergence
    moment of the first element a combination of the remaining rows, so
    that row is dropped and the system has full row rank.  The row-space
    solution comes from semi-normal equations on the row Gram matrix,
    whose conditioning the row scaling keeps far enough below 1/eps
    that a refinement sweep, when one is triggered at all, reaches
    round-off.
    """
    D = np.sqrt(np.einsum("prc,prc->pr", A, A))
    np.maximum(D, 1e-300, out=D)
    As = A / D[:, :, None]
    bs = bb / D
    lo = 1 if deficient else 0
    ArT = As[:, lo:, :].transpose(0, 2, 1)
    G = As[:, lo:, :] @ ArT

    def correct(sel, rhs):
        w = np.linalg.solve(G[sel], rhs[:, :, None])
        return (ArT[sel] @ w)[..., 0]

    z = correct(slice(None), bs[:, lo:])
    r = bs - (As @ z[:, :, None])[..., 0]
    # refinement targets the solved rows; a dropped row keeps the
    # round-off defect of the discrete solve, which no flux can remove
    resid = np.abs(r[:, lo:]).max(axis=1)
    # scaled rows have unit norm, so ||z|| sets the natural residual scale
    scale = np.sqrt(np.einsum("pc,pc->p", z, z)) + np.abs(bs).max(axis=1)
    for _ in range(3):
        bad = np.nonzero(resid > 1e-14 * scale)[0]
        if bad.size == 0:
            break
        z[bad] += correct(bad, r[bad, lo:])
        r[bad] = bs[bad] - (As[bad] @ z[bad, :, None])[..., 0]
        resid[bad] = np.abs(r[bad, lo:]).max(axis=1)
    resid = np.abs(r * D).max(axis=1)
    return z, resid


@dataclass(frozen=True)
class EquilibrationReport:
    """Residuals of the defining conditions of an equilibrated flux."""

    div_residual: float
    jump_residual: float
    patch_residual: float
    tolerance: float = 1e-8

    @property
    def ok(self) -> bool:
        return max(self.div_residual, self.jump_residual,
                   self.patch_residual) <= self.tolerance


@dataclass(frozen=True)
class EquilibratedFlux:
    """Result of the patchwise flux equilibration.

    eta_delta[t] is the elementwise estimator, the L2 norm of the correction
    on element t; the bound |||u - u_h||| <= sqrt(sum eta_delta^2) holds up
    to data oscillation.  eta_star[nu] is the L2 norm of the patch
    contribution of vertex nu, the localised (starwise) estimator.
    """

    u_h: ScalarField = dc_field(repr=False)
    q_delta: FluxField = dc_field(repr=False)
    eta_delta: np.ndarray = dc_field(repr=False)
    eta_star: np.ndarray = dc_field(repr=False)
    patch_residuals: np.ndarray = dc_field(repr=False)

    @property
    def mesh(self) -> Mesh:
        return self.u_h.space.mesh

    def total_flux(self) -> FluxField:
        """sigma = grad u_h + correction; normal-continuous, equilibrated."""
        return gradient_flux(self.u_h) + self.q_delta

    @property
    def eta_delta_total(self) -> float:
        return float(np.sqrt((self.eta_delta ** 2).sum()))

    def verify(self, f) -> EquilibrationReport:
        return verify_equilibration(self, f)


def equilibrate(u_h: ScalarField, f, rtol: float = 1e-8) -> EquilibratedFlux:
    """Reconstruct the equilibrated flux correction for a discrete solution.

    f is the load, called as f(x, y) on arrays.  Raises EquilibrationError
    if any patch problem is inconsistent beyond rtol, which indicates that
    u_h is not the Galerkin solution of the assembled system (or that data
    were changed between solve and equilibration).
    """
    space = u_h.space
    mesh = space.mesh
    k = space.degree
    n_p = len(monomial_exponents(k))
    N = rt_dim(k)
    K1 = k + 1
    nt, nv = mesh.n_triangles, mesh.n_vertices

    blocks = {"Dt": np.empty((nt, n_p, N)),
              "Trt": np.empty((nt, 3, K1, N)),
              "rdiv": np.empty((nt, 3, n_p))}
    LiT = np.empty((nt, N, N))
    for lo in range(0, nt, _CHUNK):
        els = np.arange(lo, min(lo + _CHUNK, nt))
        part = _compute_blocks(u_h, f, els)
        blocks["Dt"][els] = part["Dt"]
        blocks["Trt"][els] = part["Trt"]
        blocks["rdiv"][els] = part["rdiv"]
        LiT[els] = part["LiT"]

    ptr, ind, slot, sptr, sind, tcnt, scnt = _patch_tables(mesh)
    blocks["sptr"], blocks["sind"] = sptr, sind
    Jr = _edge_rhs(u_h)

    m = np.diff(ptr)
    keys = np.stack([m, scnt, tcnt], axis=1)
    uniq, ginv = np.unique(keys, axis=0, return_inverse=True)

    z_delta = np.zeros((nt, N))
    eta_star = np.zeros(nv)
    patch_res = np.zeros(nv)
    worst_ratio = 0.0
    worst_vertex = -1

    for g, (mg, sg, tg) in enumerate(uniq):
        members = np.nonzero(ginv == g)[0]
        R = mg * n_p + (sg + tg) * K1
        step = max(8, int(_SOLVE_BYTES / (R * mg * N * 8)))
        deficient = bool(sg == mg and tg == mg)
        for lo in range(0, members.size, step):
            vs = members[lo:lo + step]
            A, bb, els, _ = _assemble_patches(vs, mg, sg, tg, mesh, blocks,
                                              Jr, n_p, K1, N)
            z, resid = _minnorm_solve(A, bb, deficient)
            scale = 1.0 + np.abs(bb).max(axis=1)
            ratio = resid / scale
            i = int(np.argmax(ratio))
            if ratio[i] > worst_ratio:
                worst_ratio = float(ratio[i])
                worst_vertex = int(vs[i])
            patch_res[vs] = resid
            eta_star[vs] = np.sqrt((z ** 2).sum(axis=1))
            np.add.at(z_delta, els, z.reshape(vs.size, mg, N))

    if worst_ratio > rtol:
        raise EquilibrationError(
            f"patch problem at vertex {worst_vertex} is inconsistent: "
            f"scaled residual {worst_ratio:.3e} exceeds {rtol:.1e}; the "
            "input field does not satisfy Galerkin orthogonality")

    eta_delta = np.sqrt((z_delta ** 2).sum(axis=1))
    qcoef = np.einsum("tij,tj->ti", LiT, z_delta)
    return EquilibratedFlux(u_h, FluxField(mesh, k, qcoef),
                            eta_delta, eta_star, patch_res)


@dataclass(frozen=True)
class PatchSolution:
    """One patch problem in raw (unwhitened) coordinates, for inspection.

    matrix acts on the stacked per-element flux coefficients; rows are the
    divergence moments (n_div per element), then k+1 jump moments per spoke
    edge, then k+1 trace moments per constrained rim edge.
    """

    vertex: int
    elements: np.ndarray
    spoke_edges: np.ndarray
    trace_edges: np.ndarray
    matrix: np.ndarray
    rhs: np.ndarray
    mass: np.ndarray  # (m, N, N) block-diagonal metric
    z: np.ndarray
    coeffs: np.ndarray  # (m, N)
    eta: float
    residual: float


def local_equilibrate(u_h: ScalarField, f, nu: int) -> PatchSolution:
    """Solve the single patch problem of vertex nu and return its pieces."""
    space = u_h.space
    mesh = space.mesh
    k = space.degree
    n_p = len(monomial_exponents(k))
    N = rt_dim(k)
    K1 = k + 1
    nu = int(nu)
    patch = mesh.patch(nu)
    els = patch.elements
    msize = els.size

    part = _compute_blocks(u_h, f, els)
    ptr, ind, slotv = mesh._vertex_triangles
    slots = slotv[ptr[nu]:ptr[nu + 1]]
    Jr = _edge_rhs(u_h)

    spokes = patch.interior_edges
    rim = mesh.edge_of_triangle[els, slots]
    trace_edges = rim[~mesh.boundary_edge[rim]]
    R = msize * n_p + (spokes.size + trace_edges.size) * K1
    Araw = np.zeros((R, msize * N))
    Awht = np.zeros((R, msize * N))
    g = np.zeros(R)

    for j in range(msize):
        rows = slice(j * n_p, (j + 1) * n_p)
        cols = slice(j * N, (j + 1) * N)
        Araw[rows, cols] = part["Draw"][j]
        Awht[rows, cols] = part["Dt"][j]
        g[rows] = part["rdiv"][j, slots[j]]

    row = msize * n_p
    for e in spokes:
        var = 0 if mesh.edges[e, 0] == nu else 1
        g[row:row + K1] = Jr[e, var]
        for side in (0, 1):
            t = mesh.edge_triangles[e, side]
            le = mesh.edge_local[e, side]
            j = int(np.searchsorted(els, t))
            Araw[row:row + K1, j * N:(j + 1) * N] = part["Traw"][j, le]
            Awht[row:row + K1, j * N:(j + 1) * N] = part["Trt"][j, le]
        row += K1

    rim_imp = ~mesh.boundary_edge[rim]
    for j in range(msize):
        if not rim_imp[j]:
            continue
        Araw[row:row + K1, j * N:(j + 1) * N] = part["Traw"][j, slots[j]]
        Awht[row:row + K1, j * N:(j + 1) * N] = part["Trt"][j, slots[j]]
        row += K1

    z, *_ = np.linalg.lstsq(Awht, g, rcond=_RCOND)
    resid = float(np.abs(Awht @ z - g).max())
    zc = z.reshape(msize, N)
    coeffs = np.einsum("tij,tj->ti", part["LiT"], zc)
    return PatchSolution(nu, els, spokes, trace_edges, Araw, g,
                         part["mass"], z, coeffs,
                         float(np.linalg.norm(z)), resid)


# -- verification -------------------------------------------------------


def verify_equilibration(flux: EquilibratedFlux, f) -> EquilibrationReport:
    """Check the defining conditions of the reconstruction a posteriori.

    Evaluates, independently of the patch solver, the pointwise residual of
    div q = -(projected f) - lap u_h at the volume quadrature points and of
    the normal-jump condition at the edge quadrature points.
    """
    u_h = flux.u_h
    space = u_h.space
    mesh = space.mesh
    k = space.degree
    rule = space.rule_main
    exps = monomial_exponents(k)
    c = _centres(mesh)
    h = mesh.diameters
    nt = mesh.n_triangles

    div_res = 0.0
    fscale = 1.0
    for lo in range(0, nt, _CHUNK):
        els = np.arange(lo, min(lo + _CHUNK, nt))
        X = space.physical_points(rule.points, els)
        xh = (X - c[els, None, :]) / h[els, None, None]
        mono = monomial_values(exps, xh[..., 0], xh[..., 1])
        fX = f(X[..., 0], X[..., 1])
        M = np.einsum("q,tqa,tqb->tab", rule.weights, mono, mono)
        rhs = np.einsum("q,tq,tqa->ta", rule.weights, fX, mono)
        pf = np.einsum("tqa,ta->tq", mono,
                       np.linalg.solve(M, rhs[..., None])[..., 0])
        lap = element_laplacians(u_h, rule.points, els)
        dv = flux.q_delta.divergence(rule.points, els)
        div_res = max(div_res, float(np.abs(dv + pf + lap).max()))
        fscale = max(fscale, float(np.abs(fX).max()))

    er = space.edge_rule_main
    J, interior = normal_jumps(u_h, 2 * k + 2)
    qn = np.zeros_like(J)
    et, el = mesh.edge_triangles, mesh.edge_local
    tris = mesh.triangles
    for side in (0, 1):
        for le in range(3):
            rows = np.nonzero(interior & (el[:, side] == le))[0]
            if rows.size == 0:
                continue
            t = et[rows, side]
            a, b = (le + 1) % 3, (le + 2) % 3
            ga, gb = tris[t, a], tris[t, b]
            lo_ = np.minimum(ga, gb)
            hi_ = np.maximum(ga, gb)
            pl, ph = mesh.points[lo_], mesh.points[hi_]
            ep = pl[:, None, :] + er.points[None, :, None] \
                * (ph - pl)[:, None, :]
            xhe = (ep - c[t, None, :]) / h[t, None, None]
            Ve = rt_values(k, xhe)
            tang = mesh.points[gb] - mesh.points[ga]
            nrm = np.column_stack([tang[:, 1], -tang[:, 0]])
            nrm /= np.hypot(nrm[:, 0], nrm[:, 1])[:, None]
            vals = np.einsum("tqjc,tj,tc->tq", Ve, flux.q_delta.coeffs[t],
                             nrm, optimize=True)
            qn[rows] += vals
    jump_res = float(np.abs((qn + J)[interior]).max()) if interior.any() else 0.0
    jscale = 1.0 + (float(np.abs(J[interior]).max()) if interior.any() else 0.0)

    return EquilibrationReport(div_res / fscale, jump_res / jscale,
                               float(flux.patch_residuals.max()))


def prager_synge_terms(u_h: ScalarField, flux: EquilibratedFlux, grad_exact,
                       qdeg: int | None = None):
    """The three sides of the hypercircle identity.

    Returns (error, flux_distance, bound): the energy error of u_h, the L2
    distance between the exact flux and the reconstructed one, and the
    computable bound (the L2 norm of the correction).  When the balance
    div sigma = -f holds exactly, error^2 + flux_distance^2 = bound^2.
    """
    space = u_h.space
    k = space.degree
    if qdeg is None:
        qdeg = 2 * k + 8
    rule = triangle_rule(qdeg)
    sigma = flux.total_flux()
    nt = space.mesh.n_triangles
    dist_sq = 0.0
    for lo in range(0, nt, _CHUNK):
        els = np.arange(lo, min(lo + _CHUNK, nt))
        X = space.physical_points(rule.points, els)
        gx, gy = grad_exact(X[..., 0], X[..., 1])
        sv = sigma.element_values(rule.points, els)
        d0 = np.asarray(gx) - sv[..., 0]
        d1 = np.asarray(gy) - sv[..., 1]
        dist_sq += float(np.einsum("q,tq,t->", rule.weights,
                                   d0 * d0 + d1 * d1,
                                   space.mesh.areas[els]))
    err = energy_error(u_h, grad_exact, qdeg=qdeg)
    return err, float(np.sqrt(dist_sq)), flux.eta_delta_total
