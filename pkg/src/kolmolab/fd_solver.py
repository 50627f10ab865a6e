"""Finite differences for the degenerate equation on box product domains.

The equation

    D_t u - <Bx, Du> = D_i(a^{ij} D_j u + b^i u) + c^i D_i u + d u + g + D_i f^i

(sums over i, j <= m0) is marched on a uniform grid over V x U x (0, T].  The
diffusion block is implicit -- conservative second differences with midpoint
coefficient averaging on the diagonal, symmetric centered stencils for the
cross terms -- so the stiff part never restricts the step.  Everything else is
explicit: the transport <Bx, Du> by first-order upwind differences whose
direction follows the sign of each (Bx) component at the node, and the lower
order terms by centered differences.  The explicit transport step is the one
that carries the CFL restriction dt * sum_alpha |(Bx)_alpha| / h_alpha <= 1;
under it the update is a convex combination of neighbor values, which is what
makes the core scheme (b = c = d = f = g = 0, diagonal a) preserve the
discrete maximum principle exactly rather than asymptotically.

Boundary bookkeeping mirrors the continuum decomposition: Dirichlet values on
the parabolic boundary (faces of V and the initial slice), prescribed inflow
values on the K-plus part of V x dU where <Bx, n> >= 0, and no condition at
all on the outflow part, whose nodes are solved like interior ones with their
upwind stencils reaching into the domain.  Corners of dU take the face with
the larger flux magnitude, ties going to inflow.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BadParameters,
    CFLViolation,
    EllipticityViolation,
    HypothesisViolation,
    NotOnKBoundary,
    ShapeMismatch,
)
from .group_conv import GridField
from .lie_group import StructureMatrix

__all__ = [
    "ProductDomain",
    "CoefficientSet",
    "BoundaryData",
    "classify_boundary",
    "transport_cfl_limit",
    "solve",
    "sup_norm",
    "level_measure",
    "undercut_energy",
    "MaxPrincipleReport",
    "check_max_principle",
]


@dataclass(frozen=True)
class ProductDomain:
    """Space-time cylinder over a product box V x U.

    ``V`` carries the diffusion axes (the first m0 coordinates), ``U`` the
    transport-only ones; either is a tuple of (lo, hi) pairs.  ``U`` may be
    empty for fully parabolic structures.
    """

    V: tuple
    U: tuple
    T: float

    def __post_init__(self):
        V = tuple((float(lo), float(hi)) for lo, hi in self.V)
        U = tuple((float(lo), float(hi)) for lo, hi in self.U)
        if not V:
            raise ShapeMismatch("V must have at least one axis")
        for lo, hi in V + U:
            if not hi > lo:
                raise ShapeMismatch(f"empty box axis ({lo}, {hi})")
        if not self.T > 0:
            raise BadParameters(f"final time must be positive, got {self.T}")
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "T", float(self.T))

    @property
    def box(self) -> tuple:
        return self.V + self.U

    @property
    def n_dim(self) -> int:
        return len(self.V) + len(self.U)


def _zero(*args):
    mesh_shape = np.broadcast(*args[:-1]).shape if len(args) > 1 else ()
    return np.zeros(mesh_shape)


@dataclass(frozen=True)
class CoefficientSet:
    """Coefficient fields of the operator, as callables over (x..., t).

    Every callable receives the spatial mesh arrays plus the time and returns
    an array broadcastable to the spatial shape; ``a`` returns shape
    ``(m0, m0, ...)``, ``b``/``c``/``f`` return ``(m0, ...)``, ``d``/``g``
    scalars fields.  ``None`` means identity for ``a`` and zero for the rest.
    ``lam`` and ``Lam`` are the ellipticity bounds the inputs claim; ``solve``
    audits the claim at every node and refuses violated inputs.
    """

    a: object = None
    b: object = None
    c: object = None
    f: object = None
    d: object = None
    g: object = None
    lam: float = 1.0
    Lam: float = 1.0


@dataclass(frozen=True)
class BoundaryData:
    """Dirichlet data on the parabolic boundary and the inflow part.

    ``gamma_P(x..., t)`` feeds the faces of V and the initial slice;
    ``gamma_K_plus(x..., t)`` feeds the inflow nodes of V x dU.  ``M`` may
    carry a caller's claim of the boundary sup of positive parts, but every
    consumer recomputes it from the callables on the actual grid -- the claim
    is never trusted.
    """

    gamma_P: object
    gamma_K_plus: object = None
    M: float = None


def classify_boundary(dom: ProductDomain, s: StructureMatrix, x) -> str:
    """Inflow/outflow label of a point of V x dU by the sign of <Bx, n>.

    Points on several faces (corners of dU) take the face with the larger
    |<Bx, n>|, ties resolved to inflow, matching the inclusive ">= 0" of the
    continuum definition.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (dom.n_dim,):
        raise ShapeMismatch(f"point must have {dom.n_dim} coordinates")
    m0 = len(dom.V)
    bx = s.B @ x
    tol = 1e-12
    best_abs = -1.0
    best_plus = False
    on_any = False
    for k, (lo, hi) in enumerate(dom.U):
        axis = m0 + k
        for sign, edge in ((-1.0, lo), (1.0, hi)):
            if abs(x[axis] - edge) <= tol * max(1.0, abs(edge)):
                on_any = True
                flux = sign * bx[axis]
                if abs(flux) > best_abs:
                    best_abs = abs(flux)
                    best_plus = flux >= 0
                elif abs(flux) == best_abs:
                    best_plus = best_plus or flux >= 0
    if not on_any:
        raise NotOnKBoundary(f"point {x} lies on no face of U")
    return "K_plus" if best_plus else "K_minus"


def transport_cfl_limit(dom: ProductDomain, s: StructureMatrix, h) -> float:
    """Largest stable explicit step: 1 / max_nodes sum_a |(Bx)_a| / h_a."""
    h = np.asarray(h, dtype=float)
    corners = np.stack(
        np.meshgrid(*[np.array(ax) for ax in dom.box], indexing="ij"), axis=-1
    ).reshape(-1, dom.n_dim)
    rates = np.abs(corners @ s.B.T) / h
    worst = float(rates.sum(axis=1).max())
    return np.inf if worst == 0.0 else 1.0 / worst


def _axes_nodes(dom: ProductDomain, n_per_axis) -> list:
    return [np.linspace(lo, hi, n) for (lo, hi), n in zip(dom.box, n_per_axis)]


def _resolve_grid(dom: ProductDomain, grid: dict):
    if "n" in grid:
        n_per_axis = [int(n) for n in grid["n"]]
    elif "h" in grid:
        n_per_axis = [
            int(round((hi - lo) / h_ax)) + 1
            for (lo, hi), h_ax in zip(dom.box, grid["h"])
        ]
    else:
        raise BadParameters("grid needs 'h' per axis or 'n' per axis")
    if len(n_per_axis) != dom.n_dim or any(n < 3 for n in n_per_axis):
        raise BadParameters(f"grid must give >= 3 nodes on each of {dom.n_dim} axes")
    dt = float(grid["dt"])
    if dt <= 0:
        raise BadParameters(f"dt must be positive, got {dt}")
    h = np.array([(hi - lo) / (n - 1) for (lo, hi), n in zip(dom.box, n_per_axis)])
    return tuple(n_per_axis), h, dt


def _diff_centered(arr: np.ndarray, axis: int, h: float) -> np.ndarray:
    out = np.empty_like(arr)
    sl = [slice(None)] * arr.ndim

    def at(i):
        sl2 = list(sl)
        sl2[axis] = i
        return tuple(sl2)

    out[at(slice(1, -1))] = (arr[at(slice(2, None))] - arr[at(slice(0, -2))]) / (2 * h)
    out[at(0)] = (arr[at(1)] - arr[at(0)]) / h
    out[at(-1)] = (arr[at(-1)] - arr[at(-2)]) / h
    return out


def _upwind_term(u: np.ndarray, w: np.ndarray, axis: int, h: float) -> np.ndarray:
    """w * D_axis u with the one-sided difference chosen against the flow."""
    sl = [slice(None)] * u.ndim

    def at(i):
        sl2 = list(sl)
        sl2[axis] = i
        return tuple(sl2)

    fwd = np.empty_like(u)
    fwd[at(slice(0, -1))] = (u[at(slice(1, None))] - u[at(slice(0, -1))]) / h
    fwd[at(-1)] = (u[at(-1)] - u[at(-2)]) / h
    bwd = np.empty_like(u)
    bwd[at(slice(1, None))] = (u[at(slice(1, None))] - u[at(slice(0, -1))]) / h
    bwd[at(0)] = (u[at(1)] - u[at(0)]) / h
    return w * np.where(w > 0, fwd, bwd)


class _Geometry:
    """Node masks and classification for one (domain, structure, grid)."""

    def __init__(self, dom: ProductDomain, s: StructureMatrix, n_per_axis, h):
        self.dom = dom
        self.s = s
        self.shape = tuple(n_per_axis)
        self.h = h
        self.m0 = len(dom.V)
        axes = _axes_nodes(dom, n_per_axis)
        self.mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in self.mesh], axis=-1)
        self.nodes = pts
        bx = pts @ s.B.T
        self.bx = bx.reshape(self.shape + (dom.n_dim,))
        on_dV = np.zeros(self.shape, dtype=bool)
        for i in range(self.m0):
            sl = [slice(None)] * len(self.shape)
            for edge in (0, -1):
                sl2 = list(sl)
                sl2[i] = edge
                on_dV[tuple(sl2)] = True
        on_dU = np.zeros(self.shape, dtype=bool)
        best_abs = np.full(self.shape, -1.0)
        is_plus = np.zeros(self.shape, dtype=bool)
        for k in range(len(dom.U)):
            axis = self.m0 + k
            for sign, edge in ((-1.0, 0), (1.0, -1)):
                sl2 = [slice(None)] * len(self.shape)
                sl2[axis] = edge
                face = tuple(sl2)
                on_dU[face] = True
                flux = sign * self.bx[face + (axis,)]
                better = np.abs(flux) > best_abs[face]
                equal = np.abs(flux) == best_abs[face]
                plus_here = flux >= 0
                face_plus = is_plus[face]
                face_plus[better] = plus_here[better]
                face_plus[equal] |= plus_here[equal]
                is_plus[face] = face_plus
                ba = best_abs[face]
                ba[better] = np.abs(flux)[better]
                best_abs[face] = ba
        self.on_dV = on_dV
        self.on_dU = on_dU
        self.k_plus = on_dU & is_plus & ~on_dV
        self.k_minus = on_dU & ~is_plus & ~on_dV
        self.dirichlet = on_dV | self.k_plus
        self.free = ~self.dirichlet
        flat_free = self.free.ravel()
        self.free_index = np.full(flat_free.size, -1, dtype=np.int64)
        self.free_index[flat_free] = np.arange(int(flat_free.sum()))
        self.n_free = int(flat_free.sum())


def _eval_a(coeffs: CoefficientSet, geo: _Geometry, t: float) -> np.ndarray:
    m0 = geo.m0
    target = (m0, m0) + geo.shape
    if coeffs.a is None:
        out = np.zeros(target)
        for i in range(m0):
            out[i, i] = 1.0
        return out
    raw = np.asarray(coeffs.a(*geo.mesh, t), dtype=float)
    if raw.shape == (m0, m0):
        raw = raw.reshape((m0, m0) + (1,) * len(geo.shape))
    elif m0 == 1 and raw.ndim <= len(geo.shape):
        raw = raw[None, None]
    return np.broadcast_to(raw, target).copy()


def _eval_vector(fn, geo: _Geometry, t: float) -> np.ndarray:
    m0 = geo.m0
    target = (m0,) + geo.shape
    if fn is None:
        return np.zeros(target)
    raw = np.asarray(fn(*geo.mesh, t), dtype=float)
    if raw.shape == (m0,):
        raw = raw.reshape((m0,) + (1,) * len(geo.shape))
    elif m0 == 1 and raw.ndim <= len(geo.shape):
        raw = raw[None]
    return np.broadcast_to(raw, target).copy()


def _eval_scalar(fn, geo: _Geometry, t: float) -> np.ndarray:
    if fn is None:
        return np.zeros(geo.shape)
    return np.broadcast_to(np.asarray(fn(*geo.mesh, t), dtype=float), geo.shape).copy()


def _audit_ellipticity(a: np.ndarray, lam: float, Lam: float, t: float) -> None:
    m0 = a.shape[0]
    tol = 1e-9 * max(1.0, Lam)
    asym = np.abs(a - np.swapaxes(a, 0, 1)).max()
    if asym > tol:
        raise EllipticityViolation(f"a is asymmetric by {asym:.3e} at t={t}")
    if np.abs(a).max() > Lam + tol:
        raise EllipticityViolation(
            f"|a| reaches {np.abs(a).max():.6g} > Lambda={Lam} at t={t}"
        )
    mats = np.moveaxis(a.reshape(m0, m0, -1), -1, 0)
    eigs = np.linalg.eigvalsh(mats)
    if eigs[:, 0].min() < lam - tol:
        raise EllipticityViolation(
            f"smallest a-eigenvalue {eigs[:, 0].min():.6g} < lambda={lam} at t={t}"
        )


def _implicit_system(geo: _Geometry, a: np.ndarray, dt: float):
    """Assemble I - dt*DIFF over free nodes; return (matrix, border_op).

    ``border_op(u_full)`` gives the rhs contribution of Dirichlet neighbors:
    the same stencil applied to a field that is zero at free nodes.
    """
    import scipy.sparse as sp

    shape = geo.shape
    size = int(np.prod(shape))
    flat_index = np.arange(size).reshape(shape)
    free = geo.free
    fidx = geo.free_index
    h = geo.h
    rows, cols, vals = [], [], []
    # stencil as (offset per axis, coefficient field) pairs, built axis by axis
    entries = []
    for i in range(geo.m0):
        aii = a[i, i]
        up = np.empty(shape)
        dn = np.empty(shape)
        sl = [slice(None)] * len(shape)

        def at(axis, i0):
            sl2 = list(sl)
            sl2[axis] = i0
            return tuple(sl2)

        up[at(i, slice(0, -1))] = 0.5 * (aii[at(i, slice(0, -1))] + aii[at(i, slice(1, None))])
        up[at(i, -1)] = 0.0
        dn[at(i, slice(1, None))] = up[at(i, slice(0, -1))]
        dn[at(i, 0)] = 0.0
        off = np.zeros(len(shape), dtype=int)
        off[i] = 1
        entries.append((tuple(off), up / h[i] ** 2))
        entries.append((tuple(-off), dn / h[i] ** 2))
        entries.append((tuple(np.zeros(len(shape), dtype=int)), -(up + dn) / h[i] ** 2))
        for j in range(geo.m0):
            if j == i:
                continue
            aij = a[i, j]
            # D_i^c(a_ij D_j^c u): four corner neighbors, shifted coefficient
            for si in (1, -1):
                coeff_i = np.zeros(shape)
                src = at(i, slice(1, None) if si == 1 else slice(0, -1))
                dst = at(i, slice(0, -1) if si == 1 else slice(1, None))
                coeff_i[dst] = si * aij[src]
                for sj in (1, -1):
                    off = np.zeros(len(shape), dtype=int)
                    off[i] = si
                    off[j] = sj
                    entries.append((tuple(off), sj * coeff_i / (4.0 * h[i] * h[j])))
    border_entries = []
    for off, coeff in entries:
        # clip to node pairs that exist; free rows only
        src_sl, dst_sl = [], []
        for d, o in enumerate(off):
            n = shape[d]
            if o == 0:
                src_sl.append(slice(None))
                dst_sl.append(slice(None))
            elif o == 1:
                src_sl.append(slice(0, n - 1))
                dst_sl.append(slice(1, n))
            else:
                src_sl.append(slice(1, n))
                dst_sl.append(slice(0, n - 1))
        src_sl, dst_sl = tuple(src_sl), tuple(dst_sl)
        row_ids = flat_index[src_sl].ravel()
        col_ids = flat_index[dst_sl].ravel()
        cvals = coeff[src_sl].ravel()
        row_free = free.ravel()[row_ids]
        keep = row_free & (cvals != 0.0)
        row_ids, col_ids, cvals = row_ids[keep], col_ids[keep], cvals[keep]
        col_free = free.ravel()[col_ids]
        m_keep = col_free
        rows.append(fidx[row_ids[m_keep]])
        cols.append(fidx[col_ids[m_keep]])
        vals.append(-dt * cvals[m_keep])
        b_keep = ~col_free
        if np.any(b_keep):
            border_entries.append(
                (row_ids[b_keep], col_ids[b_keep], dt * cvals[b_keep])
            )
    mat = sp.coo_matrix(
        (
            np.concatenate([np.ones(geo.n_free)] + vals),
            (
                np.concatenate([np.arange(geo.n_free)] + rows),
                np.concatenate([np.arange(geo.n_free)] + cols),
            ),
        ),
        shape=(geo.n_free, geo.n_free),
    ).tocsc()

    def border_op(u_full: np.ndarray) -> np.ndarray:
        out = np.zeros(geo.n_free)
        uflat = u_full.ravel()
        for row_ids, col_ids, cvals in border_entries:
            np.add.at(out, fidx[row_ids], cvals * uflat[col_ids])
        return out

    return mat, border_op


def solve(dom: ProductDomain, s: StructureMatrix, coeffs: CoefficientSet,
          data: BoundaryData, grid: dict) -> GridField:
    """March the IMEX scheme and return the space-time solution field.

    The step must satisfy the transport CFL bound; diffusion carries no
    restriction.  Ellipticity of ``a`` is audited against the claimed bounds
    at every node of every time slice before it is used.
    """
    from scipy.sparse.linalg import splu

    if len(dom.V) != s.m0 or dom.n_dim != s.N:
        raise ShapeMismatch(
            f"domain splits axes as ({len(dom.V)}, {len(dom.U)}), structure has "
            f"(m0, N - m0) = ({s.m0}, {s.N - s.m0})"
        )
    n_per_axis, h, dt = _resolve_grid(dom, grid)
    cfl = transport_cfl_limit(dom, s, h)
    if dt > cfl * (1.0 + 1e-12):
        raise CFLViolation(f"dt={dt:.6g} exceeds the transport limit {cfl:.6g}")
    geo = _Geometry(dom, s, n_per_axis, h)
    nt = int(round(dom.T / dt)) + 1
    times = np.linspace(0.0, dom.T, nt)
    if abs(times[1] - times[0] - dt) > 1e-9 * dt:
        raise BadParameters(f"dt={dt} does not divide T={dom.T} evenly")
    gkp = data.gamma_K_plus if data.gamma_K_plus is not None else data.gamma_P

    values = np.empty(geo.shape + (nt,))
    u = np.broadcast_to(
        np.asarray(data.gamma_P(*geo.mesh, 0.0), dtype=float), geo.shape
    ).copy()
    values[..., 0] = u
    m0 = geo.m0
    cached_a = None
    lu = None
    border_op = None
    for step in range(1, nt):
        t_old, t_new = times[step - 1], times[step]
        expl = np.zeros(geo.shape)
        for alpha in range(dom.n_dim):
            if np.any(s.B[alpha]):
                expl += _upwind_term(u, geo.bx[..., alpha], alpha, h[alpha])
        if coeffs.b is not None:
            bvec = _eval_vector(coeffs.b, geo, t_old)
            for i in range(m0):
                expl += _diff_centered(bvec[i] * u, i, h[i])
        if coeffs.c is not None:
            cvec = _eval_vector(coeffs.c, geo, t_old)
            for i in range(m0):
                expl += cvec[i] * _diff_centered(u, i, h[i])
        if coeffs.d is not None:
            expl += _eval_scalar(coeffs.d, geo, t_old) * u
        if coeffs.g is not None:
            expl += _eval_scalar(coeffs.g, geo, t_old)
        if coeffs.f is not None:
            fvec = _eval_vector(coeffs.f, geo, t_old)
            for i in range(m0):
                expl += _diff_centered(fvec[i], i, h[i])
        a = _eval_a(coeffs, geo, t_new)
        _audit_ellipticity(a, coeffs.lam, coeffs.Lam, t_new)
        if cached_a is None or not np.array_equal(a, cached_a):
            mat, border_op = _implicit_system(geo, a, dt)
            lu = splu(mat)
            cached_a = a
        u_new = np.empty(geo.shape)
        u_new[geo.on_dV] = np.broadcast_to(
            np.asarray(data.gamma_P(*geo.mesh, t_new), dtype=float), geo.shape
        )[geo.on_dV]
        if np.any(geo.k_plus):
            u_new[geo.k_plus] = np.broadcast_to(
                np.asarray(gkp(*geo.mesh, t_new), dtype=float), geo.shape
            )[geo.k_plus]
        known = np.where(geo.free, 0.0, u_new)
        rhs = (u + dt * expl)[geo.free] + border_op(known)
        u_new[geo.free] = lu.solve(rhs)
        values[..., step] = u_new
        u = u_new
    return GridField(box=dom.box, t_range=(0.0, dom.T), values=values)


def sup_norm(u: GridField) -> float:
    """Discrete sup of the field over all nodes and times."""
    return float(np.max(u.values))


def level_measure(u: GridField, k: float) -> float:
    """Grid measure of the strict super-level set {u > k}."""
    return float(np.count_nonzero(u.values > k)) * u.cell_volume


def undercut_energy(u: GridField, M: float) -> float:
    """L2 norm of (u - M)_+ over the grid measure."""
    exc = np.clip(u.values - M, 0.0, None)
    return float(np.sqrt(np.sum(exc ** 2) * u.cell_volume))


@dataclass(frozen=True)
class MaxPrincipleReport:
    """Suprema of a discrete solution against its boundary-data ceiling M."""

    sup_interior: float
    sup_outflow: float
    M: float
    excess: float
    hypothesis: str

    @property
    def satisfied(self) -> bool:
        return self.excess <= 0.0


def check_max_principle(dom: ProductDomain, s: StructureMatrix,
                        coeffs: CoefficientSet, data: BoundaryData,
                        u: GridField, tol: float = 0.0) -> MaxPrincipleReport:
    """Compare interior/outflow suprema with the recomputed boundary sup M.

    Refuses to report unless the verifiable strong form of the hypothesis
    holds: d <= 0 everywhere, b constant in space on every slice, f = g = 0.
    Under it the continuum result bounds both suprema by M; the discrete
    excess should vanish with the grid, which the caller checks by
    refinement.  ``tol`` is an allowance added to M when declaring ``excess``.
    """
    n_per_axis = u.values.shape[:-1]
    h = np.array([(hi - lo) / (n - 1) for (lo, hi), n in zip(dom.box, n_per_axis)])
    geo = _Geometry(dom, s, n_per_axis, h)
    times = u.times
    hyp_tol = 1e-12
    for t in times:
        dval = _eval_scalar(coeffs.d, geo, float(t))
        if dval.max() > hyp_tol:
            raise HypothesisViolation(f"d reaches {dval.max():.3e} > 0 at t={t}")
        bvec = _eval_vector(coeffs.b, geo, float(t))
        spread = np.abs(bvec - bvec.reshape(geo.m0, -1).mean(axis=1).reshape(
            (geo.m0,) + (1,) * len(geo.shape))).max()
        if spread > hyp_tol:
            raise HypothesisViolation(f"b varies in space by {spread:.3e} at t={t}")
        for fn, name in ((coeffs.f, "f"), (coeffs.g, "g")):
            if fn is None:
                continue
            mag = np.abs(np.asarray(fn(*geo.mesh, float(t)))).max()
            if mag > hyp_tol:
                raise HypothesisViolation(f"{name} is not zero (max {mag:.3e}) at t={t}")
    gkp = data.gamma_K_plus if data.gamma_K_plus is not None else data.gamma_P
    M = 0.0
    for t in times:
        gp = np.broadcast_to(np.asarray(data.gamma_P(*geo.mesh, float(t)),
                                        dtype=float), geo.shape)
        if float(t) == 0.0:
            M = max(M, float(gp.max()))
        elif np.any(geo.on_dV):
            M = max(M, float(gp[geo.on_dV].max()))
        if np.any(geo.k_plus) and float(t) > 0.0:
            gk = np.broadcast_to(np.asarray(gkp(*geo.mesh, float(t)),
                                            dtype=float), geo.shape)
            M = max(M, float(gk[geo.k_plus].max()))
    interior = geo.free & ~geo.k_minus
    sup_int = (
        float(u.values[interior][:, 1:].max()) if np.any(interior) else -np.inf
    )
    sup_out = (
        float(u.values[geo.k_minus][:, 1:].max()) if np.any(geo.k_minus) else -np.inf
    )
    excess = max(max(sup_int, sup_out) - (M + tol), 0.0)
    return MaxPrincipleReport(
        sup_interior=sup_int,
        sup_outflow=sup_out,
        M=M,
        excess=excess,
        hypothesis="d<=0, b spatially constant, f=g=0: verified",
    )
