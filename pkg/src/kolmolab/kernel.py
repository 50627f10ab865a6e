"""Explicit fundamental solution of the principal operator and its L^p sizes.

For a validated structure the kernel is the Gaussian

    K(x, t) = C_N t^(-Q/2) exp(-1/4 <C1^{-1} D(1/sqrt t) x, D(1/sqrt t) x>),
    C_N = (4 pi)^(-N/2) |det C1|^(-1/2),

with ``C1 = covariance(s, 1)`` and ``D`` the anisotropic dilation; it is the
density of a centered Gaussian with covariance ``2 C(t)``, and it vanishes for
``t <= 0`` (causal convention).  Integrability over a slab ``(0, T)`` cuts off
at ``p0 = (Q+2)/Q`` for the kernel itself and ``p1 = (Q+2)/(Q+1)`` for its
first-block derivatives; both thresholds are exposed as exact fractions.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .errors import ExponentOutOfRange, GridTooCoarse, NonPositiveTime, SingularCovariance
from .lie_group import StructureMatrix, covariance, dilation, exp_neg_tB

__all__ = [
    "KernelContext",
    "kernel_context",
    "eval_K",
    "eval_K_two_point",
    "grad_K",
    "LpReport",
    "QuadratureSpec",
    "lp_norm_closed_form",
    "lp_norm_quadrature",
    "grad_lp_norm_quadrature",
    "p_kernel_cutoff",
    "p_gradient_cutoff",
    "q_dual_cutoff",
]

# exponents beyond this in the Gaussian are flushed to an exact zero
_EXP_CUTOFF = 1400.0


def p_kernel_cutoff(s: StructureMatrix) -> Fraction:
    """Integrability threshold ``p0 = (Q+2)/Q`` of the kernel."""
    return Fraction(s.Q + 2, s.Q)


def p_gradient_cutoff(s: StructureMatrix) -> Fraction:
    """Integrability threshold ``p1 = (Q+2)/(Q+1)`` of the kernel gradient."""
    return Fraction(s.Q + 2, s.Q + 1)


def q_dual_cutoff(s: StructureMatrix) -> Fraction:
    """Dual threshold ``q0 = (Q+2)/2``."""
    return Fraction(s.Q + 2, 2)


@dataclass(frozen=True)
class KernelContext:
    """Frozen per-structure data needed to evaluate the kernel.

    Holds the structure, the time-1 covariance ``C1`` with its inverse and
    determinant, and the normalization ``CN``.
    """

    s: StructureMatrix
    C1: np.ndarray
    C1_inv: np.ndarray
    detC1: float
    CN: float


def kernel_context(s: StructureMatrix, cond_cap: float = 1e14) -> KernelContext:
    """Precompute ``C1``, its inverse/determinant and the normalization.

    Raises ``SingularCovariance`` when the time-1 covariance has an eigenvalue
    ratio beyond ``cond_cap`` (or a non-positive eigenvalue).
    """
    C1 = covariance(s, 1.0)
    w, V = np.linalg.eigh(C1)
    if w[0] <= 0 or w[-1] / w[0] > cond_cap:
        raise SingularCovariance(f"time-1 covariance eigenvalues {w}")
    C1_inv = (V / w) @ V.T
    detC1 = float(np.prod(w))
    CN = (4.0 * math.pi) ** (-s.N / 2.0) / math.sqrt(detC1)
    for a in (C1, C1_inv):
        a.setflags(write=False)
    return KernelContext(s=s, C1=C1, C1_inv=C1_inv, detC1=detC1, CN=CN)


def _rescaled(ctx: KernelContext, x: np.ndarray, t: float) -> np.ndarray:
    """Return ``D(1/sqrt t) x`` for points ``x`` of shape (..., N)."""
    expo = np.concatenate(
        [np.full(m, -(2 * j + 1) / 2.0) for j, m in enumerate(ctx.s.dims)]
    )
    return x * float(t) ** expo


def eval_K(ctx: KernelContext, x, t):
    """Evaluate the kernel at points ``x`` (shape ``(..., N)``) and time ``t``.

    ``t`` may be a scalar or an array broadcastable against the leading shape
    of ``x``.  Non-positive times give exactly 0, as do points whose Gaussian
    exponent exceeds the overflow guard.
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    pts = np.atleast_2d(x)
    tarr = np.broadcast_to(np.asarray(t, dtype=float), pts.shape[:-1]).copy()
    out = np.zeros(pts.shape[:-1])
    pos = tarr > 0
    if np.any(pos):
        tp = tarr[pos]
        y = pts[pos] * tp[:, None] ** np.concatenate(
            [np.full(m, -(2 * j + 1) / 2.0) for j, m in enumerate(ctx.s.dims)]
        )[None, :]
        quad = 0.25 * np.einsum("pi,ij,pj->p", y, ctx.C1_inv, y)
        vals = np.where(
            quad >= _EXP_CUTOFF,
            0.0,
            ctx.CN * tp ** (-ctx.s.Q / 2.0) * np.exp(-np.minimum(quad, _EXP_CUTOFF)),
        )
        out[pos] = vals
    return float(out[0]) if squeeze else out


def eval_K_two_point(ctx: KernelContext, z, zeta) -> float:
    """Two-point kernel ``K(zeta^{-1} o z) = K(x - E(t - s) y, t - s)``."""
    x, t = np.asarray(z[0], dtype=float), float(z[1])
    y, tau = np.asarray(zeta[0], dtype=float), float(zeta[1])
    dt = t - tau
    if dt <= 0:
        return 0.0
    return float(eval_K(ctx, x - exp_neg_tB(ctx.s, dt) @ y, dt))


def grad_K(ctx: KernelContext, x, t):
    """Spatial derivatives ``D_i K`` along the first ``m0`` directions.

    Differentiation of the Gaussian gives the closed form

        D_i K(x, t) = -1/2 K(x, t) * (D(1/sqrt t) C1^{-1} D(1/sqrt t) x)_i

    for ``i < m0``.  Returns shape ``(..., m0)``; raises ``NonPositiveTime``
    for ``t <= 0``.
    """
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    pts = np.atleast_2d(x)
    tarr = np.broadcast_to(np.asarray(t, dtype=float), pts.shape[:-1])
    if np.any(tarr <= 0):
        raise NonPositiveTime("gradient defined for t > 0 only")
    expo = np.concatenate(
        [np.full(m, -(2 * j + 1) / 2.0) for j, m in enumerate(ctx.s.dims)]
    )
    y = pts * tarr[..., None] ** expo
    k = np.atleast_1d(eval_K(ctx, pts, tarr))
    # (D C1^{-1} D x)_i for i < m0: the outer dilation entry is t^{-1/2}
    factor = (y @ ctx.C1_inv.T)[..., : ctx.s.m0] * tarr[..., None] ** (-0.5)
    g = -0.5 * k[..., None] * factor
    return g[0] if squeeze else g


# -- L^p reports ---------------------------------------------------------------


@dataclass(frozen=True)
class LpReport:
    """Size report for ``||K||_p`` over the slab ``R^N x (0, T)``."""

    p: float
    T: float
    value: float
    method: str
    time_exponent: float

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)

    def to_json(self) -> str:
        return json.dumps(
            {
                "p": self.p,
                "T": self.T,
                "value": self.value if self.finite else "inf",
                "method": self.method,
            }
        )


def lp_norm_closed_form(ctx: KernelContext, p: float, T: float) -> LpReport:
    """Exact ``||K||_p`` on ``R^N x (0, T)``; infinite when ``p >= (Q+2)/Q``.

    The Gaussian spatial factor integrates to ``(4 pi / p)^(N/2) sqrt(det C1)``
    after rescaling each time slice, and the remaining time factor is the
    power integral ``t^(Q(1-p)/2)`` on ``(0, T)``.
    """
    if p < 1:
        raise ExponentOutOfRange(f"p must satisfy p >= 1, got {p}")
    if T <= 0:
        raise NonPositiveTime(f"time horizon must be positive, got {T}")
    q, n = ctx.s.Q, ctx.s.N
    texp = q / 2.0 - q * p / 2.0
    if texp <= -1.0:
        return LpReport(p=p, T=T, value=math.inf, method="closed_form", time_exponent=texp)
    value_p = (
        ctx.CN ** p
        * (4.0 * math.pi / p) ** (n / 2.0)
        * math.sqrt(ctx.detC1)
        * T ** (texp + 1.0)
        / (texp + 1.0)
    )
    return LpReport(p=p, T=T, value=value_p ** (1.0 / p), method="closed_form", time_exponent=texp)


@dataclass(frozen=True)
class QuadratureSpec:
    """Knobs for the slab quadrature of ``|K|^p``.

    ``n_space`` Gauss-Legendre nodes per axis on a box of ``box_stds``
    marginal standard deviations; the time axis uses ``time_nodes`` GL nodes
    on each of ``time_levels`` geometrically shrinking subintervals of
    ``(t_min, T)``.  ``t_min = None`` puts the innermost level at
    ``T * 2**-time_levels``.
    """

    n_space: int = 48
    box_stds: float = 8.0
    time_levels: int = 80
    time_nodes: int = 16
    t_min: float | None = None
    tol: float = 1e-3


def _spatial_gaussian_factor(ctx: KernelContext, p: float, n_space: int,
                             box_stds: float, weight_axis: int | None = None) -> tuple[float, float]:
    """Quadrature of ``w(y) exp(-p/4 <C1^{-1} y, y>)`` over a covering box.

    ``weight_axis = i`` multiplies the integrand by ``|(C1^{-1} y)_i|^p``
    (used for gradient norms); that case is integrated in the coordinates
    ``u = C1^{-1} y`` where the non-smooth factor ``|u_i|^p`` aligns with a
    coordinate axis and is absorbed into a Gauss-Jacobi weight.  Returns
    (value, error estimate vs. a coarser rule).
    """
    from scipy.special import roots_jacobi

    def run(nodes: int) -> float:
        xs, ws = np.polynomial.legendre.leggauss(nodes)
        if weight_axis is None:
            half = box_stds * np.sqrt(2.0 * np.diag(ctx.C1))
            axes = [(xs * h, ws * h) for h in half]
            quad_mat = ctx.C1_inv
            prefac = 1.0
        else:
            # u-coordinates: integrand |u_i|^p exp(-p/4 <C1 u, u>), dy = det(C1) du
            half = box_stds * np.sqrt(2.0 * np.diag(ctx.C1_inv))
            axes = []
            for ax, h in enumerate(half):
                if ax == weight_axis:
                    xj, wj = roots_jacobi(nodes, 0.0, p)
                    scale = (h / 2.0) ** (p + 1.0)
                    npos = h * (1.0 + xj) / 2.0
                    axes.append(
                        (np.concatenate([-npos[::-1], npos]),
                         np.concatenate([scale * wj[::-1], scale * wj]))
                    )
                else:
                    axes.append((xs * h, ws * h))
            quad_mat = ctx.C1
            prefac = ctx.detC1
        mesh = np.meshgrid(*[a[0] for a in axes], indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        wmesh = np.meshgrid(*[a[1] for a in axes], indexing="ij")
        wtot = np.prod(np.stack([m.ravel() for m in wmesh], axis=0), axis=0)
        quad = np.einsum("pi,ij,pj->p", pts, quad_mat, pts)
        return prefac * float(np.sum(wtot * np.exp(-0.25 * p * quad)))

    fine = run(n_space)
    coarse = run(max(8, n_space - 8))
    return fine, abs(fine - coarse)


def _time_power_integral(texp: float, t_min: float, T: float,
                         levels: int, nodes: int) -> float:
    """Quadrature of ``t**texp`` on ``(t_min, T)`` by geometric panels."""
    xs, ws = np.polynomial.legendre.leggauss(nodes)
    total = 0.0
    hi = T
    for _ in range(levels):
        lo = max(hi / 2.0, t_min)
        mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
        total += float(np.sum(ws * (mid + half * xs) ** texp)) * half
        hi = lo
        if hi <= t_min * (1 + 1e-12):
            break
    return total


def _slab_quadrature(ctx: KernelContext, p: float, T: float, spec: QuadratureSpec,
                     weight_axis: int | None, method: str) -> LpReport:
    if p < 1:
        raise ExponentOutOfRange(f"p must satisfy p >= 1, got {p}")
    if T <= 0:
        raise NonPositiveTime(f"time horizon must be positive, got {T}")
    q, n = ctx.s.Q, ctx.s.N
    # Substituting y = D(1/sqrt t) x per slice removes all t-dependence from
    # the spatial integral (Jacobian t^{Q/2}); the gradient weight adds one
    # factor t^{-p/2}.
    texp = q / 2.0 - q * p / 2.0
    prefac = ctx.CN ** p
    if weight_axis is not None:
        texp -= p / 2.0
        prefac *= 0.5 ** p
    spatial, sp_err = _spatial_gaussian_factor(
        ctx, p, spec.n_space, spec.box_stds, weight_axis
    )
    if texp <= -1.0 and spec.t_min is None:
        # no finite limit as t_min -> 0; mirror the closed form's verdict
        return LpReport(p=p, T=T, value=math.inf, method=method, time_exponent=texp)
    t_min = spec.t_min if spec.t_min is not None else T * 2.0 ** (-spec.time_levels)
    time_val = _time_power_integral(texp, t_min, T, spec.time_levels, spec.time_nodes)
    value_p = prefac * spatial * time_val
    rel_err = sp_err / max(spatial, np.finfo(float).tiny)
    if spec.t_min is None:
        # bound on the missing (0, t_min) sliver, relative to the computed value
        tail = t_min ** (texp + 1.0) / (texp + 1.0)
        rel_err += tail / max(time_val, np.finfo(float).tiny)
    if rel_err > spec.tol:
        raise GridTooCoarse(
            f"estimated relative quadrature error {rel_err:.2e} exceeds tol {spec.tol:.2e}"
        )
    return LpReport(p=p, T=T, value=value_p ** (1.0 / p), method=method, time_exponent=texp)


def lp_norm_quadrature(ctx: KernelContext, p: float, T: float,
                       spec: QuadratureSpec = QuadratureSpec()) -> LpReport:
    """``||K||_p`` over ``R^N x (t_min, T)`` by tensor quadrature.

    Independent of the closed form: the Gaussian factor is integrated by
    Gauss-Legendre on a covering box and the time factor by geometric panels
    refined toward ``t = 0``.  Raises ``GridTooCoarse`` when the internal
    error estimate exceeds ``spec.tol``.
    """
    return _slab_quadrature(ctx, p, T, spec, None, "quadrature")


def grad_lp_norm_quadrature(ctx: KernelContext, i: int, p: float, T: float,
                            spec: QuadratureSpec = QuadratureSpec()) -> LpReport:
    """``||D_i K||_p`` by the same slab quadrature (finite for ``p < p1``)."""
    if not 0 <= i < ctx.s.m0:
        raise ExponentOutOfRange(f"derivative index {i} outside the first block of size {ctx.s.m0}")
    return _slab_quadrature(ctx, p, T, spec, i, "quadrature")
