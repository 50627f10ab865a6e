"""Group convolution on grids, Young/embedding checks, Cauchy representation.

Fields are samples on a uniform tensor grid over ``box x (t0, T)`` extended by
zero outside.  The convolution

    (f * g)(x, t) = int_0^t int f(x - E(t-s) y, t-s) g(y, s) dy ds

is evaluated on g's own grid.  When ``f`` is one of the kernel closures the
inner spatial integral at lag ``tau = t - s`` is a Gaussian smoothing of the
source slice evaluated at a sheared point, computed exactly in Fourier space
(see ``_SpectralSlabs``); the outer time integral is a trapezoid over the
shared slice grid whose endpoint values get their continuum limits and whose
leading endpoint error is removed by explicit end corrections.  Sampled left
factors fall back to direct quadrature with multilinear interpolation.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ExponentMismatch,
    ExponentOutOfRange,
    IncompatibleGrids,
    NonPositiveTime,
    ShapeMismatch,
)
from .kernel import (
    KernelContext,
    grad_lp_norm_quadrature,
    lp_norm_closed_form,
    p_kernel_cutoff,
    p_gradient_cutoff,
)
from .lie_group import GroupElement, StructureMatrix, dilation, exp_neg_tB, covariance

__all__ = [
    "GridField",
    "KernelClosure",
    "KernelGradient",
    "convolve",
    "lp_norm",
    "YoungReport",
    "young_check",
    "EmbeddingReport",
    "embedding_l1",
    "embedding_grad",
    "embedding_l2_ratio",
    "l2_target_exponent",
    "solve_cauchy",
    "shift_field",
    "random_smooth_field",
]

_MAGIC = b"KLGF1\n"


@dataclass(frozen=True)
class GridField:
    """Uniform grid samples over ``box x (t0, T)``, zero outside.

    ``values`` has shape ``(*spatial_shape, nt)`` with nodes at the box
    endpoints inclusive; the time axis likewise includes both endpoints
    (a single-slice field is allowed and carries unit time weight).
    """

    box: tuple
    t_range: tuple
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        if v.ndim != len(box) + 1:
            raise ShapeMismatch(
                f"values of rank {v.ndim} do not match {len(box)} spatial axes plus time"
            )
        for (lo, hi), n in zip(box, v.shape):
            if hi <= lo or n < 2:
                raise ShapeMismatch("each spatial axis needs hi > lo and >= 2 nodes")
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "t_range", (float(self.t_range[0]), float(self.t_range[1])))
        object.__setattr__(self, "values", v)

    # -- geometry ------------------------------------------------------------

    @property
    def n_dim(self) -> int:
        return len(self.box)

    @property
    def nt(self) -> int:
        return self.values.shape[-1]

    @property
    def spacings(self) -> np.ndarray:
        return np.array([(hi - lo) / (n - 1) for (lo, hi), n in zip(self.box, self.values.shape)])

    @property
    def dt(self) -> float:
        return (self.t_range[1] - self.t_range[0]) / (self.nt - 1) if self.nt > 1 else 0.0

    @property
    def times(self) -> np.ndarray:
        return self.t_range[0] + self.dt * np.arange(self.nt) if self.nt > 1 else np.array([self.t_range[0]])

    @property
    def cell_volume(self) -> float:
        dt_eff = self.dt if self.nt > 1 else 1.0
        return float(np.prod(self.spacings)) * dt_eff

    def axis_coords(self, i: int) -> np.ndarray:
        lo, hi = self.box[i]
        return np.linspace(lo, hi, self.values.shape[i])

    def spatial_nodes(self) -> np.ndarray:
        """All spatial nodes as a flat ``(n_nodes, N)`` array in C order."""
        mesh = np.meshgrid(*[self.axis_coords(i) for i in range(self.n_dim)], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    # -- construction ----------------------------------------------------------

    @classmethod
    def from_function(cls, box, t_range, shape, fn) -> "GridField":
        """Sample ``fn(*coords, t)`` on the grid (vectorized per time slice)."""
        box = tuple(box)
        n_spatial = tuple(shape[:-1])
        nt = shape[-1]
        axes = [np.linspace(lo, hi, n) for (lo, hi), n in zip(box, n_spatial)]
        mesh = np.meshgrid(*axes, indexing="ij")
        t0, T = t_range
        times = np.linspace(t0, T, nt) if nt > 1 else np.array([t0])
        vals = np.empty(n_spatial + (nt,))
        for j, t in enumerate(times):
            vals[..., j] = np.broadcast_to(fn(*mesh, t), n_spatial)
        return cls(box=box, t_range=(t0, T), values=vals)

    def with_values(self, values: np.ndarray) -> "GridField":
        return GridField(box=self.box, t_range=self.t_range, values=values)

    # -- sampling --------------------------------------------------------------

    def sample(self, pts: np.ndarray, ts) -> np.ndarray:
        """Multilinear interpolation at spatial points and times, zero outside."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ts = np.broadcast_to(np.asarray(ts, dtype=float), pts.shape[:-1])
        coords = [pts[..., d] for d in range(self.n_dim)] + [ts]
        los = [lo for lo, _ in self.box] + [self.t_range[0]]
        steps = list(self.spacings) + [self.dt]
        return _multilinear(self.values, los, steps, coords)

    # -- container -------------------------------------------------------------

    def save(self, path) -> None:
        header = json.dumps(
            {
                "box": [list(b) for b in self.box],
                "t_range": list(self.t_range),
                "shape": list(self.values.shape),
                "dtype": "<f8",
            }
        ).encode()
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "GridField":
        with open(path, "rb") as fh:
            if fh.read(len(_MAGIC)) != _MAGIC:
                raise ShapeMismatch(f"{path} is not a grid-field container")
            (hlen,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(hlen).decode())
            shape = tuple(header["shape"])
            data = np.frombuffer(fh.read(), dtype="<f8")
        if data.size != int(np.prod(shape)):
            raise ShapeMismatch("container payload does not match declared shape")
        return cls(
            box=tuple(tuple(b) for b in header["box"]),
            t_range=tuple(header["t_range"]),
            values=data.reshape(shape).copy(),
        )

    def to_csv(self, path) -> None:
        n = self.n_dim
        cols = [f"x{i+1}" for i in range(n)] + ["t", "value"]
        nodes = self.spatial_nodes()
        with open(path, "w") as fh:
            fh.write(",".join(cols) + "\n")
            for j, t in enumerate(self.times):
                slab = self.values[..., j].ravel()
                for node, v in zip(nodes, slab):
                    fh.write(",".join(f"{c:.17g}" for c in node) + f",{t:.17g},{v:.17g}\n")


def _multilinear(values: np.ndarray, los, steps, coords) -> np.ndarray:
    """Multilinear interpolation on a uniform grid with zero extension.

    Axes of size 1 are treated as constant (no interpolation along them).
    """
    shape = np.broadcast(*coords).shape
    out = np.zeros(shape)
    inside = np.ones(shape, dtype=bool)
    idx, frac, active = [], [], []
    for d, c in enumerate(coords):
        n = values.shape[d]
        if n == 1:
            idx.append(np.zeros(shape, dtype=int))
            frac.append(np.zeros(shape))
            active.append(False)
            continue
        g = (np.asarray(c, dtype=float) - los[d]) / steps[d]
        inside &= (g >= -1e-12) & (g <= n - 1 + 1e-12)
        i0 = np.clip(np.floor(g).astype(int), 0, n - 2)
        idx.append(i0)
        frac.append(np.clip(g - i0, 0.0, 1.0))
        active.append(True)
    n_active = sum(active)
    for corner in range(2 ** n_active):
        w = np.ones(shape)
        ii = []
        bit_pos = 0
        for d in range(len(coords)):
            if not active[d]:
                ii.append(idx[d])
                continue
            bit = (corner >> bit_pos) & 1
            bit_pos += 1
            w = w * (frac[d] if bit else (1.0 - frac[d]))
            ii.append(idx[d] + bit)
        out += w * values[tuple(ii)]
    return np.where(inside, out, 0.0)


# -- kernel closures -----------------------------------------------------------


@dataclass(frozen=True)
class KernelClosure:
    """The kernel itself as the left factor of a convolution."""

    ctx: KernelContext


@dataclass(frozen=True)
class KernelGradient:
    """First-block derivative ``D_i K`` as the left factor of a convolution."""

    ctx: KernelContext
    i: int

    def __post_init__(self):
        if not 0 <= self.i < self.ctx.s.m0:
            raise ExponentOutOfRange(
                f"derivative index {self.i} outside the first block of size {self.ctx.s.m0}"
            )


@dataclass(frozen=True)
class _FlowedGradient(KernelGradient):
    """Derivative of K along the drift-transported frame ``E(tau) e_i``.

    Integrating ``K * (D_i f)`` by parts moves the derivative onto the kernel
    as ``sum_d E(tau)_{d,i} D_d K``, not as the frozen-frame ``D_i K``; the two
    differ because ``D_i`` does not commute with the transport term of the
    operator.  This is the left factor that makes the source representation
    solve the equation pointwise, so it is what ``solve_cauchy`` uses.
    """


def _diff_axis(slab: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Centered first difference along one axis, one-sided at the edges."""
    out = np.empty_like(slab)
    sl = [slice(None)] * slab.ndim

    def at(i):
        sl2 = list(sl)
        sl2[axis] = i
        return tuple(sl2)

    out[at(slice(1, -1))] = (slab[at(slice(2, None))] - slab[at(slice(0, -2))]) / (2 * h)
    out[at(0)] = (slab[at(1)] - slab[at(0)]) / h
    out[at(-1)] = (slab[at(-1)] - slab[at(-2)]) / h
    return out


def _diff_axis4(slab: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Fourth-order centered first difference, degrading near the edges."""
    out = np.empty_like(slab)
    sl = [slice(None)] * slab.ndim

    def at(i):
        sl2 = list(sl)
        sl2[axis] = i
        return tuple(sl2)

    out[at(slice(2, -2))] = (-slab[at(slice(4, None))] + 8.0 * slab[at(slice(3, -1))]
                             - 8.0 * slab[at(slice(1, -3))]
                             + slab[at(slice(0, -4))]) / (12.0 * h)
    out[at(1)] = (slab[at(2)] - slab[at(0)]) / (2.0 * h)
    out[at(-2)] = (slab[at(-1)] - slab[at(-3)]) / (2.0 * h)
    out[at(0)] = (slab[at(1)] - slab[at(0)]) / h
    out[at(-1)] = (slab[at(-1)] - slab[at(-2)]) / h
    return out


def _limit_slabs(closure, g: GridField) -> np.ndarray:
    """Coincidence-time integrand: ``g`` itself for K, ``D_i g`` for D_i K.

    The derivative uses the wide stencil: this endpoint enters with an O(dt)
    weight, so a low-order difference here would leak an h^2 dt error into
    otherwise spectrally accurate inner integrals.
    """
    if isinstance(closure, KernelClosure):
        return g.values
    return _diff_axis4(g.values, closure.i, g.spacings[closure.i])


def _second_diff(slab: np.ndarray, axis: int, h: float) -> np.ndarray:
    """Centered second difference along one axis, one-sided at the edges."""
    out = np.empty_like(slab)
    sl = [slice(None)] * slab.ndim

    def at(i):
        sl2 = list(sl)
        sl2[axis] = i
        return tuple(sl2)

    out[at(slice(1, -1))] = (slab[at(slice(2, None))] - 2.0 * slab[at(slice(1, -1))]
                             + slab[at(slice(0, -2))]) / (h * h)
    out[at(0)] = out[at(1)]
    out[at(-1)] = out[at(-2)]
    return out


def _endpoint_rate(closure, g: GridField, s: StructureMatrix) -> np.ndarray:
    """Lag derivative of the inner time integrand at the coincidence endpoint.

    The trapezoid's leading error over [0, t] is (dt^2/12)(F'(t) - F'(0)), and
    F' at lag zero is by far the larger of the two: the smoothing width
    collapses there, so the integrand turns over on the scale of the data's own
    derivatives.  At that endpoint the rate reduces to a local differential
    expression of the coincidence factor L (the source itself for the plain
    kernel, its i-th derivative for the gradient kernels):

        F'(0) = lap_0 L + <Bx, DL> - dL/dt   (+ sum_d B[d,i] D_d g, frozen frame)

    with lap_0 the sum of second derivatives over the diffusion block.  All
    terms are centered differences on the grid itself, so the correction stays
    local and inherits the data's smoothness.
    """
    lim = _limit_slabs(closure, g)
    rate = np.zeros_like(lim)
    for d in range(s.m0):
        rate += _second_diff(lim, d, g.spacings[d])
    coords = np.meshgrid(*[g.axis_coords(d) for d in range(s.N)], indexing="ij")
    for d in range(s.N):
        if not np.any(s.B[d]):
            continue
        bx_d = sum(s.B[d, e] * coords[e] for e in range(s.N) if s.B[d, e])
        rate += bx_d[..., None] * _diff_axis(lim, d, g.spacings[d])
    if isinstance(closure, KernelGradient) and not isinstance(closure, _FlowedGradient):
        for d in range(s.N):
            if s.B[d, closure.i]:
                rate += s.B[d, closure.i] * _diff_axis(g.values, d, g.spacings[d])
    rate -= np.gradient(lim, g.dt, axis=-1, edge_order=2)
    return rate


class _SpectralSlabs:
    """Fourier-side evaluation of the kernel-closure inner integrals.

    For a lag tau the inner spatial integral is a Gaussian smoothing of the
    source slice followed by a point evaluation:

        (f * g)(x, ., tau-part) = (N(0, Sigma_y) conv g)(E(-tau) x),
        Sigma_y = E(-tau) 2C(tau) E(-tau)^T,

    and the gradient closure is a directional derivative of the same smoothed
    field.  Smoothing a zero-padded slab by multiplying its DFT with the
    Gaussian transfer function treats the kernel factor exactly at every lag,
    including lags whose kernel width falls below the grid spacing, where a
    plain lattice sum over g's nodes would miss the kernel mass entirely.
    The smoothed slab is upsampled spectrally and then sampled at the query
    points with cubic B-splines, so the residual interpolation error is both
    tiny and smooth in x.
    """

    def __init__(self, g: GridField, s: StructureMatrix, upsample: int = 2):
        import scipy.fft as sfft

        self.g = g
        self.s = s
        self.upsample = upsample
        nshape = g.values.shape[:-1]
        spacings = g.spacings
        # padding per axis: worst-case query excursion beyond the box plus
        # the widest smoothing radius over all lags, plus a spline margin
        corners = np.array(
            [[lo, hi] for lo, hi in g.box]
        )
        corner_pts = np.stack(np.meshgrid(*corners, indexing="ij"), axis=-1).reshape(-1, s.N)
        excess = np.zeros(s.N)
        widest = np.zeros(s.N)
        for lag in range(1, g.nt):
            tau = lag * g.dt
            e_minus = exp_neg_tB(s, -tau)
            mapped = corner_pts @ e_minus.T
            for d in range(s.N):
                lo, hi = g.box[d]
                excess[d] = max(excess[d], lo - mapped[:, d].min(),
                                mapped[:, d].max() - hi, 0.0)
            sigma_y = 2.0 * e_minus @ covariance(s, tau) @ e_minus.T
            widest = np.maximum(widest, np.sqrt(np.diag(sigma_y)))
        pads = [int(np.ceil((excess[d] + 5.0 * widest[d]) / spacings[d])) + 4
                for d in range(s.N)]
        padded_shape = tuple(sfft.next_fast_len(n + 2 * p)
                             for n, p in zip(nshape, pads))
        padded = np.zeros(padded_shape + (g.nt,))
        padded[tuple(slice(p, p + n) for n, p in zip(nshape, pads))] = g.values
        self._sfft = sfft
        self.padded_shape = padded_shape
        self.ghat = sfft.rfftn(padded, axes=tuple(range(s.N)))
        self.freqs = [2.0 * np.pi * (sfft.rfftfreq(padded_shape[d], d=spacings[d])
                                     if d == s.N - 1 else
                                     sfft.fftfreq(padded_shape[d], d=spacings[d]))
                      for d in range(s.N)]
        self.fine_shape = tuple(upsample * n for n in padded_shape)
        self.fine_los = [lo - p * h for (lo, _), p, h in zip(g.box, pads, spacings)]
        self.fine_steps = [h / upsample for h in spacings]

    def _upsampled(self, spec: np.ndarray) -> np.ndarray:
        """Inverse transform onto the spectrally upsampled fine grid."""
        ndim = self.s.N
        fine_spec_shape = self.fine_shape[:-1] + (self.fine_shape[-1] // 2 + 1,)
        zhat = np.zeros(fine_spec_shape + spec.shape[ndim:], dtype=complex)
        index_lists = []
        for d in range(ndim - 1):
            n = self.padded_shape[d]
            half = (n + 1) // 2
            index_lists.append(list(range(half))
                               + list(range(self.fine_shape[d] - (n - half),
                                            self.fine_shape[d])))
        index_lists.append(list(range(spec.shape[ndim - 1])))
        for extra in spec.shape[ndim:]:
            index_lists.append(list(range(extra)))
        zhat[np.ix_(*index_lists)] = spec
        scale = np.prod(self.fine_shape) / np.prod(self.padded_shape)
        return self._sfft.irfftn(zhat * scale, s=self.fine_shape,
                                 axes=tuple(range(ndim)))

    def lag_slabs(self, tau: float, b_cols: np.ndarray, grad_i: int | None,
                  flowed: bool = False) -> "_FineSlabs":
        """Smoothed (optionally differentiated) source slices for one lag."""
        from scipy.ndimage import spline_filter1d

        s = self.s
        e_minus = exp_neg_tB(s, -tau)
        sigma_y = 2.0 * e_minus @ covariance(s, tau) @ e_minus.T
        grids = np.meshgrid(*self.freqs, indexing="ij")
        quad = np.zeros(grids[0].shape)
        for a in range(s.N):
            for b in range(s.N):
                quad += sigma_y[a, b] * grids[a] * grids[b]
        transfer = np.exp(-0.5 * quad)
        if grad_i is not None:
            if flowed:
                # E(tau) e_i frame: the sheared-coordinate derivative is direct
                direction = grids[grad_i]
            else:
                direction = sum(e_minus[d, grad_i] * grids[d] for d in range(s.N))
            transfer = transfer * (1j * direction)
        spec = self.ghat[..., b_cols] * transfer[..., None]
        fine = self._upsampled(spec)
        for d in range(s.N):
            fine = spline_filter1d(fine, order=3, axis=d)
        return _FineSlabs(fine, self.fine_los, self.fine_steps)

    def far_rate(self, tau: float, grad_i: int | None, flowed: bool,
                 queries: np.ndarray) -> np.ndarray:
        """Lag derivative of the inner integrand at the far endpoint tau = t.

        The counterpart of ``_endpoint_rate`` for the other trapezoid end,
        where the source sits at the slab's first slice.  Differentiating the
        smoothed evaluation in the lag gives three contributions: the widening
        of the Gaussian (a quadratic-form multiplier with dSigma/dtau), the
        motion of the sheared evaluation point (a drift-weighted gradient),
        and the retreat of the source time (a one-sided slice difference).
        The frozen-frame gradient adds the rotation of its direction vector.
        All pieces act on the first source slice only, so this costs one
        narrow transform per lag.
        """
        from scipy.ndimage import spline_filter1d

        s = self.s
        e_minus = exp_neg_tB(s, -tau)
        sigma_y = 2.0 * e_minus @ covariance(s, tau) @ e_minus.T
        eps = 1e-6 * max(tau, 1.0)

        def sigma_at(t_):
            em = exp_neg_tB(s, -t_)
            return 2.0 * em @ covariance(s, t_) @ em.T

        dsigma = (sigma_at(tau + eps) - sigma_at(tau - eps)) / (2.0 * eps)
        grids = np.meshgrid(*self.freqs, indexing="ij")
        quad = np.zeros(grids[0].shape)
        dquad = np.zeros(grids[0].shape)
        for a in range(s.N):
            for b in range(s.N):
                quad += sigma_y[a, b] * grids[a] * grids[b]
                dquad += dsigma[a, b] * grids[a] * grids[b]
        transfer = np.exp(-0.5 * quad)
        if grad_i is not None:
            if flowed:
                direction = grids[grad_i]
            else:
                direction = sum(e_minus[d, grad_i] * grids[d] for d in range(s.N))
            transfer = transfer * (1j * direction)
        g0 = self.ghat[..., 0]
        dg0 = (self.ghat[..., 1] - self.ghat[..., 0]) / self.g.dt
        # slabs to gather: [value-like terms, one gradient slab per drift row]
        specs = [transfer * (-0.5 * dquad) * g0 - transfer * dg0]
        if grad_i is not None and not flowed:
            dframe = s.B @ e_minus  # d/dtau of e^{tau B} columns
            rot = sum(dframe[d, grad_i] * grids[d] for d in range(s.N))
            base = np.exp(-0.5 * quad)
            specs[0] = specs[0] + base * (1j * rot) * g0
        drift_rows = [d for d in range(s.N) if np.any(s.B[d])]
        for d in drift_rows:
            specs.append(transfer * (1j * grids[d]) * g0)
        fine = self._upsampled(np.stack(specs, axis=-1))
        for d in range(s.N):
            fine = spline_filter1d(fine, order=3, axis=d)
        vals = _FineSlabs(fine, self.fine_los, self.fine_steps).gather(queries)
        rate = vals[:, 0]
        bmu = queries @ s.B.T
        for j, d in enumerate(drift_rows):
            rate = rate + bmu[:, d] * vals[:, 1 + j]
        return rate


class _FineSlabs:
    """Cubic B-spline sampling over a stack of same-geometry slabs."""

    def __init__(self, coeffs: np.ndarray, los, steps):
        self.ndim = len(steps)
        self.nshape = coeffs.shape[: self.ndim]
        self.flat = coeffs.reshape(-1, *coeffs.shape[self.ndim:])
        self.los = los
        self.steps = steps

    def gather(self, pts: np.ndarray) -> np.ndarray:
        """Spline values at ``pts`` for every slab in the stack."""
        npts = pts.shape[0]
        inside = np.ones(npts, dtype=bool)
        idx, wlists = [], []
        for d in range(self.ndim):
            u = (pts[:, d] - self.los[d]) / self.steps[d]
            n = self.nshape[d]
            inside &= (u >= 1.0) & (u <= n - 2.0)
            i0 = np.clip(np.floor(u).astype(int), 1, n - 3)
            idx.append(i0)
            f = np.clip(u - i0, 0.0, 1.0)
            f2, f3 = f * f, f * f * f
            wlists.append([
                (1.0 - 3.0 * f + 3.0 * f2 - f3) / 6.0,
                (4.0 - 6.0 * f2 + 3.0 * f3) / 6.0,
                (1.0 + 3.0 * f + 3.0 * f2 - 3.0 * f3) / 6.0,
                f3 / 6.0,
            ])
        out = np.zeros((npts,) + self.flat.shape[1:])
        for corner in np.ndindex(*(4,) * self.ndim):
            w = np.ones(npts)
            flat = np.zeros(npts, dtype=int)
            for d in range(self.ndim):
                w = w * wlists[d][corner[d]]
                flat = flat * self.nshape[d] + (idx[d] + corner[d] - 1)
            out += w.reshape(npts, *([1] * (out.ndim - 1))) * self.flat[flat]
        out[~inside] = 0.0
        return out


def _field_lag_matrix(f: GridField, g: GridField, tau: float,
                      out_nodes: np.ndarray, s: StructureMatrix) -> np.ndarray:
    """Quadrature matrix for a sampled left factor at one time lag."""
    in_nodes = g.spatial_nodes()
    dvol = float(np.prod(g.spacings))
    sheared = in_nodes @ exp_neg_tB(s, tau).T
    args = out_nodes[:, None, :] - sheared[None, :, :]
    flat = args.reshape(-1, f.n_dim)
    vals = f.sample(flat, np.full(flat.shape[0], tau))
    return vals.reshape(out_nodes.shape[0], -1) * dvol


def convolve(f, g: GridField, s: StructureMatrix, *, upsample: int = 2) -> GridField:
    """Group convolution ``f * g`` evaluated on g's grid.

    ``f`` is a ``GridField`` (sampled by multilinear interpolation with zero
    extension) or one of the kernel closures, whose Gaussian factor is treated
    exactly through its Fourier transfer function at every time lag.  The
    output at time ``t`` uses only input slices at times ``<= t`` (causality).
    The time integral is a trapezoid over the shared slice grid, with the
    coincidence endpoint evaluated by its continuum limit.  ``upsample``
    controls the spectral refinement of the smoothed slices before they are
    sampled at the sheared query points.
    """
    if g.n_dim != s.N:
        raise IncompatibleGrids(f"field has {g.n_dim} spatial axes, structure needs {s.N}")
    if g.nt < 2:
        raise IncompatibleGrids("convolution needs at least two time slices")
    is_field = isinstance(f, GridField)
    if is_field:
        if f.n_dim != s.N:
            raise IncompatibleGrids(f"left field has {f.n_dim} spatial axes, structure needs {s.N}")
        if abs(f.t_range[0] - g.t_range[0]) > 1e-12:
            raise IncompatibleGrids("mismatched time ranges: fields must share the slab start")
    out_nodes = g.spatial_nodes()
    nt, dt = g.nt, g.dt
    gflat = g.values.reshape(-1, nt)
    outflat = np.zeros_like(gflat)
    spectral: _SpectralSlabs | None = None
    grad_i = None if (is_field or isinstance(f, KernelClosure)) else f.i
    flowed = isinstance(f, _FlowedGradient)

    for lag in range(nt):
        tau = lag * dt
        a_cols = np.arange(max(1, lag), nt)
        if a_cols.size == 0:
            continue
        b_cols = a_cols - lag
        # trapezoid endpoints: source slice 0 and the coincidence slice
        w = dt * np.where((b_cols == 0) | (lag == 0), 0.5, 1.0)
        if lag == 0:
            if is_field:
                mat = _field_lag_matrix(f, g, 0.0, out_nodes, s)
                outflat[:, a_cols] += w[None, :] * (mat @ gflat[:, b_cols])
            else:
                lim = _limit_slabs(f, g).reshape(-1, nt)
                outflat[:, a_cols] += w[None, :] * lim[:, a_cols]
            continue
        if is_field:
            mat = _field_lag_matrix(f, g, tau, out_nodes, s)
            outflat[:, a_cols] += w[None, :] * (mat @ gflat[:, b_cols])
            continue
        if spectral is None:
            spectral = _SpectralSlabs(g, s, upsample=upsample)
        fine = spectral.lag_slabs(tau, b_cols, grad_i, flowed)
        queries = out_nodes @ exp_neg_tB(s, -tau).T
        outflat[:, a_cols] += w[None, :] * fine.gather(queries)
        # far-end trapezoid correction for the one output whose integral
        # terminates at this lag
        far = spectral.far_rate(tau, grad_i, flowed, queries)
        outflat[:, lag] -= (dt * dt / 12.0) * far
    if spectral is not None:
        # near-end correction: the integrand rises steeply out of the
        # coincidence endpoint, so restore the (dt^2/12) F'(0) term there
        rate = _endpoint_rate(f, g, s).reshape(-1, nt)
        outflat[:, 1:] += (dt * dt / 12.0) * rate[:, 1:]
    return g.with_values(outflat.reshape(g.values.shape))


# -- norms and inequality checks -------------------------------------------------


def lp_norm(u: GridField, p: float) -> float:
    """Discrete ``L^p`` norm: ``(sum |u|^p * cell_volume)^(1/p)``."""
    if p < 1:
        raise ExponentOutOfRange(f"p must satisfy p >= 1, got {p}")
    return float(np.sum(np.abs(u.values) ** p) * u.cell_volume) ** (1.0 / p)


@dataclass(frozen=True)
class YoungReport:
    p: float
    q: float
    r: float
    ratio: float
    norm_conv: float
    norm_f: float
    norm_g: float
    tol: float

    @property
    def satisfied(self) -> bool:
        return self.ratio <= 1.0 + self.tol


def young_check(f: GridField, g: GridField, p: float, q: float, r: float,
                s: StructureMatrix, tol: float = 0.05) -> YoungReport:
    """Ratio ``||f*g||_r / (||f||_p ||g||_q)`` under ``1/p + 1/q = 1/r + 1``."""
    if abs(1.0 / p + 1.0 / q - 1.0 / r - 1.0) > 1e-12:
        raise ExponentMismatch(
            f"exponents must satisfy 1/p + 1/q = 1/r + 1, got p={p}, q={q}, r={r}"
        )
    conv = convolve(f, g, s)
    nf, ng = lp_norm(f, p), lp_norm(g, q)
    nc = lp_norm(conv, r)
    denom = nf * ng
    ratio = nc / denom if denom > 0 else 0.0
    return YoungReport(p=p, q=q, r=r, ratio=ratio, norm_conv=nc, norm_f=nf, norm_g=ng, tol=tol)


@dataclass(frozen=True)
class EmbeddingReport:
    p: float
    q: float
    lhs: float
    bound: float
    sigma: float
    tol: float

    @property
    def satisfied(self) -> bool:
        return self.lhs <= self.bound * (1.0 + self.tol)


def _target_exponent(q: float, hol: float) -> float:
    """Solve ``1/p = 1/q + 1/hol - 1``; the result must stay in [1, inf)."""
    inv = 1.0 / q + 1.0 / hol - 1.0
    if inv <= 0 or inv > 1:
        raise ExponentOutOfRange(f"no admissible p for q={q} against exponent {hol}")
    return 1.0 / inv


def embedding_l1(u: GridField, q: float, eps0: float, ctx: KernelContext,
                 tol: float = 0.05) -> EmbeddingReport:
    """Check ``||K * u||_p <= sigma0 ||u||_q`` with ``sigma0 = ||K||_{p0-eps0}``."""
    p0 = float(p_kernel_cutoff(ctx.s))
    if not 0 < eps0 <= p0 - 1:
        raise ExponentOutOfRange(f"eps0 must lie in (0, {p0 - 1}], got {eps0}")
    hol = p0 - eps0
    p = _target_exponent(q, hol)
    sigma0 = lp_norm_closed_form(ctx, hol, u.t_range[1]).value
    lhs = lp_norm(convolve(KernelClosure(ctx), u, ctx.s), p)
    bound = sigma0 * lp_norm(u, q)
    return EmbeddingReport(p=p, q=q, lhs=lhs, bound=bound, sigma=sigma0, tol=tol)


def embedding_grad(u: GridField, q: float, eps1: float, ctx: KernelContext,
                   i: int = 0, tol: float = 0.05) -> EmbeddingReport:
    """Check ``||(D_i K) * u||_p <= sigma1 ||u||_q``, ``sigma1 = ||D_i K||_{p1-eps1}``."""
    p1 = float(p_gradient_cutoff(ctx.s))
    if not 0 < eps1 <= p1 - 1:
        raise ExponentOutOfRange(f"eps1 must lie in (0, {p1 - 1}], got {eps1}")
    hol = p1 - eps1
    p = _target_exponent(q, hol)
    sigma1 = grad_lp_norm_quadrature(ctx, i, hol, u.t_range[1]).value
    lhs = lp_norm(convolve(KernelGradient(ctx, i), u, ctx.s), p)
    bound = sigma1 * lp_norm(u, q)
    return EmbeddingReport(p=p, q=q, lhs=lhs, bound=bound, sigma=sigma1, tol=tol)


def l2_target_exponent(s: StructureMatrix, q: float, gradient: bool = False) -> float:
    """Scale-critical target: ``1/p = 1/q - 2/(Q+2)`` (or ``-1/(Q+2)``)."""
    gain = (1.0 if gradient else 2.0) / (s.Q + 2.0)
    inv = 1.0 / q - gain
    if inv <= 0:
        raise ExponentOutOfRange(f"q={q} exceeds the critical range (1/q <= {gain})")
    return 1.0 / inv


def embedding_l2_ratio(u: GridField, q: float, ctx: KernelContext) -> float:
    """Finite ratio ``||K * u||_p / ||u||_q`` at the scale-critical ``p``."""
    p = l2_target_exponent(ctx.s, q)
    denom = lp_norm(u, q)
    if denom == 0:
        return 0.0
    return lp_norm(convolve(KernelClosure(ctx), u, ctx.s), p) / denom


# -- Cauchy-problem representation ------------------------------------------------


def solve_cauchy(ctx: KernelContext, g: GridField | None, f=()) -> GridField:
    """Duhamel representation ``u = K * g + sum_i (D_i K) * f_i``.

    The gradient factors act along the drift-transported frame (equivalent to
    ``K * D_i f_i`` after integration by parts), so for smooth data the result
    satisfies the equation with source ``g + D_i f_i`` pointwise.  ``g`` may be
    None when only divergence-form data is present; each ``f_i`` may be None to
    skip that component.
    """
    f = tuple(f)
    fields = ([g] if g is not None else []) + [fi for fi in f if fi is not None]
    if not fields:
        raise IncompatibleGrids("solve_cauchy needs at least one data field")
    out = None
    if g is not None:
        out = convolve(KernelClosure(ctx), g, ctx.s)
    for i, fi in enumerate(f):
        if fi is None:
            continue
        part = convolve(_FlowedGradient(ctx, i), fi, ctx.s)
        out = part if out is None else out.with_values(out.values + part.values)
    return out


# -- utilities ---------------------------------------------------------------------


def shift_field(u: GridField, zeta: GroupElement, s: StructureMatrix) -> GridField:
    """Left translation ``z -> u(zeta^{-1} o z)`` resampled on u's grid."""
    nodes = u.spatial_nodes()
    out = np.zeros_like(u.values)
    for a, t in enumerate(u.times):
        tau = t - zeta.t
        pts = nodes - exp_neg_tB(s, tau) @ zeta.x
        out[..., a] = u.sample(pts, np.full(pts.shape[0], tau)).reshape(u.values.shape[:-1])
    return u.with_values(out)


def random_smooth_field(box, t_range, shape, rng, n_bumps: int = 2,
                        amplitude: float = 1.0) -> GridField:
    """Nonnegative smooth random field: a few Gaussian bumps with a gentle
    cosine modulation, decaying toward the box edges."""
    box = tuple(box)
    widths = np.array([(hi - lo) for lo, hi in box] + [t_range[1] - t_range[0]])
    los = np.array([lo for lo, _ in box] + [t_range[0]])

    centers = los + rng.uniform(0.25, 0.75, size=(n_bumps, len(widths))) * widths
    scales = rng.uniform(0.12, 0.25, size=(n_bumps, len(widths))) * widths
    amps = rng.uniform(0.3, 1.0, size=n_bumps) * amplitude
    freq = rng.uniform(0.5, 2.0, size=len(widths))
    phase = rng.uniform(0, 2 * np.pi)

    def fn(*coords_t):
        coords = np.broadcast_arrays(*coords_t)
        total = np.zeros_like(coords[0], dtype=float)
        for c, sc, amp in zip(centers, scales, amps):
            expo = sum(((x - ci) / si) ** 2 for x, ci, si in zip(coords, c, sc))
            total = total + amp * np.exp(-expo)
        mod = 1.0 + 0.3 * np.cos(phase + sum(f * x for f, x in zip(freq, coords)))
        return total * mod

    return GridField.from_function(box, t_range, shape, fn)
