"""Monte Carlo validation of the kernel by direct simulation.

Read as a probability density in ``x``, the kernel at time ``t`` started from
``y`` is the Gaussian law with mean ``E(t) y`` and covariance ``2 C(t)``:
matching its exponent ``-<C(t)^{-1} x, x>/4`` against the Gaussian form
``-<Sigma^{-1} x, x>/2`` forces ``Sigma = 2 C(t)``.  That law is the time-t
marginal of the linear degenerate diffusion

    dZ = -B Z ds + sqrt(2) dW,    W Brownian in the first m0 coordinates,

because the mean solves m' = -B m (hence ``m(t) = E(t) y``) and the covariance
solves S' = -B S - S B^T + 2 A0, whose solution is ``2 C(t)`` by the variation
of constants formula.  The determinant identity

    det 2C(t) = 2^N t^Q det C(1)

ties the sampled covariance back to the kernel prefactor and guards this
correspondence; tests check it independently of any sampling.

Two samplers are provided: an exact one (a single Gaussian draw through a
symmetric factorization of ``2 C(t)``) and an Euler-Maruyama discretization of
the dynamics whose mean bias is first order in the step.  Exactness of the
first makes it the oracle for the second.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import BadParameters, FactorizationFailure, NonPositiveTime
from .group_conv import GridField
from .kernel import KernelContext, eval_K
from .lie_group import StructureMatrix, covariance, exp_neg_tB

__all__ = [
    "SampleBatch",
    "exact_sample",
    "euler_maruyama",
    "DensityReport",
    "density_error",
    "covariance_factor",
]


@dataclass(frozen=True)
class SampleBatch:
    """Reproducible draws of the diffusion at one time.

    ``points`` has one row per path.  Identical ``seed`` + ``method`` +
    parameters reproduce the batch bitwise: every draw comes from a
    counter-based generator keyed by the seed, with row ``i`` of the noise
    block serving as path ``i``'s substream, so no scheduling order is
    involved anywhere.
    """

    points: np.ndarray
    t: float
    start: np.ndarray
    seed: int
    method: str

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2:
            raise BadParameters("points must be a (n, N) array")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def mean(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def cov(self) -> np.ndarray:
        return np.cov(self.points, rowvar=False, bias=False)

    def to_csv(self, path) -> None:
        """One row per sample, columns z1..zN, full float precision."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"z{d + 1}" for d in range(self.points.shape[1])])
            for row in self.points:
                writer.writerow([f"{v:.17g}" for v in row])

    def to_histogram(self, box, shape) -> GridField:
        """Empirical density binned on a regular grid, as a one-slice field."""
        edges = [np.linspace(lo, hi, n + 1) for (lo, hi), n in zip(box, shape)]
        counts, _ = np.histogramdd(self.points, bins=edges)
        cell = float(np.prod([(hi - lo) / n for (lo, hi), n in zip(box, shape)]))
        density = counts / (self.n * cell)
        centers_box = tuple(
            (lo + 0.5 * (hi - lo) / n, hi - 0.5 * (hi - lo) / n)
            for (lo, hi), n in zip(box, shape)
        )
        return GridField(box=centers_box, t_range=(self.t, self.t),
                         values=density[..., None])


def _philox(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


def covariance_factor(s: StructureMatrix, t: float) -> np.ndarray:
    """Symmetric factor L with L L^T = 2C(t), by eigendecomposition.

    Eigendecomposition rather than Cholesky: for small t the covariance is
    nearly degenerate across the blocks (widths scale like t^{j+1/2}), and the
    symmetric square root stays well-defined down to the last representable
    scale where a Cholesky pivot may fail.
    """
    sigma = 2.0 * covariance(s, t)
    w, V = np.linalg.eigh(sigma)
    if w[0] < -1e-12 * max(w[-1], 1.0):
        raise FactorizationFailure(f"covariance at t={t} has eigenvalues {w}")
    return V * np.sqrt(np.clip(w, 0.0, None))


def exact_sample(ctx: KernelContext, start, t: float, n: int, seed: int) -> SampleBatch:
    """Draw n paths of the diffusion at time t from its exact Gaussian law."""
    if t <= 0:
        raise NonPositiveTime(f"sampling time must be positive, got {t}")
    if n < 1:
        raise BadParameters(f"need at least one sample, got n={n}")
    s = ctx.s
    start = np.asarray(start, dtype=float)
    if start.shape != (s.N,):
        raise BadParameters(f"start must be an N-vector, got shape {start.shape}")
    L = covariance_factor(s, t)
    xi = _philox(seed).standard_normal((n, s.N))
    pts = exp_neg_tB(s, t) @ start + xi @ L.T
    return SampleBatch(points=pts, t=float(t), start=start, seed=int(seed),
                       method="exact")


def euler_maruyama(s: StructureMatrix, start, t: float, steps: int, n: int,
                   seed: int) -> SampleBatch:
    """Simulate dZ = -BZ ds + sqrt(2) dW with explicit first-order stepping.

    Noise enters only the first m0 coordinates; the remaining ones move by
    transport alone, exactly as in the continuum dynamics.  The deterministic
    mean bias of the scheme is O(dt): the exact one-step mean factor is
    e^{-dt B} while the scheme applies I - dt B.
    """
    if t <= 0:
        raise NonPositiveTime(f"final time must be positive, got {t}")
    if steps < 1:
        raise BadParameters(f"need at least one step, got {steps}")
    if n < 1:
        raise BadParameters(f"need at least one sample, got n={n}")
    start = np.asarray(start, dtype=float)
    if start.shape != (s.N,):
        raise BadParameters(f"start must be an N-vector, got shape {start.shape}")
    ds = t / steps
    kick = np.sqrt(2.0 * ds)
    xi = _philox(seed).standard_normal((steps, n, s.m0))
    z = np.broadcast_to(start, (n, s.N)).copy()
    step_mat = np.eye(s.N) - ds * s.B
    for k in range(steps):
        z = z @ step_mat.T
        z[:, : s.m0] += kick * xi[k]
    return SampleBatch(points=z, t=float(t), start=start, seed=int(seed),
                       method=f"euler_maruyama(dt={ds:.17g})")


@dataclass(frozen=True)
class DensityReport:
    """Histogram L1 distance plus per-marginal Kolmogorov-Smirnov statistics."""

    l1_distance: float
    ks_stats: tuple
    ks_critical_95: float
    n: int
    bins: int

    @property
    def ks_passed(self) -> bool:
        return all(stat < self.ks_critical_95 for stat in self.ks_stats)


def density_error(batch: SampleBatch, ctx: KernelContext, bins: int = 24,
                  half_widths: float = 4.0) -> DensityReport:
    """Compare a batch against the kernel law it claims to follow.

    The L1 part bins the recentered samples ``Z - E(t) start`` on a regular
    box covering ``half_widths`` marginal standard deviations and integrates
    the absolute density mismatch against the cell-averaged kernel (midpoint
    cell average).  The KS part tests each marginal of the recentered batch
    against the zero-mean Gaussian with variance ``(2C(t))_dd``; marginals of
    a Gaussian law are again Gaussian, so this is an exact-distribution test.
    """
    from scipy import stats

    if batch.n < 2:
        raise BadParameters("density comparison needs at least two samples")
    s = ctx.s
    sigma = 2.0 * covariance(s, batch.t)
    stds = np.sqrt(np.diag(sigma))
    centered = batch.points - exp_neg_tB(s, batch.t) @ batch.start
    box = [(-half_widths * sd, half_widths * sd) for sd in stds]
    edges = [np.linspace(lo, hi, bins + 1) for lo, hi in box]
    counts, _ = np.histogramdd(centered, bins=edges)
    emp_mass = counts / batch.n
    centers = [0.5 * (e[1:] + e[:-1]) for e in edges]
    mesh = np.meshgrid(*centers, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    cell = float(np.prod([(hi - lo) / bins for lo, hi in box]))
    model_mass = eval_K(ctx, pts, batch.t).reshape(emp_mass.shape) * cell
    l1 = float(np.sum(np.abs(emp_mass - model_mass)))
    ks = tuple(
        float(stats.kstest(centered[:, d], "norm", args=(0.0, stds[d])).statistic)
        for d in range(s.N)
    )
    return DensityReport(
        l1_distance=l1,
        ks_stats=ks,
        ks_critical_95=1.358 / np.sqrt(batch.n),
        n=batch.n,
        bins=bins,
    )
