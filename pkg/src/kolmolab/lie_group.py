"""Homogeneous Lie group attached to a block-nilpotent drift matrix.

The drift matrix ``B`` is assembled from a chain of blocks ``B_1, ..., B_kappa``
with ``B_j`` of shape ``(m_j, m_{j-1})`` and full row rank, placed on the
sub-diagonal of an ``N x N`` matrix (``N = m_0 + ... + m_kappa``).  Everything
downstream -- the translation group, the anisotropic dilations, the covariance
of the attached Gaussian kernel -- is a finite polynomial in ``B`` because the
chain makes ``B`` nilpotent of step ``kappa + 1``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    MonotonicityViolation,
    NonPositiveScale,
    NonPositiveTime,
    RankDeficient,
    ShapeMismatch,
)

__all__ = [
    "BlockSpec",
    "StructureMatrix",
    "GroupElement",
    "validate_structure",
    "structure_from_json",
    "exp_neg_tB",
    "dilation",
    "covariance",
    "a0_matrix",
    "group_op",
    "group_inverse",
    "identity_element",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class BlockSpec:
    """Raw block data: ``m0`` and the chain ``blocks[j] ~ B_{j+1}``."""

    m0: int
    blocks: tuple = ()

    def to_json(self) -> str:
        return json.dumps(
            {"m0": self.m0, "blocks": [np.asarray(b).tolist() for b in self.blocks]}
        )

    @classmethod
    def from_json(cls, text: str) -> "BlockSpec":
        raw = json.loads(text)
        unknown = set(raw) - {"m0", "blocks"}
        if unknown:
            raise ShapeMismatch(f"unknown keys in structure document: {sorted(unknown)}")
        return cls(m0=int(raw["m0"]), blocks=tuple(np.asarray(b, dtype=float) for b in raw.get("blocks", [])))


@dataclass(frozen=True)
class StructureMatrix:
    """Validated structure: the full drift matrix plus derived dimensions.

    Attributes
    ----------
    B : ndarray
        The ``N x N`` drift matrix (read-only).
    dims : tuple of int
        Block row counts ``(m_0, m_1, ..., m_kappa)``.
    N : int
        Ambient spatial dimension, ``sum(dims)``.
    Q : int
        Homogeneous dimension ``m_0 + 3 m_1 + ... + (2 kappa + 1) m_kappa``.
    kappa : int
        Number of chain blocks (nilpotency step minus one).
    """

    B: np.ndarray
    dims: tuple
    spec: BlockSpec = field(repr=False)

    @property
    def N(self) -> int:
        return int(sum(self.dims))

    @property
    def Q(self) -> int:
        return int(sum((2 * j + 1) * m for j, m in enumerate(self.dims)))

    @property
    def kappa(self) -> int:
        return len(self.dims) - 1

    @property
    def m0(self) -> int:
        return int(self.dims[0])

    def to_json(self) -> str:
        return self.spec.to_json()


def validate_structure(spec: BlockSpec, rank_rtol: float = 1e-10) -> StructureMatrix:
    """Check the chain conditions and assemble the drift matrix.

    Each block must have shape ``(m_j, m_{j-1})`` with ``m_j <= m_{j-1}`` and
    full row rank; a block is declared rank deficient when its smallest
    singular value falls below ``rank_rtol`` times the largest.

    Raises
    ------
    ShapeMismatch, MonotonicityViolation, RankDeficient
    """
    if int(spec.m0) < 1:
        raise ShapeMismatch(f"m0 must be a positive integer, got {spec.m0}")
    dims = [int(spec.m0)]
    blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in spec.blocks]
    for j, b in enumerate(blocks, start=1):
        if b.ndim != 2:
            raise ShapeMismatch(f"block {j} is not a matrix")
        mj, prev = b.shape
        if prev != dims[-1]:
            raise ShapeMismatch(
                f"block {j} has {prev} columns, expected {dims[-1]}"
            )
        if mj < 1 or mj > dims[-1]:
            raise MonotonicityViolation(
                f"block {j} has {mj} rows; row counts must satisfy 1 <= m_j <= m_(j-1)"
            )
        sv = np.linalg.svd(b, compute_uv=False)
        if sv[-1] < rank_rtol * max(sv[0], np.finfo(float).tiny):
            raise RankDeficient(f"block {j} is rank deficient (singular values {sv})")
        dims.append(mj)

    n = sum(dims)
    B = np.zeros((n, n))
    row = dims[0]
    col = 0
    for j, b in enumerate(blocks, start=1):
        B[row : row + dims[j], col : col + dims[j - 1]] = b
        col += dims[j - 1]
        row += dims[j]
    return StructureMatrix(B=_frozen(B), dims=tuple(dims), spec=spec)


def structure_from_json(text: str, rank_rtol: float = 1e-10) -> StructureMatrix:
    return validate_structure(BlockSpec.from_json(text), rank_rtol=rank_rtol)


@dataclass(frozen=True)
class GroupElement:
    """A point ``(x, t)`` of the translation group."""

    x: np.ndarray
    t: float

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen(np.atleast_1d(self.x)))
        object.__setattr__(self, "t", float(self.t))


def exp_neg_tB(s: StructureMatrix, t: float) -> np.ndarray:
    """Matrix exponential ``E(t) = exp(-t B)`` via the terminating series.

    ``B`` is nilpotent of step ``kappa + 1``, so the series has exactly
    ``kappa + 1`` terms and the result is a polynomial in ``t``.
    """
    n = s.N
    out = np.eye(n)
    term = np.eye(n)
    for j in range(1, s.kappa + 1):
        term = term @ (-t * s.B) / j
        out = out + term
    return out


def dilation(s: StructureMatrix, r: float) -> np.ndarray:
    """Anisotropic dilation matrix: block ``j`` scales by ``r^(2j+1)``."""
    if r <= 0:
        raise NonPositiveScale(f"dilation scale must be positive, got {r}")
    diag = np.concatenate(
        [np.full(m, float(r) ** (2 * j + 1)) for j, m in enumerate(s.dims)]
    )
    return np.diag(diag)


def a0_matrix(s: StructureMatrix) -> np.ndarray:
    """Projection ``diag(I_{m0}, 0)`` selecting the diffusive directions."""
    a0 = np.zeros((s.N, s.N))
    a0[: s.m0, : s.m0] = np.eye(s.m0)
    return a0


def covariance(s: StructureMatrix, t: float) -> np.ndarray:
    """Covariance matrix ``C(t) = integral_0^t E(s) A0 E(s)^T ds``.

    The integrand is a matrix polynomial of degree ``2 kappa`` in the
    integration variable, so the integral is evaluated exactly:

        C(t) = sum_{j,k=0}^{kappa} (-1)^(j+k) t^(j+k+1) / ((j+k+1) j! k!)
               * B^j A0 (B^T)^k

    Raises ``NonPositiveTime`` for ``t <= 0``.
    """
    if t <= 0:
        raise NonPositiveTime(f"covariance requires t > 0, got {t}")
    a0 = a0_matrix(s)
    powers = [np.eye(s.N)]
    for _ in range(s.kappa):
        powers.append(powers[-1] @ s.B)
    fact = [float(math.factorial(j)) for j in range(s.kappa + 1)]
    out = np.zeros((s.N, s.N))
    for j in range(s.kappa + 1):
        left = powers[j] @ a0
        for k in range(s.kappa + 1):
            coef = (-1.0) ** (j + k) * float(t) ** (j + k + 1) / ((j + k + 1) * fact[j] * fact[k])
            out += coef * (left @ powers[k].T)
    return 0.5 * (out + out.T)


def group_op(a: GroupElement, b: GroupElement, s: StructureMatrix) -> GroupElement:
    """Group law ``a o b = (b.x + E(b.t) a.x, a.t + b.t)``."""
    if a.x.shape != (s.N,) or b.x.shape != (s.N,):
        raise ShapeMismatch(
            f"group elements must have spatial dimension {s.N}, got {a.x.shape} and {b.x.shape}"
        )
    return GroupElement(x=b.x + exp_neg_tB(s, b.t) @ a.x, t=a.t + b.t)


def group_inverse(a: GroupElement, s: StructureMatrix) -> GroupElement:
    """Inverse ``(x, t)^{-1} = (-E(-t) x, -t)``."""
    if a.x.shape != (s.N,):
        raise ShapeMismatch(f"expected spatial dimension {s.N}, got {a.x.shape}")
    return GroupElement(x=-(exp_neg_tB(s, -a.t) @ a.x), t=-a.t)


def identity_element(s: StructureMatrix) -> GroupElement:
    return GroupElement(x=np.zeros(s.N), t=0.0)
