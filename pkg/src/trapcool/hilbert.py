"""Truncated Fock-space operators and states for one vibrational mode.

Conventions used everywhere in the package:

* quadratures X = (a + a^dag)/2 and P = (a - a^dag)/(2i), so [X, P] = i/2
  away from the truncation corner and the vacuum has <X^2> = <P^2> = 1/4;
* two-level (meter) space ordered [|+>, |->] with sigma_z = diag(1, -1);
* tensor products put the vibrational mode first, the meter second.

Truncation at n_trunc keeps levels 0..n_trunc (dimension n_trunc + 1).
State constructors refuse to build a state whose untruncated tail mass
exceeds the tolerance carried by the basis spec.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, NamedTuple

import numpy as np

from .errors import DimensionMismatch, DimensionOverflow, TailTooHeavy

# Cap on the joint dimension produced by tensor(); superoperators square this.
MAX_TENSOR_DIM = 8192


@dataclass(frozen=True)
class FockBasisSpec:
    """Truncation contract: keep Fock levels 0..n_trunc.

    tail_tolerance bounds the population the untruncated state may carry
    above the cutoff before construction fails.
    """

    n_trunc: int
    tail_tolerance: float = 1e-6

    def __post_init__(self):
        if not isinstance(self.n_trunc, int) or self.n_trunc < 1:
            raise ValueError(f"n_trunc must be an integer >= 1, got {self.n_trunc!r}")
        if not (0.0 < self.tail_tolerance < 1.0):
            raise ValueError(
                f"tail_tolerance must lie in (0, 1), got {self.tail_tolerance!r}"
            )

    @property
    def dim(self) -> int:
        return self.n_trunc + 1


@dataclass(frozen=True, eq=False)
class DenseOperator:
    """Dense complex matrix on a truncated Hilbert space.

    The stored array is a read-only copy; dim is derived from its shape.
    """

    matrix: np.ndarray
    dim: int = 0

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex, copy=True)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"operator must be a square matrix, got shape {m.shape}")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "dim", m.shape[0])

    def dag(self) -> "DenseOperator":
        return DenseOperator(self.matrix.conj().T)

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def is_hermitian(self, tol: float = 1e-10) -> bool:
        return bool(np.max(np.abs(self.matrix - self.matrix.conj().T)) <= tol)

    def __matmul__(self, other):
        self._check_dim(other)
        return DenseOperator(self.matrix @ other.matrix)

    def __add__(self, other):
        self._check_dim(other)
        return DenseOperator(self.matrix + other.matrix)

    def __sub__(self, other):
        self._check_dim(other)
        return DenseOperator(self.matrix - other.matrix)

    def __mul__(self, scalar):
        return DenseOperator(self.matrix * complex(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return DenseOperator(-self.matrix)

    def _check_dim(self, other):
        if not isinstance(other, DenseOperator):
            raise TypeError(f"expected DenseOperator, got {type(other).__name__}")
        if other.dim != self.dim:
            raise DimensionMismatch(f"dimension mismatch: {self.dim} vs {other.dim}")


def identity(spec: FockBasisSpec) -> DenseOperator:
    return DenseOperator(np.eye(spec.dim))


def annihilation(spec: FockBasisSpec) -> DenseOperator:
    """Ladder lowering operator: <n-1| a |n> = sqrt(n)."""
    return DenseOperator(np.diag(np.sqrt(np.arange(1.0, spec.dim)), k=1))


def creation(spec: FockBasisSpec) -> DenseOperator:
    return DenseOperator(np.diag(np.sqrt(np.arange(1.0, spec.dim)), k=-1))


def number_op(spec: FockBasisSpec) -> DenseOperator:
    return DenseOperator(np.diag(np.arange(float(spec.dim))))


def quadrature(spec: FockBasisSpec, which: Literal["position", "momentum"]) -> DenseOperator:
    """X = (a + a^dag)/2 or P = (a - a^dag)/(2i) on the truncated ladder."""
    a = annihilation(spec).matrix
    if which == "position":
        return DenseOperator((a + a.conj().T) / 2.0)
    if which == "momentum":
        return DenseOperator((a - a.conj().T) / 2.0j)
    raise ValueError(f"which must be 'position' or 'momentum', got {which!r}")


class TwoLevelOps(NamedTuple):
    sigma_minus: DenseOperator
    sigma_plus: DenseOperator
    sigma_x: DenseOperator
    sigma_z: DenseOperator


def two_level_ops() -> TwoLevelOps:
    """Meter operators in the ordered basis [|+>, |->].

    sigma_minus = |-><+| lowers, sigma_plus = |+><-| raises,
    sigma_z = diag(1, -1).
    """
    sm = DenseOperator(np.array([[0.0, 0.0], [1.0, 0.0]]))
    sp = DenseOperator(np.array([[0.0, 1.0], [0.0, 0.0]]))
    sx = DenseOperator(np.array([[0.0, 1.0], [1.0, 0.0]]))
    sz = DenseOperator(np.array([[1.0, 0.0], [0.0, -1.0]]))
    return TwoLevelOps(sm, sp, sx, sz)


def tensor(a: DenseOperator, b: DenseOperator, max_dim: int = MAX_TENSOR_DIM) -> DenseOperator:
    """Kronecker product with the first factor on the left (vibration first)."""
    joint = a.dim * b.dim
    if joint > max_dim:
        raise DimensionOverflow(
            f"tensor product dimension {joint} exceeds the cap {max_dim}"
        )
    return DenseOperator(np.kron(a.matrix, b.matrix))


def fock_state(spec: FockBasisSpec, n: int) -> DenseOperator:
    if not 0 <= n <= spec.n_trunc:
        raise ValueError(f"Fock level {n} outside 0..{spec.n_trunc}")
    rho = np.zeros((spec.dim, spec.dim), dtype=complex)
    rho[n, n] = 1.0
    return DenseOperator(rho)


def thermal_state(spec: FockBasisSpec, nbar: float) -> DenseOperator:
    """Thermal density matrix with mean occupation nbar before truncation.

    Populations follow the geometric law p_n proportional to q^n with
    q = nbar/(nbar + 1). The untruncated tail mass above the cutoff is
    q^(n_trunc + 1); if it exceeds spec.tail_tolerance the constructor
    raises TailTooHeavy instead of silently renormalizing away a large
    chunk of the distribution.
    """
    if nbar < 0:
        raise ValueError(f"nbar must be nonnegative, got {nbar}")
    if nbar == 0:
        return fock_state(spec, 0)
    q = nbar / (nbar + 1.0)
    tail = q ** (spec.n_trunc + 1)
    if tail > spec.tail_tolerance:
        raise TailTooHeavy(
            f"thermal tail mass {tail:.6g} above n_trunc={spec.n_trunc} exceeds "
            f"tolerance {spec.tail_tolerance:.3g} for nbar={nbar}",
            tail=tail,
        )
    weights = q ** np.arange(spec.dim)
    weights /= weights.sum()
    return DenseOperator(np.diag(weights.astype(complex)))


def coherent_state(spec: FockBasisSpec, alpha: complex) -> DenseOperator:
    """Coherent state |alpha><alpha| truncated to the ladder.

    Tail mass is the Poisson tail above n_trunc at mean |alpha|^2.
    """
    mean = abs(alpha) ** 2
    # kept Poisson mass sum_{n<=N} e^-mean mean^n / n!, evaluated stably in log space
    logterms = [-mean + n * math.log(mean) - math.lgamma(n + 1) if mean > 0 else (0.0 if n == 0 else -math.inf)
                for n in range(spec.dim)]
    kept = sum(math.exp(t) for t in logterms)
    tail = max(0.0, 1.0 - kept)
    if tail > spec.tail_tolerance:
        raise TailTooHeavy(
            f"coherent tail mass {tail:.6g} above n_trunc={spec.n_trunc} exceeds "
            f"tolerance {spec.tail_tolerance:.3g} for |alpha|={abs(alpha):.4g}",
            tail=tail,
        )
    amps = np.zeros(spec.dim, dtype=complex)
    for n in range(spec.dim):
        amps[n] = math.exp(logterms[n] / 2.0) if mean > 0 else (1.0 if n == 0 else 0.0)
        if mean > 0 and alpha != 0:
            amps[n] *= (alpha / abs(alpha)) ** n
    vec = amps / np.linalg.norm(amps)
    return DenseOperator(np.outer(vec, vec.conj()))


def expectation(rho: DenseOperator, op: DenseOperator) -> complex:
    """Tr(rho op). Caller decides whether to take the real part."""
    if rho.dim != op.dim:
        raise DimensionMismatch(f"state dim {rho.dim} vs operator dim {op.dim}")
    return complex(np.trace(rho.matrix @ op.matrix))


def partial_trace(op: DenseOperator, dims: tuple[int, int], keep: int) -> DenseOperator:
    """Trace out one factor of a bipartite operator.

    dims = (d_first, d_second) with the package ordering (vibration, meter);
    keep = 0 retains the first factor, keep = 1 the second.
    """
    d1, d2 = dims
    if d1 * d2 != op.dim:
        raise DimensionMismatch(f"dims {dims} inconsistent with operator dim {op.dim}")
    if keep not in (0, 1):
        raise ValueError("keep must be 0 or 1")
    t = op.matrix.reshape(d1, d2, d1, d2)
    if keep == 0:
        return DenseOperator(np.einsum("ijkj->ik", t))
    return DenseOperator(np.einsum("ijil->jl", t))


def trace_norm(m) -> float:
    """Trace norm (sum of singular values) of a matrix or DenseOperator."""
    if isinstance(m, DenseOperator):
        m = m.matrix
    return float(np.sum(np.linalg.svd(m, compute_uv=False)))


def clip_negativity(rho: DenseOperator, floor: float = 1e-6) -> DenseOperator:
    """Zero out slightly negative eigenvalues before exporting a state.

    Eigenvalues in [-floor, 0) are clipped to zero and the state is
    renormalized. Anything below -floor indicates a real positivity
    failure and raises.
    """
    h = 0.5 * (rho.matrix + rho.matrix.conj().T)
    vals, vecs = np.linalg.eigh(h)
    if vals.min() < -floor:
        raise ValueError(
            f"state has eigenvalue {vals.min():.3e} below the clip floor -{floor:.1g}"
        )
    vals = np.clip(vals, 0.0, None)
    out = (vecs * vals) @ vecs.conj().T
    out /= np.trace(out).real
    return DenseOperator(out)
