"""Generators for the trapped-particle cooling models.

Three tiers share one convention set: X = (a + a')/2, P = (a - a')/(2i),
the vibrational factor comes first in tensor products, the meter basis is
ordered [|+>, |->], and superoperators act on column-stacked vectors,
vec(A rho B) = kron(B.T, A) vec(rho).

The bipartite builders describe the vibration watched by a fast decaying
meter (a two-level system on resonance, a damped field mode off resonance).
The reduced builders describe the vibration alone after the meter has been
eliminated, with position measurement at rate chi^2/kappa and optional
instantaneous current feedback.
"""
from __future__ import annotations

import cmath
import dataclasses
import math
import warnings

import numpy as np

from .errors import DimensionMismatch, InvalidFeedbackPhase
from .hilbert import (
    DenseOperator,
    FockBasisSpec,
    annihilation,
    creation,
    identity,
    number_op,
    partial_trace,
    quadrature,
    tensor,
    trace_norm,
    two_level_ops,
)

__all__ = [
    "SystemParams",
    "Superoperator",
    "left_mult",
    "right_mult",
    "hamiltonian_term",
    "dissipator",
    "heating_liouvillian",
    "reduced_measurement_liouvillian",
    "markovian_feedback_terms",
    "reduced_feedback_liouvillian",
    "resonant_full_liouvillian",
    "offresonant_full_liouvillian",
    "adiabatic_expansion",
    "adiabatic_expansion_residual",
]


def _mat(op) -> np.ndarray:
    if isinstance(op, DenseOperator):
        return op.matrix
    return np.asarray(op, dtype=complex)


@dataclasses.dataclass(frozen=True)
class SystemParams:
    """Physical rates and phases of one scenario.

    All rates are angular frequencies in one common unit; occupancies and
    contours depend only on rate ratios, so the unit choice cancels.
    chi is the effective position-measurement coupling, kappa the meter
    decay, gamma_h the heating rate, eta the detection efficiency, nu the
    trap frequency, g the feedback gain, phi the local-oscillator phase
    and n0 the initial thermal occupancy used by trajectory defaults.
    epsilon, beta_mag, lamb_dicke and delta_internal record the microscopic
    origin of chi in the bipartite pictures; they do not enter any
    generator directly.
    """

    chi: float
    kappa: float
    gamma_h: float
    eta: float
    nu: float
    g: float
    phi: float
    n0: float = 0.0
    epsilon: float = 0.0
    beta_mag: float = 0.0
    lamb_dicke: float = 0.05
    delta_internal: float = 0.0

    def __post_init__(self):
        for name in ("chi", "kappa", "gamma_h", "nu", "g", "n0", "epsilon", "beta_mag"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.kappa == 0:
            raise ValueError("kappa must be > 0")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        # kx0 <= 0.25 keeps the linearized standing-wave coupling honest
        if not 0.0 < self.lamb_dicke <= 0.25:
            raise ValueError("lamb_dicke must lie in (0, 0.25]")
        if self.lamb_dicke > 0.1:
            warnings.warn("lamb_dicke above 0.1 strains the linearized coupling", stacklevel=2)
        if self.chi / self.kappa > 0.1:
            warnings.warn(
                "chi/kappa above 0.1 strains the meter elimination", stacklevel=2
            )

    @property
    def measurement_rate(self) -> float:
        """Effective position-measurement rate chi^2/kappa of the reduced model."""
        return self.chi**2 / self.kappa

    @property
    def adiabatic_regime(self) -> bool:
        """True when the meter is fast enough to eliminate (chi/kappa <= 0.25)."""
        return self.chi / self.kappa <= 0.25


@dataclasses.dataclass(frozen=True, eq=False)
class Superoperator:
    """Dense matrix of a linear map on column-vectorized density matrices."""

    matrix: np.ndarray
    dim: int = dataclasses.field(init=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch("superoperator matrix must be square")
        side = math.isqrt(m.shape[0])
        if side * side != m.shape[0]:
            raise DimensionMismatch("superoperator side must be a perfect square")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "dim", side)

    def apply(self, rho) -> DenseOperator:
        """Apply the map to an operator and return the image."""
        r = _mat(rho)
        if r.shape != (self.dim, self.dim):
            raise DimensionMismatch(
                f"operator of dim {r.shape} does not match superoperator dim {self.dim}"
            )
        vec = self.matrix @ r.reshape(-1, order="F")
        return DenseOperator(vec.reshape(self.dim, self.dim, order="F"))

    def trace_defect(self) -> float:
        """Norm of the trace functional's image, relative to the generator norm.

        Zero (to rounding) for any trace-preserving generator: the row
        vector vec(I)^T must annihilate the matrix.
        """
        vec_id = np.eye(self.dim, dtype=complex).reshape(-1, order="F")
        num = float(np.linalg.norm(vec_id @ self.matrix))
        den = float(np.linalg.norm(self.matrix))
        return num / den if den > 0 else num


def left_mult(op) -> np.ndarray:
    """Superoperator matrix of rho -> op rho."""
    a = _mat(op)
    return np.kron(np.eye(a.shape[0]), a)


def right_mult(op) -> np.ndarray:
    """Superoperator matrix of rho -> rho op."""
    a = _mat(op)
    return np.kron(a.T, np.eye(a.shape[0]))


def _sandwich(a, b) -> np.ndarray:
    # rho -> a rho b
    return np.kron(_mat(b).T, _mat(a))


def hamiltonian_term(h) -> np.ndarray:
    """Superoperator matrix of -i[H, rho]."""
    m = _mat(h)
    return -1j * (left_mult(m) - right_mult(m))


def dissipator(c) -> np.ndarray:
    """Lindblad dissipator c rho c' - (c'c rho + rho c'c)/2."""
    m = _mat(c)
    cdc = m.conj().T @ m
    return _sandwich(m, m.conj().T) - 0.5 * (left_mult(cdc) + right_mult(cdc))


def heating_liouvillian(spec: FockBasisSpec, gamma_h: float) -> Superoperator:
    """Symmetric diffusion at rate gamma_h: equal up and down jump rates.

    Under this generator alone d<a'a>/dt = gamma_h for any state supported
    away from the truncation edge.
    """
    if gamma_h < 0:
        raise ValueError("gamma_h must be >= 0")
    a = annihilation(spec).matrix
    return Superoperator(gamma_h * (dissipator(a) + dissipator(a.conj().T)))


def reduced_measurement_liouvillian(
    params: SystemParams, spec: FockBasisSpec, *, drive_x: float = 0.0
) -> Superoperator:
    """Measurement-only reduced generator: rotation, heating, X double commutator.

    This is the deterministic part of the conditioned dynamics, i.e. the
    ensemble average of the unraveling with no feedback applied. drive_x
    adds a weak displacement Hamiltonian drive_x * X, handy for moving
    <X> off zero in steady-state comparisons.
    """
    x = quadrature(spec, "position").matrix
    n = number_op(spec).matrix
    h = params.nu * n + drive_x * x
    mat = hamiltonian_term(h)
    mat = mat + heating_liouvillian(spec, params.gamma_h).matrix
    mat = mat + params.measurement_rate * dissipator(x)
    return Superoperator(mat)


def markovian_feedback_terms(c, feedback_h, eta: float) -> np.ndarray:
    """Ensemble-average contribution of instantaneous current feedback.

    c is the measured collapse operator, feedback_h the operator F fed by
    the unit-normalized current, eta the detection efficiency. Returns the
    matrix of -i[F, c rho + rho c'] + (1/eta) D[F].
    """
    if not 0.0 < eta <= 1.0:
        raise ValueError("eta must lie in (0, 1]")
    cm = _mat(c)
    fm = _mat(feedback_h)
    if cm.shape != fm.shape:
        raise DimensionMismatch("collapse and feedback operators must share a dimension")
    comm_f = left_mult(fm) - right_mult(fm)
    signal = left_mult(cm) + right_mult(cm.conj().T)
    return -1j * (comm_f @ signal) + (1.0 / eta) * dissipator(fm)


def _direct_assembly(params: SystemParams, spec: FockBasisSpec, drive_x: float) -> np.ndarray:
    mat = reduced_measurement_liouvillian(params, spec, drive_x=drive_x).matrix.copy()
    if params.g != 0.0:
        m_rate = params.measurement_rate
        x = quadrature(spec, "position").matrix
        p = quadrature(spec, "momentum").matrix
        c = -1j * cmath.exp(-1j * params.phi) * math.sqrt(m_rate) * x
        f = -(params.g / math.sqrt(m_rate)) * p
        mat += markovian_feedback_terms(c, f, params.eta)
    return mat


def _squeezed_bath_assembly(params: SystemParams, spec: FockBasisSpec, drive_x: float) -> np.ndarray:
    from .gaussian import bath_params

    bp = bath_params(params)
    a = annihilation(spec).matrix
    ad = a.conj().T
    aa = a @ a
    adad = ad @ ad
    gam = bp.Gamma
    mat = gam * (bp.N + 1.0) * dissipator(a)
    mat = mat + gam * bp.N * dissipator(ad)
    mat = mat - 0.5 * gam * bp.M * (2.0 * _sandwich(ad, ad) - left_mult(adad) - right_mult(adad))
    mat = mat - 0.5 * gam * np.conj(bp.M) * (2.0 * _sandwich(a, a) - left_mult(aa) - right_mult(aa))
    # parametric term: real multiple of the commutator with a^2 - a'^2
    k = aa - adad
    mat = mat - 0.25 * params.g * math.sin(params.phi) * (left_mult(k) - right_mult(k))
    h = params.nu * number_op(spec).matrix + drive_x * quadrature(spec, "position").matrix
    mat = mat + hamiltonian_term(h)
    return mat


def reduced_feedback_liouvillian(
    params: SystemParams,
    spec: FockBasisSpec,
    *,
    route: str = "squeezed_bath",
    drive_x: float = 0.0,
) -> Superoperator:
    """Unconditioned master equation of the measured and fed-back vibration.

    route picks the assembly. "squeezed_bath" writes the generator as an
    effective thermal-squeezed reservoir (rates Gamma, N, M) plus a
    parametric term and the free rotation. "direct" composes measurement,
    heating and the Markovian feedback terms. The two coincide to rounding
    on every matrix element that does not touch the top Fock level; at
    phi = -pi/2 they coincide including the edge. g = 0 always uses the
    direct composition because the effective-reservoir rates divide by
    g sin(phi).
    """
    if route not in ("squeezed_bath", "direct"):
        raise ValueError("route must be 'squeezed_bath' or 'direct'")
    if params.g != 0.0 and math.sin(params.phi) == 0.0:
        raise InvalidFeedbackPhase(
            "sin(phi) = 0 leaves no position signal in the current to feed back"
        )
    if params.g != 0.0 and params.chi == 0.0:
        raise ValueError("feedback requires a nonzero measurement coupling chi")
    if params.g == 0.0 or route == "direct":
        return Superoperator(_direct_assembly(params, spec, drive_x))
    return Superoperator(_squeezed_bath_assembly(params, spec, drive_x))


def _bipartite_feedback(params: SystemParams, meter_lower: np.ndarray, p_vib: np.ndarray) -> np.ndarray:
    m_rate = params.measurement_rate
    if m_rate == 0.0:
        raise ValueError("feedback requires a nonzero measurement coupling chi")
    c = cmath.exp(-1j * params.phi) * math.sqrt(params.kappa) * meter_lower
    f = -(params.g / math.sqrt(m_rate)) * p_vib
    return markovian_feedback_terms(c, f, params.eta)


def resonant_full_liouvillian(
    params: SystemParams,
    spec: FockBasisSpec,
    *,
    include_feedback: bool = False,
    drive_x: float = 0.0,
) -> Superoperator:
    """Vibration coupled to a resonant two-level meter that decays at kappa.

    H = nu a'a + (chi/2) sigma_x X. The half on the coupling makes the
    meter response per unit X equal to chi/kappa and the eliminated
    measurement rate equal to chi^2/kappa, matching the reduced model.
    include_feedback adds the same current feedback the reduced model
    uses, acting on the homodyne signal of the emitted light; drive_x
    adds drive_x * X on the vibration.
    """
    tl = two_level_ops()
    id_m = DenseOperator(np.eye(2))
    x = quadrature(spec, "position")
    h = params.nu * tensor(number_op(spec), id_m) + 0.5 * params.chi * tensor(x, tl.sigma_x)
    if drive_x != 0.0:
        h = h + drive_x * tensor(x, id_m)
    sm = tensor(identity(spec), tl.sigma_minus).matrix
    av = tensor(annihilation(spec), id_m).matrix
    mat = hamiltonian_term(h.matrix)
    mat = mat + params.kappa * dissipator(sm)
    if params.gamma_h != 0.0:
        mat = mat + params.gamma_h * (dissipator(av) + dissipator(av.conj().T))
    if include_feedback and params.g != 0.0:
        p_vib = tensor(quadrature(spec, "momentum"), id_m).matrix
        mat = mat + _bipartite_feedback(params, sm, p_vib)
    return Superoperator(mat)


def offresonant_full_liouvillian(
    params: SystemParams,
    spec_vib: FockBasisSpec,
    spec_field: FockBasisSpec,
    *,
    include_feedback: bool = False,
    drive_x: float = 0.0,
) -> Superoperator:
    """Vibration coupled to a far-detuned field mode that decays at kappa.

    H = nu a'a + chi Y X with Y = (b + b')/2 the field quadrature at
    reference phase zero. The field truncation must keep at least three
    levels: the weak-coupling structure of the joint state populates the
    field up to |2>.
    """
    if spec_field.n_trunc < 2:
        raise ValueError("field truncation must keep levels up to |2>")
    id_f = identity(spec_field)
    b = annihilation(spec_field)
    y = 0.5 * (b + creation(spec_field))
    x = quadrature(spec_vib, "position")
    h = params.nu * tensor(number_op(spec_vib), id_f) + params.chi * tensor(x, y)
    if drive_x != 0.0:
        h = h + drive_x * tensor(x, id_f)
    bm = tensor(identity(spec_vib), b).matrix
    av = tensor(annihilation(spec_vib), id_f).matrix
    mat = hamiltonian_term(h.matrix)
    mat = mat + params.kappa * dissipator(bm)
    if params.gamma_h != 0.0:
        mat = mat + params.gamma_h * (dissipator(av) + dissipator(av.conj().T))
    if include_feedback and params.g != 0.0:
        p_vib = tensor(quadrature(spec_vib, "momentum"), id_f).matrix
        mat = mat + _bipartite_feedback(params, bm, p_vib)
    return Superoperator(mat)


def _unit_matrix(dim: int, i: int, j: int) -> np.ndarray:
    e = np.zeros((dim, dim), dtype=complex)
    e[i, j] = 1.0
    return e


def adiabatic_expansion(
    rho: DenseOperator,
    params: SystemParams,
    case: str,
    spec_field: FockBasisSpec | None = None,
) -> DenseOperator:
    """Joint state predicted by the weak-coupling expansion for a vibrational state.

    For the resonant meter (basis [|+>, |->]):

        rho (x) |-><-| - i(chi/kappa) (X rho (x) |+><-| - rho X (x) |-><+|)

    For the off-resonant field mode, with r = chi/kappa:

        (rho - r^2 X rho X) (x) |0><0|
        - i r (X rho (x) |1><0| - rho X (x) |0><1|)
        + r^2 X rho X (x) |1><1|
        - (r^2 / sqrt 2) (X^2 rho (x) |2><0| + rho X^2 (x) |0><2|)
    """
    ratio = params.chi / params.kappa
    d = rho.dim
    x = quadrature(FockBasisSpec(n_trunc=d - 1), "position").matrix
    r = rho.matrix
    xr = x @ r
    rx = r @ x
    if case == "resonant":
        out = np.kron(r, _unit_matrix(2, 1, 1))
        out = out - 1j * ratio * (
            np.kron(xr, _unit_matrix(2, 0, 1)) - np.kron(rx, _unit_matrix(2, 1, 0))
        )
        return DenseOperator(out)
    if case == "offresonant":
        if spec_field is None:
            raise ValueError("offresonant expansion needs the field basis spec")
        if spec_field.n_trunc < 2:
            raise ValueError("field truncation must keep levels up to |2>")
        df = spec_field.dim
        xrx = xr @ x
        x2r = x @ xr
        rx2 = rx @ x
        out = np.kron(r - ratio**2 * xrx, _unit_matrix(df, 0, 0))
        out = out - 1j * ratio * (
            np.kron(xr, _unit_matrix(df, 1, 0)) - np.kron(rx, _unit_matrix(df, 0, 1))
        )
        out = out + ratio**2 * np.kron(xrx, _unit_matrix(df, 1, 1))
        out = out - (ratio**2 / math.sqrt(2.0)) * (
            np.kron(x2r, _unit_matrix(df, 2, 0)) + np.kron(rx2, _unit_matrix(df, 0, 2))
        )
        return DenseOperator(out)
    raise ValueError("case must be 'resonant' or 'offresonant'")


def adiabatic_expansion_residual(
    D_ss: DenseOperator,
    params: SystemParams,
    case: str,
    *,
    field_dim: int | None = None,
) -> float:
    """Trace-norm distance between a joint state and its weak-coupling model.

    The joint state is split as vibration (x) meter, the meter is traced
    out, and the expansion rebuilt from the vibrational part is compared
    with the original. Decays at second order in chi/kappa for both meter
    types when D_ss is the corresponding steady state.
    """
    if case == "resonant":
        d_meter = 2
        spec_field = None
    elif case == "offresonant":
        if field_dim is None:
            raise ValueError("offresonant residual needs field_dim")
        if field_dim < 3:
            raise ValueError("field truncation must keep levels up to |2>")
        d_meter = field_dim
        spec_field = FockBasisSpec(n_trunc=field_dim - 1)
    else:
        raise ValueError("case must be 'resonant' or 'offresonant'")
    if not params.adiabatic_regime:
        raise ValueError("expansion requires chi/kappa <= 0.25")
    if D_ss.dim % d_meter != 0:
        raise DimensionMismatch(
            f"joint dim {D_ss.dim} does not factor over a meter of dim {d_meter}"
        )
    d_vib = D_ss.dim // d_meter
    rho = partial_trace(D_ss, (d_vib, d_meter), keep=0)
    model = adiabatic_expansion(rho, params, case, spec_field=spec_field)
    return trace_norm(D_ss - model)
