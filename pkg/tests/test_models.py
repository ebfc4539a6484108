"""Liouvillian builders: algebra, route equivalence, physics cross-checks."""
import math

import numpy as np
import pytest

from trapcool.errors import (
    DimensionMismatch,
    InvalidFeedbackPhase,
    NotUnique,
    Unstable,
)
from trapcool.gaussian import bath_params, moment_fixed_point, stationary_moments
from trapcool.hilbert import (
    DenseOperator,
    FockBasisSpec,
    annihilation,
    expectation,
    fock_state,
    identity,
    number_op,
    partial_trace,
    quadrature,
    tensor,
    thermal_state,
    trace_norm,
    two_level_ops,
)
from trapcool.models import (
    Superoperator,
    SystemParams,
    adiabatic_expansion,
    adiabatic_expansion_residual,
    dissipator,
    hamiltonian_term,
    heating_liouvillian,
    left_mult,
    markovian_feedback_terms,
    offresonant_full_liouvillian,
    reduced_feedback_liouvillian,
    reduced_measurement_liouvillian,
    resonant_full_liouvillian,
    right_mult,
)
from trapcool.sme import IntegratorConfig, integrate_lindblad, steady_state

HALF_PI = math.pi / 2.0


def default_params(**overrides):
    base = dict(
        chi=4.0, kappa=40.0, gamma_h=0.01, eta=0.9, nu=18.75, g=0.375, phi=-HALF_PI
    )
    base.update(overrides)
    return SystemParams(**base)


def weak_coupling_params(**overrides):
    """chi/kappa = 0.05 with every slow rate tied to the coupling."""
    base = dict(
        chi=1.0, kappa=20.0, gamma_h=0.001, eta=0.9, nu=0.12, g=0.04, phi=-HALF_PI
    )
    base.update(overrides)
    return SystemParams(**base)


def random_density(rng, dim):
    m = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = m @ m.conj().T
    return rho / np.trace(rho).real


def all_builders(spec):
    params = default_params()
    meter = FockBasisSpec(n_trunc=2)
    return [
        reduced_measurement_liouvillian(params, spec),
        reduced_feedback_liouvillian(params, spec, route="squeezed_bath"),
        reduced_feedback_liouvillian(params, spec, route="direct"),
        reduced_feedback_liouvillian(params, spec, route="direct", drive_x=-0.3),
        resonant_full_liouvillian(params, spec),
        resonant_full_liouvillian(params, spec, include_feedback=True, drive_x=0.1),
        offresonant_full_liouvillian(params, spec, meter),
        offresonant_full_liouvillian(params, spec, meter, include_feedback=True),
    ]


def test_builders_preserve_trace_and_hermiticity():
    spec = FockBasisSpec(n_trunc=7)
    rng = np.random.default_rng(42)
    for L in all_builders(spec):
        assert L.trace_defect() < 1e-12
        for _ in range(12):
            rho = DenseOperator(random_density(rng, L.dim))
            out = L.apply(rho).matrix
            assert np.linalg.norm(out - out.conj().T) < 1e-12 * max(
                1.0, np.linalg.norm(out)
            )


def test_stable_generators_have_left_half_plane_spectra():
    # dissipative contraction: every eigenvalue sits at Re <= 0 up to rounding
    spec = FockBasisSpec(n_trunc=7)
    for L in all_builders(spec):
        lam = np.linalg.eigvals(L.matrix)
        bound = 1e-10 * max(1.0, float(np.abs(L.matrix).max()))
        assert float(lam.real.max()) <= bound


def test_feedback_routes_identical_at_quadrature_phase():
    spec = FockBasisSpec(n_trunc=8)
    params = default_params()
    a = reduced_feedback_liouvillian(params, spec, route="squeezed_bath").matrix
    b = reduced_feedback_liouvillian(params, spec, route="direct").matrix
    scale = np.linalg.norm(a)
    assert np.linalg.norm(a - b) < 1e-14 * scale


def test_feedback_routes_differ_only_by_truncation_corner():
    """Away from phi = -pi/2 the two assemblies differ by one corner commutator.

    The squeezed-bath form keeps an (a^2 - a'^2) commutator whose truncated
    product picks up a boundary term that the direct form, built from X and
    P separately, does not: the exact difference is

        L_sq - L_dir = -(i g cos(phi)/4) (n_trunc + 1) [ |n_t><n_t| , . ]
    """
    spec = FockBasisSpec(n_trunc=6)
    top = np.zeros((spec.dim, spec.dim))
    top[-1, -1] = 1.0
    corner_comm = left_mult(top) - right_mult(top)
    rng = np.random.default_rng(1234)
    for _ in range(20):
        params = SystemParams(
            chi=float(rng.uniform(0.5, 1.5)),
            kappa=float(rng.uniform(15.0, 40.0)),
            gamma_h=float(rng.uniform(0.0, 0.02)),
            eta=float(rng.uniform(0.1, 1.0)),
            nu=float(rng.uniform(0.5, 20.0)),
            g=float(rng.uniform(0.01, 0.5)),
            phi=float(-rng.uniform(0.2, math.pi - 0.2)),
        )
        a = reduced_feedback_liouvillian(params, spec, route="squeezed_bath").matrix
        b = reduced_feedback_liouvillian(params, spec, route="direct").matrix
        corner = (
            -0.25j * params.g * math.cos(params.phi) * (spec.n_trunc + 1) * corner_comm
        )
        assert np.linalg.norm(a - b - corner) < 1e-12 * np.linalg.norm(a)


def test_feedback_route_kernels_agree_off_quadrature():
    # the corner term only touches the top Fock level, so for a cold steady
    # state the two routes give the same physics to solver precision
    spec = FockBasisSpec(n_trunc=30)
    params = default_params(phi=-2.2)
    rho_a = steady_state(reduced_feedback_liouvillian(params, spec, route="squeezed_bath"))
    rho_b = steady_state(reduced_feedback_liouvillian(params, spec, route="direct"))
    assert trace_norm(rho_a - rho_b) < 1e-9


def test_reduced_kernel_matches_moment_theory():
    """Dense kernel solve against the closed-form stationary moments."""
    spec = FockBasisSpec(n_trunc=30)
    params = default_params()
    rho = steady_state(reduced_feedback_liouvillian(params, spec))
    a_op = annihilation(spec)
    n_obs = expectation(rho, number_op(spec)).real
    m_obs = expectation(rho, a_op @ a_op)
    fp = moment_fixed_point(params)
    assert abs(n_obs - fp.zeta) < 1e-8
    assert abs(m_obs - fp.mu) < 1e-8
    mo = stationary_moments(params)
    assert n_obs == pytest.approx(mo.zeta, rel=1e-6)


def test_driven_reduced_kernel_first_moments():
    # a static X drive displaces the stationary state without touching the
    # covariances: <X> = -f/(2 nu), <P> = g <X> / nu, <n> = zeta + |<a>|^2
    f = -0.024
    params = weak_coupling_params()
    spec = FockBasisSpec(n_trunc=25)
    rho = steady_state(reduced_feedback_liouvillian(params, spec, drive_x=f))
    x_obs = expectation(rho, quadrature(spec, "position")).real
    p_obs = expectation(rho, quadrature(spec, "momentum")).real
    n_obs = expectation(rho, number_op(spec)).real
    assert x_obs == pytest.approx(-f / (2.0 * params.nu), rel=1e-6)
    assert p_obs == pytest.approx(params.g * x_obs / params.nu, rel=1e-5)
    zeta = stationary_moments(params).zeta
    assert n_obs == pytest.approx(zeta + x_obs**2 + p_obs**2, rel=1e-5)


def test_full_resonant_current_tracks_position():
    """The meter dipole reports the displaced position through the coupling ratio.

    In the stationary regime <e^{-i phi} sigma- + h.c.> locks to
    -2 (chi/kappa) sin(phi) <X>, which is what makes the fluorescence
    homodyne signal a position measurement.
    """
    f = -0.024
    params = weak_coupling_params(gamma_h=0.0)
    spec = FockBasisSpec(n_trunc=25)
    L = resonant_full_liouvillian(params, spec, include_feedback=True, drive_x=f)
    rho = steady_state(L, tail_block=2)
    ident_m = DenseOperator(np.eye(2, dtype=complex))
    x_joint = tensor(quadrature(spec, "position"), ident_m)
    x_obs = expectation(rho, x_joint).real
    assert x_obs == pytest.approx(-f / (2.0 * params.nu), rel=0.05)
    lower = two_level_ops().sigma_minus
    phase = complex(math.cos(params.phi), -math.sin(params.phi))
    dipole_op = tensor(identity(spec), phase * lower + np.conj(phase) * lower.dag())
    dipole = expectation(rho, dipole_op).real
    expected = -2.0 * (params.chi / params.kappa) * math.sin(params.phi) * x_obs
    assert dipole == pytest.approx(expected, rel=0.05)


def test_full_offresonant_field_population():
    # the eliminated cavity mode carries (chi/kappa)^2 <X^2> photons
    f = -0.024
    params = weak_coupling_params()
    spec_vib = FockBasisSpec(n_trunc=13)
    spec_field = FockBasisSpec(n_trunc=2)
    L = offresonant_full_liouvillian(
        params, spec_vib, spec_field, include_feedback=True, drive_x=f
    )
    rho = steady_state(L, tail_block=spec_field.dim)
    x = quadrature(spec_vib, "position")
    xsq = expectation(rho, tensor(x @ x, identity(spec_field))).real
    photons = expectation(rho, tensor(identity(spec_vib), number_op(spec_field))).real
    assert photons == pytest.approx((params.chi / params.kappa) ** 2 * xsq, rel=0.10)


def test_heating_rate_and_linear_ramp():
    spec = FockBasisSpec(n_trunc=60, tail_tolerance=1e-6)
    gamma_h = 0.05
    L = heating_liouvillian(spec, gamma_h)
    rho = thermal_state(spec, 2.0)
    # instantaneous energy growth d<n>/dt = gamma_h, independent of the state
    dn = expectation(L.apply(rho), number_op(spec)).real
    assert dn == pytest.approx(gamma_h, rel=1e-7)
    cfg = IntegratorConfig(dt=0.01, t_final=1.0)
    out = integrate_lindblad(L, rho, cfg, rates=(gamma_h,), tail_block=1)
    n_final = expectation(out, number_op(spec)).real
    assert n_final == pytest.approx(2.0 + gamma_h, rel=1e-6)


def test_uncoupled_meter_decays_exponentially():
    # chi = 0 leaves the meter alone: excited population falls as e^{-kappa t}
    params = default_params(chi=0.0, nu=3.0, kappa=2.0, gamma_h=0.0)
    spec = FockBasisSpec(n_trunc=3)
    L = resonant_full_liouvillian(params, spec)
    excited = np.zeros((2, 2), dtype=complex)
    excited[0, 0] = 1.0  # meter basis ordering [ |+>, |-> ]
    rho0 = tensor(fock_state(spec, 0), DenseOperator(excited))
    cfg = IntegratorConfig(dt=1e-3, t_final=0.5, tail_guard=0.5)
    out = integrate_lindblad(L, rho0, cfg, rates=(params.kappa, params.nu), tail_block=2)
    proj = tensor(identity(spec), DenseOperator(excited))
    pop = expectation(out, proj).real
    assert pop == pytest.approx(math.exp(-params.kappa * 0.5), rel=1e-5)


def test_free_rotation_of_coherent_amplitude():
    from trapcool.hilbert import coherent_state

    params = default_params(chi=0.0, gamma_h=0.0, nu=2.0)
    spec = FockBasisSpec(n_trunc=12)
    L = reduced_measurement_liouvillian(params, spec)
    rho0 = coherent_state(spec, 0.4)
    t = 0.7
    cfg = IntegratorConfig(dt=1e-3, t_final=t, tail_guard=1e-5)
    out = integrate_lindblad(L, rho0, cfg, rates=(params.nu,))
    amp = expectation(out, annihilation(spec))
    expected = 0.4 * complex(math.cos(params.nu * t), -math.sin(params.nu * t))
    assert abs(amp - expected) < 1e-5


def test_expansion_reduces_to_product_at_zero_coupling():
    spec = FockBasisSpec(n_trunc=9, tail_tolerance=0.01)
    rho = thermal_state(spec, 0.8)
    params = default_params(chi=0.0)
    joint = adiabatic_expansion(rho, params, "resonant")
    assert adiabatic_expansion_residual(joint, params, "resonant") == pytest.approx(
        0.0, abs=1e-14
    )


def test_expansion_is_trace_preserving_and_consistent():
    spec = FockBasisSpec(n_trunc=9, tail_tolerance=0.01)
    rho = thermal_state(spec, 0.8)
    params = weak_coupling_params()
    for case, field_spec, d_meter in (
        ("resonant", None, 2),
        ("offresonant", FockBasisSpec(n_trunc=3), 4),
    ):
        joint = adiabatic_expansion(rho, params, case, spec_field=field_spec)
        assert joint.trace().real == pytest.approx(1.0, abs=1e-12)
        back = partial_trace(joint, (spec.dim, d_meter), keep=0)
        assert trace_norm(back - rho) < 1e-12


def test_wrong_gain_sign_has_no_physical_steady_state():
    spec = FockBasisSpec(n_trunc=20)
    params = default_params(phi=HALF_PI)  # g sin(phi) > 0: feedback pumps energy in
    L = reduced_feedback_liouvillian(params, spec, route="direct")
    with pytest.raises(Unstable):
        steady_state(L)


def test_free_rotation_kernel_is_degenerate():
    params = default_params(chi=0.0, gamma_h=0.0, nu=2.0)
    spec = FockBasisSpec(n_trunc=6)
    L = reduced_measurement_liouvillian(params, spec)
    with pytest.raises(NotUnique):
        steady_state(L)


def test_superoperator_apply_and_shape_guards():
    spec = FockBasisSpec(n_trunc=4)
    h = number_op(spec).matrix
    L = Superoperator(hamiltonian_term(h))
    rho = thermal_state(FockBasisSpec(n_trunc=4, tail_tolerance=0.05), 0.5)
    manual = -1j * (h @ rho.matrix - rho.matrix @ h)
    assert np.allclose(L.apply(rho).matrix, manual, atol=1e-14)
    assert L.trace_defect() < 1e-14
    with pytest.raises(DimensionMismatch):
        Superoperator(np.zeros((5, 4)))
    with pytest.raises(DimensionMismatch):
        Superoperator(np.zeros((5, 5)))  # not a perfect-square edge


def test_dissipator_trace_annihilation():
    spec = FockBasisSpec(n_trunc=5)
    c = annihilation(spec).matrix
    vec_id = np.eye(spec.dim, dtype=complex).reshape(-1, order="F")
    assert np.linalg.norm(vec_id @ dissipator(c)) < 1e-13


def test_parameter_validation():
    with pytest.raises(ValueError):
        default_params(chi=-1.0)
    with pytest.raises(ValueError):
        default_params(kappa=0.0)
    with pytest.raises(ValueError):
        default_params(eta=0.0)
    with pytest.raises(ValueError):
        default_params(eta=1.2)
    with pytest.raises(ValueError):
        default_params(lamb_dicke=0.3)
    with pytest.warns(UserWarning):
        default_params(chi=8.0)  # chi/kappa = 0.2 strains the elimination


def test_feedback_builder_rejects_bad_setups():
    spec = FockBasisSpec(n_trunc=5)
    with pytest.raises(InvalidFeedbackPhase):
        reduced_feedback_liouvillian(default_params(phi=0.0), spec)
    with pytest.raises(ValueError):
        reduced_feedback_liouvillian(default_params(chi=0.0), spec)
    with pytest.raises(ValueError):
        reduced_feedback_liouvillian(default_params(), spec, route="other")
    with pytest.raises(ValueError):
        offresonant_full_liouvillian(default_params(), spec, FockBasisSpec(n_trunc=1))
    with pytest.warns(UserWarning):
        strained = default_params(chi=12.0)  # chi/kappa = 0.3: outside the expansion
    joint = adiabatic_expansion(thermal_state(FockBasisSpec(n_trunc=5, tail_tolerance=0.01), 0.1), strained, "resonant")
    with pytest.raises(ValueError):
        adiabatic_expansion_residual(joint, strained, "resonant")


def test_markovian_feedback_terms_shape_guard():
    spec = FockBasisSpec(n_trunc=4)
    small = FockBasisSpec(n_trunc=3)
    with pytest.raises(DimensionMismatch):
        markovian_feedback_terms(
            quadrature(spec, "position").matrix,
            quadrature(small, "momentum").matrix,
            0.9,
        )
    with pytest.raises(ValueError):
        markovian_feedback_terms(
            quadrature(spec, "position").matrix,
            quadrature(spec, "momentum").matrix,
            0.0,
        )
