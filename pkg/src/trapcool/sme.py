"""Time evolution for the cooling models.

Deterministic propagation of any generator built by the models module,
dense kernel solves for steady states, and the Ito unraveling of the
continuous position measurement: homodyne current, conditioned state
updates, and instantaneous feedback kicks, with ensemble machinery to
average trajectories back onto the unconditioned dynamics.
"""
from __future__ import annotations

import cmath
import dataclasses
import math
import warnings

import numpy as np
import scipy.linalg

from .errors import (
    DimensionMismatch,
    NotUnique,
    StepTooLarge,
    TailTooHeavy,
    Unstable,
)
from .hilbert import (
    DenseOperator,
    FockBasisSpec,
    annihilation,
    number_op,
    quadrature,
    thermal_state,
    trace_norm,
)
from .models import Superoperator, SystemParams

__all__ = [
    "IntegratorConfig",
    "TrajectoryRecord",
    "EnsembleMoments",
    "HomodyneStepper",
    "enforce_step_limit",
    "integrate_lindblad",
    "steady_state",
    "homodyne_step",
    "feedback_step",
    "run_trajectory",
    "ensemble_mean",
]

_TRACE_TOL = 1e-7
_HARD_STEP = 0.1
_SOFT_STEP = 0.02


def enforce_step_limit(dt: float, rates) -> None:
    """Reject or warn about time steps that under-resolve the fastest rate.

    dt * max(rates) above 0.1 raises StepTooLarge; above 0.02 warns.
    """
    fastest = max((abs(r) for r in rates), default=0.0)
    if dt * fastest > _HARD_STEP:
        raise StepTooLarge(
            f"dt * max rate = {dt * fastest:.3g} exceeds the hard limit {_HARD_STEP}"
        )
    if dt * fastest > _SOFT_STEP:
        warnings.warn(
            f"dt * max rate = {dt * fastest:.3g} is above {_SOFT_STEP}; expect visible discretization bias",
            stacklevel=2,
        )


@dataclasses.dataclass(frozen=True)
class IntegratorConfig:
    """Stepping controls shared by the deterministic and stochastic integrators.

    scheme picks "heun_deterministic" (second order, Lindblad only) or
    "euler_maruyama" (first order; the only scheme for conditioned
    trajectories). tail_guard bounds the tolerated population of the top
    Fock level during propagation.
    """

    dt: float
    t_final: float
    scheme: str = "heun_deterministic"
    seed: int = 0
    renormalize: bool = True
    tail_guard: float = 1e-6

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be > 0")
        if self.t_final < 0.0:
            raise ValueError("t_final must be >= 0")
        if self.scheme not in ("euler_maruyama", "heun_deterministic"):
            raise ValueError("scheme must be 'euler_maruyama' or 'heun_deterministic'")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")
        if not 0.0 < self.tail_guard < 1.0:
            raise ValueError("tail_guard must lie in (0, 1)")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))


def _vec(m: np.ndarray) -> np.ndarray:
    return m.reshape(-1, order="F")


def _unvec(v: np.ndarray, dim: int) -> np.ndarray:
    return v.reshape(dim, dim, order="F")


def integrate_lindblad(
    L: Superoperator,
    rho0: DenseOperator,
    cfg: IntegratorConfig,
    *,
    rates=None,
    tail_block: int = 1,
    callback=None,
) -> DenseOperator:
    """Propagate a density matrix under a generator for t_final.

    Each step hermitizes the state, verifies the trace drift, optionally
    renormalizes, and guards the summed population of the last tail_block
    diagonal entries (use the meter dimension for bipartite states).
    rates, when given, are checked against the step-size rule up front.
    callback(t, rho_matrix), when given, runs after every step.

    Pick dt so the one-step map stays contractive on the fast coherence
    bands, not just accurate on the slow moments: band k rotates at
    nu * k, and the Heun update multiplies it by about
    1 + (nu * k * dt)^4 / 8 per step, which outruns weak damping once
    nu * n_trunc * dt approaches one even though the exact generator is
    stable. Growth there starts from roundoff and is traceless, so it
    shows up as a positivity violation rather than a trace error.
    """
    if rho0.dim != L.dim:
        raise DimensionMismatch(f"state dim {rho0.dim} does not match generator dim {L.dim}")
    if rates is not None:
        enforce_step_limit(cfg.dt, rates)
    A = L.matrix
    heun = cfg.scheme == "heun_deterministic"
    v = _vec(rho0.matrix.astype(complex))
    d = L.dim
    for k in range(cfg.n_steps):
        if heun:
            k1 = A @ v
            k2 = A @ (v + cfg.dt * k1)
            v = v + (0.5 * cfg.dt) * (k1 + k2)
        else:
            v = v + cfg.dt * (A @ v)
        r = _unvec(v, d)
        r = 0.5 * (r + r.conj().T)
        tr = float(np.trace(r).real)
        if abs(tr - 1.0) > _TRACE_TOL:
            raise StepTooLarge(
                f"trace drifted to {tr:.9f} at step {k + 1}; reduce dt"
            )
        if cfg.renormalize:
            r = r / tr
        tail = float(np.diagonal(r).real[-tail_block:].sum())
        if tail > cfg.tail_guard:
            raise TailTooHeavy(
                f"top-level population {tail:.3e} exceeds the guard {cfg.tail_guard:.3e}",
                tail=tail,
            )
        if callback is not None:
            callback((k + 1) * cfg.dt, r)
        v = _vec(r)
    return DenseOperator(_unvec(v, d))


def _kernel_solve(L: Superoperator, row: int):
    """Solve L rho = 0 with the trace condition replacing one row.

    Returns the refined vectorized solution, or None when the factorization
    fails outright.
    """
    n2 = L.matrix.shape[0]
    A = np.array(L.matrix)
    vec_id = np.eye(L.dim, dtype=complex).reshape(-1, order="F")
    A[row, :] = vec_id
    b = np.zeros(n2, dtype=complex)
    b[row] = 1.0
    try:
        with warnings.catch_warnings():
            # an exactly singular factorization only warns; the finiteness
            # check below rejects its garbage solution
            warnings.simplefilter("ignore")
            lu_piv = scipy.linalg.lu_factor(A, check_finite=False)
            x = scipy.linalg.lu_solve(lu_piv, b, check_finite=False)
            for _ in range(4):
                resid = A @ x - b
                if np.linalg.norm(resid) <= 1e-13 * max(1.0, float(np.linalg.norm(x))):
                    break
                x = x - scipy.linalg.lu_solve(lu_piv, resid, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        return None
    if not np.all(np.isfinite(x)):
        return None
    return x


def _state_from_vec(x: np.ndarray, dim: int) -> np.ndarray:
    r = _unvec(x, dim)
    r = 0.5 * (r + r.conj().T)
    tr = float(np.trace(r).real)
    if tr == 0.0 or not math.isfinite(tr):
        return r
    return r / tr


def steady_state(
    L: Superoperator,
    *,
    tail_block: int = 1,
    edge_tolerance: float = 1e-3,
) -> DenseOperator:
    """Normalized density matrix in the kernel of a generator.

    Solves the replaced-row linear system with iterative refinement, then
    vets the result: residual below 1e-10, eigenvalues above -1e-9, no
    population piled against the truncation edge (the signature of a
    runaway gain sign: a truncated generator keeps a formal kernel state
    even when the physical dynamics diverge), kernel isolation, and, for
    small generators, no spectrum in the right half plane.
    """
    d = L.dim
    n2 = d * d
    x = _kernel_solve(L, 0)
    if x is None:
        x = _kernel_solve(L, min(d + 1, n2 - 1))
    if x is None:
        raise NotUnique("kernel solve failed; the generator has no isolated steady state")
    r = _state_from_vec(x, d)
    residual = float(np.linalg.norm(L.matrix @ _vec(r)))
    if residual > 1e-10:
        raise NotUnique(f"kernel residual {residual:.3e} exceeds 1e-10; kernel is degenerate or ill conditioned")
    w = np.linalg.eigvalsh(r)
    if float(w[0]) < -1e-9:
        raise Unstable(f"kernel state has eigenvalue {float(w[0]):.3e}; no physical steady state")
    tail = float(np.diagonal(r).real[-tail_block:].sum())
    if tail > edge_tolerance:
        raise Unstable(
            f"steady state piles {tail:.3e} of its population at the truncation edge; "
            "parameters likely violate the contraction condition g sin(phi) < 0",
        )
    if d <= 32:
        s = np.linalg.svd(L.matrix, compute_uv=False)
        smallest = float(s[-1])
        second = float(s[-2])
        if second <= 1e3 * smallest:
            raise NotUnique(
                f"singular values {second:.3e} / {smallest:.3e} do not isolate a one-dimensional kernel"
            )
    else:
        # the replaced row must sit on a diagonal slot of vec(I): elsewhere
        # the trace-preserving structure makes the modified system singular
        x2 = _kernel_solve(L, (d // 2) * (d + 1))
        if x2 is None:
            raise NotUnique("kernel solve failed on the cross-check row")
        r2 = _state_from_vec(x2, d)
        if trace_norm(r - r2) > 1e-8:
            raise NotUnique("two kernel solves disagree; the kernel is degenerate")
    if d <= 20:
        lam = np.linalg.eigvals(L.matrix)
        keep = np.ones(lam.shape[0], dtype=bool)
        keep[int(np.argmin(np.abs(lam)))] = False
        positive = float(lam[keep].real.max()) if keep.any() else 0.0
        threshold = 1e-10 * max(1.0, float(np.abs(L.matrix).max()))
        if positive > threshold:
            raise Unstable(f"generator eigenvalue with real part {positive:.3e} > 0")
    return DenseOperator(r)


class HomodyneStepper:
    """Cached operator workspace for conditioned stepping at fixed (params, spec).

    The module-level homodyne_step and feedback_step build one of these on
    the fly when none is supplied; trajectory loops share a single
    instance.
    """

    def __init__(self, params: SystemParams, spec: FockBasisSpec):
        self.params = params
        self.spec = spec
        self.x = quadrature(spec, "position").matrix
        self.p = quadrature(spec, "momentum").matrix
        self.x2 = self.x @ self.x
        self.p2 = self.p @ self.p
        self.n_mat = number_op(spec).matrix
        a = annihilation(spec).matrix
        self.a = a
        self.ad = a.conj().T.copy()
        # truncated product, not n + 1: keeps the drift identical to the
        # matrix generator at the top Fock level
        self.aad = a @ self.ad
        self.m_rate = params.measurement_rate
        self.sqrt_eta_m = math.sqrt(params.eta * self.m_rate)
        self.sin_phi = math.sin(params.phi)
        self._e_ip = cmath.exp(1j * params.phi)
        evals, vecs = np.linalg.eigh(self.p)
        self._kick_evals = evals
        self._kick_vecs = vecs
        self._kick_vecs_h = vecs.conj().T.copy()

    def mean(self, op: np.ndarray, r: np.ndarray) -> float:
        # tr(op r) for Hermitian op and r
        return float((op * r.T).sum().real)

    def deterministic_pieces(self, r: np.ndarray):
        """Generator drift for a Hermitian state; returns (drift, x r, <X>)."""
        p = self.params
        nr = self.n_mat @ r
        out = -1j * p.nu * (nr - nr.conj().T)
        if p.gamma_h != 0.0:
            ar = self.a @ r
            adr = self.ad @ r
            aadr = self.aad @ r
            out = out + p.gamma_h * (
                ar @ self.ad
                + adr @ self.a
                - 0.5 * (nr + nr.conj().T)
                - 0.5 * (aadr + aadr.conj().T)
            )
        xr = self.x @ r
        if self.m_rate != 0.0:
            x2r = self.x2 @ r
            out = out + self.m_rate * (xr @ self.x - 0.5 * (x2r + x2r.conj().T))
        return out, xr, self.mean(self.x, r)

    def noise_term(self, r: np.ndarray, xr: np.ndarray, x_mean: float) -> np.ndarray:
        # sqrt(eta M) (i e^{i phi} r X - i e^{-i phi} X r + 2 sin(phi) <X> r)
        rx = xr.conj().T
        return self.sqrt_eta_m * (
            1j * self._e_ip * rx - 1j * np.conj(self._e_ip) * xr + (2.0 * self.sin_phi * x_mean) * r
        )

    def kick_matrix(self, theta: float) -> np.ndarray:
        phase = np.exp(1j * theta * self._kick_evals)
        return (self._kick_vecs * phase) @ self._kick_vecs_h


def homodyne_step(
    rho_c: DenseOperator,
    dW: float,
    params: SystemParams,
    spec: FockBasisSpec,
    dt: float,
    *,
    stepper: HomodyneStepper | None = None,
    tail_guard: float | None = None,
) -> tuple:
    """One Ito-Euler update of the conditioned state under homodyne watching.

    dW is the caller-supplied Wiener increment, Normal(0, dt). Returns
    (updated state, dI) where the simulated current increment is

        dI = 2 eta (chi^2/kappa) sin(phi) <X>_c dt + sqrt(eta chi^2/kappa) dW

    with <X>_c taken from the pre-step state. The updated state is
    hermitized and renormalized; its top-level population is guarded by
    tail_guard (default: the basis spec's tail_tolerance).
    """
    st = stepper if stepper is not None else HomodyneStepper(params, spec)
    guard = spec.tail_tolerance if tail_guard is None else tail_guard
    r = rho_c.matrix
    drift, xr, x_mean = st.deterministic_pieces(r)
    r1 = r + dt * drift
    if st.sqrt_eta_m != 0.0 and dW != 0.0:
        r1 = r1 + dW * st.noise_term(r, xr, x_mean)
    r1 = 0.5 * (r1 + r1.conj().T)
    tr = float(np.trace(r1).real)
    if abs(tr - 1.0) > _TRACE_TOL:
        raise StepTooLarge(f"conditioned trace drifted to {tr:.9f}; reduce dt")
    r1 = r1 / tr
    tail = float(r1[-1, -1].real)
    if tail > guard:
        raise TailTooHeavy(
            f"conditioned top-level population {tail:.3e} exceeds the guard {guard:.3e}",
            tail=tail,
        )
    dI = 2.0 * params.eta * st.m_rate * st.sin_phi * x_mean * dt + st.sqrt_eta_m * dW
    return DenseOperator(r1), dI


def feedback_step(
    rho_c: DenseOperator,
    dI: float,
    params: SystemParams,
    spec: FockBasisSpec,
    dt: float,
    *,
    stepper: HomodyneStepper | None = None,
) -> DenseOperator:
    """Instantaneous momentum kick exp(-i (g/2) P s) driven by the current.

    The kick scale combines the raw increment with a mean correction,

        s = -2 dI / (eta M) + 8 sin(phi) <X>_c dt,    M = chi^2 / kappa,

    which is exactly what makes the measurement + kick ensemble average
    reproduce the unconditioned feedback master equation; a kick
    proportional to dI alone leaves a spurious nonlinear drift behind.
    For a state with <X>_c = 0 (or with dt = 0) the kick reduces to the
    bare -2 dI / (eta M) form, and dI = 0 then gives the identity.
    """
    if params.g == 0.0:
        return rho_c
    st = stepper if stepper is not None else HomodyneStepper(params, spec)
    if st.m_rate == 0.0:
        raise ValueError("feedback kick needs a nonzero measurement coupling chi")
    x_mean = st.mean(st.x, rho_c.matrix)
    s = -2.0 * dI / (params.eta * st.m_rate) + 8.0 * st.sin_phi * x_mean * dt
    theta = -0.5 * params.g * s
    u = st.kick_matrix(theta)
    return DenseOperator(u @ rho_c.matrix @ u.conj().T)


@dataclasses.dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """One conditioned trajectory: grids, moment series, current, provenance.

    min_eig and uncertainty_min track the smallest state eigenvalue and
    the smallest Var(X) Var(P) product seen at any recorded time.
    """

    times: np.ndarray
    x_cond: np.ndarray
    p_cond: np.ndarray
    n_cond: np.ndarray
    current: np.ndarray
    seed: int
    final_state: DenseOperator
    min_eig: float
    uncertainty_min: float

    def __post_init__(self):
        length = self.times.shape[0]
        for name in ("times", "x_cond", "p_cond", "n_cond", "current"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (length,):
                raise ValueError("trajectory arrays must share one length")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def run_trajectory(
    params: SystemParams,
    spec: FockBasisSpec,
    cfg: IntegratorConfig,
    with_feedback: bool = True,
    *,
    initial: DenseOperator | None = None,
    traj_index: int = 0,
    antithetic: bool = False,
) -> TrajectoryRecord:
    """Simulate one conditioned trajectory, deterministically in (seed, traj_index).

    Alternates a measurement update and, when with_feedback, the current
    kick inside each dt. Noise comes from a counter-based generator keyed
    by the seed and the trajectory index, so ensembles are reproducible
    under any execution order; antithetic flips every increment's sign.
    The initial state defaults to a thermal state at params.n0.

    The explicit update multiplies the band-k coherence (the entries k
    places off the diagonal, which rotate at nu * k) by roughly
    1 + (nu * k * dt)^2 / 2 each step, so fast bands grow unless damping
    wins. Measurement noise seeds every band, so runs with chi > 0 are
    rejected outright when the accumulated gain on the top band could
    amplify roundoff into a visible positivity violation.
    """
    enforce_step_limit(
        cfg.dt,
        (
            params.nu,
            params.gamma_h,
            params.measurement_rate,
            abs(params.g * math.sin(params.phi)),
        ),
    )
    # e^15 on a 1e-16 seed stays below the 1e-9 scale probed by positivity checks
    band_gain = 0.5 * (params.nu * spec.n_trunc * cfg.dt) ** 2 * cfg.n_steps
    if params.chi != 0.0 and band_gain > 15.0:
        raise StepTooLarge(
            "the top coherence band would be amplified by exp("
            f"{band_gain:.1f}) over this run (nu * n_trunc * dt = "
            f"{params.nu * spec.n_trunc * cfg.dt:.3g} rad per step); "
            "slow the trap, shrink dt, or lower n_trunc"
        )
    rho = initial if initial is not None else thermal_state(spec, params.n0)
    if rho.dim != spec.dim:
        raise DimensionMismatch(f"initial state dim {rho.dim} does not match basis dim {spec.dim}")
    stepper = HomodyneStepper(params, spec)
    rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(traj_index,)))
    )
    steps = cfg.n_steps
    times = np.arange(steps + 1, dtype=float) * cfg.dt
    x_cond = np.empty(steps + 1)
    p_cond = np.empty(steps + 1)
    n_cond = np.empty(steps + 1)
    current = np.zeros(steps + 1)

    def record(k: int, r: np.ndarray):
        x_cond[k] = stepper.mean(stepper.x, r)
        p_cond[k] = stepper.mean(stepper.p, r)
        n_cond[k] = stepper.mean(stepper.n_mat, r)
        low = float(np.linalg.eigvalsh(r)[0])
        var_x = stepper.mean(stepper.x2, r) - x_cond[k] ** 2
        var_p = stepper.mean(stepper.p2, r) - p_cond[k] ** 2
        return low, var_x * var_p

    min_eig, uncertainty_min = record(0, rho.matrix)
    sqrt_dt = math.sqrt(cfg.dt)
    for k in range(1, steps + 1):
        dW = sqrt_dt * float(rng.standard_normal())
        if antithetic:
            dW = -dW
        rho, dI = homodyne_step(
            rho, dW, params, spec, cfg.dt, stepper=stepper, tail_guard=cfg.tail_guard
        )
        if with_feedback and params.g != 0.0:
            rho = feedback_step(rho, dI, params, spec, cfg.dt, stepper=stepper)
        current[k] = dI / cfg.dt
        low, unc = record(k, rho.matrix)
        min_eig = min(min_eig, low)
        uncertainty_min = min(uncertainty_min, unc)
    return TrajectoryRecord(
        times=times,
        x_cond=x_cond,
        p_cond=p_cond,
        n_cond=n_cond,
        current=current,
        seed=cfg.seed,
        final_state=rho,
        min_eig=min_eig,
        uncertainty_min=uncertainty_min,
    )


@dataclasses.dataclass(frozen=True, eq=False)
class EnsembleMoments:
    """Trajectory-ensemble means with standard errors, plus the mean final state."""

    times: np.ndarray
    x_mean: np.ndarray
    x_se: np.ndarray
    p_mean: np.ndarray
    p_se: np.ndarray
    n_mean: np.ndarray
    n_se: np.ndarray
    final_state: DenseOperator


def ensemble_mean(records, spec: FockBasisSpec) -> EnsembleMoments:
    """Average conditioned moments (and final states) across trajectories.

    Needs at least two records on identical time grids; standard errors
    use the sample standard deviation over trajectories.
    """
    if len(records) < 2:
        raise ValueError("ensemble averaging needs at least 2 records")
    t0 = records[0].times
    for rec in records[1:]:
        if rec.times.shape != t0.shape or not np.array_equal(rec.times, t0):
            raise DimensionMismatch("trajectory time grids differ")
    for rec in records:
        if rec.final_state.dim != spec.dim:
            raise DimensionMismatch("trajectory state dims do not match the basis spec")
    n = len(records)
    scale = 1.0 / math.sqrt(n)

    def stats(name):
        data = np.stack([getattr(rec, name) for rec in records])
        return data.mean(axis=0), data.std(axis=0, ddof=1) * scale

    x_mean, x_se = stats("x_cond")
    p_mean, p_se = stats("p_cond")
    n_mean, n_se = stats("n_cond")
    mean_state = sum(rec.final_state.matrix for rec in records) / n
    return EnsembleMoments(
        times=t0.copy(),
        x_mean=x_mean,
        x_se=x_se,
        p_mean=p_mean,
        p_se=p_se,
        n_mean=n_mean,
        n_se=n_se,
        final_state=DenseOperator(mean_state),
    )
