"""Simulated coupled-tank process with tunable controllers.

Three tanks in series: a pump fills the first tank (B2), a controllable
valve V1 drains it into B3, a fixed pipe connects B3 to B4, and valve V6
drains B4 into the reservoir. States are the three volumes in liters,
inputs are pump and valve commands in percent. Flows follow a Torricelli
law in the volume differences, with coefficients calibrated so that the
nominal operating point (volumes [8, 6, 5] l, inputs [70.7, 43.3, 44.7] %)
is an exact equilibrium. The linear controllers are designed from the
model linearized at that operating point.

Episodes run in a lower-volume region (start [4, 3, 2.5] l) so that the
overflow guard on B2 (7 to 8 l depending on the benchmark case) is
reachable by aggressive controllers but not violated at rest. A simulation
aborts, and the evaluation counts as a crash, the first time V2 reaches
the case's threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy.linalg import expm

from .domain import EvalOutcome, SearchDomain

# Nominal operating point used for calibration and controller design.
OPERATING_STATE = (8.0, 6.0, 5.0)        # liters
OPERATING_INPUT = (70.7, 43.3, 44.7)     # percent (pump, V1, V6)

# Episode region: start volumes, reference schedule, measurement noise.
EPISODE_START = (4.0, 3.0, 2.5)          # liters, equilibrium at ~[50, 43.3, 44.7] %
PI_STEP_TIME = 5.0                       # s, reference step instant for PI cases
PI_STEP_SIZE = 1.0                       # l, step on the V4 reference
PI_EPISODE_TIME = 120.0                  # s
LQI_STEP_TIMES = (5.0, 120.0)            # s, up step and return step
LQI_STEP_SIZE = 0.5                      # l, applied to all three references
LQI_EPISODE_TIME = 240.0                 # s
SIGMA_MEAS = 0.01                        # l (and l/s for the flow sensor)

# Hand-fixed inner flow loop used by the two-parameter PI cases.
INNER_KP_DEFAULT = 20.0                  # % per (l/s)
INNER_KI_DEFAULT = 150.0                 # % per (l/s)/s

LQI_INT_LIMIT = 20.0                     # l*s clamp on each integral error state

DARE_TOL = 1e-10
DARE_MAX_ITER = 100


class TankState(NamedTuple):
    """Tank volumes in liters; construct via :meth:`make` to clamp at zero."""

    v2: float
    v3: float
    v4: float

    @classmethod
    def make(cls, v2: float, v3: float, v4: float) -> "TankState":
        return cls(max(v2, 0.0), max(v3, 0.0), max(v4, 0.0))


class ControlInput(NamedTuple):
    """Actuator commands in percent; construct via :meth:`make` to saturate."""

    u_pump: float
    u_v1: float
    u_v6: float

    @classmethod
    def make(cls, u_pump: float, u_v1: float, u_v6: float) -> "ControlInput":
        return cls(
            min(max(u_pump, 0.0), 100.0),
            min(max(u_v1, 0.0), 100.0),
            min(max(u_v6, 0.0), 100.0),
        )


@dataclass(frozen=True)
class TankParams:
    """Flow coefficients of the surrogate process.

    pump_gain maps pump percent to inflow (l/s per %); valve_coeffs are the
    V1 and V6 coefficients (l/s per unit command per sqrt(l)); the fixed
    pipe coefficient covers the uncontrolled B3-B4 connection.
    """

    pump_gain: float
    valve_coeffs: tuple[float, float]  # (c_v1, c_v6)
    fixed_pipe_coeff: float
    dt: float = 0.1

    def __post_init__(self):
        if self.pump_gain <= 0 or self.fixed_pipe_coeff <= 0 or min(self.valve_coeffs) <= 0:
            raise ValueError("all flow coefficients must be positive")
        if self.dt <= 0:
            raise ValueError("dt must be positive")


def calibrate() -> TankParams:
    """Solve the flow coefficients so the operating point is an equilibrium.

    All four flows must balance at the operating point; the fixed pipe
    coefficient is pinned to one flow unit and the three remaining
    coefficients follow algebraically.
    """
    v2, v3, v4 = OPERATING_STATE
    u_p, u_v1, u_v6 = OPERATING_INPUT
    c_pipe = 1.0
    q_eq = c_pipe * math.sqrt(v3 - v4)
    c_v1 = q_eq / ((u_v1 / 100.0) * math.sqrt(v2 - v3))
    c_v6 = q_eq / ((u_v6 / 100.0) * math.sqrt(v4))
    pump_gain = q_eq / u_p
    return TankParams(pump_gain=pump_gain, valve_coeffs=(c_v1, c_v6), fixed_pipe_coeff=c_pipe)


_DEFAULT_PARAMS = calibrate()


def default_params() -> TankParams:
    return _DEFAULT_PARAMS


def _signed_sqrt(x: float) -> float:
    return math.sqrt(x) if x >= 0.0 else -math.sqrt(-x)


def dynamics(s, a, p: TankParams) -> tuple[float, float, float]:
    """Volume rates of change (l/s) for state ``s`` and input ``a``.

    Valve and pipe flows follow sign(dV) * sqrt(|dV|) in the volume
    differences, so reverse flow is possible; the outlet flow stops when B4
    is empty. Mass balance: the three rates sum to pump inflow minus outlet
    outflow.
    """
    v2, v3, v4 = s
    u_p, u_v1, u_v6 = a
    c_v1, c_v6 = p.valve_coeffs
    q_pump = p.pump_gain * u_p
    q_v1 = c_v1 * (u_v1 / 100.0) * _signed_sqrt(v2 - v3)
    q_pipe = p.fixed_pipe_coeff * _signed_sqrt(v3 - v4)
    q_v6 = c_v6 * (u_v6 / 100.0) * math.sqrt(max(v4, 0.0))
    return (q_pump - q_v1, q_v1 - q_pipe, q_pipe - q_v6)


def _rk4_step(s, a, p: TankParams) -> tuple[float, float, float]:
    """One fixed-step RK4 update, volumes clamped at zero afterwards."""
    dt = p.dt
    k1 = dynamics(s, a, p)
    s2 = (s[0] + 0.5 * dt * k1[0], s[1] + 0.5 * dt * k1[1], s[2] + 0.5 * dt * k1[2])
    k2 = dynamics(s2, a, p)
    s3 = (s[0] + 0.5 * dt * k2[0], s[1] + 0.5 * dt * k2[1], s[2] + 0.5 * dt * k2[2])
    k3 = dynamics(s3, a, p)
    s4 = (s[0] + dt * k3[0], s[1] + dt * k3[1], s[2] + dt * k3[2])
    k4 = dynamics(s4, a, p)
    c = dt / 6.0
    return (
        max(s[0] + c * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]), 0.0),
        max(s[1] + c * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]), 0.0),
        max(s[2] + c * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]), 0.0),
    )


@lru_cache(maxsize=8)
def linearize_discretize(p: TankParams) -> tuple[np.ndarray, np.ndarray]:
    """Discrete-time (A, B) at the operating point, zero-order hold at 1/dt.

    Continuous Jacobians come from central finite differences (step 1e-6),
    the discretization from the matrix exponential of the augmented
    [A_c B_c; 0 0] block, which is exact under a held input.
    """
    s0 = np.array(OPERATING_STATE)
    a0 = np.array(OPERATING_INPUT)
    eps = 1e-6
    A_c = np.empty((3, 3))
    B_c = np.empty((3, 3))
    for j in range(3):
        dv = np.zeros(3)
        dv[j] = eps
        A_c[:, j] = (
            np.array(dynamics(s0 + dv, a0, p)) - np.array(dynamics(s0 - dv, a0, p))
        ) / (2.0 * eps)
        B_c[:, j] = (
            np.array(dynamics(s0, a0 + dv, p)) - np.array(dynamics(s0, a0 - dv, p))
        ) / (2.0 * eps)
    M = np.zeros((6, 6))
    M[:3, :3] = A_c
    M[:3, 3:] = B_c
    E = expm(M * p.dt)
    return E[:3, :3], E[:3, 3:]


class DareError(RuntimeError):
    """The Riccati iteration failed to converge; the gains are rejected."""


def solve_dare(A, B, Q, R) -> tuple[np.ndarray, np.ndarray]:
    """Stabilizing solution of the discrete algebraic Riccati equation.

    Fixed point of P = Q + A'PA - A'PB (R + B'PB)^-1 B'PA, found with the
    structure-preserving doubling iteration (each sweep composes the Riccati
    recursion with itself, so convergence is quadratic; the plant's slow
    modes would need tens of thousands of plain value-iteration sweeps).
    Stops when the update falls below 1e-10 in max norm and returns (P, K)
    with the state-feedback gain K = (R + B'PB)^-1 B'PA.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = A.shape[0]
    eye = np.eye(n)
    Ak = A.copy()
    Gk = B @ np.linalg.solve(R, B.T)
    Hk = Q.copy()
    try:
        for _ in range(DARE_MAX_ITER):
            W = np.linalg.solve(eye + Gk @ Hk, Ak)       # (I + G H)^-1 A
            HA = Hk @ W                                   # H (I + G H)^-1 A
            H_next = Hk + Ak.T @ HA
            G_next = Gk + Ak @ np.linalg.solve(eye + Gk @ Hk, Gk @ Ak.T)
            A_next = Ak @ W
            delta = np.max(np.abs(H_next - Hk))
            Ak, Gk, Hk = A_next, G_next, 0.5 * (H_next + H_next.T)
            if delta <= DARE_TOL:
                P = Hk
                BtP = B.T @ P
                K = np.linalg.solve(R + BtP @ B, BtP @ A)
                if not np.all(np.isfinite(K)):
                    raise DareError("Riccati solution is not finite")
                return P, K
    except np.linalg.LinAlgError as exc:
        raise DareError(f"Riccati iteration broke down: {exc}") from exc
    raise DareError("Riccati iteration did not converge")


# --- controller parameterizations -------------------------------------------


@dataclass(frozen=True)
class PIGains:
    """Outer level loop only; the inner flow loop uses hand-fixed gains."""

    kp_out: float
    ki_out: float


@dataclass(frozen=True)
class CascadedPIGains:
    """Full cascade: outer level loop, inner flow loop, and the V1 position."""

    kp_out: float
    ki_out: float
    kp_in: float
    ki_in: float
    u_v1: float


@dataclass(frozen=True)
class LQIWeights:
    """Base-10 exponents of the LQI weighting matrices.

    R = diag(1, 10^x1, 10^x2) on the inputs, Q = diag(10^x3 .. 10^x8) on the
    three volume deviations followed by the three integral error states.
    """

    exponents: tuple[float, ...]

    def __post_init__(self):
        exps = tuple(float(v) for v in self.exponents)
        if len(exps) != 8:
            raise ValueError("LQI weighting takes exactly 8 exponents")
        object.__setattr__(self, "exponents", exps)


ControllerSpec = PIGains | CascadedPIGains | LQIWeights


class _PI:
    """Positional PI with output saturation and clamping anti-windup."""

    def __init__(self, kp: float, ki: float, lo: float, hi: float, dt: float):
        self.kp, self.ki = kp, ki
        self.lo, self.hi = lo, hi
        self.dt = dt
        self.integral = 0.0

    def update(self, err: float) -> float:
        new_int = self.integral + err * self.dt
        u = self.kp * err + self.ki * new_int
        if u > self.hi:
            u = self.hi
            if err > 0.0:
                new_int = self.integral  # hold the integrator while saturated
        elif u < self.lo:
            u = self.lo
            if err < 0.0:
                new_int = self.integral
        self.integral = new_int
        return u


class _CascadedPump:
    """Outer PI commands a pump-flow setpoint; inner PI tracks it with U_P.

    The outer integral gain is specified in repeats per minute (industrial
    convention), the inner one per second.
    """

    def __init__(self, gains, p: TankParams):
        q_max = p.pump_gain * 100.0
        if isinstance(gains, PIGains):
            kp_in, ki_in, u_v1 = INNER_KP_DEFAULT, INNER_KI_DEFAULT, OPERATING_INPUT[1]
        else:
            kp_in, ki_in, u_v1 = gains.kp_in, gains.ki_in, gains.u_v1
        self.outer = _PI(gains.kp_out, gains.ki_out / 60.0, 0.0, q_max, p.dt)
        self.inner = _PI(kp_in, ki_in, 0.0, 100.0, p.dt)
        self.u_v1 = min(max(u_v1, 0.0), 100.0)
        self.u_v6 = OPERATING_INPUT[2]

    def update(self, volumes, flow, refs) -> tuple[float, float, float]:
        q_sp = self.outer.update(refs[2] - volumes[2])
        u_pump = self.inner.update(q_sp - flow)
        return (u_pump, self.u_v1, self.u_v6)


class _LQI:
    """Static LQI gain around the nominal input, with clamped integrators."""

    def __init__(self, K: np.ndarray, dt: float):
        self.K = K
        self.dt = dt
        self.u_ff = np.array(OPERATING_INPUT)
        self.e_int = np.zeros(3)

    def update(self, volumes, flow, refs) -> tuple[float, float, float]:
        err = np.asarray(volumes) - np.asarray(refs)
        self.e_int = np.clip(self.e_int + self.dt * err, -LQI_INT_LIMIT, LQI_INT_LIMIT)
        u = self.u_ff - self.K @ np.concatenate([err, self.e_int])
        return (
            min(max(u[0], 0.0), 100.0),
            min(max(u[1], 0.0), 100.0),
            min(max(u[2], 0.0), 100.0),
        )


def synthesize_lqi(weights: LQIWeights, p: TankParams) -> np.ndarray:
    """LQI gain for the integrator-augmented linearized plant (3x6).

    The augmented state is [volume deviation; integral of tracking error]
    with e_int <- e_int + dt * (s - s_ref). Raises :class:`DareError` when
    the Riccati iteration does not converge for these weights.
    """
    A, B = linearize_discretize(p)
    A_aug = np.zeros((6, 6))
    A_aug[:3, :3] = A
    A_aug[3:, :3] = p.dt * np.eye(3)
    A_aug[3:, 3:] = np.eye(3)
    B_aug = np.vstack([B, np.zeros((3, 3))])
    x = weights.exponents
    R = np.diag([1.0, 10.0 ** x[0], 10.0 ** x[1]])
    Q = np.diag([10.0 ** e for e in x[2:]])
    _, K = solve_dare(A_aug, B_aug, Q, R)
    return K


def _make_controller(spec: ControllerSpec, p: TankParams):
    if isinstance(spec, (PIGains, CascadedPIGains)):
        return _CascadedPump(spec, p)
    if isinstance(spec, LQIWeights):
        return _LQI(synthesize_lqi(spec, p), p.dt)
    raise TypeError(f"unknown controller spec {type(spec).__name__}")


# --- episodes ----------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    """Sampled closed-loop run; inputs are held over [t[i], t[i+1])."""

    t: np.ndarray       # (n+1,)
    states: np.ndarray  # (n+1, 3) volumes
    inputs: np.ndarray  # (n, 3) actuator commands
    refs: np.ndarray    # (n+1, 3) reference volumes


@dataclass(frozen=True)
class EpisodeResult:
    outcome: EvalOutcome
    trajectory: Trajectory
    crash_time: float | None  # seconds, set iff the episode crashed


class UnsupportedCaseError(ValueError):
    """Requested benchmark case is unknown or out of scope."""


@dataclass(frozen=True)
class BenchmarkCase:
    """One controller tuning problem: bounds, objective, and crash rule."""

    name: str
    controller: str            # "pi" | "cascaded_pi" | "lqi"
    domain: SearchDomain
    objective: str             # "rmse" | "mae"
    crash_threshold: float     # liters on V2
    episode_time: float        # seconds
    start_lower: np.ndarray    # feasible low-performance start box (raw units)
    start_upper: np.ndarray
    objective_scale: float     # typical objective magnitude, standardizes GP values
    sigma_meas: float = SIGMA_MEAS

    @property
    def d(self) -> int:
        return self.domain.d

    def make_spec(self, x_raw) -> ControllerSpec:
        x = np.asarray(x_raw, dtype=float)
        if x.shape != (self.d,):
            raise ValueError(f"case {self.name} takes {self.d} parameters")
        if self.controller == "pi":
            return PIGains(x[0], x[1])
        if self.controller == "cascaded_pi":
            return CascadedPIGains(x[0], x[1], x[2], x[3], x[4])
        return LQIWeights(tuple(x))

    def reference_profile(self, t: np.ndarray) -> np.ndarray:
        """Reference volumes per sample time, shape (len(t), 3)."""
        refs = np.tile(np.array(EPISODE_START), (t.size, 1))
        if self.controller == "lqi":
            up = (t >= LQI_STEP_TIMES[0]) & (t < LQI_STEP_TIMES[1])
            refs[up] += LQI_STEP_SIZE
        else:
            refs[t >= PI_STEP_TIME, 2] += PI_STEP_SIZE
        return refs


def run_episode(
    spec: ControllerSpec,
    case: BenchmarkCase,
    seed: int,
    params: TankParams | None = None,
) -> EpisodeResult:
    """Simulate one closed-loop episode and score it.

    The controller runs synchronously with the RK4 integration at 1/dt Hz on
    measurements corrupted by seeded Gaussian noise. The episode aborts with
    a crash the first time V2 reaches the case threshold, or if the state
    leaves the reals; controller synthesis failures count as a crash at time
    zero.
    """
    p = params if params is not None else default_params()
    n = round(case.episode_time / p.dt)
    t = np.arange(n + 1) * p.dt
    refs = case.reference_profile(t)

    try:
        controller = _make_controller(spec, p)
    except DareError:
        empty = Trajectory(t[:1], np.array([EPISODE_START]), np.empty((0, 3)), refs[:1])
        return EpisodeResult(EvalOutcome.crash(), empty, 0.0)

    noise = np.random.default_rng(seed).normal(0.0, case.sigma_meas, size=(n, 4))
    states = np.empty((n + 1, 3))
    inputs = np.empty((n, 3))
    s = EPISODE_START
    states[0] = s
    u_pump_prev = 0.0

    crash_at = None
    steps = 0
    for i in range(n):
        meas = (s[0] + noise[i, 0], s[1] + noise[i, 1], s[2] + noise[i, 2])
        flow_meas = p.pump_gain * u_pump_prev + noise[i, 3]
        a = controller.update(meas, flow_meas, refs[i])
        s = _rk4_step(s, a, p)
        inputs[i] = a
        states[i + 1] = s
        u_pump_prev = a[0]
        steps = i + 1
        if not all(math.isfinite(v) for v in s) or s[0] >= case.crash_threshold:
            crash_at = t[i + 1]
            break

    traj = Trajectory(t[: steps + 1], states[: steps + 1], inputs[:steps], refs[: steps + 1])
    if crash_at is not None:
        return EpisodeResult(EvalOutcome.crash(), traj, crash_at)
    value = _rmse(traj) if case.objective == "rmse" else _mae(traj)
    return EpisodeResult(EvalOutcome.success(value), traj, None)


def _rmse(traj: Trajectory) -> float:
    """Root mean square V4 tracking error over the episode."""
    err = traj.states[1:, 2] - traj.refs[1:, 2]
    return float(np.sqrt(np.mean(err**2)))


def _mae(traj: Trajectory) -> float:
    """Mean absolute tracking error, weighted 0.5 / 0.25 / 0.25 over the tanks."""
    err = np.abs(traj.states[1:] - traj.refs[1:])
    mae = np.mean(err, axis=0)
    return float(0.5 * mae[0] + 0.25 * mae[1] + 0.25 * mae[2])


def objective_rmse(res: EpisodeResult) -> float:
    """RMSE objective of a successful episode; crashed episodes have none."""
    if res.outcome.crashed:
        raise ValueError("objective is undefined for a crashed episode")
    return _rmse(res.trajectory)


def objective_mae(res: EpisodeResult) -> float:
    """Weighted MAE objective of a successful episode."""
    if res.outcome.crashed:
        raise ValueError("objective is undefined for a crashed episode")
    return _mae(res.trajectory)


# --- benchmark case registry --------------------------------------------------

_PI_DOMAIN = dict(lower=np.array([0.0, 0.0]), upper=np.array([50.0, 5.0]))
_PI_START = dict(start_lower=np.array([0.5, 0.01]), start_upper=np.array([2.0, 0.1]))


def _cases() -> dict[str, BenchmarkCase]:
    return {
        "pi_8l": BenchmarkCase(
            name="pi_8l",
            controller="pi",
            domain=SearchDomain(**_PI_DOMAIN),
            objective="rmse",
            crash_threshold=8.0,
            episode_time=PI_EPISODE_TIME,
            objective_scale=0.5,
            **_PI_START,
        ),
        "pi_7l": BenchmarkCase(
            name="pi_7l",
            controller="pi",
            domain=SearchDomain(**_PI_DOMAIN),
            objective="rmse",
            crash_threshold=7.0,
            episode_time=PI_EPISODE_TIME,
            objective_scale=0.5,
            **_PI_START,
        ),
        "cascaded_pi": BenchmarkCase(
            name="cascaded_pi",
            controller="cascaded_pi",
            domain=SearchDomain(
                lower=np.array([0.0, 0.0, 0.0, 0.0, 20.0]),
                upper=np.array([50.0, 5.0, 100.0, 400.0, 100.0]),
            ),
            objective="rmse",
            crash_threshold=8.0,
            episode_time=PI_EPISODE_TIME,
            start_lower=np.array([0.5, 0.01, 10.0, 100.0, 40.0]),
            start_upper=np.array([2.0, 0.1, 30.0, 200.0, 60.0]),
            objective_scale=0.5,
        ),
        "lqi": BenchmarkCase(
            name="lqi",
            controller="lqi",
            domain=SearchDomain(lower=np.full(8, -2.0), upper=np.full(8, 2.0)),
            objective="mae",
            crash_threshold=7.5,
            episode_time=LQI_EPISODE_TIME,
            start_lower=np.full(8, -0.5),
            start_upper=np.full(8, 0.5),
            objective_scale=0.25,
        ),
    }


def case_names() -> tuple[str, ...]:
    return tuple(_cases())


def make_case(name: str) -> BenchmarkCase:
    """Look up a benchmark case by name."""
    cases = _cases()
    if name in cases:
        return cases[name]
    if name == "mpc_ekf":
        raise UnsupportedCaseError(
            "case 'mpc_ekf' is not supported: the MPC benchmark needs a QP and "
            "disturbance-estimator stack this package does not ship"
        )
    raise UnsupportedCaseError(f"unknown case {name!r}; available: {', '.join(cases)}")


class CaseObjective:
    """Adapts a benchmark case to the optimizer's objective interface."""

    def __init__(self, case: BenchmarkCase, params: TankParams | None = None):
        self.case = case
        self.params = params if params is not None else default_params()

    def domain(self) -> SearchDomain:
        return self.case.domain

    def evaluate(self, x_raw, seed: int) -> EvalOutcome:
        spec = self.case.make_spec(x_raw)
        return run_episode(spec, self.case, seed, self.params).outcome
