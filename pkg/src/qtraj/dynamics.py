"""Trajectory integration under either guidance law.

The equation of motion is ``m dx/dt = p_field(x, t)`` with the field given
by the Bohm phase gradient ("dbb") or its density-anchored revision
("revised").  Steps use classical fourth-order Runge-Kutta on a fixed base
grid, with dyadic halving of the step whenever a stage lands in a
node-floor region or the step implies a speed above the configured cap;
the step recovers toward the base size after accepted sub-steps.

Step times are bookkept as exact dyadic fractions of the base grid, so a
recorded sample at base cell k has bit-identical time in every trajectory
and the recording grid never drifts.  Trajectories in a batch evolve in
lockstep over numpy lanes; elementwise kernels make each lane's arithmetic
independent of the batch it rides in, so integrating one trajectory alone
reproduces its in-batch result bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sampling import THEORIES, InitialCondition
from .wavefield import (
    DoubleSlitParams,
    NodeSingularity,
    _p_bb_raw,
    _p_revised_raw,
    node_floor,
    p_bb,
    p_revised,
    rho,
)

#: Hard cap on step attempts per trajectory, as a multiple of the base-step
#: count; a lane still unfinished after this many attempts is declared
#: stalled.  Unreachable for the fields simulated here (rejection cascades
#: either recover within a few halvings or hit dt_min quickly); the cap is
#: per-lane bookkeeping, so it does not depend on batch composition.
_MAX_ATTEMPT_FACTOR = 64

STATUS_COMPLETED = "completed"
STATUS_EXITED = "exited_domain"
STATUS_STALLED = "node_stalled"


@dataclass(frozen=True)
class IntegrationSchedule:
    """Time grid, step-control limits, and spatial domain for one integration."""

    t0: float
    t_final: float
    dt_base: float
    record_stride: int
    dt_min: float
    max_speed: float
    x_bound: float

    def __post_init__(self) -> None:
        if not self.t_final > self.t0:
            raise ValueError(f"t_final must exceed t0, got [{self.t0!r}, {self.t_final!r}]")
        if not 0.0 < self.dt_min <= self.dt_base:
            raise ValueError(f"need 0 < dt_min <= dt_base, got dt_min={self.dt_min!r}, dt_base={self.dt_base!r}")
        if self.record_stride < 1:
            raise ValueError(f"record_stride must be >= 1, got {self.record_stride!r}")
        if not self.max_speed > 0:
            raise ValueError(f"max_speed must be positive, got {self.max_speed!r}")
        if not self.x_bound > 0:
            raise ValueError(f"x_bound must be positive, got {self.x_bound!r}")

    @property
    def n_base(self) -> int:
        """Number of base cells; dt_base is a target, the span divides exactly."""
        return max(1, round((self.t_final - self.t0) / self.dt_base))

    @property
    def dt_effective(self) -> float:
        return (self.t_final - self.t0) / self.n_base

    @property
    def max_halvings(self) -> int:
        """Largest halving level j with dt_effective / 2**j still >= dt_min."""
        return max(0, math.floor(math.log2(self.dt_effective / self.dt_min) + 1e-12))


def default_schedule(
    params: DoubleSlitParams,
    t0: float = 0.0,
    t_final: float = 5.0,
    dt_base: float = 0.005,
    record_stride: int = 25,
) -> IntegrationSchedule:
    """Schedule with the default step control: speed cap 50 sigma_p / m,
    domain bound x_half + 40 sigma, minimum step dt_base / 2**20."""
    return IntegrationSchedule(
        t0=t0,
        t_final=t_final,
        dt_base=dt_base,
        record_stride=record_stride,
        dt_min=dt_base / 2**20,
        max_speed=50.0 * params.sigma_p / params.units.mass,
        x_bound=params.x_half + 40.0 * params.sigma,
    )


@dataclass
class Trajectory:
    """Recorded samples of one trajectory and how the integration ended."""

    ic: InitialCondition
    t: np.ndarray
    x: np.ndarray
    p: np.ndarray
    status: str

    def __post_init__(self) -> None:
        if not (len(self.t) == len(self.x) == len(self.p)):
            raise ValueError("t, x, p must have equal lengths")

    @property
    def samples(self) -> list[tuple[float, float, float]]:
        return list(zip(self.t.tolist(), self.x.tolist(), self.p.tolist()))


def guidance_velocity(theory: str, ic: InitialCondition, x, t, params: DoubleSlitParams):
    """Velocity p_field / m of the selected guidance law; raises at nodes."""
    if theory == "dbb":
        return p_bb(x, t, params) / params.units.mass
    if theory == "revised":
        return p_revised(x, t, ic, params) / params.units.mass
    raise ValueError(f"theory must be one of {THEORIES}, got {theory!r}")


def _anchor_offsets(ics: list[InitialCondition], params: DoubleSlitParams) -> np.ndarray:
    """Per-trajectory correction strength p0 - p_bb(x0, t0) of the revised law."""
    x0 = np.array([ic.x0 for ic in ics], dtype=float)
    t0 = ics[0].t0
    p0 = np.array([ic.p0 for ic in ics], dtype=float)
    base, valid = _p_bb_raw(x0, t0, params)
    if not np.all(valid):
        raise NodeSingularity("initial condition sits below the node floor")
    return p0 - base


class _FieldEvaluator:
    """Vectorized (momentum, validity) evaluation for a batch of trajectories."""

    def __init__(self, theory: str, ics: list[InitialCondition], params: DoubleSlitParams):
        self.theory = theory
        self.params = params
        if theory == "revised":
            self.x0 = np.array([ic.x0 for ic in ics], dtype=float)
            self.delta_p = _anchor_offsets(ics, params)
        else:
            self.x0 = None
            self.delta_p = None

    def __call__(self, x, t, lanes):
        """Momentum and validity at per-lane (x, t); ``lanes`` selects anchors."""
        if self.theory == "dbb":
            return _p_bb_raw(x, t, self.params)
        return _p_revised_raw(x, t, self.params, self.x0[lanes], self.delta_p[lanes])


def integrate_batch(
    ics: list[InitialCondition],
    schedule: IntegrationSchedule,
    params: DoubleSlitParams,
) -> list[Trajectory]:
    """Integrate a batch of same-theory trajectories in vectorized lockstep."""
    if not ics:
        return []
    theory = ics[0].theory
    if any(ic.theory != theory for ic in ics):
        raise ValueError("all initial conditions in a batch must share one theory")
    if any(ic.t0 != schedule.t0 for ic in ics):
        raise ValueError("initial-condition t0 must match the schedule t0")

    n = len(ics)
    n_base = schedule.n_base
    dt_eff = schedule.dt_effective
    span = schedule.t_final - schedule.t0
    stride = schedule.record_stride
    j_max = schedule.max_halvings
    field = _FieldEvaluator(theory, ics, params)
    mass = params.units.mass

    x = np.array([ic.x0 for ic in ics], dtype=float)
    if np.any(rho(x, schedule.t0, params) <= node_floor(params, schedule.t0)):
        raise NodeSingularity("initial condition sits below the node floor")
    k = np.zeros(n, dtype=np.int64)  # completed base cells
    m = np.zeros(n, dtype=np.int64)  # sub-steps completed inside the current cell
    j = np.zeros(n, dtype=np.int64)  # halving level: step = dt_effective / 2**j
    active = np.ones(n, dtype=bool)
    status = np.full(n, STATUS_COMPLETED, dtype=object)

    p_cur, valid0 = field(x, schedule.t0, np.arange(n))
    if not np.all(valid0):
        raise NodeSingularity("guidance field undefined at an initial condition")

    max_records = n_base // stride + 3  # start, grid records, possible off-grid tail
    rec_t = np.empty((n, max_records), dtype=float)
    rec_x = np.empty((n, max_records), dtype=float)
    rec_p = np.empty((n, max_records), dtype=float)
    rec_n = np.zeros(n, dtype=np.int64)
    rec_t[:, 0] = schedule.t0
    rec_x[:, 0] = x
    rec_p[:, 0] = p_cur
    rec_n[:] = 1

    def times(kk, mm, jj):
        frac = (kk + np.ldexp(mm.astype(float), -jj)) / n_base
        return schedule.t0 + frac * span

    def finish(lanes, new_status):
        """Deactivate lanes; keep the current state as a final sample if off-grid."""
        status[lanes] = new_status
        active[lanes] = False
        off_grid = (m[lanes] != 0) | ((k[lanes] % stride != 0) & (k[lanes] != n_base))
        tail = lanes[off_grid]
        if tail.size:
            slot = rec_n[tail]
            rec_t[tail, slot] = times(k[tail], m[tail], j[tail])
            rec_x[tail, slot] = x[tail]
            rec_p[tail, slot] = p_cur[tail]
            rec_n[tail] = slot + 1

    max_attempts = _MAX_ATTEMPT_FACTOR * n_base + 4096
    for _ in range(max_attempts):
        lanes = np.flatnonzero(active)
        if lanes.size == 0:
            break
        xa, ka, ma, ja = x[lanes], k[lanes], m[lanes], j[lanes]
        dt = np.ldexp(dt_eff, -ja)
        t_a = times(ka, ma, ja)
        t_h = schedule.t0 + ((ka + np.ldexp(2.0 * ma + 1.0, -(ja + 1))) / n_base) * span
        t_n = schedule.t0 + ((ka + np.ldexp(ma + 1.0, -ja)) / n_base) * span

        with np.errstate(invalid="ignore", over="ignore", under="ignore", divide="ignore"):
            v1, ok1 = field(xa, t_a, lanes)
            v1 = v1 / mass
            v2, ok2 = field(xa + 0.5 * dt * v1, t_h, lanes)
            v2 = v2 / mass
            v3, ok3 = field(xa + 0.5 * dt * v2, t_h, lanes)
            v3 = v3 / mass
            v4, ok4 = field(xa + dt * v3, t_n, lanes)
            v4 = v4 / mass
            dx = (dt / 6.0) * (v1 + 2.0 * v2 + 2.0 * v3 + v4)
            x_new = xa + dx
            p_new, ok5 = field(x_new, t_n, lanes)
        ok = (
            ok1 & ok2 & ok3 & ok4 & ok5
            & np.isfinite(x_new)
            & (np.abs(dx) <= schedule.max_speed * dt)
        )

        rejected = lanes[~ok]
        if rejected.size:
            stalled = rejected[j[rejected] + 1 > j_max]
            retry = rejected[j[rejected] + 1 <= j_max]
            j[retry] += 1
            m[retry] *= 2
            if stalled.size:
                finish(stalled, STATUS_STALLED)

        accepted = lanes[ok]
        if accepted.size:
            x[accepted] = x_new[ok]
            p_cur[accepted] = p_new[ok]
            m[accepted] += 1
            carry = accepted[m[accepted] == 2 ** j[accepted]]
            k[carry] += 1
            m[carry] = 0

            at_cell = accepted[m[accepted] == 0]
            to_record = at_cell[(k[at_cell] % stride == 0) | (k[at_cell] == n_base)]
            if to_record.size:
                slot = rec_n[to_record]
                rec_t[to_record, slot] = times(k[to_record], m[to_record], j[to_record])
                rec_x[to_record, slot] = x[to_record]
                rec_p[to_record, slot] = p_cur[to_record]
                rec_n[to_record] = slot + 1

            done = accepted[(k[accepted] == n_base) & (m[accepted] == 0)]
            if done.size:
                status[done] = STATUS_COMPLETED
                active[done] = False
            out = accepted[active[accepted] & (np.abs(x[accepted]) > schedule.x_bound)]
            if out.size:
                finish(out, STATUS_EXITED)

            recover = accepted[active[accepted] & (j[accepted] > 0) & (m[accepted] % 2 == 0)]
            j[recover] -= 1
            m[recover] //= 2
    else:
        finish(np.flatnonzero(active), STATUS_STALLED)

    return [
        Trajectory(
            ic=ics[i],
            t=rec_t[i, : rec_n[i]].copy(),
            x=rec_x[i, : rec_n[i]].copy(),
            p=rec_p[i, : rec_n[i]].copy(),
            status=str(status[i]),
        )
        for i in range(n)
    ]


def integrate(ic: InitialCondition, schedule: IntegrationSchedule, params: DoubleSlitParams) -> Trajectory:
    """Integrate a single trajectory (identical to its result in any batch)."""
    return integrate_batch([ic], schedule, params)[0]


def momentum_along(trajectory: Trajectory, params: DoubleSlitParams) -> np.ndarray:
    """Re-evaluate the guidance momentum at every recorded (x, t) sample.

    Idempotent with the momenta stored during integration; a NodeSingularity
    here means stored samples violate the node floor, which integration
    acceptance rules out.
    """
    ic = trajectory.ic
    if ic.theory == "dbb":
        value, valid = _p_bb_raw(trajectory.x, trajectory.t, params)
    else:
        base, bvalid = _p_bb_raw(np.asarray(ic.x0, dtype=float), ic.t0, params)
        if not np.all(bvalid):
            raise NodeSingularity("initial condition sits below the node floor")
        value, valid = _p_revised_raw(trajectory.x, trajectory.t, params, ic.x0, ic.p0 - base)
    if not np.all(valid):
        raise NodeSingularity("stored trajectory sample violates the node floor")
    return np.asarray(value, dtype=float)
