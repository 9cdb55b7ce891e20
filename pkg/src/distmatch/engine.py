"""The cycle loop: select samples, drive agents for ``H`` steps, record metrics.

Every cycle starts with a selection round that freezes one ``CyclePlan``;
agents then track their barycenters for ``H`` steps.  At both cycle
boundaries the engine records the surrogate cost ``psi`` (plan-weighted
squared distances from agents to their samples) and the exact Wasserstein
distance between the team and the target measure.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .assignment import centralized_selection
from .control import (
    LtiModel,
    lti_optimal_controls,
    nonlinear_horizon_controls,
    nonlinear_one_step_control,
    rollout,
    simulate,
)
from .decentral import MemoryStore, build_comm_graph, decentralized_selection
from .errors import InvariantViolation
from .measures import DiscreteMeasure, make_uniform_measure, w2_exact

log = logging.getLogger(__name__)

FLAG_TOL = 1e-9
TERMINAL_TOL = 1e-8


@dataclass
class Scenario:
    """Fully built inputs of a run."""

    mode: str
    model: object
    targets: DiscreteMeasure
    initial: np.ndarray
    horizon: int
    cycles: int = 20
    gamma: float = 0.0
    r_c: float = math.inf
    staleness: int | None = None
    drop_prob: float = 0.0
    controller: str = "one_step"
    order: str = "ascending"
    publish: str = "allocation"
    w2_every_step: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("centralized", "decentralized"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.order not in ("ascending", "shuffle"):
            raise ValueError(f"unknown agent order {self.order!r}")
        if self.controller not in ("one_step", "horizon"):
            raise ValueError(f"unknown controller {self.controller!r}")
        self.initial = np.atleast_2d(np.asarray(self.initial, dtype=float))


@dataclass
class SimState:
    cycle: int
    step: int
    states: np.ndarray
    plan: object = None
    store: MemoryStore | None = None
    rng: np.random.Generator | None = None


@dataclass
class MetricsRow:
    cycle: int
    psi_start: float
    psi_end: float
    w2: float
    descent_ok: bool
    bound_ok: bool
    w2_start: float = float("nan")
    max_err_start: float = float("nan")
    max_err_end: float = float("nan")
    errors_nonincreasing: bool = True
    shortfalls: int = 0
    w2_trace: list = field(default_factory=list)


@dataclass
class SimulationResult:
    scenario: Scenario
    rows: list
    trajectory: np.ndarray
    plans: list
    initial_w2: float
    final_state: SimState


def spatial_points(model, states):
    """Points compared against target samples: the model output of each state."""
    states = np.atleast_2d(states)
    if isinstance(model, LtiModel):
        return states.copy()
    return np.array([model.output(x) for x in states])


def team_measure(points):
    return make_uniform_measure(np.atleast_2d(points))


def surrogate_cost(plan, positions, targets: DiscreteMeasure):
    """Plan-weighted sum of squared distances from each agent to its samples."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    return math.fsum(p.cost(positions[p.agent], targets) for p in plan.plans)


def _w2sq(points, targets):
    return w2_exact(team_measure(points), targets)[0]


def _select(scenario: Scenario, state: SimState, points):
    if scenario.mode == "centralized":
        order = None
        if scenario.order == "shuffle":
            order = state.rng.permutation(points.shape[0]).tolist()
            log.debug("cycle %d agent order %s", state.cycle, order)
        plan = centralized_selection(points, scenario.targets, order=order, cycle=state.cycle)
        return plan, state.store, 0
    graph = build_comm_graph(points, scenario.r_c)
    plan, store, _, detail = decentralized_selection(
        points, scenario.targets, graph, state.store, scenario.gamma, cycle=state.cycle,
        staleness=scenario.staleness, publish=scenario.publish,
        drop_prob=scenario.drop_prob, rng=state.rng,
    )
    return plan, store, len(detail.shortfalls)


def _drive_agent(scenario: Scenario, x0, y_star, omega):
    """Trajectory of one agent over the cycle (``H + 1`` states)."""
    model, H = scenario.model, scenario.horizon
    if isinstance(model, LtiModel):
        seq = lti_optimal_controls(model, x0, y_star)
        traj = simulate(model, x0, seq.controls)
        err = float(np.linalg.norm(traj[-1] - y_star))
        if err > TERMINAL_TOL * (1 + float(np.linalg.norm(y_star))):
            raise InvariantViolation(f"terminal error {err:.3e} exceeds tolerance")
        return traj
    if scenario.controller == "horizon":
        seq = nonlinear_horizon_controls(model, x0, y_star, omega, H)
        return rollout(model, x0, seq.controls)
    traj = np.empty((H + 1, model.n))
    traj[0] = x0
    for t in range(H):
        u = nonlinear_one_step_control(model, traj[t], y_star, omega)
        traj[t + 1] = model.step(traj[t], u)
    return traj


def run_cycle(scenario: Scenario, state: SimState):
    """Advance one full cycle; returns the new state, the metrics row and the cycle trajectory."""
    model, targets, H = scenario.model, scenario.targets, scenario.horizon
    pts0 = spatial_points(model, state.states)
    plan, store, n_short = _select(scenario, state, pts0)
    psi_start = surrogate_cost(plan, pts0, targets)
    w2sq_start = _w2sq(pts0, targets)

    traj = np.empty((H + 1, *state.states.shape))
    for i in range(state.states.shape[0]):
        traj[:, i] = _drive_agent(scenario, state.states[i], plan.barycenters[i], plan.masses[i])
    end = traj[-1].copy()
    pts1 = spatial_points(model, end)
    psi_end = surrogate_cost(plan, pts1, targets)
    w2sq_end = _w2sq(pts1, targets)

    err0 = np.linalg.norm(pts0 - plan.barycenters, axis=1)
    err1 = np.linalg.norm(pts1 - plan.barycenters, axis=1)
    descent = psi_end <= psi_start + FLAG_TOL
    bound = w2sq_start <= psi_start + FLAG_TOL and w2sq_end <= psi_end + FLAG_TOL
    nonincreasing = bool(np.all(err1 <= err0 + 1e-12))

    trace = []
    if scenario.w2_every_step:
        trace = [math.sqrt(_w2sq(spatial_points(model, traj[t]), targets)) for t in range(H + 1)]

    row = MetricsRow(
        cycle=state.cycle, psi_start=psi_start, psi_end=psi_end, w2=math.sqrt(w2sq_end),
        descent_ok=bool(descent), bound_ok=bool(bound), w2_start=math.sqrt(w2sq_start),
        max_err_start=float(err0.max()), max_err_end=float(err1.max()),
        errors_nonincreasing=nonincreasing, shortfalls=n_short, w2_trace=trace,
    )
    _check(scenario, row)
    new_state = SimState(state.cycle + 1, state.step + H, end, plan, store, state.rng)
    return new_state, row, traj


def _check(scenario: Scenario, row: MetricsRow):
    where = f"cycle {row.cycle}"
    lti = isinstance(scenario.model, LtiModel)
    if lti and not row.descent_ok:
        raise InvariantViolation(f"{where}: psi rose from {row.psi_start!r} to {row.psi_end!r}")
    if not lti and row.errors_nonincreasing and not row.descent_ok:
        raise InvariantViolation(f"{where}: terminal errors shrank but psi rose")
    if scenario.mode == "centralized" and not row.bound_ok:
        raise InvariantViolation(
            f"{where}: W2^2 exceeds psi (start {row.w2_start ** 2!r} vs {row.psi_start!r}, "
            f"end {row.w2 ** 2!r} vs {row.psi_end!r})"
        )
    if not row.bound_ok:
        log.info("%s: bound flag false in decentralized mode", where)


def initial_state(scenario: Scenario) -> SimState:
    m = scenario.initial.shape[0]
    store = MemoryStore.empty(m) if scenario.mode == "decentralized" else None
    return SimState(0, 0, scenario.initial.copy(), None, store, np.random.default_rng(scenario.seed))


def run_simulation(scenario: Scenario, progress=None) -> SimulationResult:
    """Run ``scenario.cycles`` cycles from the initial states.

    Errors raised inside a cycle propagate with a ``cycle`` attribute set.
    """
    state = initial_state(scenario)
    initial_w2 = math.sqrt(_w2sq(spatial_points(scenario.model, state.states), scenario.targets))
    frames = [state.states[None].copy()]
    rows, plans = [], []
    for _ in range(scenario.cycles):
        try:
            state, row, traj = run_cycle(scenario, state)
        except Exception as exc:
            exc.cycle = state.cycle
            raise
        rows.append(row)
        plans.append(state.plan)
        frames.append(traj[1:])
        log.debug("cycle %d psi %.6g -> %.6g, W2 %.6g", row.cycle, row.psi_start, row.psi_end, row.w2)
        if progress is not None:
            progress(row, state)
    return SimulationResult(scenario, rows, np.concatenate(frames), plans, initial_w2, state)
