"""Sample selection: greedy local transport against residual capacities."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityShortfall, EmptyPlan, OverAllocation
from .measures import DiscreteMeasure, TransportPlan

SNAP_TOL = 1e-12
# capacity may fall short of the agent mass by rounding alone
SHORTFALL_TOL = 1e-12


@dataclass(frozen=True)
class LocalPlan:
    agent: int
    indices: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.intp).reshape(-1)
        m = np.asarray(self.masses, dtype=float).reshape(-1)
        if idx.shape != m.shape:
            raise ValueError("indices and masses must have equal length")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "masses", m)

    @property
    def pairs(self):
        return list(zip(self.indices.tolist(), self.masses.tolist()))

    @property
    def mass(self):
        return math.fsum(self.masses)

    def __len__(self):
        return self.indices.size

    def dense(self, n):
        out = np.zeros(n)
        np.add.at(out, self.indices, self.masses)
        return out

    def cost(self, x, targets: DiscreteMeasure):
        d = targets.points[self.indices] - np.asarray(x, dtype=float)
        return math.fsum(self.masses * np.einsum("ij,ij->i", d, d))


@dataclass
class CyclePlan:
    """Committed per-agent plans for one cycle, with barycenters and masses."""

    plans: list
    barycenters: np.ndarray
    masses: np.ndarray
    cycle: int = 0
    order: list = field(default_factory=list)

    @property
    def n_agents(self):
        return len(self.plans)

    def transport_plan(self, n_targets) -> TransportPlan:
        rows = np.concatenate([np.full(len(p), p.agent) for p in self.plans])
        cols = np.concatenate([p.indices for p in self.plans])
        mass = np.concatenate([p.masses for p in self.plans])
        return TransportPlan(rows, cols, mass, self.n_agents, n_targets)

    def allocation_per_sample(self, n_targets):
        out = np.zeros(n_targets)
        for p in self.plans:
            np.add.at(out, p.indices, p.masses)
        return out

    def check_consistency(self, targets: DiscreteMeasure, tol=1e-12):
        """Recompute barycenters and masses; raise if the stored values drifted."""
        for p in self.plans:
            y, w = barycenter(p, targets)
            if abs(w - self.masses[p.agent]) > tol:
                raise AssertionError(f"agent {p.agent}: stored mass {self.masses[p.agent]} != {w}")
            if np.max(np.abs(y - self.barycenters[p.agent])) > tol * (1 + np.max(np.abs(y))):
                raise AssertionError(f"agent {p.agent}: stored barycenter drifted")

    def to_text(self):
        lines = ["# cycle agent j mass"]
        for p in self.plans:
            for j, m in zip(p.indices, p.masses):
                lines.append(f"{self.cycle} {p.agent} {int(j)} {float(m)!r}")
        lines.append("# agent y* omega")
        for i in range(self.n_agents):
            coords = " ".join(repr(float(v)) for v in self.barycenters[i])
            lines.append(f"{i} {coords} {float(self.masses[i])!r}")
        return "\n".join(lines) + "\n"


def _sorted_by_distance(x, points):
    d = np.linalg.norm(points - np.asarray(x, dtype=float), axis=1)
    # stable sort keeps lower indices first on ties
    return np.argsort(d, kind="stable")


def greedy_local_assign(x, targets: DiscreteMeasure, residual, mass: float, agent: int = 0) -> LocalPlan:
    """Nearest-first allocation of ``mass`` against residual capacities.

    Raises ``CapacityShortfall`` (with the partial pairs) when the total
    residual is smaller than ``mass``.
    """
    if mass <= 0:
        raise ValueError("agent mass must be positive")
    residual = np.asarray(residual, dtype=float)
    if np.any(residual < 0):
        raise ValueError("residual capacities must be non-negative")
    order = _sorted_by_distance(x, targets.points)
    idx, alloc = [], []
    remaining = mass
    for j in order:
        cap = residual[j]
        if cap <= 0:
            continue
        a = min(cap, remaining)
        idx.append(int(j))
        alloc.append(a)
        remaining = mass - math.fsum(alloc)
        if remaining <= SHORTFALL_TOL * max(mass, 1.0):
            break
    if remaining > SHORTFALL_TOL * max(mass, 1.0):
        raise CapacityShortfall(remaining, zip(idx, alloc))
    return LocalPlan(agent, idx, alloc)


def apply_residual_update(residual, plan: LocalPlan):
    out = np.array(residual, dtype=float, copy=True)
    if len(plan) == 0:
        return out
    after = out[plan.indices] - plan.masses
    if np.any(after < -SNAP_TOL):
        j = int(plan.indices[np.argmin(after)])
        raise OverAllocation(f"sample {j} allocated beyond its residual capacity")
    out[plan.indices] = np.where(after < 0, 0.0, after)
    return out


def barycenter(plan: LocalPlan, targets: DiscreteMeasure):
    """Return ``(y_star, omega)``: mass-weighted mean of the allocated samples."""
    if len(plan) == 0:
        raise EmptyPlan(f"agent {plan.agent} has no allocated samples")
    omega = plan.mass
    y = (plan.masses[:, None] * targets.points[plan.indices]).sum(axis=0) / omega
    return y, omega


def completing_square(plan: LocalPlan, targets: DiscreteMeasure):
    """Constant ``C`` with ``sum pi_j ||x - y_j||^2 = omega ||x - y*||^2 + C``."""
    y, omega = barycenter(plan, targets)
    sq = np.einsum("ij,ij->i", targets.points[plan.indices], targets.points[plan.indices])
    return math.fsum(plan.masses * sq) - omega * float(y @ y)


def assemble(plans, targets: DiscreteMeasure, cycle=0, order=()):
    plans = sorted(plans, key=lambda p: p.agent)
    bary = np.empty((len(plans), targets.dim))
    masses = np.empty(len(plans))
    for p in plans:
        bary[p.agent], masses[p.agent] = barycenter(p, targets)
    return CyclePlan(plans, bary, masses, cycle, list(order))


def centralized_selection(positions, targets: DiscreteMeasure, order=None, cycle=0) -> CyclePlan:
    """Sequential greedy selection sharing one residual vector across all agents."""
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    m = positions.shape[0]
    if m < 1:
        raise ValueError("need at least one agent")
    order = list(range(m)) if order is None else [int(i) for i in order]
    if sorted(order) != list(range(m)):
        raise ValueError("order must be a permutation of the agent ids")
    residual = np.array(targets.weights, dtype=float)
    plans = []
    for i in order:
        plan = greedy_local_assign(positions[i], targets, residual, 1.0 / m, agent=i)
        residual = apply_residual_update(residual, plan)
        plans.append(plan)
    if np.max(residual) > 1e-8:
        raise AssertionError(f"residual not exhausted after selection (max {np.max(residual):.3e})")
    return assemble(plans, targets, cycle, order)
