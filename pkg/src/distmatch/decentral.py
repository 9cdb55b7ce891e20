"""Range-limited selection with per-agent memory of peers' weight vectors.

Each cycle every agent resets its private weight view to the target weights,
discounts it by what it remembers of peers that are currently out of range,
and then selects samples sequentially inside its connected subgroup.  The
vector an agent publishes to its neighbours is its own allocation over the
global sample index.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .assignment import (
    CapacityShortfall,
    LocalPlan,
    apply_residual_update,
    assemble,
    greedy_local_assign,
)
from .measures import DiscreteMeasure


@dataclass(frozen=True)
class CommGraph:
    neighbors: tuple
    r_c: float

    @property
    def n_agents(self):
        return len(self.neighbors)

    def are_neighbors(self, i, j):
        return j in self.neighbors[i]

    def edges(self):
        return sorted((i, j) for i, nb in enumerate(self.neighbors) for j in nb if i < j)

    def components(self):
        """Connected subgroups as sorted id lists, ordered by their smallest id."""
        m = self.n_agents
        rows = [i for i, nb in enumerate(self.neighbors) for _ in nb]
        cols = [j for nb in self.neighbors for j in sorted(nb)]
        adj = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, m))
        _, labels = connected_components(adj, directed=False)
        groups = {}
        for i, lab in enumerate(labels):
            groups.setdefault(lab, []).append(i)
        return sorted(groups.values(), key=lambda g: g[0])


@dataclass
class MemoryStore:
    """``entries[i][j] = (vector, cycle)``: last vector agent ``i`` heard from ``j``."""

    entries: list = field(default_factory=list)

    @classmethod
    def empty(cls, n_agents):
        return cls([{} for _ in range(n_agents)])

    def copy(self):
        return MemoryStore([dict(e) for e in self.entries])

    def peers(self, i):
        return sorted(self.entries[i])

    def get(self, i, j):
        return self.entries[i][j][0]

    def to_text(self):
        lines = ["# agent peer cycle weights..."]
        for i, e in enumerate(self.entries):
            for j in sorted(e):
                vec, cyc = e[j]
                lines.append(f"{i} {j} {cyc} " + " ".join(repr(float(v)) for v in vec))
        return "\n".join(lines) + "\n"


@dataclass
class AgentWeights:
    beta: np.ndarray
    gamma: float

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        self.beta = np.asarray(self.beta, dtype=float)


def subgroup_closure(graph: CommGraph, groups=None) -> CommGraph:
    """Graph in which every agent neighbours its whole connected subgroup."""
    groups = graph.components() if groups is None else groups
    nb = [frozenset()] * graph.n_agents
    for g in groups:
        for i in g:
            nb[i] = frozenset(j for j in g if j != i)
    return CommGraph(tuple(nb), graph.r_c)


def build_comm_graph(positions, r_c) -> CommGraph:
    if r_c <= 0:
        raise ValueError("communication range must be positive")
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    close = dist < r_c
    np.fill_diagonal(close, False)
    return CommGraph(tuple(frozenset(np.flatnonzero(row).tolist()) for row in close), float(r_c))


def memory_refresh(store: MemoryStore, graph: CommGraph, published, cycle, drop_prob=0.0, rng=None) -> MemoryStore:
    """Overwrite entries of current neighbours; carry every other entry forward.

    ``drop_prob`` loses each neighbour message independently (needs ``rng``).
    """
    out = store.copy()
    for i in range(graph.n_agents):
        for j in sorted(graph.neighbors[i]):
            if drop_prob > 0 and rng.random() < drop_prob:
                continue
            vec = np.array(published[j], dtype=float)
            vec.setflags(write=False)
            out.entries[i][j] = (vec, cycle)
    return out


def disconnected_peers(agent, store: MemoryStore, graph: CommGraph, cycle=None, staleness=None,
                       reachable=None):
    """Stored peers that count for the correction of ``agent``.

    ``reachable`` (the agent's whole subgroup) defaults to its direct
    neighbourhood; peers in it share live selections and are skipped.
    """
    live = graph.neighbors[agent] if reachable is None else set(reachable)
    peers = [j for j in store.peers(agent) if j not in live and j != agent]
    if staleness is not None and cycle is not None:
        peers = [j for j in peers if cycle - store.entries[agent][j][1] <= staleness]
    return peers


def support_minimum(vectors):
    """Element-wise minimum where each vector only counts on its own support.

    A published vector lives on the sender's local sample set, so a zero
    entry means "not selected" rather than "selected with zero weight".
    Samples outside every support get 0.
    """
    stack = np.stack(vectors)
    masked = np.where(stack > 0, stack, np.inf).min(axis=0)
    return np.where(np.isfinite(masked), masked, 0.0)


def memory_correction(agent, weights: AgentWeights, store: MemoryStore, graph: CommGraph,
                      cycle=None, staleness=None, reachable=None) -> AgentWeights:
    """Subtract ``gamma`` times the element-wise minimum of remembered peer vectors.

    Only peers outside the current neighbourhood count, and each remembered
    vector only takes part on its own support (see ``support_minimum``).  The result is
    projected onto the non-negative orthant.
    """
    peers = disconnected_peers(agent, store, graph, cycle, staleness, reachable)
    if not peers or weights.gamma == 0.0:
        return AgentWeights(np.array(weights.beta, copy=True), weights.gamma)
    floor = support_minimum([store.get(agent, j) for j in peers])
    beta = np.maximum(0.0, weights.beta - weights.gamma * floor)
    return AgentWeights(beta, weights.gamma)


def _fallback(x, targets, pairs, remainder, mass, agent):
    """Top up a starved agent from the nearest samples, ignoring capacity."""
    extra = greedy_local_assign(x, targets, targets.weights, remainder, agent=agent)
    alloc = {}
    for j, a in list(pairs) + extra.pairs:
        alloc[j] = alloc.get(j, 0.0) + a
    idx = sorted(alloc)
    masses = np.array([alloc[j] for j in idx])
    # exact bookkeeping of the agent mass after merging
    masses *= mass / masses.sum()
    return LocalPlan(agent, idx, masses)


@dataclass
class SelectionResult:
    plan: object
    store: MemoryStore
    published: list
    corrected: list
    shortfalls: list


def decentralized_selection(positions, targets: DiscreteMeasure, graph: CommGraph, store: MemoryStore,
                            gamma, cycle=0, staleness=None, publish="allocation",
                            drop_prob=0.0, rng=None):
    """One selection round of the range-limited scheme.

    Returns ``(CyclePlan, updated store, published vectors)``; the full
    ``SelectionResult`` is available as the fourth element for diagnostics.
    """
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    m = pos.shape[0]
    mass = 1.0 / m
    init = np.array(targets.weights, dtype=float)
    groups = graph.components()
    corrected = [None] * m
    for group in groups:
        for i in group:
            corrected[i] = memory_correction(
                i, AgentWeights(init, gamma), store, graph, cycle, staleness, reachable=group
            ).beta
    plans = {}
    shortfalls = []
    group_use = {}
    for group in groups:
        residual = np.min(np.stack([corrected[i] for i in group]), axis=0)
        used = np.zeros_like(init)
        for i in group:
            try:
                plan = greedy_local_assign(pos[i], targets, residual, mass, agent=i)
                residual = apply_residual_update(residual, plan)
            except CapacityShortfall as short:
                shortfalls.append((i, short.remainder))
                partial = LocalPlan(i, [j for j, _ in short.pairs], [a for _, a in short.pairs])
                residual = apply_residual_update(residual, partial)
                plan = _fallback(pos[i], targets, short.pairs, short.remainder, mass, i)
            plans[i] = plan
            np.add.at(used, plan.indices, plan.masses)
        for i in group:
            group_use[i] = used
    if publish == "allocation":
        published = [plans[i].dense(len(init)) for i in range(m)]
    elif publish == "subgroup":
        published = [group_use[i] for i in range(m)]
    else:
        raise ValueError(f"unknown publish mode {publish!r}")
    cycle_plan = assemble(plans.values(), targets, cycle, order=list(range(m)))
    new_store = memory_refresh(store, subgroup_closure(graph, groups), published, cycle, drop_prob, rng)
    return cycle_plan, new_store, published, SelectionResult(cycle_plan, new_store, published, corrected, shortfalls)
