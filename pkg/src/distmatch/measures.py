"""Discrete probability measures and an exact squared-W2 solver.

The solver is a successive-shortest-path min-cost flow on the complete
bipartite graph.  Masses are converted to integers first (exactly when the
weights are rationals with a small common denominator, otherwise on a fixed
1e9 grid) so that flow bookkeeping never accumulates rounding drift.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BadCovariance, EmptySupport, InvalidMeasure, SolverFailure

try:
    from . import _flowkernel as _kernel
except ImportError:  # numba missing: fall back to the numpy implementation
    _kernel = None

WEIGHT_TOL = 1e-9
FIXED_SCALE = 10**9
_MAX_EXACT_SCALE = 10**13
_MAX_DENOMINATOR = 10**7


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted point cloud ``sum_k w_k delta_{p_k}`` in R^n."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if pts.shape[0] == 0 or pts.size == 0:
            raise EmptySupport("measure needs at least one support point")
        if pts.shape[0] != w.shape[0]:
            raise InvalidMeasure(f"{pts.shape[0]} points but {w.shape[0]} weights")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidMeasure("weights must be finite and non-negative")
        if abs(math.fsum(w) - 1.0) > WEIGHT_TOL:
            raise InvalidMeasure(f"weights sum to {math.fsum(w)!r}, expected 1")
        if not np.all(np.isfinite(pts)):
            raise InvalidMeasure("points must be finite")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


@dataclass(frozen=True)
class TransportPlan:
    """Sparse coupling: ``mass[k]`` moves from row ``rows[k]`` to column ``cols[k]``."""

    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    n_rows: int
    n_cols: int

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.intp).reshape(-1)
        cols = np.asarray(self.cols, dtype=np.intp).reshape(-1)
        mass = np.asarray(self.mass, dtype=float).reshape(-1)
        if not (rows.shape == cols.shape == mass.shape):
            raise InvalidMeasure("plan index and mass arrays must have equal length")
        if np.any(mass < 0):
            raise InvalidMeasure("transport masses must be non-negative")
        if rows.size and (rows.min() < 0 or rows.max() >= self.n_rows):
            raise InvalidMeasure("row index out of range")
        if cols.size and (cols.min() < 0 or cols.max() >= self.n_cols):
            raise InvalidMeasure("column index out of range")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "mass", mass)

    @property
    def entries(self):
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.mass.tolist()))

    def row_sums(self):
        return np.bincount(self.rows, weights=self.mass, minlength=self.n_rows)

    def col_sums(self):
        return np.bincount(self.cols, weights=self.mass, minlength=self.n_cols)

    def total(self):
        return math.fsum(self.mass)

    def to_dense(self):
        out = np.zeros((self.n_rows, self.n_cols))
        np.add.at(out, (self.rows, self.cols), self.mass)
        return out

    def cost(self, x, y):
        """``sum pi_ij ||x_i - y_j||^2`` for row points ``x`` and column points ``y``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        d = x[self.rows] - y[self.cols]
        return math.fsum(self.mass * np.einsum("ij,ij->i", d, d))

    def marginal_errors(self, row_weights, col_weights):
        """Max absolute deviation of row and column sums from the given marginals."""
        r = np.max(np.abs(self.row_sums() - np.asarray(row_weights)))
        c = np.max(np.abs(self.col_sums() - np.asarray(col_weights)))
        return float(r), float(c)

    def is_coupling(self, row_weights, col_weights, tol=1e-8):
        r, c = self.marginal_errors(row_weights, col_weights)
        return r <= tol and c <= tol and abs(self.total() - 1.0) <= WEIGHT_TOL


def make_uniform_measure(points) -> DiscreteMeasure:
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        raise EmptySupport("cannot build a measure on an empty point list")
    # a flat list of scalars means P points on the real line
    pts = pts.reshape(-1, 1) if pts.ndim == 1 else np.atleast_2d(pts)
    n = pts.shape[0]
    return DiscreteMeasure(pts, np.full(n, 1.0 / n))


def sample_target_from_mixture(mixture, n_samples: int, seed: int) -> DiscreteMeasure:
    """Draw ``n_samples`` i.i.d. points from a Gaussian mixture, uniform weights.

    ``mixture`` is a sequence of ``(mean, covariance, weight)`` triples.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if len(mixture) == 0:
        raise ValueError("mixture has no components")
    means, chols, probs = [], [], []
    for mean, cov, weight in mixture:
        mean = np.asarray(mean, dtype=float).reshape(-1)
        cov = np.asarray(cov, dtype=float)
        if cov.shape != (mean.size, mean.size) or not np.allclose(cov, cov.T, atol=1e-12):
            raise BadCovariance(f"covariance must be symmetric {mean.size}x{mean.size}")
        try:
            chols.append(np.linalg.cholesky(cov))
        except np.linalg.LinAlgError:
            raise BadCovariance("covariance is not positive definite") from None
        means.append(mean)
        probs.append(float(weight))
    probs = np.asarray(probs)
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError("component weights must be non-negative and sum to 1")
    rng = np.random.default_rng(seed)
    comp = rng.choice(len(means), size=n_samples, p=probs / probs.sum())
    z = rng.standard_normal((n_samples, means[0].size))
    pts = np.empty_like(z)
    for k, (m, L) in enumerate(zip(means, chols)):
        sel = comp == k
        pts[sel] = m + z[sel] @ L.T
    return make_uniform_measure(pts)


def squared_distances(x, y):
    """Dense matrix of ``||x_i - y_j||^2``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    d = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


# ---------------------------------------------------------------- solver


def _exact_fractions(w):
    fr = []
    for v in w:
        f = Fraction(float(v)).limit_denominator(_MAX_DENOMINATOR)
        if abs(float(f) - v) > 4e-16 * max(1.0, v):
            return None
        fr.append(f)
    if sum(fr) != 1:
        return None
    return fr


def integer_masses(a, b):
    """Map two weight vectors to integer masses with equal totals.

    Returns ``(ia, ib, scale)``; ``ia / scale`` reproduces ``a`` exactly when
    the weights are rationals whose denominators have a small common multiple.
    """
    fa, fb = _exact_fractions(a), _exact_fractions(b)
    if fa is not None and fb is not None:
        scale = 1
        for f in fa + fb:
            scale = scale * f.denominator // math.gcd(scale, f.denominator)
            if scale > _MAX_EXACT_SCALE:
                break
        else:
            ia = np.array([f.numerator * (scale // f.denominator) for f in fa], dtype=np.int64)
            ib = np.array([f.numerator * (scale // f.denominator) for f in fb], dtype=np.int64)
            return ia, ib, scale
    return _round_to_grid(a, FIXED_SCALE), _round_to_grid(b, FIXED_SCALE), FIXED_SCALE


def _round_to_grid(w, scale):
    w = np.asarray(w, dtype=float)
    iw = np.rint(w / w.sum() * scale).astype(np.int64)
    # fold the rounding imbalance into the largest atom
    iw[int(np.argmax(iw))] += scale - int(iw.sum())
    if np.any(iw < 0):
        raise SolverFailure("mass discretization produced a negative atom")
    return iw


def _ssp(supply, demand, cost):
    """Successive shortest paths for a balanced transportation problem.

    ``supply`` (rows) and ``demand`` (columns) are int64 arrays with equal
    sums.  Rows are routed one at a time.  Dijkstra runs over column nodes
    only: a hop ``t -> u`` reroutes flow of some row already feeding ``t``
    over to ``u``, and ``reroute[t, u]`` caches the cheapest such row.  Row
    potentials stay implicit (complementary slackness pins them), column
    potentials ``pi`` keep every reduced cost non-negative.  Returns the
    dense int64 flow matrix.
    """
    ns, nt = cost.shape
    flow = np.zeros((ns, nt), dtype=np.int64)
    sup = supply.astype(np.int64).copy()
    dem = demand.astype(np.int64).copy()
    pi = np.zeros(nt)
    inf = np.inf
    cols = np.arange(nt)
    feeders = [set() for _ in range(nt)]
    reroute = np.full((nt, nt), inf)
    reroute_row = np.zeros((nt, nt), dtype=np.intp)

    def refresh(t):
        if not feeders[t]:
            reroute[t] = inf
            return
        idx = np.fromiter(sorted(feeders[t]), dtype=np.intp)
        diff = cost[idx] - cost[idx, t][:, None]
        k = np.argmin(diff, axis=0)
        reroute[t] = diff[k, cols]
        reroute_row[t] = idx[k]
        reroute[t, t] = inf

    rounds = 0
    max_rounds = 2 * (ns + 1) * (nt + 1)
    for s in range(ns):
        while sup[s] > 0:
            rounds += 1
            if rounds > max_rounds:
                raise SolverFailure("augmenting path bound exceeded")
            red = cost[s] - pi
            dist = red - red.min()
            masked = dist.copy()
            pred = np.full(nt, -1, dtype=np.intp)
            settled = np.zeros(nt, dtype=bool)
            while True:
                t = int(np.argmin(masked))
                D = masked[t]
                if D == inf:
                    raise SolverFailure("no augmenting path in a balanced problem")
                if dem[t] > 0:
                    break
                settled[t] = True
                masked[t] = inf
                cand = D + reroute[t] + (pi[t] - pi)
                upd = (cand < dist) & ~settled
                if upd.any():
                    dist[upd] = cand[upd]
                    masked[upd] = cand[upd]
                    pred[upd] = t
            pi[settled] += dist[settled] - D
            # net change per arc along the path
            change = {}
            u = t
            while pred[u] >= 0:
                v = int(pred[u])
                r = int(reroute_row[v, u])
                change[(r, v)] = change.get((r, v), 0) - 1
                change[(r, u)] = change.get((r, u), 0) + 1
                u = v
            change[(s, u)] = change.get((s, u), 0) + 1
            delta = min(sup[s], dem[t])
            for (r, c), k in change.items():
                if k < 0:
                    delta = min(delta, flow[r, c] // -k)
            if delta <= 0:
                raise SolverFailure("zero bottleneck on augmenting path")
            touched = set()
            for (r, c), k in change.items():
                if k == 0:
                    continue
                before = flow[r, c]
                flow[r, c] = before + k * delta
                if before == 0 and flow[r, c] > 0:
                    feeders[c].add(r)
                    touched.add(c)
                elif before > 0 and flow[r, c] == 0:
                    feeders[c].discard(r)
                    touched.add(c)
            for c in touched:
                refresh(c)
            sup[s] -= delta
            dem[t] -= delta
    if np.any(dem != 0):
        raise SolverFailure("unmet demand after all supply was routed")
    return flow


def _route(supply, demand, cost):
    if _kernel is None:
        return _ssp(supply, demand, cost)
    flow, status = _kernel.ssp_kernel(supply, demand, cost)
    if status != _kernel.OK:
        raise SolverFailure(f"transport kernel failed with status {status}")
    return flow


def solve_transport(a, b, cost):
    """Exact balanced transport with an arbitrary non-negative cost matrix.

    Returns ``(total_cost, TransportPlan)`` with rows indexed by ``a`` and
    columns by ``b``.
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    cost = np.asarray(cost, dtype=float)
    if cost.shape != (a.size, b.size):
        raise ValueError(f"cost shape {cost.shape} does not match ({a.size}, {b.size})")
    ia, ib, scale = integer_masses(a, b)
    # rows are routed one at a time; the larger side goes there so that
    # each Dijkstra pops from the smaller set of column nodes
    if a.size < b.size:
        flow = _route(ib, ia, np.ascontiguousarray(cost.T)).T
    else:
        flow = _route(ia, ib, np.ascontiguousarray(cost))
    rows, cols = np.nonzero(flow)
    mass = flow[rows, cols] / scale
    plan = TransportPlan(rows, cols, mass, a.size, b.size)
    total = math.fsum(mass * cost[rows, cols])
    return total, plan


def w2_exact(mu: DiscreteMeasure, nu: DiscreteMeasure):
    """Squared 2-Wasserstein distance and an optimal plan (rows = mu, cols = nu)."""
    if mu.dim != nu.dim:
        raise InvalidMeasure(f"dimension mismatch {mu.dim} vs {nu.dim}")
    cost = squared_distances(mu.points, nu.points)
    return solve_transport(mu.weights, nu.weights, cost)


def w2_distance(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    cost, _ = w2_exact(mu, nu)
    return math.sqrt(max(cost, 0.0))


# ---------------------------------------------------------------- text I/O


def format_measure(measure: DiscreteMeasure, comment: str | None = None) -> str:
    lines = []
    if comment:
        lines.extend(f"# {c}" for c in comment.splitlines())
    for w, p in zip(measure.weights, measure.points):
        lines.append(" ".join(repr(float(v)) for v in (w, *p)))
    return "\n".join(lines) + "\n"


def parse_measure(text: str) -> DiscreteMeasure:
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            vals = [float(tok) for tok in line.split()]
        except ValueError:
            raise InvalidMeasure(f"line {lineno}: non-numeric field") from None
        if len(vals) < 2:
            raise InvalidMeasure(f"line {lineno}: need a weight and at least one coordinate")
        if rows and len(vals) != len(rows[0]):
            raise InvalidMeasure(f"line {lineno}: inconsistent dimension")
        rows.append(vals)
    if not rows:
        raise EmptySupport("no support points found")
    arr = np.asarray(rows)
    return DiscreteMeasure(arr[:, 1:], arr[:, 0])


def save_measure(measure: DiscreteMeasure, path, comment: str | None = None):
    Path(path).write_text(format_measure(measure, comment))


def load_measure(path) -> DiscreteMeasure:
    return parse_measure(Path(path).read_text())

