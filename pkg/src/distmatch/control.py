"""Per-agent controllers that drive an agent onto its assigned barycenter.

Two model families are supported.  ``LtiModel`` gets the exact minimum-norm
input sequence through the finite-horizon controllability Gramian.
``ControlAffineModel`` gets a penalized cost whose terminal term acts on an
output map ``h`` (the point that is compared against target samples); it is
solved either in closed form for one step or by adjoint-gradient descent
over a horizon.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import linalg as sla

from .errors import GramianIllConditioned, NoConvergence, NotControllable

GRAMIAN_MAX_COND = 1e12


@dataclass(frozen=True)
class LtiModel:
    A: np.ndarray
    B: np.ndarray
    horizon: int

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[0] != n:
            raise ValueError(f"incompatible shapes A{A.shape} B{B.shape}")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        if not _full_row_rank(controllability_matrix(A, B)):
            raise NotControllable("(A, B) is not controllable")
        # a horizon shorter than n only works when B alone spans enough directions
        if self.horizon < n and not _full_row_rank(controllability_matrix(A, B, self.horizon)):
            raise NotControllable(f"horizon {self.horizon} cannot reach every state")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]

    def step(self, x, u):
        return self.A @ x + self.B @ u

    def output(self, x):
        return np.asarray(x, dtype=float)


def _identity(x):
    return np.asarray(x, dtype=float)


@dataclass(frozen=True)
class ControlAffineModel:
    """``x+ = f(x) + g(x) u`` with output ``h(x)`` and control penalty ``R``.

    Jacobians are supplied analytically: ``f_jac(x)``, ``gu_jac(x, u)`` (the
    Jacobian of ``g(x) u`` with respect to ``x``) and ``h_jac(x)``.
    """

    n: int
    m: int
    f: Callable
    f_jac: Callable
    g: Callable
    gu_jac: Callable
    R: np.ndarray
    h: Callable = _identity
    h_jac: Callable | None = None
    name: str = "control-affine"

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if R.shape != (self.m, self.m):
            raise ValueError(f"R must be {self.m}x{self.m}")
        if np.max(np.abs(R - R.T)) > 1e-12:
            raise ValueError("R must be symmetric")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise ValueError("R must be positive definite")
        object.__setattr__(self, "R", R)
        if self.h_jac is None:
            object.__setattr__(self, "h_jac", lambda x: np.eye(self.n))

    def step(self, x, u):
        return self.f(x) + self.g(x) @ u

    def step_jac(self, x, u):
        return self.f_jac(x) + self.gu_jac(x, u)

    def output(self, x):
        return self.h(x)


@dataclass
class ControlSequence:
    controls: np.ndarray
    terminal: np.ndarray
    iterations: int = 0
    grad_norm: float = 0.0
    cost: float = float("nan")

    def __len__(self):
        return self.controls.shape[0]

    @property
    def stacked(self):
        return self.controls.reshape(-1)


# ------------------------------------------------------------------ models


def unicycle(dt=0.1, lookahead=0.1, R=None) -> ControlAffineModel:
    """Unicycle ``(px, py, theta)`` with inputs ``(v, w)``.

    The output is the look-ahead point ``p + lookahead * (cos, sin)``; with a
    positive offset both inputs move the output, so a one-step controller
    can steer heading as well as speed.
    """
    R = 1e-2 * np.eye(2) if R is None else np.asarray(R, dtype=float)
    d = float(lookahead)

    def g(x):
        c, s = math.cos(x[2]), math.sin(x[2])
        return np.array([[dt * c, 0.0], [dt * s, 0.0], [0.0, dt]])

    def gu_jac(x, u):
        c, s = math.cos(x[2]), math.sin(x[2])
        J = np.zeros((3, 3))
        J[0, 2] = -dt * s * u[0]
        J[1, 2] = dt * c * u[0]
        return J

    def h(x):
        return np.array([x[0] + d * math.cos(x[2]), x[1] + d * math.sin(x[2])])

    def h_jac(x):
        c, s = math.cos(x[2]), math.sin(x[2])
        return np.array([[1.0, 0.0, -d * s], [0.0, 1.0, d * c]])

    return ControlAffineModel(
        n=3, m=2,
        f=_identity, f_jac=lambda x: np.eye(3),
        g=g, gu_jac=gu_jac, R=R, h=h, h_jac=h_jac,
        name="unicycle",
    )


def lti_as_control_affine(A, B, R) -> ControlAffineModel:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    n, m = B.shape
    return ControlAffineModel(
        n=n, m=m,
        f=lambda x: A @ x, f_jac=lambda x: A,
        g=lambda x: B, gu_jac=lambda x, u: np.zeros((n, n)),
        R=R, name="lti",
    )


def controllability_matrix(A, B, steps=None):
    """``[B, AB, ..., A^{steps-1} B]`` with ``steps`` defaulting to ``n``."""
    steps = A.shape[0] if steps is None else steps
    blocks = [B]
    for _ in range(steps - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def _full_row_rank(K):
    sv = np.linalg.svd(K, compute_uv=False)
    n = K.shape[0]
    return sv.size >= n and sv[n - 1] > 1e-10 * max(sv[0], 1e-300)


def random_controllable_pair(n, m, rng, horizon=None, spectral_radius=0.97, max_cond=1e6, max_tries=1000):
    """Draw ``(A, B)`` with a prescribed spectral radius and a well-conditioned Gramian."""
    horizon = n if horizon is None else horizon
    for _ in range(max_tries):
        A = rng.standard_normal((n, n))
        rho = np.max(np.abs(np.linalg.eigvals(A)))
        if rho < 1e-8:
            continue
        A *= spectral_radius / rho
        B = rng.standard_normal((n, m))
        try:
            model = LtiModel(A, B, horizon)
            G = gramian(model)
        except (NotControllable, GramianIllConditioned):
            continue
        ev = np.linalg.eigvalsh(G)
        if ev[-1] / ev[0] <= max_cond:
            return model.A, model.B
    raise RuntimeError("could not draw a well-conditioned controllable pair")


# ------------------------------------------------------------------ LTI


def reachability_matrix(model: LtiModel):
    """``[A^{H-1} B, ..., A B, B]``."""
    blocks = [model.B]
    for _ in range(model.horizon - 1):
        blocks.append(model.A @ blocks[-1])
    return np.hstack(blocks[::-1])


def gramian(model: LtiModel):
    """``sum_t A^t B B^T (A^T)^t`` for ``t < H``."""
    G = np.zeros((model.n, model.n))
    AtB = model.B
    for _ in range(model.horizon):
        G += AtB @ AtB.T
        AtB = model.A @ AtB
    G = 0.5 * (G + G.T)
    ev = np.linalg.eigvalsh(G)
    if ev[0] <= 0 or ev[-1] / ev[0] > GRAMIAN_MAX_COND:
        raise GramianIllConditioned(f"Gramian condition number {ev[-1] / max(ev[0], 1e-300):.3e}")
    return G


def lti_optimal_controls(model: LtiModel, x0, y_star) -> ControlSequence:
    """Minimum-norm input sequence landing exactly on ``y_star`` after ``H`` steps."""
    x0 = np.asarray(x0, dtype=float)
    y_star = np.asarray(y_star, dtype=float)
    G = gramian(model)
    AH = np.linalg.matrix_power(model.A, model.horizon)
    z = sla.cho_solve(sla.cho_factor(G), y_star - AH @ x0)
    H = model.horizon
    U = np.empty((H, model.m))
    v = z
    # u(t) = B^T (A^T)^{H-1-t} z, filled from the last step backwards
    for t in range(H - 1, -1, -1):
        U[t] = model.B.T @ v
        v = model.A.T @ v
    terminal = AH @ x0 + reachability_matrix(model) @ U.reshape(-1)
    return ControlSequence(U, terminal)


# ------------------------------------------------------------------ simulation


def simulate(model, x0, controls):
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    if controls.shape[0] < 1:
        raise ValueError("need at least one control")
    traj = np.empty((controls.shape[0] + 1, np.asarray(x0).size))
    traj[0] = x0
    for t, u in enumerate(controls):
        traj[t + 1] = model.step(traj[t], u)
    return traj


# ------------------------------------------------------------------ nonlinear


def nonlinear_one_step_control(model: ControlAffineModel, x, y_star, omega):
    """Closed-form minimizer of the one-step cost with the output linearized in ``u``.

    Minimizes ``omega/2 ||h_hat + G u - y*||^2 + u^T R u / 2`` where
    ``h_hat = h(f(x))`` and ``G = dh/dx(f(x)) g(x)``.
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    x = np.asarray(x, dtype=float)
    fx = model.f(x)
    G = model.h_jac(fx) @ model.g(x)
    resid = model.h(fx) - np.asarray(y_star, dtype=float)
    lhs = omega * (G.T @ G) + model.R
    return -np.linalg.solve(lhs, omega * (G.T @ resid))


def rollout(model, x0, U):
    H = U.shape[0]
    xs = np.empty((H + 1, model.n))
    xs[0] = x0
    for t in range(H):
        xs[t + 1] = model.step(xs[t], U[t])
    return xs


def horizon_cost(model: ControlAffineModel, x0, U, y_star, omega):
    U = np.asarray(U, dtype=float).reshape(-1, model.m)
    xs = rollout(model, np.asarray(x0, dtype=float), U)
    e = model.h(xs[-1]) - y_star
    return 0.5 * omega * float(e @ e) + 0.5 * float(np.einsum("ti,ij,tj->", U, model.R, U))


def _costates(model, xs, U, y_star, omega):
    H = U.shape[0]
    lam = np.empty((H + 1, model.n))
    e = model.h(xs[H]) - y_star
    lam[H] = omega * (model.h_jac(xs[H]).T @ e)
    for t in range(H - 1, -1, -1):
        lam[t] = model.step_jac(xs[t], U[t]).T @ lam[t + 1]
    return lam


def horizon_cost_and_grad(model: ControlAffineModel, x0, U, y_star, omega):
    """Cost and its gradient w.r.t. the control sequence via the adjoint recursion."""
    U = np.asarray(U, dtype=float).reshape(-1, model.m)
    y_star = np.asarray(y_star, dtype=float)
    xs = rollout(model, np.asarray(x0, dtype=float), U)
    lam = _costates(model, xs, U, y_star, omega)
    e = model.h(xs[-1]) - y_star
    J = 0.5 * omega * float(e @ e) + 0.5 * float(np.einsum("ti,ij,tj->", U, model.R, U))
    grad = np.empty_like(U)
    for t in range(U.shape[0]):
        grad[t] = model.R @ U[t] + model.g(xs[t]).T @ lam[t + 1]
    return J, grad, xs


@dataclass
class DescentOptions:
    max_iter: int = 500
    grad_tol: float = 1e-6
    memory: int = 8
    armijo: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 60


def nonlinear_horizon_controls(model: ControlAffineModel, x0, y_star, omega, H, opts=None) -> ControlSequence:
    """Minimize the penalized horizon cost by quasi-Newton descent from ``U = 0``.

    Directions come from a limited-memory BFGS two-loop recursion on the
    adjoint gradient; each step is accepted by Armijo backtracking.
    """
    if H < 1:
        raise ValueError("horizon must be >= 1")
    opts = opts or DescentOptions()
    x0 = np.asarray(x0, dtype=float)
    y_star = np.asarray(y_star, dtype=float)
    U = np.zeros((H, model.m))
    J, G, xs = horizon_cost_and_grad(model, x0, U, y_star, omega)
    S, Y = [], []
    best = (J, U.copy(), xs[-1].copy(), float(np.linalg.norm(G)))
    for it in range(opts.max_iter + 1):
        gnorm = float(np.linalg.norm(G))
        if gnorm <= opts.grad_tol:
            return ControlSequence(U, xs[-1], it, gnorm, J)
        if it == opts.max_iter:
            break
        g = G.reshape(-1)
        q = g.copy()
        alphas = []
        for s, y in reversed(list(zip(S, Y))):
            a = (s @ q) / (y @ s)
            alphas.append(a)
            q -= a * y
        if S:
            q *= (S[-1] @ Y[-1]) / (Y[-1] @ Y[-1])
        for (s, y), a in zip(zip(S, Y), reversed(alphas)):
            b = (y @ q) / (y @ s)
            q += (a - b) * s
        d = -q
        slope = float(g @ d)
        if slope >= 0:
            d, slope = -g, -float(g @ g)
            S.clear()
            Y.clear()
        step = 1.0
        for _ in range(opts.max_backtracks):
            U_new = U + step * d.reshape(U.shape)
            J_new, G_new, xs_new = horizon_cost_and_grad(model, x0, U_new, y_star, omega)
            if J_new <= J + opts.armijo * step * slope:
                break
            step *= opts.shrink
        else:
            break
        s_vec = (U_new - U).reshape(-1)
        y_vec = (G_new - G).reshape(-1)
        if s_vec @ y_vec > 1e-16 * (s_vec @ s_vec):
            S.append(s_vec)
            Y.append(y_vec)
            if len(S) > opts.memory:
                S.pop(0)
                Y.pop(0)
        U, J, G, xs = U_new, J_new, G_new, xs_new
        if J < best[0]:
            best = (J, U.copy(), xs[-1].copy(), float(np.linalg.norm(G)))
    seq = ControlSequence(best[1], best[2], opts.max_iter, best[3], best[0])
    raise NoConvergence(f"gradient norm {seq.grad_norm:.3e} above {opts.grad_tol:g}", best=seq, grad_norm=seq.grad_norm)


def pmp_residual(model: ControlAffineModel, x0, controls, y_star, omega, linearized_output=False):
    """Largest violation of ``u(t) = -R^{-1} g(x(t))^T lambda(t+1)`` along the rollout.

    With ``linearized_output`` (single-step sequences only) the terminal
    costate uses the output linearized at ``f(x0)``, which is the convention
    under which the one-step closed form is exact.
    """
    U = np.atleast_2d(np.asarray(controls, dtype=float)).reshape(-1, model.m)
    x0 = np.asarray(x0, dtype=float)
    y_star = np.asarray(y_star, dtype=float)
    xs = rollout(model, x0, U)
    if linearized_output:
        if U.shape[0] != 1:
            raise ValueError("linearized output convention applies to one-step sequences")
        fx = model.f(x0)
        Jh = model.h_jac(fx)
        e = model.h(fx) + Jh @ model.g(x0) @ U[0] - y_star
        lam = np.array([np.zeros(model.n), omega * (Jh.T @ e)])
    else:
        lam = _costates(model, xs, U, y_star, omega)
    worst = 0.0
    for t in range(U.shape[0]):
        r = U[t] + np.linalg.solve(model.R, model.g(xs[t]).T @ lam[t + 1])
        worst = max(worst, float(np.linalg.norm(r)))
    return worst
