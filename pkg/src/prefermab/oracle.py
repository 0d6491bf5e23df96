"""Exact solvers for small discrete instances.

``reward_timing="current"`` credits ``R(s)`` in the state where the action is
taken; ``"next"`` credits the expected reward of the successor state, which is
what the simulators (and hence the learned critic) report.
"""
from __future__ import annotations

import numpy as np

from .core import ActionCosts, RmabInstance
from .envs import make_env


def _q_from_v(T, R, c, lam, beta, V, timing):
    future = T @ V
    if timing == "current":
        return R[:, None] - lam * c[None, :] + beta * future
    if timing == "next":
        return T @ R - lam * c[None, :] + beta * future
    raise ValueError(f"unknown reward timing {timing!r}")


def value_iteration(T, R, costs, lam: float, beta: float, tol: float = 1e-9,
                    reward_timing: str = "current", max_iter: int = 100_000):
    """Q table of the lambda-penalized single-arm MDP.

    Args:
        T: transition tensor of shape (S, A, S).
        R: reward per state, shape (S,).
        costs: per-action costs.
        lam: charge per unit of cost.
        beta: discount factor in [0, 1).

    Returns:
        Array of shape (S, A).
    """
    T = np.asarray(T, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    c = costs.as_array() if isinstance(costs, ActionCosts) else np.asarray(costs, dtype=np.float64)
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    V = np.zeros(T.shape[0])
    for _ in range(max_iter):
        Q = _q_from_v(T, R, c, lam, beta, V, reward_timing)
        V_new = Q.max(axis=1)
        done = np.max(np.abs(V_new - V)) <= tol * (1 - beta) if beta > 0 else True
        V = V_new
        if done:
            break
    return _q_from_v(T, R, c, lam, beta, V, reward_timing)


def policy_value(T, R, costs, lam, beta, policy, reward_timing="current"):
    """Exact value of a deterministic policy (one action per state)."""
    T = np.asarray(T, dtype=np.float64)
    R = np.asarray(R, dtype=np.float64)
    c = costs.as_array() if isinstance(costs, ActionCosts) else np.asarray(costs, dtype=np.float64)
    policy = np.asarray(policy, dtype=np.int64)
    S = T.shape[0]
    P = T[np.arange(S), policy]
    if reward_timing == "current":
        r = R - lam * c[policy]
    else:
        r = P @ R - lam * c[policy]
    return np.linalg.solve(np.eye(S) - beta * P, r)


def arm_dynamics(instance: RmabInstance):
    """(T, R, state) for every non-dummy arm of a discrete instance."""
    out = []
    for arm in instance.arms:
        if arm.dummy:
            continue
        env = make_env(arm.env, **instance.env_options)
        if not env.discrete:
            raise ValueError(f"{arm.env} has a continuous state space")
        out.append((env.transition_tensor(arm.params), env.state_rewards(), int(arm.state)))
    return out


def lagrangian_objective(instance: RmabInstance, lam: float, reward_timing: str = "current",
                         dynamics=None) -> float:
    """``lam * B / (1 - beta) + sum_i max_a Q_i(s_i, a; lam)``."""
    beta = instance.discount
    total = lam * instance.budget / (1.0 - beta)
    for T, R, s in dynamics or arm_dynamics(instance):
        total += value_iteration(T, R, instance.costs, lam, beta, reward_timing=reward_timing)[s].max()
    return float(total)


def lambda_star(instance: RmabInstance, lambda_max: float = 20.0, steps: int = 201,
                reward_timing: str = "current", tol: float = 1e-7) -> float:
    """Minimizer of the Lagrangian over ``[0, lambda_max]``.

    A uniform grid locates the bracket, then ternary search refines it
    (valid because the objective is convex in lambda).
    """
    dyn = arm_dynamics(instance)
    f = lambda lam: lagrangian_objective(instance, lam, reward_timing, dyn)  # noqa: E731
    grid = np.linspace(0.0, lambda_max, steps)
    vals = np.array([f(x) for x in grid])
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, steps - 1)]
    while hi - lo > tol:
        m1, m2 = lo + (hi - lo) / 3, hi - (hi - lo) / 3
        if f(m1) <= f(m2):
            hi = m2
        else:
            lo = m1
    return float(0.5 * (lo + hi))


def objective_curve(instance: RmabInstance, lambda_max: float = 20.0, steps: int = 201,
                    reward_timing: str = "current"):
    dyn = arm_dynamics(instance)
    grid = np.linspace(0.0, lambda_max, steps)
    return grid, np.array([lagrangian_objective(instance, x, reward_timing, dyn) for x in grid])
