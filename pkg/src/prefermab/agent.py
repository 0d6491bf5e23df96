"""Shared actor/critic with PPO updates and the lambda network.

Actor and critic see one arm at a time through the row ``(s_bar, lam, z)``.
The lambda network sees the whole slot table flattened as
``[s_bar_i, z_i..., xi_i]`` per slot, with empty slots all zero.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .core import ActionCosts
from .nn import Adam, Mlp, log_softmax, sigmoid, softplus

log = logging.getLogger(__name__)


class TrainingDivergenceError(RuntimeError):
    """Raised when logits, ratios or losses stop being finite."""


@dataclass
class PpoConfig:
    agent_clip_ratio: float = 2.0
    start_entropy_coeff: float = 0.5
    end_entropy_coeff: float = 0.0
    actor_learning_rate: float = 2e-3
    critic_learning_rate: float = 2e-3
    lambda_initial_learning_rate: float = 2e-3
    lambda_scheduler_discount_rate: float = 0.99
    lambda_freeze_epochs: int = 20
    trains_per_epoch: int = 20
    n_subepochs: int = 4
    # the lambda learning rate is the step of the target rule; the network
    # regression toward those targets uses its own fixed Adam rate
    lambda_fit_learning_rate: float = 5e-3
    lambda_fit_steps: int = 50
    lambda_max: float = 20.0
    explore_boost: float = 2.0
    main_text_sign: bool = False

    def __post_init__(self):
        for name in ("agent_clip_ratio", "actor_learning_rate", "critic_learning_rate",
                     "lambda_initial_learning_rate", "trains_per_epoch", "n_subepochs", "lambda_fit_steps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.agent_clip_ratio < 1.0:
            raise ValueError("agent_clip_ratio must be at least 1")

    def to_dict(self):
        return asdict(self)


def entropy_coeff(cfg: PpoConfig, epoch: int, n_epochs: int) -> float:
    """Linear schedule from the start to the end coefficient over the run."""
    if n_epochs <= 1:
        return cfg.start_entropy_coeff
    frac = min(max(epoch / (n_epochs - 1), 0.0), 1.0)
    return cfg.start_entropy_coeff + frac * (cfg.end_entropy_coeff - cfg.start_entropy_coeff)


def arm_inputs(s_bar, lam, z) -> np.ndarray:
    """Rows ``(s_bar, lam, z)`` for the actor and critic."""
    s_bar = np.atleast_1d(np.asarray(s_bar, dtype=np.float64))
    z = np.asarray(z, dtype=np.float64).reshape(len(s_bar), -1)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), s_bar.shape)
    return np.column_stack([s_bar, lam, z])


def lambda_inputs(s_bar, z, xi) -> np.ndarray:
    """Flattened slot table; slots with ``xi == 0`` contribute zeros."""
    xi = np.asarray(xi, dtype=np.float64)
    s_bar = np.asarray(s_bar, dtype=np.float64) * xi
    z = np.asarray(z, dtype=np.float64).reshape(len(xi), -1) * xi[:, None]
    return np.column_stack([s_bar, z, xi]).ravel()


def policy_probs(logits) -> np.ndarray:
    return np.exp(log_softmax(logits))


def actor_loss_grad(logits, actions, logp_old, adv, ent_coef, clip):
    """Clipped surrogate loss and its gradient w.r.t. the logits.

    Returns ``(loss, dlogits, info)``.
    """
    n = len(actions)
    rows = np.arange(n)
    logp = log_softmax(logits)
    pi = np.exp(logp)
    ratio = np.exp(logp[rows, actions] - logp_old)
    if not np.all(np.isfinite(ratio)):
        raise TrainingDivergenceError("non-finite PPO ratio")
    clipped = np.clip(ratio, 1.0 / clip, clip)
    unclipped_obj = ratio * adv
    clipped_obj = clipped * adv
    use_unclipped = unclipped_obj <= clipped_obj
    obj = np.where(use_unclipped, unclipped_obj, clipped_obj)
    ent = -(pi * logp).sum(axis=1)
    loss = -obj.mean() - ent_coef * ent.mean()

    # d obj / d logp[a] is ratio*adv on the unclipped branch, zero otherwise
    g = np.where(use_unclipped, ratio * adv, 0.0)
    onehot = np.zeros_like(pi)
    onehot[rows, actions] = 1.0
    d_obj = g[:, None] * (onehot - pi)
    d_ent = -pi * (logp + ent[:, None])
    dlogits = -(d_obj + ent_coef * d_ent) / n
    info = {"ratio_max": float(ratio.max()), "clip_frac": float(np.mean(~use_unclipped)),
            "entropy": float(ent.mean())}
    return float(loss), dlogits, info


def critic_loss_grad(q, actions, targets):
    """Mean squared error on the taken actions; gradient w.r.t. all Q outputs."""
    n = len(actions)
    rows = np.arange(n)
    err = q[rows, actions] - targets
    dq = np.zeros_like(q)
    dq[rows, actions] = 2.0 * err / n
    return float(np.mean(err * err)), dq


def critic_targets(critic: Mlp, cols: dict, beta: float, costs: ActionCosts) -> np.ndarray:
    """Bootstrap targets ``r - lam * c_a + beta * max_a' Q(s_bar', lam, z)``."""
    x_next = arm_inputs(cols["s_bar_next"], cols["lam"], cols["z"])
    q_next = critic(x_next).max(axis=1) if beta > 0 else 0.0
    return cols["r"] - cols["lam"] * costs.as_array()[cols["a"]] + beta * q_next


def advantages(critic: Mlp, actor: Mlp, x) -> np.ndarray:
    """Per-action advantage ``Q(a) - sum_a' pi(a') Q(a')`` for each row of ``x``."""
    q = critic(x)
    pi = policy_probs(actor(x))
    return q - (pi * q).sum(axis=1, keepdims=True)


class Agent:
    """Actor, critic and lambda network plus their optimizers."""

    def __init__(self, capacity: int, n_features: int, n_actions: int, cfg: PpoConfig | None = None,
                 rng=None, hidden: int = 16):
        self.cfg = cfg or PpoConfig()
        self.capacity = int(capacity)
        self.n_features = int(n_features)
        self.n_actions = int(n_actions)
        rng = rng if rng is not None else np.random.default_rng(0)
        arm_in = 2 + self.n_features
        self.actor = Mlp(arm_in, n_actions, hidden, rng=rng)
        self.critic = Mlp(arm_in, n_actions, hidden, rng=rng)
        self.lam_net = Mlp(self.capacity * (2 + self.n_features), 1, hidden, rng=rng)
        # zero output layer: every run starts from lambda = softplus(0)
        self.lam_net.W3[...] = 0.0
        self.lam_net.b3[...] = 0.0
        self.actor_opt = Adam(self.actor.n_params)
        self.critic_opt = Adam(self.critic.n_params)
        self.lam_opt = Adam(self.lam_net.n_params)
        self.lambda_lr = self.cfg.lambda_initial_learning_rate
        self.n_lambda_updates = 0

    # ------------------------------------------------------------- acting
    def lam(self, s_bar, z, xi) -> float:
        return float(softplus(self.lam_net(lambda_inputs(s_bar, z, xi))[0]))

    def probs(self, x) -> np.ndarray:
        logits = self.actor(x)
        if not np.all(np.isfinite(logits)):
            raise TrainingDivergenceError("non-finite actor logits")
        return policy_probs(logits)

    def sample(self, x, rng):
        """Sample one action per row; returns ``(actions, logprobs)``."""
        logits = self.actor(np.atleast_2d(x))
        if not np.all(np.isfinite(logits)):
            raise TrainingDivergenceError("non-finite actor logits")
        logp = log_softmax(logits)
        cdf = np.cumsum(np.exp(logp), axis=1)
        u = rng.random(len(logp))[:, None]
        a = np.minimum((u >= cdf).sum(axis=1), self.n_actions - 1)
        return a, logp[np.arange(len(a)), a]

    # ------------------------------------------------------------- PPO
    def update_critic(self, cols: dict, beta: float, costs: ActionCosts, steps: int | None = None):
        x = arm_inputs(cols["s_bar"], cols["lam"], cols["z"])
        loss = np.nan
        for _ in range(steps or self.cfg.trains_per_epoch):
            targets = critic_targets(self.critic, cols, beta, costs)
            q, cache = self.critic.forward(x)
            loss, dq = critic_loss_grad(q, cols["a"], targets)
            if not np.isfinite(loss):
                raise TrainingDivergenceError("non-finite critic loss")
            grad, _ = self.critic.backward(cache, dq)
            self.critic_opt.step(self.critic.params, grad, self.cfg.critic_learning_rate)
        return loss

    def update_actor(self, cols: dict, ent_coef: float, steps: int | None = None):
        x = arm_inputs(cols["s_bar"], cols["lam"], cols["z"])
        adv = advantages(self.critic, self.actor, x)[np.arange(len(x)), cols["a"]]
        loss, info = np.nan, {}
        for _ in range(steps or self.cfg.trains_per_epoch):
            logits, cache = self.actor.forward(x)
            loss, dlogits, info = actor_loss_grad(logits, cols["a"], cols["logp"], adv, ent_coef,
                                                  self.cfg.agent_clip_ratio)
            grad, _ = self.actor.backward(cache, dlogits)
            self.actor_opt.step(self.actor.params, grad, self.cfg.actor_learning_rate)
        return loss, info

    def ppo_update(self, window: dict, latest: dict, beta: float, costs: ActionCosts, ent_coef: float) -> dict:
        """Critic on the whole window, then actor on the latest on-policy epoch."""
        if not len(window["a"]):
            raise ValueError("empty buffer")
        critic_loss = self.update_critic(window, beta, costs)
        actor_loss, info = self.update_actor(latest, ent_coef) if len(latest["a"]) else (np.nan, {})
        return {"critic_loss": critic_loss, "actor_loss": actor_loss, **info}

    # ------------------------------------------------------------- lambda
    def lambda_targets(self, lam_old, cost_sums, budget_term):
        """Stepped lambda targets, one per epoch window, clipped to [0, lambda_max]."""
        gap = budget_term - np.asarray(cost_sums, dtype=np.float64)
        sign = 1.0 if self.cfg.main_text_sign else -1.0
        target = np.asarray(lam_old, dtype=np.float64) + sign * self.lambda_lr * gap
        return np.clip(target, 0.0, self.cfg.lambda_max)

    def fit_lambda(self, inputs, targets, steps: int | None = None) -> float:
        """Regress the softplus output toward ``targets`` by MSE."""
        x = np.atleast_2d(inputs)
        t = np.asarray(targets, dtype=np.float64)
        loss = np.nan
        for _ in range(steps or self.cfg.lambda_fit_steps):
            raw, cache = self.lam_net.forward(x)
            lam = softplus(raw[:, 0])
            err = lam - t
            loss = float(np.mean(err * err))
            draw = (2.0 * err / len(t) * sigmoid(raw[:, 0]))[:, None]
            grad, _ = self.lam_net.backward(cache, draw)
            self.lam_opt.step(self.lam_net.params, grad, self.cfg.lambda_fit_learning_rate)
        if not np.isfinite(loss):
            raise TrainingDivergenceError("non-finite lambda loss")
        return loss

    def lambda_update(self, inputs, lam_old, cost_sums, budget_term) -> dict:
        """One lambda update over the collected epoch windows, then decay the rate."""
        if len(lam_old) == 0:
            log.warning("lambda update skipped: no epoch windows")
            return {}
        targets = self.lambda_targets(lam_old, cost_sums, budget_term)
        loss = self.fit_lambda(inputs, targets)
        self.n_lambda_updates += 1
        self.lambda_lr *= self.cfg.lambda_scheduler_discount_rate
        return {"lambda_loss": loss, "lambda_target": float(np.mean(targets))}

    # ------------------------------------------------------------- state
    def nets(self) -> dict:
        return {"actor": self.actor, "critic": self.critic, "lambda": self.lam_net}

    def optimizer_state(self) -> dict:
        return {"actor": self.actor_opt.state(), "critic": self.critic_opt.state(),
                "lambda": self.lam_opt.state(), "lambda_lr": self.lambda_lr,
                "n_lambda_updates": self.n_lambda_updates}

    def load_optimizer_state(self, d: dict):
        self.actor_opt.load_state(d["actor"])
        self.critic_opt.load_state(d["critic"])
        self.lam_opt.load_state(d["lambda"])
        self.lambda_lr = float(d["lambda_lr"])
        self.n_lambda_updates = int(d["n_lambda_updates"])
