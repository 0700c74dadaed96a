"""Soft actor-critic with mixture policies and pluggable gradient estimators.

Twin critics with EMA targets, uniform replay, and an actor trained by any
of the estimators module's kinds. Bandit tasks swap the learned critic for
the analytic reward (true-critic mode), in which case critic updates are
skipped entirely.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import estimators, policies
from .envs import BanditEnv, make_env
from .numerics import autodiff as ad
from .numerics.net import MLPSpec, ParameterVector, init_mlp_params, mlp_forward
from .numerics.optim import adam_init, adam_step
from .numerics.rng import Rng

# policy code -> (base_kind, squashed, mixture?, uniform weights?)
POLICY_CODES = {
    "SG": ("gaussian", True, False, False),
    "SGM": ("gaussian", True, True, False),
    "USGM": ("gaussian", True, True, True),
    "G": ("gaussian", False, False, False),
    "GM": ("gaussian", False, True, False),
    "Cauchy": ("cauchy", True, False, False),
    "CM": ("cauchy", True, True, False),
}


@dataclass
class SACConfig:
    env_kind: str = "pendulum-shaped"
    policy: str = "SG"
    estimator: str = "rp"
    n_components: int = 5
    hidden: tuple = (64, 64)
    activation: str = "relu"
    critic_lr: float = 1e-3
    kappa: float = 1.0              # actor lr = kappa * critic_lr
    alpha: float = 0.1
    entropy_mode: str = "fixed"     # "fixed" | "auto"
    target_entropy_coef: float = 1.0
    batch_size: int = 32
    buffer_capacity: int = 100_000
    rho: float = 0.01
    gamma: float = 0.99
    initial_uniform_steps: int = 10_000
    total_steps: int = 100_000
    seed: int = 0
    bandit_seed: int = 0
    true_critic: bool = False
    baseline_samples: int = 30
    use_baseline: bool = True
    gumbel_tau: float = 1.0

    @property
    def actor_lr(self) -> float:
        return self.kappa * self.critic_lr

    def __post_init__(self):
        if isinstance(self.hidden, list):
            self.hidden = tuple(self.hidden)
        if self.policy not in POLICY_CODES:
            raise ValueError(f"unknown policy {self.policy!r}; known: "
                             f"{sorted(POLICY_CODES)}")
        if self.estimator not in estimators.KINDS:
            raise ValueError(f"unknown estimator {self.estimator!r}; known: "
                             f"{estimators.KINDS}")
        if self.entropy_mode not in ("fixed", "auto"):
            raise ValueError("entropy_mode must be 'fixed' or 'auto'")
        if self.critic_lr <= 0 or self.kappa <= 0:
            raise ValueError("learning rates must be positive")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.n_components < 1:
            raise ValueError("n_components must be at least 1")


def default_config(env_kind: str, **overrides) -> SACConfig:
    """Per-setting defaults: bandits use the tiny true-critic setup."""
    base = dict(env_kind=env_kind)
    if env_kind.endswith("bandit"):
        base.update(hidden=(16, 16), buffer_capacity=5000, true_critic=True,
                    initial_uniform_steps=0, total_steps=2000)
    base.update(overrides)
    return SACConfig(**base)


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    terminated: np.ndarray


class ReplayBuffer:
    """Preallocated ring buffer with uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        self.capacity = capacity
        self.size = 0
        self._idx = 0
        self._s = np.empty((capacity, obs_dim))
        self._a = np.empty((capacity, act_dim))
        self._r = np.empty(capacity)
        self._s2 = np.empty((capacity, obs_dim))
        self._term = np.empty(capacity)

    def push(self, s, a, r, s_next, terminated: bool):
        i = self._idx
        self._s[i] = s
        self._a[i] = a
        self._r[i] = r
        self._s2[i] = s_next
        self._term[i] = float(terminated)
        self._idx = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: Rng, batch_size: int) -> Batch:
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(self._s[idx], self._a[idx], self._r[idx],
                     self._s2[idx], self._term[idx])


@dataclass
class RunRecord:
    """One row per finished episode; see CSV_COLUMNS for the layout."""

    config: SACConfig
    rows: list = field(default_factory=list)


CSV_COLUMNS = ("seed", "step", "episode", "return", "alpha",
               "weighting_entropy", "comp_separation")


class TrainingAborted(RuntimeError):
    """Raised when training hits non-finite numbers; carries the rows so far."""

    def __init__(self, message: str, record: "RunRecord"):
        super().__init__(message)
        self.record = record


def soft_update(target: ParameterVector, live: ParameterVector,
                rho: float) -> ParameterVector:
    """target <- (1 - rho) target + rho live."""
    return target.replace((1.0 - rho) * target.data + rho * live.data)


class Agent:
    def __init__(self, config: SACConfig, obs_dim: int, act_dim: int,
                 true_critic_fn=None):
        self.cfg = config
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        base_kind, squashed, mixture, uniform = POLICY_CODES[config.policy]
        self.base_kind = base_kind
        self.squashed = squashed
        self.uniform_weights = uniform
        self.n = config.n_components if mixture else 1

        root = Rng(config.seed)
        out_dim = 2 * self.n * act_dim + self.n
        self.actor_spec = MLPSpec(obs_dim, config.hidden, out_dim,
                                  config.activation)
        self.actor = init_mlp_params(self.actor_spec,
                                     root.substream("init", "actor"))
        self.actor_opt = adam_init(self.actor.size, config.actor_lr)

        self.true_critic_fn = true_critic_fn
        if true_critic_fn is None:
            self.q_spec = MLPSpec(obs_dim + act_dim, config.hidden, 1,
                                  config.activation)
            self.q1 = init_mlp_params(self.q_spec, root.substream("init", "q1"))
            self.q2 = init_mlp_params(self.q_spec, root.substream("init", "q2"))
            self.q1_target = self.q1.replace(self.q1.data.copy())
            self.q2_target = self.q2.replace(self.q2.data.copy())
            self.q1_opt = adam_init(self.q1.size, config.critic_lr)
            self.q2_opt = adam_init(self.q2.size, config.critic_lr)

        self.log_alpha = float(np.log(config.alpha))
        self.alpha_opt = adam_init(1, config.actor_lr)
        self.target_entropy = -config.target_entropy_coef * act_dim

        self._rng_act = root.substream("act")
        self._rng_target = root.substream("target")
        self._rng_alpha = root.substream("alpha")
        self._rng_replay = root.substream("replay")
        self._rng_update = root.substream("update")

    @property
    def alpha(self) -> float:
        if self.cfg.entropy_mode == "fixed":
            return self.cfg.alpha
        return float(np.exp(self.log_alpha))

    # --- policy heads ---

    def diff_head(self, states: np.ndarray, leaves) -> policies.DiffHead:
        out = mlp_forward(self.actor_spec, leaves, ad.constant(states))
        return policies.head_from_net_output(out, self.n, self.act_dim,
                                             self.base_kind, self.squashed,
                                             self.uniform_weights)

    def value_head(self, states: np.ndarray) -> policies.MixtureHead:
        dh = self.diff_head(states, self.actor.constants())
        return policies.MixtureHead(dh.means.value, dh.log_stds.value,
                                    dh.log_weights.value, self.base_kind,
                                    self.squashed)

    # --- critics ---

    def _q_graph(self, leaves, states: np.ndarray, actions: ad.Var) -> ad.Var:
        shape = actions.value.shape
        if len(shape) == 3:
            states = np.broadcast_to(states[:, None, :],
                                     (shape[0], shape[1], self.obs_dim))
        x = ad.concat([ad.constant(states), actions], axis=-1)
        out = mlp_forward(self.q_spec, leaves, x)
        return ad.reshape(out, shape[:-1])

    def q_values(self, pv: ParameterVector, states, actions) -> np.ndarray:
        return self._q_graph(pv.constants(), states,
                             ad.constant(np.asarray(actions))).value

    def critic_for_actor(self, states: np.ndarray):
        if self.true_critic_fn is not None:
            return self.true_critic_fn
        l1 = self.q1.constants()
        l2 = self.q2.constants()

        def critic(a: ad.Var) -> ad.Var:
            return ad.minimum(self._q_graph(l1, states, a),
                              self._q_graph(l2, states, a))

        return critic

    # --- updates ---

    def act(self, obs: np.ndarray, uniform: bool = False) -> np.ndarray:
        if uniform:
            return self._rng_act.uniform(-1.0, 1.0, size=self.act_dim)
        head = self.value_head(obs.reshape(1, -1))
        return policies.sample(head, self._rng_act).action[0]

    def critic_targets(self, batch: Batch) -> np.ndarray:
        sample = policies.sample(self.value_head(batch.s_next),
                                 self._rng_target)
        q1t = self.q_values(self.q1_target, batch.s_next, sample.action)
        q2t = self.q_values(self.q2_target, batch.s_next, sample.action)
        soft_v = np.minimum(q1t, q2t) - self.alpha * sample.log_prob
        return batch.r + self.cfg.gamma * (1.0 - batch.terminated) * soft_v

    def update_critics(self, batch: Batch, step: int) -> tuple:
        y = self.critic_targets(batch)
        losses = []
        for name in ("q1", "q2"):
            pv: ParameterVector = getattr(self, name)
            opt = getattr(self, name + "_opt")
            leaves = pv.leaves()
            pred = self._q_graph(leaves, batch.s, ad.constant(batch.a))
            loss = ad.reduce_mean(ad.square(pred - ad.constant(y)))
            if not np.isfinite(loss.value):
                raise RuntimeError(
                    f"non-finite {name} loss at update step {step}")
            names = list(leaves)
            grads = ad.backprop_grad(loss, [leaves[n] for n in names])
            flat = pv.flatten_grads(dict(zip(names, grads)))
            new_data, new_opt = adam_step(opt, pv.data, flat)
            setattr(self, name, pv.replace(new_data))
            setattr(self, name + "_opt", new_opt)
            losses.append(float(loss.value))
        return tuple(losses)

    def update_actor(self, batch: Batch, step: int) -> float:
        leaves = self.actor.leaves()
        head = self.diff_head(batch.s, leaves)
        ctx = estimators.ActorContext(
            head=head, critic=self.critic_for_actor(batch.s),
            alpha=self.alpha, rng=self._rng_update.substream(step),
            baseline_samples=self.cfg.baseline_samples,
            use_baseline=self.cfg.use_baseline,
            gumbel_tau=self.cfg.gumbel_tau)
        surr, _ = estimators.surrogate(self.cfg.estimator, ctx)
        loss = -surr
        names = list(leaves)
        grads = ad.backprop_grad(loss, [leaves[n] for n in names])
        flat = self.actor.flatten_grads(dict(zip(names, grads)))
        new_data, new_opt = adam_step(self.actor_opt, self.actor.data, flat)
        self.actor = self.actor.replace(new_data)
        self.actor_opt = new_opt
        return float(surr.value)

    def update_entropy_scale(self, batch: Batch) -> float:
        if self.cfg.entropy_mode != "auto":
            return self.alpha
        sample = policies.sample(self.value_head(batch.s), self._rng_alpha)
        # d/d log_alpha of E[-alpha (log pi + H_target)]
        grad = -self.alpha * float(np.mean(sample.log_prob
                                           + self.target_entropy))
        new_data, self.alpha_opt = adam_step(
            self.alpha_opt, np.array([self.log_alpha]), np.array([grad]))
        self.log_alpha = float(new_data[0])
        return self.alpha

    def soft_update_targets(self):
        if self.true_critic_fn is None:
            rho = self.cfg.rho
            self.q1_target = soft_update(self.q1_target, self.q1, rho)
            self.q2_target = soft_update(self.q2_target, self.q2, rho)

    def params_finite(self) -> bool:
        ok = np.isfinite(self.actor.data).all() and np.isfinite(self.log_alpha)
        if self.true_critic_fn is None:
            ok = ok and np.isfinite(self.q1.data).all() \
                 and np.isfinite(self.q2.data).all()
        return bool(ok)

    def mixture_stats(self, obs: np.ndarray) -> tuple:
        head = self.value_head(obs.reshape(1, -1))
        went = float(policies.weighting_entropy(head.weight_logits)[0])
        csep = float(policies.component_separation(head)[0])
        return went, csep


def train_loop(config: SACConfig, agent: Optional[Agent] = None) -> RunRecord:
    env = make_env(config.env_kind, bandit_seed=config.bandit_seed)
    bandit = isinstance(env, BanditEnv)
    if agent is None:
        critic_fn = env.true_critic if (bandit and config.true_critic) else None
        agent = Agent(config, env.obs_dim, env.act_dim,
                      true_critic_fn=critic_fn)
    buffer = ReplayBuffer(config.buffer_capacity, env.obs_dim, env.act_dim)
    record = RunRecord(config=config)

    env_rng = Rng(config.seed).substream("env")
    state = env.reset(env_rng)
    ep_return = 0.0
    episode = 0
    warmup = 0 if bandit else config.initial_uniform_steps

    for step in range(config.total_steps):
        action = agent.act(state.observation, uniform=step < warmup)
        result, next_state = env.step(state, action)
        buffer.push(state.observation, action, result.reward,
                    result.next_observation, result.terminated)
        ep_return += result.reward

        if next_state.done:
            went, csep = agent.mixture_stats(result.next_observation)
            record.rows.append((config.seed, step + 1, episode, ep_return,
                                agent.alpha, went, csep))
            episode += 1
            ep_return = 0.0
            state = env.reset(env_rng)
        else:
            state = next_state

        if step >= warmup and buffer.size >= config.batch_size:
            batch = buffer.sample(agent._rng_replay, config.batch_size)
            try:
                if not bandit or not config.true_critic:
                    agent.update_critics(batch, step)
                agent.update_actor(batch, step)
                agent.update_entropy_scale(batch)
            except RuntimeError as e:
                raise TrainingAborted(str(e), record) from e
            agent.soft_update_targets()
            if not agent.params_finite():
                raise TrainingAborted(f"non-finite parameters at step {step}",
                                      record)

    return record
