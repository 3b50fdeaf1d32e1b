"""On-policy training loop over task slots with the per-task mask lifecycle.

One iteration = a synchronized rollout of `rollout_length` steps across
`workers` environment copies, followed by clipped-surrogate updates with
RMSprop over `epochs` x `minibatches` passes. A slot consumes a fixed step
budget on one task and ends by consolidating the mixed scores into the mask
store. Masks received from peers land in a mailbox and replace the
current-task scores at the next iteration boundary; they never change the
step budget.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from maskmesh import kernels, rng
from maskmesh.backbone import Backbone
from maskmesh.errors import ConfigurationError, LearnerFault
from maskmesh.masks import MaskScores, MaskStore, quantize_to_f32
from maskmesh.policy import MaskedPolicy, greedy_action


@dataclass
class LearnerConfig:
    lr: float = 0.00015
    discount: float = 0.99
    gae_tau: float = 0.99
    clip: float = 0.1
    epochs: int = 8
    minibatches: int = 64
    rollout_length: int = 128
    workers: int = 4
    entropy_weight: float = 0.00015
    steps_per_slot: int = 12800
    grad_clip: float = 5.0
    value_loss_coef: float = 0.5
    rmsprop_alpha: float = 0.99
    rmsprop_eps: float = 1e-8
    adv_norm_eps: float = 1e-8
    evaluation_episodes: int = 25

    def __post_init__(self) -> None:
        for name in ("lr", "discount", "gae_tau", "clip", "epochs", "minibatches",
                     "rollout_length", "workers", "entropy_weight", "steps_per_slot",
                     "grad_clip", "evaluation_episodes"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.rollout_length * self.workers != 512:
            raise ConfigurationError("rollout_length * workers must equal 512")
        if self.steps_per_slot % self.steps_per_iteration != 0:
            raise ConfigurationError("steps_per_slot must be a multiple of rollout_length * workers")

    @property
    def steps_per_iteration(self) -> int:
        return self.rollout_length * self.workers

    @property
    def iterations_per_slot(self) -> int:
        return self.steps_per_slot // self.steps_per_iteration


@dataclass
class CurriculumSlot:
    task_id: int
    steps: int


class PerfEstimate:
    """Mean episodic return over episodes that ended within the last 512 steps."""

    def __init__(self, window_steps: int = 512):
        self.window_steps = window_steps
        self._returns: deque[tuple[int, float]] = deque()

    def record(self, end_step: int, episode_return: float) -> None:
        self._returns.append((end_step, episode_return))

    def estimate(self, current_step: int) -> float:
        cutoff = current_step - self.window_steps
        while self._returns and self._returns[0][0] <= cutoff:
            self._returns.popleft()
        if not self._returns:
            return 0.0
        return float(np.mean([r for _, r in self._returns]))


@dataclass
class Trajectory:
    obs: np.ndarray  # (T, N, obs_dim)
    actions: np.ndarray  # (T, N)
    log_probs: np.ndarray  # (T, N)
    values: np.ndarray  # (T, N)
    rewards: np.ndarray  # (T, N)
    dones: np.ndarray  # (T, N)
    bootstrap: np.ndarray  # (N,)


class RMSprop:
    def __init__(self, lr: float, alpha: float = 0.99, eps: float = 1e-8):
        self.lr = lr
        self.alpha = alpha
        self.eps = eps
        self._sq: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, p in params.items():
            sq = self._sq.get(name)
            if sq is None:
                sq = self._sq[name] = np.zeros_like(p)
            kernels.rmsprop_step(p, grads[name], sq, self.lr, self.alpha, self.eps)


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm


def row_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class IterationReport:
    iteration: int
    steps_done: int
    mean_return: float
    perf_estimate: float
    episodes: int
    policy_loss: float
    value_loss: float
    entropy: float
    mask_integrated: bool


@dataclass
class SlotReport:
    task_id: int
    iterations: int
    steps: int
    best_perf: float
    greedy_return: float
    iteration_reports: list[IterationReport] = field(default_factory=list)


@dataclass
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float


def ppo_update(
    policy: MaskedPolicy,
    optimizer: RMSprop,
    traj: Trajectory,
    advantages: np.ndarray,
    returns: np.ndarray,
    cfg: LearnerConfig,
    shuffle_rng: np.random.Generator,
) -> UpdateStats:
    """Epochs x minibatches of clipped surrogate + value loss + entropy bonus."""
    batch = cfg.rollout_length * cfg.workers
    obs = traj.obs.reshape(batch, -1)
    actions = traj.actions.reshape(batch)
    logp_old = traj.log_probs.reshape(batch)
    adv = advantages.reshape(batch)
    ret = returns.reshape(batch)
    adv = (adv - adv.mean()) / (adv.std() + cfg.adv_norm_eps)

    mb_size = batch // cfg.minibatches
    pol_losses, val_losses, entropies = [], [], []
    rows = np.arange(mb_size)
    for _ in range(cfg.epochs):
        perm = shuffle_rng.permutation(batch)
        for m in range(cfg.minibatches):
            idx = perm[m * mb_size:(m + 1) * mb_size]
            cache = policy.forward(obs[idx])
            probs = row_softmax(cache.logits)
            a = actions[idx]
            logp = np.log(probs[rows, a])
            ratio = np.exp(logp - logp_old[idx])
            a_hat = adv[idx]
            clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)
            surrogate = np.minimum(ratio * a_hat, clipped * a_hat)
            log_probs_all = np.log(probs)
            entropy = -(probs * log_probs_all).sum(axis=1)
            v_err = cache.value - ret[idx]

            policy_loss = -float(surrogate.mean())
            value_loss = float((v_err * v_err).mean())
            ent_mean = float(entropy.mean())
            loss = policy_loss + cfg.value_loss_coef * value_loss - cfg.entropy_weight * ent_mean
            if not np.isfinite(loss):
                raise LearnerFault(
                    f"non-finite loss (policy={policy_loss}, value={value_loss}, entropy={ent_mean})"
                )

            # gradient of the scalar loss w.r.t. logits and value outputs
            use_unclipped = (ratio * a_hat) <= (clipped * a_hat)
            d_logp = np.where(use_unclipped, -a_hat * ratio, 0.0) / mb_size
            d_logits = d_logp[:, None] * (np.eye(policy.n_actions)[a] - probs)
            d_logits += cfg.entropy_weight * probs * (log_probs_all + entropy[:, None]) / mb_size
            d_value = cfg.value_loss_coef * 2.0 * v_err / mb_size

            grads = policy.backward(cache, d_logits, d_value)
            clip_grad_norm(grads, cfg.grad_clip)
            optimizer.step(policy.trainable(), grads)

            pol_losses.append(policy_loss)
            val_losses.append(value_loss)
            entropies.append(ent_mean)
    return UpdateStats(float(np.mean(pol_losses)), float(np.mean(val_losses)), float(np.mean(entropies)))


def evaluate_mask(backbone: Backbone, scores: MaskScores, env, episodes: int) -> float:
    """Mean return over greedy episodes with the canonical mask-only policy."""
    total = 0.0
    for _ in range(episodes):
        obs = env.reset()
        done = False
        while not done:
            obs, reward, done = env.step(greedy_action(backbone, scores, obs))
            total += reward
    return total / episodes


class Learner:
    """Drives one agent's training; the runtime calls it one iteration at a time."""

    def __init__(
        self,
        backbone: Backbone,
        config: LearnerConfig,
        env_factory: Callable[[int], object],
        store: MaskStore,
        agent_seed: int,
    ):
        self.backbone = backbone
        self.config = config
        self.env_factory = env_factory
        self.store = store
        self.agent_seed = agent_seed
        self.policy = MaskedPolicy(backbone)
        self._action_rng = rng.stream(agent_seed, rng.ACTION_SAMPLING)
        self._shuffle_rng = rng.stream(agent_seed, rng.MINIBATCH)
        self._mailbox: deque[MaskScores] = deque()
        self.task_id: int | None = None
        self.iteration = 0
        self.step = 0
        self._envs: list = []
        self._worker_obs: np.ndarray | None = None
        self._worker_returns: np.ndarray | None = None
        self.perf = PerfEstimate()
        self._optimizer = RMSprop(config.lr, config.rmsprop_alpha, config.rmsprop_eps)

    # ------------------------------------------------------------------

    def fresh_scores(self, task_id: int) -> MaskScores:
        gen = rng.stream(self.agent_seed, rng.SCORE_INIT, task_id)
        layers = []
        for w in self.backbone.layers:
            u = np.sqrt(1.0 / w.shape[1])
            layers.append(gen.uniform(-u, u, size=w.shape))
        return MaskScores(task_id=task_id, layer_scores=layers)

    def set_task(self, task_id: int) -> float:
        """Bind the task's scores (stored or fresh) and return the perf to advertise."""
        entry = self.store.get(task_id)
        init = entry.scores.copy() if entry is not None else self.fresh_scores(task_id)
        init.task_id = task_id
        stored = [e.scores for e in self.store.entries_ascending()]
        self.policy.bind_task(init, stored)
        self.task_id = task_id
        self.iteration = 0
        self.step = 0
        self.perf = PerfEstimate()
        self._mailbox.clear()
        self._optimizer = RMSprop(self.config.lr, self.config.rmsprop_alpha, self.config.rmsprop_eps)
        self._envs = [self.env_factory(task_id) for _ in range(self.config.workers)]
        self._worker_obs = np.stack([env.reset() for env in self._envs])
        self._worker_returns = np.zeros(self.config.workers)
        return entry.best_perf if entry is not None else 0.0

    def queue_mask(self, scores: MaskScores) -> None:
        self._mailbox.append(scores)

    # ------------------------------------------------------------------

    def _collect(self) -> tuple[Trajectory, list[float]]:
        cfg = self.config
        t_len, n = cfg.rollout_length, cfg.workers
        obs_dim = self._worker_obs.shape[1]
        obs = np.empty((t_len, n, obs_dim))
        actions = np.empty((t_len, n), dtype=np.int64)
        log_probs = np.empty((t_len, n))
        values = np.empty((t_len, n))
        rewards = np.empty((t_len, n))
        dones = np.empty((t_len, n))
        finished: list[float] = []

        for t in range(t_len):
            cache = self.policy.forward(self._worker_obs)
            probs = row_softmax(cache.logits)
            u = self._action_rng.random(n)
            cum = probs.cumsum(axis=1)
            act = (u[:, None] > cum).sum(axis=1)
            np.clip(act, 0, self.policy.n_actions - 1, out=act)

            obs[t] = self._worker_obs
            actions[t] = act
            log_probs[t] = np.log(probs[np.arange(n), act])
            values[t] = cache.value

            next_obs = np.empty_like(self._worker_obs)
            for i, env in enumerate(self._envs):
                try:
                    o, r, d = env.step(int(act[i]))
                except Exception as exc:  # env fault aborts the slot
                    raise LearnerFault(f"environment fault in worker {i}: {exc}") from exc
                self.step += 1
                rewards[t, i] = r
                dones[t, i] = float(d)
                self._worker_returns[i] += r
                if d:
                    finished.append(float(self._worker_returns[i]))
                    self.perf.record(self.step, float(self._worker_returns[i]))
                    self._worker_returns[i] = 0.0
                    o = env.reset()
                next_obs[i] = o
            self._worker_obs = next_obs

        bootstrap = self.policy.forward(self._worker_obs).value
        traj = Trajectory(obs, actions, log_probs, values, rewards, dones, bootstrap)
        return traj, finished

    def run_iteration(self) -> IterationReport:
        if self.task_id is None:
            raise ConfigurationError("set_task() before run_iteration()")
        integrated = False
        while self._mailbox:
            self.policy.integrate_scores(self._mailbox.popleft())
            integrated = True
        traj, finished = self._collect()
        adv, ret = kernels.gae(
            traj.rewards, traj.values, traj.dones, traj.bootstrap,
            self.config.discount, self.config.gae_tau,
        )
        stats = ppo_update(self.policy, self._optimizer, traj, adv, ret, self.config, self._shuffle_rng)
        self.iteration += 1
        return IterationReport(
            iteration=self.iteration,
            steps_done=self.step,
            mean_return=float(np.mean(finished)) if finished else 0.0,
            perf_estimate=self.perf.estimate(self.step),
            episodes=len(finished),
            policy_loss=stats.policy_loss,
            value_loss=stats.value_loss,
            entropy=stats.entropy,
            mask_integrated=integrated,
        )

    def consolidate(self) -> SlotReport:
        """Freeze the combined scores into the store and record the canonical greedy return."""
        combined = MaskScores(self.task_id, self.policy.effective_scores())
        quantized = quantize_to_f32(combined)
        best_perf = self.perf.estimate(self.step)
        self.store.put(self.task_id, quantized, best_perf)
        greedy = evaluate_mask(
            self.backbone, quantized, self.env_factory(self.task_id), self.config.evaluation_episodes
        )
        return SlotReport(
            task_id=self.task_id,
            iterations=self.iteration,
            steps=self.step,
            best_perf=best_perf,
            greedy_return=greedy,
        )

    def run_task_slot(self, slot: CurriculumSlot) -> SlotReport:
        """Standalone slot driver (the networked runtime paces iterations itself)."""
        if slot.steps <= 0 or slot.steps % self.config.steps_per_iteration != 0:
            raise ConfigurationError("slot steps must be a positive multiple of the iteration size")
        self.set_task(slot.task_id)
        reports = [self.run_iteration() for _ in range(slot.steps // self.config.steps_per_iteration)]
        out = self.consolidate()
        out.iteration_reports = reports
        return out
