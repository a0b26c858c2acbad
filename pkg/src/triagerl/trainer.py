"""PPO training over labeled warnings, with checkpointing.

Rollouts run one episode per training warning; advantages are Monte-Carlo
returns minus the value baseline (episodes are at most two steps, so no
bootstrapping). Updates maximize the clipped surrogate with a value-loss
penalty and an entropy bonus; gradients are hand-derived backpropagation
through the two-layer network, optimized by an in-tree Adam.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .env import ACTION_COUNT, RewardSpec, Terminal, TriageAction, TriageEnv
from .errors import (
    DigestMismatch,
    EmptySplit,
    FeatureValidationError,
    NonFiniteLoss,
    UnlabeledRecordError,
)
from .features import FeatureManifest, FeatureVector, MANIFEST, NormalizerStats, fit_normalizer, normalize
from .fuzz import FuzzKind
from .metrics import PredictionRecord, compute_metrics
from .policy import (
    PolicyParams,
    SelectMode,
    classify_probability,
    draw_dropout_masks,
    flatten_params,
    forward_cache,
    init_params,
    policy_forward,
    select_action,
    softmax,
    unflatten_params,
)
from .warnings import Dataset, Split, WarningRecord

CHECKPOINT_FORMAT_VERSION = 1
_MASK_PENALTY = -1e9


@dataclass
class TrainConfig:
    epochs_max: int = 200
    minibatch_size: int = 64
    clip_epsilon: float = 0.2
    learning_rate: float = 3e-4
    value_loss_weight: float = 0.5
    entropy_weight: float = 0.01
    ppo_inner_epochs: int = 4
    gamma: float = 1.0
    patience: int = 10
    dropout_rate: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.clip_epsilon < 1.0:
            raise ValueError(f"clip_epsilon must be in (0,1), got {self.clip_epsilon}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must be in (0,1], got {self.gamma}")
        for name in ("epochs_max", "minibatch_size", "learning_rate", "ppo_inner_epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")


@dataclass
class TrajectoryBatch:
    states: np.ndarray        # (n, state_dim)
    actions: np.ndarray       # (n,) int
    behavior_logp: np.ndarray  # (n,)
    rewards: np.ndarray       # (n,)
    values: np.ndarray        # (n,)
    episode_ids: np.ndarray   # (n,) int
    terminal: np.ndarray      # (n,) bool
    returns: np.ndarray       # (n,)
    advantages: np.ndarray    # (n,) normalized

    def __len__(self) -> int:
        return len(self.actions)

    def take(self, idx: np.ndarray) -> "TrajectoryBatch":
        return TrajectoryBatch(*[getattr(self, f.name)[idx] for f in
                                 TrajectoryBatch.__dataclass_fields__.values()])  # type: ignore[arg-type]


def discounted_returns(rewards: list[float], gamma: float) -> list[float]:
    """G_t = sum_{k>=t} gamma^(k-t) r_k within one episode."""
    out = [0.0] * len(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


def clipped_surrogate(rho: np.ndarray, adv: np.ndarray, eps: float) -> np.ndarray:
    """min(rho*A, clip(rho, 1-eps, 1+eps)*A), elementwise."""
    return np.minimum(rho * adv, np.clip(rho, 1.0 - eps, 1.0 + eps) * adv)


def collect_rollouts(
    params: PolicyParams,
    episodes: list[tuple[WarningRecord, np.ndarray]],
    env: TriageEnv,
    backend,
    batch_size: int | None,
    rng: np.random.Generator,
    gamma: float = 1.0,
) -> TrajectoryBatch:
    """One sampled episode per warning; actions drawn from the current policy.

    batch_size None walks the whole set once in shuffled order; an explicit
    size samples warnings with replacement. Backend trouble never escapes an
    episode; it shows up as outcome encodings.
    """
    n = len(episodes)
    if n == 0:
        raise EmptySplit("no episodes to collect")
    if batch_size is None:
        indices = rng.permutation(n)
    else:
        indices = rng.choice(n, size=batch_size, replace=True)

    states, actions, logps, rewards, values, episode_ids, terminal = [], [], [], [], [], [], []
    for episode_id, idx in enumerate(indices):
        record, feats = episodes[int(idx)]
        state = env.reset(feats)
        for _ in range(2):  # fuzz at most once, then classification is mandatory
            vec = state.vector()
            dist = policy_forward(params, vec)
            masked = state.fuzz is not FuzzKind.NOT_RUN
            action, _ = select_action(dist, SelectMode.SAMPLE, mask_fuzz=masked, rng=rng)
            if masked:
                two_way = np.array([dist.probs[0], dist.probs[1], 0.0])
                prob = two_way[action] / two_way.sum()
            else:
                prob = dist.probs[action]
            nxt, reward = env.step(state, action, record.label, backend, record)
            states.append(vec)
            actions.append(int(action))
            logps.append(float(np.log(prob)))
            rewards.append(reward)
            values.append(dist.value)
            episode_ids.append(episode_id)
            terminal.append(isinstance(nxt, Terminal))
            if isinstance(nxt, Terminal):
                break
            state = nxt

    rewards = np.array(rewards, dtype=np.float64)
    episode_ids = np.array(episode_ids, dtype=np.int64)
    returns = np.zeros_like(rewards)
    for eid in np.unique(episode_ids):
        mask = episode_ids == eid
        returns[mask] = discounted_returns(list(rewards[mask]), gamma)
    values = np.array(values, dtype=np.float64)
    raw_adv = returns - values
    advantages = (raw_adv - raw_adv.mean()) / (raw_adv.std() + 1e-8)

    return TrajectoryBatch(
        states=np.array(states, dtype=np.float64),
        actions=np.array(actions, dtype=np.int64),
        behavior_logp=np.array(logps, dtype=np.float64),
        rewards=rewards,
        values=values,
        episode_ids=episode_ids,
        terminal=np.array(terminal, dtype=bool),
        returns=returns,
        advantages=advantages,
    )


def _fuzz_mask_penalty(states: np.ndarray, feature_dim: int) -> np.ndarray:
    """Additive logit penalty rows for states where fuzzing is illegal.

    A state whose NotRun slot is 0 has already fuzzed; its Fuzz logit is
    pushed to -inf so the update distribution matches the behavior one.
    """
    penalty = np.zeros((states.shape[0], ACTION_COUNT))
    already_fuzzed = states[:, feature_dim] == 0.0
    penalty[already_fuzzed, TriageAction.FUZZ] = _MASK_PENALTY
    return penalty


def ppo_loss_and_grads(
    params: PolicyParams,
    batch: TrajectoryBatch,
    config: TrainConfig,
    feature_dim: int,
    dropout_masks: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[float, dict[str, np.ndarray], dict[str, float]]:
    """Total PPO loss and its analytic gradients on one minibatch.

    Loss = -mean(clipped surrogate) + c_v * value MSE - c_e * mean entropy.
    """
    n = len(batch)
    cache = forward_cache(params, batch.states, dropout_masks)
    logits = cache["logits"] + _fuzz_mask_penalty(batch.states, feature_dim)
    probs = softmax(logits)
    values = cache["values"]

    idx = np.arange(n)
    logp_new = np.log(probs[idx, batch.actions])
    rho = np.exp(logp_new - batch.behavior_logp)
    adv = batch.advantages

    unclipped = rho * adv
    clipped = np.clip(rho, 1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon) * adv
    surrogate = np.minimum(unclipped, clipped)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(probs > 0, probs * np.log(probs), 0.0)
    entropies = -plogp.sum(axis=1)
    value_err = values - batch.returns

    policy_loss = -surrogate.mean()
    value_loss = float((value_err**2).mean())
    entropy_mean = float(entropies.mean())
    total = float(policy_loss + config.value_loss_weight * value_loss
                  - config.entropy_weight * entropy_mean)
    parts = {"policy_loss": float(policy_loss), "value_loss": value_loss,
             "entropy": entropy_mean, "total": total}
    if not np.isfinite(total):
        # The caller aborts on a non-finite loss; gradients would be garbage.
        return total, {}, parts

    # d(surrogate)/d(rho): the active min branch; the clip is flat outside the band.
    unclipped_active = unclipped <= clipped
    in_band = (rho >= 1.0 - config.clip_epsilon) & (rho <= 1.0 + config.clip_epsilon)
    dsurr_drho = np.where(unclipped_active, adv, np.where(in_band, adv, 0.0))
    dlogp = -(dsurr_drho * rho) / n  # d(policy_loss)/d(logp_new)

    # logits gradient: surrogate term + entropy bonus term.
    one_hot = np.zeros_like(probs)
    one_hot[idx, batch.actions] = 1.0
    dlogits = dlogp[:, None] * (one_hot - probs)
    with np.errstate(divide="ignore", invalid="ignore"):
        safe_log = np.where(probs > 0, np.log(probs), 0.0)
    dlogits += (config.entropy_weight / n) * probs * (safe_log + entropies[:, None])

    dvalues = 2.0 * config.value_loss_weight * value_err / n

    h2, h1 = cache["h2"], cache["h1"]
    grads: dict[str, np.ndarray] = {
        "w_pi": h2.T @ dlogits,
        "b_pi": dlogits.sum(axis=0),
        "w_v": (h2.T @ dvalues)[:, None],
        "b_v": np.array([dvalues.sum()]),
    }
    dh2 = dlogits @ params.w_pi.T + np.outer(dvalues, params.w_v.ravel())
    da2 = dh2 * dropout_masks[1] if dropout_masks is not None else dh2
    dz2 = da2 * (cache["z2"] > 0)
    grads["w2"] = h1.T @ dz2
    grads["b2"] = dz2.sum(axis=0)
    dh1 = dz2 @ params.w2.T
    da1 = dh1 * dropout_masks[0] if dropout_masks is not None else dh1
    dz1 = da1 * (cache["z1"] > 0)
    grads["w1"] = cache["states"].T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    return total, grads, parts


class Adam:
    """Adaptive moment estimation over the flattened parameter vector."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: np.ndarray | None = None
        self.v: np.ndarray | None = None
        self.t = 0

    def step(self, flat: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(flat)
            self.v = np.zeros_like(flat)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad**2
        m_hat = self.m / (1 - self.beta1**self.t)
        v_hat = self.v / (1 - self.beta2**self.t)
        return flat - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _flat_grads(params: PolicyParams, grads: dict[str, np.ndarray]) -> np.ndarray:
    order = ("w1", "b1", "w2", "b2", "w_pi", "b_pi", "w_v", "b_v")
    return np.concatenate([grads[name].ravel() for name in order])


def ppo_update(
    params: PolicyParams,
    batch: TrajectoryBatch,
    config: TrainConfig,
    rng: np.random.Generator,
    feature_dim: int,
    optimizer: Adam | None = None,
) -> tuple[PolicyParams, dict[str, float]]:
    """Several passes of shuffled minibatch updates on one rollout batch."""
    optimizer = optimizer or Adam(config.learning_rate)
    working = params.copy()
    last_parts: dict[str, float] = {}
    for _ in range(config.ppo_inner_epochs):
        perm = rng.permutation(len(batch))
        for start in range(0, len(batch), config.minibatch_size):
            mb_idx = perm[start : start + config.minibatch_size]
            mb = batch.take(mb_idx)
            masks = None
            if working.dropout_rate > 0.0:
                masks = draw_dropout_masks(
                    rng, working.hidden_sizes, working.dropout_rate, n=len(mb)
                )
            total, grads, parts = ppo_loss_and_grads(working, mb, config, feature_dim, masks)
            if not np.isfinite(total):
                raise NonFiniteLoss(
                    f"non-finite loss on minibatch starting at {start} "
                    f"(episode ids {sorted(set(mb.episode_ids.tolist()))[:5]}...)"
                )
            flat = optimizer.step(flatten_params(working), _flat_grads(working, grads))
            working = unflatten_params(
                flat, working.input_dim, working.hidden_sizes,
                working.dropout_rate, working.seed,
            )
            last_parts = parts
    return working, last_parts


@dataclass
class PolicyCheckpoint:
    params: PolicyParams
    normalizer: NormalizerStats
    manifest_digest: str
    config: TrainConfig
    reward_spec: RewardSpec
    history: list[dict] = field(default_factory=list)


def play_episode(
    params,
    env,
    record,
    feats,
    backend,
    mask_fuzz=False,
    mode: SelectMode = SelectMode.GREEDY,
    rng=None,
) -> PredictionRecord:
    """One evaluation episode; the score is P(TP) among the two classify
    actions at the terminal decision state."""
    state = env.reset(feats)
    fuzz_used = False
    fuzz_kind = None
    for _ in range(2):
        masked = mask_fuzz or state.fuzz is not FuzzKind.NOT_RUN
        dist = policy_forward(params, state.vector())
        action, _ = select_action(dist, mode, mask_fuzz=masked, rng=rng)
        nxt, _ = env.step(state, action, record.label, backend, record)
        if isinstance(nxt, Terminal):
            return PredictionRecord(
                warning_id=record.id,
                predicted=nxt.prediction,
                score=classify_probability(dist),
                fuzz_used=fuzz_used,
                fuzz_kind=fuzz_kind,
            )
        fuzz_used = True
        fuzz_kind = nxt.fuzz
        state = nxt
    raise AssertionError("episode did not terminate in two steps")


def greedy_predictions(
    params, env, episodes, backend, mask_fuzz=False
) -> list[PredictionRecord]:
    return [
        play_episode(params, env, rec, feats, backend, mask_fuzz)
        for rec, feats in episodes
    ]


def _prepare_episodes(
    records: list[WarningRecord],
    vectors: dict[str, FeatureVector],
    stats: NormalizerStats,
    manifest: FeatureManifest,
) -> list[tuple[WarningRecord, np.ndarray]]:
    episodes = []
    for r in records:
        if r.id not in vectors:
            raise FeatureValidationError(f"no feature vector for warning {r.id}")
        episodes.append((r, normalize(vectors[r.id], stats, manifest).values))
    return episodes


def train(
    dataset: Dataset,
    vectors: dict[str, FeatureVector],
    config: TrainConfig,
    backend,
    reward_spec: RewardSpec | None = None,
    manifest: FeatureManifest = MANIFEST,
    log_lines: list[str] | None = None,
) -> PolicyCheckpoint:
    """Full training loop with validation-F1 model selection.

    Keeps the parameters with the best greedy validation F1; stops once
    `patience` epochs pass without improvement (patience 0 stops after the
    first epoch) or at epochs_max. Everything is reseeded from config.seed,
    so identical inputs give identical checkpoints.
    """
    reward_spec = reward_spec or RewardSpec()
    train_records = dataset.split_records(Split.TRAIN)
    val_records = dataset.split_records(Split.VAL)
    if not train_records:
        raise EmptySplit("train split is empty")
    if not val_records:
        raise EmptySplit("val split is empty")
    unlabeled = [r.id for r in train_records + val_records if r.label is None]
    if unlabeled:
        raise UnlabeledRecordError(f"unlabeled records in splits: {', '.join(unlabeled)}")

    stats = fit_normalizer([vectors[r.id] for r in train_records if r.id in vectors], manifest)
    train_eps = _prepare_episodes(train_records, vectors, stats, manifest)
    val_eps = _prepare_episodes(val_records, vectors, stats, manifest)
    val_labels = {r.id: r.label for r in val_records}

    env = TriageEnv(feature_dim=len(manifest), reward_spec=reward_spec)
    params = init_params(env.state_dim, dropout_rate=config.dropout_rate, seed=config.seed)
    rng_rollout = np.random.default_rng([config.seed, 1])
    rng_update = np.random.default_rng([config.seed, 2])
    optimizer = Adam(config.learning_rate)

    best_params = params.copy()
    best_f1 = -1.0
    stale = 0
    history: list[dict] = []
    for epoch in range(1, config.epochs_max + 1):
        batch = collect_rollouts(params, train_eps, env, backend, None, rng_rollout, config.gamma)
        params, _ = ppo_update(params, batch, config, rng_update, len(manifest), optimizer)

        episode_returns = [
            float(batch.rewards[batch.episode_ids == eid].sum())
            for eid in np.unique(batch.episode_ids)
        ]
        preds = greedy_predictions(params, env, val_eps, backend)
        report = compute_metrics(preds, val_labels)
        val_f1 = report.f1 if report.f1 is not None else 0.0
        entry = {
            "epoch": epoch,
            "mean_return": float(np.mean(episode_returns)),
            "val_accuracy": report.accuracy,
            "val_f1": val_f1,
            "fuzz_rate": report.fuzz_invocation_rate,
        }
        history.append(entry)
        if log_lines is not None:
            log_lines.append(
                "epoch={epoch} mean_return={mean_return:.4f} val_accuracy={val_accuracy:.4f} "
                "val_f1={val_f1:.4f} fuzz_rate={fuzz_rate:.4f}".format(**entry)
            )

        if val_f1 > best_f1:
            best_f1 = val_f1
            best_params = params.copy()
            stale = 0
        else:
            stale += 1
        if stale >= config.patience:
            break

    return PolicyCheckpoint(
        params=best_params,
        normalizer=stats,
        manifest_digest=manifest.digest,
        config=config,
        reward_spec=reward_spec,
        history=history,
    )


# ---------------------------------------------------------------------------
# Checkpoint container: versioned JSON, lossless float round-trip.
# ---------------------------------------------------------------------------


def save_checkpoint(ckpt: PolicyCheckpoint) -> bytes:
    p = ckpt.params
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "manifest_digest": ckpt.manifest_digest,
        "layer_dims": [p.input_dim, *p.hidden_sizes],
        "dropout_rate": p.dropout_rate,
        "seed": p.seed,
        "weights": {name: getattr(p, name).ravel().tolist()
                    for name in ("w1", "b1", "w2", "b2", "w_pi", "b_pi", "w_v", "b_v")},
        "normalizer": {
            "mean": ckpt.normalizer.mean.tolist(),
            "std": ckpt.normalizer.std.tolist(),
            "fitted_on": ckpt.normalizer.fitted_on,
            "manifest_digest": ckpt.normalizer.manifest_digest,
        },
        "config": asdict(ckpt.config),
        "reward_spec": asdict(ckpt.reward_spec),
        "history": ckpt.history,
    }
    return json.dumps(doc, sort_keys=False, separators=(",", ":")).encode("utf-8")


def load_checkpoint(data: bytes, manifest: FeatureManifest = MANIFEST) -> PolicyCheckpoint:
    doc = json.loads(data.decode("utf-8"))
    if doc["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {doc['format_version']}")
    if doc["manifest_digest"] != manifest.digest:
        raise DigestMismatch(
            f"checkpoint digest {doc['manifest_digest']} != manifest digest {manifest.digest}"
        )
    input_dim, h1, h2 = doc["layer_dims"]
    flat = np.concatenate([np.array(doc["weights"][name], dtype=np.float64)
                           for name in ("w1", "b1", "w2", "b2", "w_pi", "b_pi", "w_v", "b_v")])
    params = unflatten_params(flat, input_dim, (h1, h2), doc["dropout_rate"], doc["seed"])
    normalizer = NormalizerStats(
        mean=np.array(doc["normalizer"]["mean"], dtype=np.float64),
        std=np.array(doc["normalizer"]["std"], dtype=np.float64),
        fitted_on=doc["normalizer"]["fitted_on"],
        manifest_digest=doc["normalizer"]["manifest_digest"],
    )
    return PolicyCheckpoint(
        params=params,
        normalizer=normalizer,
        manifest_digest=doc["manifest_digest"],
        config=TrainConfig(**doc["config"]),
        reward_spec=RewardSpec(**doc["reward_spec"]),
        history=doc["history"],
    )
