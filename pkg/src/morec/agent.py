"""Preference-conditioned actor-critic trained with multi-objective DDPG.

One pair of networks covers the whole preference simplex: both the actor and
the critic take the preference vector as extra input features. The actor
maps (state, preference) to a Gaussian over K "ideal" item embeddings; items
are selected row by row via dot-product softmax against the real catalog.
The critic maps (state, flattened proposal, preference) to a Q-value vector
with one entry per objective.

The critic consumes the continuous proposal matrix rather than discrete item
ids so the action gradient exists; the replayed proposal is stored in each
transition. The actor's policy gradient flows through the Gaussian mean
only; the scale head is used purely for exploration noise at rollout time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import checkpoint, nn
from .data import ItemGrouping, SplitDataset
from .embed import EmbeddingTable
from .env import OfflineEnv, Phase, encode_state

SIGMA_MIN = 1e-6
SIGMA_MAX = 10.0


@dataclass(frozen=True)
class PreferenceVector:
    """Point on the 2-simplex weighting (utility, fairness)."""

    utility: float
    fairness: float

    def __post_init__(self):
        for value in (self.utility, self.fairness):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"preference weights must be in [0, 1], got {value}")
        if abs(self.utility + self.fairness - 1.0) > 1e-9:
            raise ValueError("preference weights must sum to 1")

    def as_array(self) -> np.ndarray:
        return np.array([self.utility, self.fairness], dtype=np.float32)


def sample_preference(rng: np.random.Generator) -> PreferenceVector:
    """Uniform draw on the 2-simplex."""
    u = float(rng.uniform(0.0, 1.0))
    return PreferenceVector(utility=u, fairness=1.0 - u)


@dataclass(frozen=True)
class AgentArch:
    """Network dimensions; fixed once a checkpoint exists."""

    embed_dim: int = 16
    gru_hidden: int = 16
    gru_layers: int = 2
    slate_size: int = 10
    actor_hidden: tuple[int, ...] = (128, 64)
    critic_hidden: tuple[int, ...] = (128, 64)
    n_objectives: int = 2
    omega_scale: float = 8.0  # preference features are multiplied by this

    def __post_init__(self):
        if not self.actor_hidden or not self.critic_hidden:
            raise ValueError("actor and critic need at least one hidden layer")

    @property
    def state_dim(self) -> int:
        return self.embed_dim + self.gru_hidden

    @property
    def action_dim(self) -> int:
        return self.slate_size * self.embed_dim

    @property
    def gru_spec(self) -> nn.GruSpec:
        return nn.GruSpec(input_size=self.embed_dim, hidden_size=self.gru_hidden,
                          layers=self.gru_layers)

    @property
    def actor_head_spec(self) -> nn.MlpSpec:
        return nn.MlpSpec(sizes=(self.state_dim + self.n_objectives,
                                 *self.actor_hidden, 2 * self.action_dim))

    @property
    def critic_spec(self) -> nn.MlpSpec:
        return nn.MlpSpec(sizes=(self.state_dim + self.action_dim + self.n_objectives,
                                 *self.critic_hidden, self.n_objectives))


class ConditionedActor:
    """State-encoder GRU plus the (state, preference) -> (mu, sigma) head."""

    ENC = "enc."
    HEAD = "head."

    def __init__(self, arch: AgentArch, store: nn.ParamStore):
        self.arch = arch
        self.store = store

    @classmethod
    def create(cls, arch: AgentArch, rng: np.random.Generator) -> "ConditionedActor":
        store = nn.ParamStore()
        nn.init_gru_params(arch.gru_spec, store, rng, prefix=cls.ENC)
        nn.init_mlp_params(arch.actor_head_spec, store, rng, prefix=cls.HEAD)
        return cls(arch, store)

    def head_forward(self, s_batch: np.ndarray, w_batch: np.ndarray):
        x = np.concatenate([s_batch, self.arch.omega_scale * w_batch], axis=-1)
        return nn.mlp_forward(self.arch.actor_head_spec, self.store, x,
                              prefix=self.HEAD)

    def propose(self, s: np.ndarray, omega: PreferenceVector):
        """Gaussian parameters for one state: (mu, sigma), each K*d long."""
        out, _ = self.head_forward(np.asarray(s), omega.as_array())
        ad = self.arch.action_dim
        mu = out[:ad]
        sigma = np.clip(np.exp(out[ad:]), SIGMA_MIN, SIGMA_MAX)
        return mu, sigma

    def mean_batch(self, s_batch: np.ndarray, w_batch: np.ndarray) -> np.ndarray:
        out, _ = self.head_forward(s_batch, w_batch)
        return out[:, : self.arch.action_dim]

    def encode(self, state, embeddings: EmbeddingTable) -> np.ndarray:
        return encode_state(state, embeddings.user_embeddings,
                            embeddings.item_embeddings, self.arch.gru_spec,
                            self.store, prefix=self.ENC)


class ConditionedCritic:
    """(state, flattened proposal, preference) -> Q-value vector."""

    def __init__(self, arch: AgentArch, store: nn.ParamStore):
        self.arch = arch
        self.store = store

    @classmethod
    def create(cls, arch: AgentArch, rng: np.random.Generator) -> "ConditionedCritic":
        store = nn.ParamStore()
        nn.init_mlp_params(arch.critic_spec, store, rng)
        return cls(arch, store)

    def forward(self, s_batch: np.ndarray, a_batch: np.ndarray,
                w_batch: np.ndarray):
        x = np.concatenate([s_batch, a_batch,
                            self.arch.omega_scale * w_batch], axis=-1)
        return nn.mlp_forward(self.arch.critic_spec, self.store, x)


@dataclass
class ActResult:
    proposal: np.ndarray  # (K, d)
    items: list[int]
    probs: np.ndarray  # (list_length, |I|); zero at masked entries


def act(actor: ConditionedActor, s: np.ndarray, omega: PreferenceVector,
        item_embeddings: np.ndarray, explore: bool = False,
        rng: np.random.Generator | None = None, excluded=None,
        list_length: int | None = None, noise_scale: float = 1.0) -> ActResult:
    """Select a ranked list of distinct items from the actor's proposal.

    Row k of the proposal scores the catalog by dot product; each position
    takes the argmax over items not yet chosen and not excluded, ties going
    to the lowest item id. Lists longer than K reuse the proposal rows
    cyclically with the exclusions carried forward.
    """
    k = actor.arch.slate_size
    d = actor.arch.embed_dim
    num_items = item_embeddings.shape[0]
    length = k if list_length is None else list_length
    mask = np.zeros(num_items, dtype=bool)
    if excluded is not None:
        mask[list(excluded)] = True
    if num_items - int(mask.sum()) < length:
        raise ValueError(
            f"mask leaves {num_items - int(mask.sum())} items, need {length}")
    mu, sigma = actor.propose(s, omega)
    if explore:
        if rng is None:
            raise ValueError("explore=True needs a random source")
        flat = mu + noise_scale * sigma * rng.standard_normal(mu.shape)
    else:
        flat = mu
    proposal = flat.reshape(k, d).astype(np.float32)
    logits = proposal @ item_embeddings.T
    probs = np.zeros((length, num_items), dtype=np.float64)
    items: list[int] = []
    for pos in range(length):
        row = logits[pos % k]
        avail = np.flatnonzero(~mask)
        p = nn.softmax(row[avail].astype(np.float64))
        probs[pos, avail] = p
        pick = int(avail[np.argmax(p)])
        items.append(pick)
        mask[pick] = True
    return ActResult(proposal=proposal, items=items, probs=probs)


@dataclass
class Transition:
    state: np.ndarray
    proposal: np.ndarray  # (K, d)
    items: tuple[int, ...]
    reward: np.ndarray  # (n_objectives,)
    next_state: np.ndarray
    terminal: bool


class ReplayBuffer:
    """Ring buffer; minibatches are drawn uniformly without replacement."""

    def __init__(self, capacity: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._items: list[Transition] = []
        self._cursor = 0

    def __len__(self) -> int:
        return len(self._items)

    def push(self, transition: Transition) -> None:
        if not (np.all(np.isfinite(transition.state))
                and np.all(np.isfinite(transition.proposal))
                and np.all(np.isfinite(transition.next_state))):
            raise nn.NanError("non-finite values in transition")
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._cursor] = transition
        self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, rng: np.random.Generator, batch_size: int) -> list[Transition]:
        if batch_size <= 0 or batch_size > len(self._items):
            raise ValueError(
                f"cannot sample {batch_size} of {len(self._items)} transitions")
        idx = rng.choice(len(self._items), size=batch_size, replace=False)
        return [self._items[i] for i in idx]


def critic_target(reward: np.ndarray, next_state: np.ndarray,
                  omega: PreferenceVector, target_actor: ConditionedActor,
                  target_critic: ConditionedCritic, gamma: float,
                  terminal: bool) -> np.ndarray:
    """Bootstrapped componentwise target y = r + gamma * Q'(s', a', w).

    The next action a' is the target actor's mean proposal; terminal
    transitions never bootstrap.
    """
    r = np.asarray(reward, dtype=np.float64)
    if terminal:
        return r.copy()
    w = omega.as_array()[None, :]
    s2 = np.asarray(next_state)[None, :]
    mu2 = target_actor.mean_batch(s2, w)
    q2, _ = target_critic.forward(s2, mu2, w)
    return r + gamma * q2[0].astype(np.float64)


def _expand_pairs(batch: list[Transition], prefs: list[PreferenceVector]):
    """Row layout: transition-major, preference-minor."""
    S = np.stack([t.state for t in batch]).astype(np.float32)
    A = np.stack([t.proposal.reshape(-1) for t in batch]).astype(np.float32)
    R = np.stack([t.reward for t in batch]).astype(np.float32)
    S2 = np.stack([t.next_state for t in batch]).astype(np.float32)
    term = np.array([t.terminal for t in batch], dtype=np.float32)
    W = np.stack([p.as_array() for p in prefs]).astype(np.float32)
    n_p = len(prefs)
    rep = lambda M: np.repeat(M, n_p, axis=0)
    W_rep = np.tile(W, (len(batch), 1))
    return rep(S), rep(A), rep(R), rep(S2), rep(term), W_rep


class MoDdpg:
    """Online and target conditioned networks plus their update rules."""

    def __init__(self, arch: AgentArch, rng: np.random.Generator):
        self.arch = arch
        self.actor = ConditionedActor.create(arch, rng)
        self.critic = ConditionedCritic.create(arch, rng)
        self.target_actor = ConditionedActor(arch, self.actor.store.copy())
        self.target_critic = ConditionedCritic(arch, self.critic.store.copy())

    def critic_update(self, batch: list[Transition],
                      prefs: list[PreferenceVector], gamma: float,
                      lr: float) -> float:
        """One Adam step on the mean squared Q-vector error; returns the loss."""
        if not batch:
            raise ValueError("empty minibatch")
        S, A, R, S2, term, W = _expand_pairs(batch, prefs)
        mu2 = self.target_actor.mean_batch(S2, W)
        q2, _ = self.target_critic.forward(S2, mu2, W)
        y = R + gamma * q2 * (1.0 - term)[:, None]
        q, tape = self.critic.forward(S, A, W)
        diff = q - y
        rows = diff.shape[0]
        loss = float(np.mean(np.sum(diff * diff, axis=1)))
        self.critic.store.zero_grads()
        nn.mlp_backward(self.arch.critic_spec, self.critic.store, tape,
                        (2.0 / rows) * diff)
        nn.adam_step(self.critic.store, lr)
        return loss

    def actor_gradient(self, batch: list[Transition],
                       prefs: list[PreferenceVector],
                       proposal_reg: float = 0.0) -> float:
        """Fill actor grads with -dJ/dtheta for J = mean w^T Q(s, mu(s,w), w).

        Gradients flow through the mean proposal only; the critic's own
        gradient buffers are left zeroed. Returns the objective J. A positive
        ``proposal_reg`` subtracts reg * mean |mu|^2 from the objective,
        which pins the proposal magnitude near the embedding scale (item
        choice only depends on the proposal direction).
        """
        if not batch:
            raise ValueError("empty minibatch")
        S, _, _, _, _, W = _expand_pairs(batch, prefs)
        out, tape_a = self.actor.head_forward(S, W)
        ad = self.arch.action_dim
        mu = out[:, :ad]
        q, tape_c = self.critic.forward(S, mu, W)
        rows = q.shape[0]
        objective = float(np.mean(np.sum(W * q, axis=1)))
        self.critic.store.zero_grads()
        dx = nn.mlp_backward(self.arch.critic_spec, self.critic.store, tape_c,
                             W / rows)
        self.critic.store.zero_grads()
        dmu = dx[:, self.arch.state_dim: self.arch.state_dim + ad]
        if proposal_reg > 0.0:
            objective -= proposal_reg * float(np.mean(np.sum(mu * mu, axis=1)))
            dmu = dmu - (2.0 * proposal_reg / rows) * mu
        dout = np.zeros_like(out)
        dout[:, :ad] = -dmu  # Adam descends; negate for ascent on J
        self.actor.store.zero_grads()
        nn.mlp_backward(self.arch.actor_head_spec, self.actor.store, tape_a,
                        dout, prefix=ConditionedActor.HEAD)
        return objective

    def actor_update(self, batch: list[Transition],
                     prefs: list[PreferenceVector], lr: float,
                     proposal_reg: float = 0.0) -> float:
        objective = self.actor_gradient(batch, prefs, proposal_reg)
        nn.adam_step(self.actor.store, lr)
        return objective

    def soft_update_targets(self, tau: float) -> None:
        nn.soft_update(self.target_actor.store, self.actor.store, tau)
        nn.soft_update(self.target_critic.store, self.critic.store, tau)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainSettings:
    episodes: int = 1000
    max_steps: int = 20
    gamma: float = 0.9
    tau: float = 0.001
    pref_samples: int = 4  # fresh preferences per update, plus the rollout one
    batch_size: int = 64
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    buffer_capacity: int = 100_000
    warmup_transitions: int = 1000
    update_every: int = 1
    exploration_scale: float = 1.0  # base multiplier on the sigma head
    exploration_decay_to: float = 1.0  # fraction of the base scale at the end
    proposal_reg: float = 1e-3  # magnitude penalty on the actor's mean proposal
    seed: int = 0


@dataclass
class EpisodeLog:
    episode: int
    omega_u: float
    scalarized_return: float
    critic_loss: float
    actor_objective: float


def eligible_train_users(split: SplitDataset, history_len: int) -> list[int]:
    return sorted(
        uid for uid, us in split.users.items() if len(us.train) > history_len)


def train(split: SplitDataset, grouping: ItemGrouping,
          embeddings: EmbeddingTable, arch: AgentArch,
          settings: TrainSettings, fairness_variant: str = "floor",
          history_len: int = 5) -> tuple[MoDdpg, list[EpisodeLog]]:
    """Run the full conditioned-DDPG loop over logged training episodes.

    Each episode replays one user under a freshly sampled preference; update
    ticks resample a preference set, refresh both networks, and softly track
    the targets. Fully deterministic for a fixed seed.
    """
    rng = np.random.default_rng(settings.seed)
    agent = MoDdpg(arch, rng)
    env = OfflineEnv(split, grouping, history_len=history_len,
                     slate_size=arch.slate_size, max_steps=settings.max_steps,
                     fairness_variant=fairness_variant)
    users = eligible_train_users(split, history_len)
    if not users:
        raise ValueError("no users are long enough to train on")
    buffer = ReplayBuffer(settings.buffer_capacity)
    warmup = max(settings.warmup_transitions, settings.batch_size)
    logs: list[EpisodeLog] = []
    item_emb = embeddings.item_embeddings
    global_step = 0
    for episode in range(settings.episodes):
        user = users[int(rng.integers(len(users)))]
        omega0 = sample_preference(rng)
        w0u, w0f = omega0.utility, omega0.fairness
        if settings.episodes > 1:
            frac = episode / (settings.episodes - 1)
        else:
            frac = 0.0
        noise_scale = settings.exploration_scale * (
            1.0 + (settings.exploration_decay_to - 1.0) * frac)
        state = env.reset(user, Phase.TRAIN)
        s = agent.actor.encode(state, embeddings)
        ret = 0.0
        discount = 1.0
        critic_losses: list[float] = []
        actor_objectives: list[float] = []
        for _ in range(settings.max_steps):
            res = act(agent.actor, s, omega0, item_emb, explore=True, rng=rng,
                      noise_scale=noise_scale)
            outcome = env.step(state, res.items)
            s2 = agent.actor.encode(outcome.next_state, embeddings)
            buffer.push(Transition(
                state=s, proposal=res.proposal, items=tuple(res.items),
                reward=outcome.reward.as_array(), next_state=s2,
                terminal=outcome.terminal))
            ret += discount * (w0u * outcome.reward.utility
                               + w0f * outcome.reward.fairness)
            discount *= settings.gamma
            global_step += 1
            if len(buffer) >= warmup and global_step % settings.update_every == 0:
                batch = buffer.sample(rng, settings.batch_size)
                prefs = [sample_preference(rng)
                         for _ in range(settings.pref_samples)] + [omega0]
                critic_losses.append(
                    agent.critic_update(batch, prefs, settings.gamma,
                                        settings.critic_lr))
                actor_objectives.append(
                    agent.actor_update(batch, prefs, settings.actor_lr,
                                       settings.proposal_reg))
                agent.soft_update_targets(settings.tau)
            state = outcome.next_state
            s = s2
            if outcome.terminal:
                break
        logs.append(EpisodeLog(
            episode=episode, omega_u=w0u, scalarized_return=ret,
            critic_loss=float(np.mean(critic_losses)) if critic_losses else math.nan,
            actor_objective=(float(np.mean(actor_objectives))
                             if actor_objectives else math.nan)))
    return agent, logs


def write_training_log(logs: list[EpisodeLog], path) -> None:
    lines = ["episode,omega_u,scalarized_return,critic_loss,actor_objective"]
    for row in logs:
        lines.append(f"{row.episode},{row.omega_u!r},{row.scalarized_return!r},"
                     f"{row.critic_loss!r},{row.actor_objective!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

_STORE_PREFIXES = ("actor.", "critic.", "actor_target.", "critic_target.")


def _store_arrays(prefix: str, store: nn.ParamStore) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for name, arr in store.params.items():
        out[f"{prefix}{name}"] = arr
        out[f"{prefix}opt.m.{name}"] = store.m[name]
        out[f"{prefix}opt.v.{name}"] = store.v[name]
    out[f"{prefix}opt.t"] = np.array([store.step_count], dtype=np.float32)
    return out


def _load_store(prefix: str, arrays: dict[str, np.ndarray],
                schema: dict[str, tuple[int, ...]]) -> nn.ParamStore:
    store = nn.ParamStore()
    for name, shape in schema.items():
        store.add(name, checkpoint.require(arrays, f"{prefix}{name}", shape))
        store.m[name][...] = checkpoint.require(arrays, f"{prefix}opt.m.{name}", shape)
        store.v[name][...] = checkpoint.require(arrays, f"{prefix}opt.v.{name}", shape)
    store.step_count = int(checkpoint.require(arrays, f"{prefix}opt.t", (1,))[0])
    return store


def _arch_meta(arch: AgentArch) -> dict[str, np.ndarray]:
    return {
        "meta.dims": np.array([arch.embed_dim, arch.gru_hidden, arch.gru_layers,
                               arch.slate_size, arch.n_objectives,
                               arch.omega_scale], dtype=np.float32),
        "meta.actor_hidden": np.array(arch.actor_hidden, dtype=np.float32),
        "meta.critic_hidden": np.array(arch.critic_hidden, dtype=np.float32),
    }


def arch_from_meta(arrays: dict[str, np.ndarray]) -> AgentArch:
    if "meta.dims" not in arrays or arrays["meta.dims"].size != 6:
        raise checkpoint.SchemaError("checkpoint lacks a valid meta.dims record")
    dims = [int(x) for x in arrays["meta.dims"][:5]]
    return AgentArch(
        embed_dim=dims[0], gru_hidden=dims[1], gru_layers=dims[2],
        slate_size=dims[3], n_objectives=dims[4],
        omega_scale=float(arrays["meta.dims"][5]),
        actor_hidden=tuple(int(x) for x in arrays["meta.actor_hidden"]),
        critic_hidden=tuple(int(x) for x in arrays["meta.critic_hidden"]),
    )


def save_checkpoint(agent: MoDdpg, path) -> None:
    arrays = _arch_meta(agent.arch)
    for prefix, store in zip(_STORE_PREFIXES,
                             (agent.actor.store, agent.critic.store,
                              agent.target_actor.store,
                              agent.target_critic.store)):
        arrays.update(_store_arrays(prefix, store))
    checkpoint.save_arrays(path, arrays)


def load_checkpoint(path, arch: AgentArch | None = None) -> MoDdpg:
    """Rebuild an agent, targets and optimizer moments included.

    With an explicit ``arch`` the stored dimensions must match exactly,
    otherwise the architecture recorded in the file is used.
    """
    arrays = checkpoint.load_arrays(path)
    stored_arch = arch_from_meta(arrays)
    if arch is not None and arch != stored_arch:
        raise checkpoint.SchemaError(
            f"checkpoint architecture {stored_arch} does not match {arch}")
    arch = stored_arch
    agent = MoDdpg.__new__(MoDdpg)
    agent.arch = arch
    actor_schema: dict[str, tuple[int, ...]] = {}
    store_probe = nn.ParamStore()
    nn.init_gru_params(arch.gru_spec, store_probe, np.random.default_rng(0),
                       prefix=ConditionedActor.ENC)
    nn.init_mlp_params(arch.actor_head_spec, store_probe,
                       np.random.default_rng(0), prefix=ConditionedActor.HEAD)
    actor_schema = store_probe.schema()
    critic_probe = nn.ParamStore()
    nn.init_mlp_params(arch.critic_spec, critic_probe, np.random.default_rng(0))
    critic_schema = critic_probe.schema()
    agent.actor = ConditionedActor(arch, _load_store("actor.", arrays, actor_schema))
    agent.critic = ConditionedCritic(arch, _load_store("critic.", arrays,
                                                       critic_schema))
    agent.target_actor = ConditionedActor(
        arch, _load_store("actor_target.", arrays, actor_schema))
    agent.target_critic = ConditionedCritic(
        arch, _load_store("critic_target.", arrays, critic_schema))
    return agent
