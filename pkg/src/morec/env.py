"""Offline recommendation environment replayed from logged interactions.

The environment owns no learnable state. A user episode starts from a fixed
five-item history; recommending an item the user actually interacted with
later in the log counts as positive feedback, consumes that logged positive,
and pushes the item into the history queue. The reward is a two-component
vector: fraction of the slate with positive feedback (utility) and the
long-tail share of the slate floored at the catalog margin beta (fairness).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .data import LONGTAIL, ItemGrouping, SplitDataset
from .nn import GruSpec, ParamStore, gru_forward

FAIRNESS_VARIANTS = ("floor", "cap", "deficit")


class Phase(enum.Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass
class UserState:
    user_id: int
    history: list[int]  # fixed length, most recent last
    pending: set[int]  # not-yet-consumed logged positives for the phase
    steps_taken: int = 0


@dataclass(frozen=True)
class RewardVector:
    utility: float
    fairness: float

    def as_array(self) -> np.ndarray:
        return np.array([self.utility, self.fairness], dtype=np.float32)


@dataclass
class StepOutcome:
    feedback: list[bool]
    reward: RewardVector
    next_state: UserState
    terminal: bool


class OfflineEnv:
    """Log-replay environment; shared read-only across users' episodes."""

    def __init__(self, split: SplitDataset, grouping: ItemGrouping,
                 history_len: int = 5, slate_size: int = 10,
                 max_steps: int = 20, fairness_variant: str = "floor"):
        if fairness_variant not in FAIRNESS_VARIANTS:
            raise ValueError(f"unknown fairness variant {fairness_variant!r}")
        self.split = split
        self.grouping = grouping
        self.history_len = history_len
        self.slate_size = slate_size
        self.max_steps = max_steps
        self.fairness_variant = fairness_variant

    def can_reset(self, user_id: int, phase: Phase) -> bool:
        us = self.split.users.get(user_id)
        if us is None or len(us.train) < self.history_len:
            return False
        if phase is Phase.TRAIN:
            return len(us.train) > self.history_len
        return len(us.test) >= 1

    def reset(self, user_id: int, phase: Phase) -> UserState:
        """Initial state: first (TRAIN) or last (TEST) five training clicks."""
        us = self.split.users.get(user_id)
        if us is None:
            raise ValueError(f"user {user_id} is not in the split")
        n = self.history_len
        if len(us.train) < n:
            raise ValueError(
                f"user {user_id} has {len(us.train)} training items, "
                f"needs at least {n}")
        if phase is Phase.TRAIN:
            if len(us.train) <= n:
                raise ValueError(
                    f"user {user_id} has no training items left after the "
                    "initial history")
            history = list(us.train[:n])
            pending = set(us.train[n:])
        else:
            if not us.test:
                raise ValueError(f"user {user_id} has no test items")
            history = list(us.train[-n:])
            pending = set(us.test)
        return UserState(user_id=user_id, history=history, pending=pending)

    def fairness_reward(self, longtail_ratio: float) -> float:
        beta = self.grouping.beta
        if self.fairness_variant == "floor":  # the margin floors the reward
            return max(longtail_ratio, beta)
        if self.fairness_variant == "cap":
            return min(longtail_ratio, beta)
        return max(beta - longtail_ratio, 0.0)

    def step(self, state: UserState, action) -> StepOutcome:
        """Consume one slate; deterministic given (state, action)."""
        action = list(action)
        k = self.slate_size
        if len(action) != k:
            raise ValueError(f"action must have {k} items, got {len(action)}")
        if len(set(action)) != k:
            raise ValueError("action contains duplicate items")
        for item in action:
            if not 0 <= item < self.grouping.num_items:
                raise ValueError(f"unknown item id {item}")
        feedback = [item in state.pending for item in action]
        hits = [item for item, hit in zip(action, feedback) if hit]
        pending = state.pending - set(hits)
        utility = len(hits) / k
        longtail = sum(1 for item in action if self.grouping.group[item] == LONGTAIL)
        fairness = self.fairness_reward(longtail / k)
        history = state.history
        if hits:
            history = (history + hits)[-self.history_len:]
        steps = state.steps_taken + 1
        next_state = UserState(user_id=state.user_id, history=list(history),
                               pending=pending, steps_taken=steps)
        terminal = not pending or steps >= self.max_steps
        return StepOutcome(feedback=feedback,
                           reward=RewardVector(utility, fairness),
                           next_state=next_state, terminal=terminal)


def encode_state(state: UserState, user_embeddings: np.ndarray,
                 item_embeddings: np.ndarray, gru_spec: GruSpec,
                 store: ParamStore, prefix: str = "") -> np.ndarray:
    """State vector: user embedding concatenated with the GRU history code."""
    if state.user_id >= user_embeddings.shape[0]:
        raise ValueError(f"no embedding row for user {state.user_id}")
    if max(state.history) >= item_embeddings.shape[0]:
        raise ValueError("history references an item without an embedding row")
    seq = item_embeddings[state.history]
    h, _ = gru_forward(gru_spec, store, seq, prefix=prefix)
    return np.concatenate([user_embeddings[state.user_id], h]).astype(np.float32)


def trace_record(user_id: int, step: int, action, outcome: StepOutcome) -> dict:
    """One JSON-lines record for episode trace dumps."""
    return {
        "user": int(user_id),
        "step": int(step),
        "items": [int(i) for i in action],
        "feedback": [bool(b) for b in outcome.feedback],
        "r_u": outcome.reward.utility,
        "r_f": outcome.reward.fairness,
    }
