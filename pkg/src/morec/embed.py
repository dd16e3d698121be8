"""Matrix-factorization pretraining of the fixed user/item embeddings.

Pointwise implicit-feedback MF: every training event is a positive with
label 1, uniformly sampled items are negatives with label 0, and plain SGD
minimizes the squared error with L2 regularization. The resulting tables are
frozen; the RL stack only ever reads them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import checkpoint
from .data import SplitDataset


@dataclass(frozen=True)
class MfConfig:
    dim: int = 16
    epochs: int = 5
    lr: float = 0.05
    reg: float = 1e-4
    negatives_per_positive: int = 4
    seed: int = 0


@dataclass
class EmbeddingTable:
    """Fixed user and item embedding matrices, d columns each."""

    user_embeddings: np.ndarray
    item_embeddings: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.user_embeddings.shape[1])

    def check(self) -> None:
        if self.user_embeddings.shape[1] != self.item_embeddings.shape[1]:
            raise ValueError("user and item embedding dimensions differ")
        if not (np.all(np.isfinite(self.user_embeddings))
                and np.all(np.isfinite(self.item_embeddings))):
            raise ValueError("embedding table contains non-finite values")


def mf_gradients(e_u: np.ndarray, v_i: np.ndarray, label: float,
                 reg: float) -> tuple[np.ndarray, np.ndarray, float]:
    """Per-sample gradients of 0.5 * [(e_u . v_i - label)^2 + reg * (|e_u|^2 + |v_i|^2)].

    Returns (grad_u, grad_v, squared_error).
    """
    err = float(e_u @ v_i) - label
    g_u = err * v_i + reg * e_u
    g_v = err * e_u + reg * v_i
    return g_u, g_v, err * err


def pretrain_mf(split: SplitDataset, config: MfConfig) -> tuple[EmbeddingTable, list[float]]:
    """SGD over (positive + sampled negative) events; returns table and losses.

    The loss list holds the mean squared error per epoch: entry 0 is measured
    on the initial embeddings, entry k after epoch k. Fully deterministic for
    a fixed seed.
    """
    if config.dim <= 0:
        raise ValueError(f"embedding dim must be positive, got {config.dim}")
    positives = [(uid, item)
                 for uid, us in split.users.items()
                 for item in us.train]
    if not positives:
        raise ValueError("no training interactions to pretrain on")
    rng = np.random.default_rng(config.seed)
    users = rng.uniform(-0.05, 0.05, (split.num_users, config.dim)).astype(np.float32)
    items = rng.uniform(-0.05, 0.05, (split.num_items, config.dim)).astype(np.float32)
    pos = np.array(positives, dtype=np.int64)
    n_neg = config.negatives_per_positive

    def epoch_loss() -> float:
        preds = np.einsum("ij,ij->i", users[pos[:, 0]], items[pos[:, 1]])
        return float(np.mean((preds - 1.0) ** 2))

    losses = [epoch_loss()]
    for _ in range(config.epochs):
        order = rng.permutation(len(pos))
        neg_draws = rng.integers(0, split.num_items, size=(len(pos), n_neg)) \
            if n_neg > 0 else None
        sq_sum = 0.0
        n_samples = 0
        for row, idx in enumerate(order):
            u, i = pos[idx]
            e_u, v_i = users[u], items[i]
            g_u, g_v, sq = mf_gradients(e_u, v_i, 1.0, config.reg)
            users[u] = e_u - config.lr * g_u
            items[i] = v_i - config.lr * g_v
            sq_sum += sq
            n_samples += 1
            if neg_draws is None:
                continue
            for j in neg_draws[row]:
                e_u, v_j = users[u], items[j]
                g_u, g_v, sq = mf_gradients(e_u, v_j, 0.0, config.reg)
                users[u] = e_u - config.lr * g_u
                items[j] = v_j - config.lr * g_v
                sq_sum += sq
                n_samples += 1
        losses.append(sq_sum / n_samples)
    table = EmbeddingTable(user_embeddings=users, item_embeddings=items)
    table.check()
    if np.abs(users).max(initial=0.0) > 1e3 or np.abs(items).max(initial=0.0) > 1e3:
        raise ValueError("embedding values exploded during pretraining")
    return table, losses


def normalize_items(table: EmbeddingTable) -> EmbeddingTable:
    """Unit-normalize item rows so dot-product ranking becomes cosine ranking.

    Frequently-interacted items otherwise end up with much larger norms and
    win the proposal argmax regardless of direction, which makes low-exposure
    items unreachable for the policy. Applied at use time behind a config
    switch; the persisted checkpoint keeps the raw factorization.
    """
    V = table.item_embeddings
    norms = np.linalg.norm(V, axis=1, keepdims=True)
    out = EmbeddingTable(
        user_embeddings=table.user_embeddings,
        item_embeddings=(V / np.maximum(norms, 1e-12)).astype(np.float32))
    out.check()
    return out


def save_embeddings(table: EmbeddingTable, path) -> None:
    table.check()
    checkpoint.save_arrays(path, {
        "dim": np.array([table.dim], dtype=np.float32),
        "user_embeddings": table.user_embeddings,
        "item_embeddings": table.item_embeddings,
    })


def load_embeddings(path) -> EmbeddingTable:
    arrays = checkpoint.load_arrays(path)
    dim_rec = checkpoint.require(arrays, "dim", (1,))
    dim = int(dim_rec[0])
    if dim <= 0 or dim_rec[0] != dim:
        raise checkpoint.SchemaError(f"bad embedding dimension record: {dim_rec[0]}")
    for name in ("user_embeddings", "item_embeddings"):
        if name not in arrays:
            raise checkpoint.SchemaError(f"checkpoint is missing record {name!r}")
        if arrays[name].size % dim != 0:
            raise checkpoint.SchemaError(
                f"record {name!r} size {arrays[name].size} not divisible by d={dim}")
    table = EmbeddingTable(
        user_embeddings=arrays["user_embeddings"].reshape(-1, dim),
        item_embeddings=arrays["item_embeddings"].reshape(-1, dim),
    )
    table.check()
    return table
