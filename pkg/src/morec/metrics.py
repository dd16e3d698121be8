"""Top-K ranking and exposure-fairness metrics plus the evaluation harness.

Ranking metrics use binary relevance against each user's held-out test
items. Fairness metrics compare the popular/long-tail composition of the
recommended lists against the catalog-wide group distribution. KL divergence
is reported in percent and, by default, in log base 2 so that an all-popular
list under a 20/80 catalog scores 100*log2(5) = 232.193.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .agent import ConditionedActor, PreferenceVector, act
from .data import POPULAR, ItemGrouping, SplitDataset
from .embed import EmbeddingTable
from .env import OfflineEnv, Phase


def recall_at_k(recommended, relevant, k: int) -> float:
    """|top-K hits| / |relevant|; the caller skips users with no relevant items."""
    if not relevant:
        raise ValueError("recall needs a non-empty relevant set")
    hits = sum(1 for item in recommended[:k] if item in relevant)
    return hits / len(relevant)


def precision_at_k(recommended, relevant, k: int) -> float:
    hits = sum(1 for item in recommended[:k] if item in relevant)
    return hits / k


def f1_at_k(recommended, relevant, k: int) -> float:
    p = precision_at_k(recommended, relevant, k)
    r = recall_at_k(recommended, relevant, k)
    if p + r == 0.0:
        return 0.0
    return 2.0 * p * r / (p + r)


def ndcg_at_k(recommended, relevant, k: int) -> float:
    """Binary-relevance NDCG with 1-based log2 position discounts."""
    if not relevant:
        raise ValueError("ndcg needs a non-empty relevant set")
    dcg = sum(1.0 / math.log2(rank + 1)
              for rank, item in enumerate(recommended[:k], start=1)
              if item in relevant)
    ideal_hits = min(k, len(relevant))
    idcg = sum(1.0 / math.log2(rank + 1) for rank in range(1, ideal_hits + 1))
    return dcg / idcg


def group_shares(recommended, grouping: ItemGrouping, k: int) -> tuple[float, float]:
    """(popular, long-tail) proportions within the top-K prefix."""
    top = recommended[:k]
    pop = sum(1 for item in top if grouping.group[item] == POPULAR)
    return pop / k, (k - pop) / k


def kl_from_shares(d1: tuple[float, float], d2: tuple[float, float],
                   log_base: float = 2.0) -> float:
    """Percent KL divergence d(D1 || D2) with the 0*log(0/.) := 0 convention."""
    if min(d2) <= 0.0:
        raise ValueError("reference distribution must be strictly positive")
    total = 0.0
    for p, q in zip(d1, d2):
        if p > 0.0:
            total += p * math.log(p / q, log_base)
    return 100.0 * total


def kl_divergence_at_k(recommended, grouping: ItemGrouping, k: int,
                       log_base: float = 2.0) -> float:
    d1 = group_shares(recommended, grouping, k)
    d2 = (grouping.popular_count / grouping.num_items,
          grouping.longtail_count / grouping.num_items)
    return kl_from_shares(d1, d2, log_base)


def popularity_rate_at_k(recommended, grouping: ItemGrouping, k: int) -> float:
    pop, _ = group_shares(recommended, grouping, k)
    return 100.0 * pop


def scalarize(omega: PreferenceVector, reward) -> float:
    """Linear scalarization w . r, spelled out so tests can pin exactness."""
    return omega.utility * float(reward[0]) + omega.fairness * float(reward[1])


def discounted_return(rewards, omega: PreferenceVector, gamma: float) -> float:
    """Finite-horizon discounted scalarized return over a reward sequence."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must be in [0, 1), got {gamma}")
    total = 0.0
    discount = 1.0
    for r in rewards:
        total += discount * scalarize(omega, r)
        discount *= gamma
    return total


@dataclass
class KMetrics:
    recall: float
    f1: float
    ndcg: float
    kl_percent: float
    popularity_rate_percent: float


@dataclass
class EvalReport:
    omega: PreferenceVector
    per_k: dict[int, KMetrics]
    ranked_users: int  # users contributing to the ranking averages
    fairness_users: int

    def to_dict(self) -> dict:
        return {
            "omega_u": self.omega.utility,
            "omega_f": self.omega.fairness,
            "ranked_users": self.ranked_users,
            "fairness_users": self.fairness_users,
            "metrics": {
                str(k): {
                    "recall": m.recall, "f1": m.f1, "ndcg": m.ndcg,
                    "kl_percent": m.kl_percent,
                    "popularity_rate_percent": m.popularity_rate_percent,
                } for k, m in sorted(self.per_k.items())
            },
        }

    def csv_rows(self) -> list[str]:
        rows = ["omega_u,K,recall,f1,ndcg,kl,pop_rate"]
        for k, m in sorted(self.per_k.items()):
            rows.append(f"{self.omega.utility!r},{k},{m.recall!r},{m.f1!r},"
                        f"{m.ndcg!r},{m.kl_percent!r},{m.popularity_rate_percent!r}")
        return rows


def eligible_eval_users(split: SplitDataset, history_len: int) -> list[int]:
    return sorted(uid for uid, us in split.users.items()
                  if len(us.train) >= history_len and len(us.test) >= 1)


def evaluate(actor: ConditionedActor, split: SplitDataset,
             grouping: ItemGrouping, embeddings: EmbeddingTable,
             omega: PreferenceVector, ks=(5, 10, 20), history_len: int = 5,
             kl_log_base: float = 2.0, kl_mode: str = "per_user",
             jobs: int = 1) -> EvalReport:
    """Rank one list per test user at a fixed preference and average metrics.

    Each user gets a single ranked list of length max(ks) produced with
    exploration off and the user's training items excluded from the
    candidates; shorter K values reuse its prefixes. Users whose test set is
    empty are skipped for ranking metrics but still count toward fairness.
    ``kl_mode="pooled"`` computes one KL on the concatenated top-K lists
    instead of averaging per-user values.
    """
    if kl_mode not in ("per_user", "pooled"):
        raise ValueError(f"unknown kl_mode {kl_mode!r}")
    ks = tuple(sorted(ks))
    env = OfflineEnv(split, grouping, history_len=history_len,
                     slate_size=actor.arch.slate_size)
    users = eligible_eval_users(split, history_len)
    if not users:
        raise ValueError("no user is evaluable: need >= 5 train and 1 test item")
    length = max(ks)
    item_emb = embeddings.item_embeddings

    def rank_user(user_id: int) -> list[int]:
        state = env.reset(user_id, Phase.TEST)
        s = actor.encode(state, embeddings)
        res = act(actor, s, omega, item_emb, explore=False,
                  excluded=set(split.users[user_id].train), list_length=length)
        return res.items

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            ranked_lists = list(pool.map(rank_user, users))
    else:
        ranked_lists = [rank_user(u) for u in users]

    per_k: dict[int, KMetrics] = {}
    for k in ks:
        recalls, f1s, ndcgs, kls, pops = [], [], [], [], []
        pooled_pop_counts = 0
        for user_id, items in zip(users, ranked_lists):
            relevant = set(split.users[user_id].test)
            if relevant:
                recalls.append(recall_at_k(items, relevant, k))
                f1s.append(f1_at_k(items, relevant, k))
                ndcgs.append(ndcg_at_k(items, relevant, k))
            pops.append(popularity_rate_at_k(items, grouping, k))
            if kl_mode == "per_user":
                kls.append(kl_divergence_at_k(items, grouping, k, kl_log_base))
            else:
                pooled_pop_counts += sum(
                    1 for item in items[:k] if grouping.group[item] == POPULAR)
        if kl_mode == "pooled":
            n = k * len(users)
            d1 = (pooled_pop_counts / n, (n - pooled_pop_counts) / n)
            d2 = (grouping.popular_count / grouping.num_items,
                  grouping.longtail_count / grouping.num_items)
            kl_value = kl_from_shares(d1, d2, kl_log_base)
        else:
            kl_value = float(np.mean(kls))
        per_k[k] = KMetrics(
            recall=float(np.mean(recalls)) if recalls else math.nan,
            f1=float(np.mean(f1s)) if f1s else math.nan,
            ndcg=float(np.mean(ndcgs)) if ndcgs else math.nan,
            kl_percent=kl_value,
            popularity_rate_percent=float(np.mean(pops)),
        )
    ranked_users = sum(1 for u in users if split.users[u].test)
    return EvalReport(omega=omega, per_k=per_k, ranked_users=ranked_users,
                      fairness_users=len(users))
