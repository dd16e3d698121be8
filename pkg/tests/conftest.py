"""Shared builders for synthetic datasets used across test modules."""

import numpy as np
import pytest

from morec.data import (
    Interaction,
    InteractionLog,
    chronological_split,
    group_items_by_popularity,
)


def planted_log(rng, num_users, num_items, popular_fraction=0.2,
                interactions_per_user=20, p_popular=0.8, p_longtail=0.1):
    """Synthetic log where low item ids are planted as the popular group.

    Each user event draws a candidate item uniformly and keeps it with
    probability p_popular (planted popular ids) or p_longtail, so training
    counts recover the planted grouping and popular items dominate every
    user's history and test split.
    """
    n_popular = int(num_items * popular_fraction)
    rows = []
    t = 0
    for user in range(num_users):
        kept = 0
        while kept < interactions_per_user:
            item = int(rng.integers(num_items))
            p = p_popular if item < n_popular else p_longtail
            if rng.uniform() < p:
                rows.append(Interaction(user, item, None, t))
                t += 1
                kept += 1
    return InteractionLog(interactions=rows, user_ids=list(range(num_users)),
                          item_ids=list(range(num_items)))


def planted_dataset(seed=0, num_users=40, num_items=50, **kwargs):
    rng = np.random.default_rng(seed)
    log = planted_log(rng, num_users, num_items, **kwargs)
    split = chronological_split(log)
    grouping = group_items_by_popularity(split)
    return split, grouping


@pytest.fixture(scope="session")
def small_planted():
    return planted_dataset(seed=11, num_users=30, num_items=40,
                           interactions_per_user=18)
