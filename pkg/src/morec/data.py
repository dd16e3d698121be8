"""Interaction log loading, chronological splitting, and popularity grouping.

All functions here are pure: same input file or list in, same structures out,
no hidden randomness. Ratings are parsed when present but never used; every
logged event counts as implicit positive feedback.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

POPULAR = 0
LONGTAIL = 1


class DataFormatError(ValueError):
    """A line in the interaction file could not be parsed."""


@dataclass(frozen=True)
class Interaction:
    user_id: int
    item_id: int
    rating: float | None
    timestamp: int


@dataclass
class InteractionLog:
    """Densely re-indexed interactions plus the original-id mapping tables."""

    interactions: list[Interaction]
    user_ids: list[int]  # dense index -> original id
    item_ids: list[int]

    @property
    def num_users(self) -> int:
        return len(self.user_ids)

    @property
    def num_items(self) -> int:
        return len(self.item_ids)


@dataclass(frozen=True)
class Stats:
    users: int
    items: int
    actions: int
    density: float


@dataclass
class UserSplit:
    train: list[int]
    validation: int | None
    test: list[int]

    def full_sequence(self) -> list[int]:
        mid = [] if self.validation is None else [self.validation]
        return self.train + mid + self.test


@dataclass
class SplitDataset:
    users: dict[int, UserSplit]
    num_users: int
    num_items: int
    dropped_users: int = 0


@dataclass
class ItemGrouping:
    """Partition of the catalog into popular (G0) and long-tail (G1) items."""

    group: np.ndarray  # int8 per item: POPULAR or LONGTAIL
    beta: float  # long-tail share of the catalog, |G1| / |I|

    @property
    def num_items(self) -> int:
        return int(self.group.size)

    @property
    def popular_count(self) -> int:
        return int(np.sum(self.group == POPULAR))

    @property
    def longtail_count(self) -> int:
        return int(np.sum(self.group == LONGTAIL))

    def is_longtail(self, item_id: int) -> bool:
        return self.group[item_id] == LONGTAIL


def load_interactions(path, delimiter: str = "\t") -> InteractionLog:
    """Parse a delimited interaction file and densely re-index ids.

    Each non-empty line needs at least (user, item, timestamp); a rating
    column, when present, sits between item and timestamp. Dense ids are
    assigned in order of first appearance.
    """
    path = Path(path)
    interactions: list[Interaction] = []
    user_index: dict[int, int] = {}
    item_index: dict[int, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(delimiter)
            if len(fields) < 3:
                raise DataFormatError(
                    f"{path}:{lineno}: expected at least 3 fields, got {len(fields)}")
            try:
                raw_user = int(fields[0])
                raw_item = int(fields[1])
                if len(fields) == 3:
                    rating = None
                    timestamp = int(float(fields[2]))
                else:
                    rating = float(fields[2])
                    timestamp = int(float(fields[3]))
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: non-numeric field") from exc
            user = user_index.setdefault(raw_user, len(user_index))
            item = item_index.setdefault(raw_item, len(item_index))
            interactions.append(Interaction(user, item, rating, timestamp))
    return InteractionLog(
        interactions=interactions,
        user_ids=list(user_index),
        item_ids=list(item_index),
    )


def dataset_stats(interactions: list[Interaction]) -> Stats:
    """Counts and interaction density over a non-empty interaction list."""
    if not interactions:
        raise ValueError("dataset_stats needs a non-empty interaction list")
    users = len({x.user_id for x in interactions})
    items = len({x.item_id for x in interactions})
    actions = len(interactions)
    return Stats(users=users, items=items, actions=actions,
                 density=actions / (users * items))


def _round_half_away(x: float) -> int:
    return int(math.floor(x + 0.5))


def chronological_split(log: InteractionLog, ratio: float = 0.8,
                        min_interactions: int = 3) -> SplitDataset:
    """Per-user chronological split into train / one validation item / test.

    With n interactions: round(ratio * n), clamped to [1, n-1], items go to
    the raw training prefix; its last item becomes the validation item; the
    remainder is the test suffix. Users with fewer than ``min_interactions``
    events are dropped (counted, not an error). Ties in timestamp keep file
    order.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must be in (0, 1), got {ratio}")
    min_interactions = max(min_interactions, 2)  # below 2 the split degenerates
    per_user: dict[int, list[tuple[int, int]]] = {}
    for inter in log.interactions:
        per_user.setdefault(inter.user_id, []).append((inter.timestamp, inter.item_id))
    users: dict[int, UserSplit] = {}
    dropped = 0
    for user_id, events in per_user.items():
        if len(events) < min_interactions:
            dropped += 1
            continue
        events = sorted(events, key=lambda e: e[0])  # stable: file order on ties
        items = [item for _, item in events]
        n = len(items)
        raw_train = min(max(_round_half_away(ratio * n), 1), n - 1)
        users[user_id] = UserSplit(
            train=items[: raw_train - 1],
            validation=items[raw_train - 1],
            test=items[raw_train:],
        )
    return SplitDataset(users=users, num_users=log.num_users,
                        num_items=log.num_items, dropped_users=dropped)


def group_items_by_popularity(split: SplitDataset, popular_fraction: float = 0.2,
                              scope: str = "train") -> ItemGrouping:
    """Mark the most-interacted ``popular_fraction`` of the catalog as G0.

    Counts come from the training lists by default (``scope="train"``);
    ``scope="full"`` also counts validation and test events. Count ties are
    broken by ascending item id, lower id winning the popular slot.
    """
    if scope not in ("train", "full"):
        raise ValueError(f"unknown popularity scope {scope!r}")
    num_items = split.num_items
    popular_count = int(math.floor(popular_fraction * num_items))
    if popular_count < 1:
        raise ValueError(
            f"{num_items} items cannot form a nonempty {popular_fraction:.0%} "
            "popular group (need at least 5 for the default 20%)")
    counts = np.zeros(num_items, dtype=np.int64)
    for user_split in split.users.values():
        seq = user_split.train if scope == "train" else user_split.full_sequence()
        for item in seq:
            counts[item] += 1
    order = np.lexsort((np.arange(num_items), -counts))
    group = np.full(num_items, LONGTAIL, dtype=np.int8)
    group[order[:popular_count]] = POPULAR
    beta = (num_items - popular_count) / num_items
    return ItemGrouping(group=group, beta=beta)


# ---------------------------------------------------------------------------
# File formats: split manifest (JSON) and grouping table (CSV)
# ---------------------------------------------------------------------------


def write_split_manifest(split: SplitDataset, path) -> None:
    doc = {
        str(user_id): {
            "train": us.train,
            "val": [] if us.validation is None else [us.validation],
            "test": us.test,
        }
        for user_id, us in sorted(split.users.items())
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def read_split_manifest(path, num_users: int | None = None,
                        num_items: int | None = None) -> SplitDataset:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    users: dict[int, UserSplit] = {}
    max_item = -1
    for key, entry in doc.items():
        val = entry.get("val", [])
        us = UserSplit(
            train=[int(i) for i in entry["train"]],
            validation=int(val[0]) if val else None,
            test=[int(i) for i in entry["test"]],
        )
        users[int(key)] = us
        seq = us.full_sequence()
        if seq:
            max_item = max(max_item, max(seq))
    if num_users is None:
        num_users = (max(users) + 1) if users else 0
    if num_items is None:
        num_items = max_item + 1
    return SplitDataset(users=users, num_users=num_users, num_items=num_items)


def write_grouping_csv(grouping: ItemGrouping, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["item_id", "group", "beta"])
        for item_id in range(grouping.num_items):
            writer.writerow([item_id, int(grouping.group[item_id]),
                             f"{grouping.beta:.10g}"])


def read_grouping_csv(path) -> ItemGrouping:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["item_id", "group", "beta"]:
            raise DataFormatError(f"{path}: unexpected grouping header {header}")
        rows = [(int(r[0]), int(r[1]), float(r[2])) for r in reader]
    if not rows:
        raise DataFormatError(f"{path}: empty grouping table")
    group = np.full(len(rows), LONGTAIL, dtype=np.int8)
    for item_id, g, _ in rows:
        group[item_id] = g
    return ItemGrouping(group=group, beta=rows[0][2])


def stats_to_dict(stats: Stats) -> dict:
    return {"users": stats.users, "items": stats.items,
            "actions": stats.actions, "density": stats.density}
