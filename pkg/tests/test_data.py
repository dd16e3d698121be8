import numpy as np
import pytest

from morec.data import (
    LONGTAIL,
    POPULAR,
    DataFormatError,
    Interaction,
    InteractionLog,
    chronological_split,
    dataset_stats,
    group_items_by_popularity,
    load_interactions,
    read_grouping_csv,
    read_split_manifest,
    write_grouping_csv,
    write_split_manifest,
)


def write_file(tmp_path, lines, name="u.data"):
    path = tmp_path / name
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return path


def make_log(rows, num_users=None, num_items=None):
    """rows: (user, item, timestamp) triples with already-dense ids."""
    inters = [Interaction(u, i, None, t) for u, i, t in rows]
    nu = num_users if num_users is not None else 1 + max(r[0] for r in rows)
    ni = num_items if num_items is not None else 1 + max(r[1] for r in rows)
    return InteractionLog(interactions=inters, user_ids=list(range(nu)),
                          item_ids=list(range(ni)))


# -- loading ------------------------------------------------------------------


def test_load_reindexes_by_first_appearance(tmp_path):
    path = write_file(tmp_path, ["7\t100\t5\t30", "7\t200\t4\t31", "9\t100\t3\t32"])
    log = load_interactions(path)
    assert [x.user_id for x in log.interactions] == [0, 0, 1]
    assert [x.item_id for x in log.interactions] == [0, 1, 0]
    assert log.user_ids == [7, 9]
    assert log.item_ids == [100, 200]
    assert log.num_users == 2 and log.num_items == 2


def test_load_empty_file(tmp_path):
    path = write_file(tmp_path, [])
    log = load_interactions(path)
    assert log.interactions == [] and log.num_users == 0 and log.num_items == 0


def test_load_three_field_lines_have_no_rating(tmp_path):
    path = write_file(tmp_path, ["1\t2\t100", "1\t3\t101"])
    log = load_interactions(path)
    assert all(x.rating is None for x in log.interactions)
    assert [x.timestamp for x in log.interactions] == [100, 101]


def test_load_four_field_lines_parse_rating(tmp_path):
    path = write_file(tmp_path, ["1\t2\t4.5\t100"])
    log = load_interactions(path)
    assert log.interactions[0].rating == 4.5
    assert log.interactions[0].timestamp == 100


def test_load_comma_delimiter(tmp_path):
    path = write_file(tmp_path, ["1,2,3,100", "2,2,1,90"])
    log = load_interactions(path, delimiter=",")
    assert len(log.interactions) == 2


def test_load_skips_blank_lines_counts_rest(tmp_path):
    path = write_file(tmp_path, ["1\t2\t100", "", "  ", "2\t3\t101"])
    log = load_interactions(path)
    assert len(log.interactions) == 2


def test_load_short_line_reports_line_number(tmp_path):
    path = write_file(tmp_path, ["1\t2\t100", "1\t2"])
    with pytest.raises(DataFormatError, match=":2:"):
        load_interactions(path)


def test_load_non_numeric_field(tmp_path):
    path = write_file(tmp_path, ["1\tfoo\t100"])
    with pytest.raises(DataFormatError, match="non-numeric"):
        load_interactions(path)


def test_load_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_interactions(tmp_path / "absent.data")


# -- stats --------------------------------------------------------------------


def test_stats_single_action_density_one():
    s = dataset_stats([Interaction(0, 0, None, 1)])
    assert (s.users, s.items, s.actions, s.density) == (1, 1, 1, 1.0)


def test_stats_direct_arithmetic():
    rows = [(0, 0, 1), (0, 1, 2), (1, 2, 3), (1, 3, 4)]
    s = dataset_stats([Interaction(u, i, None, t) for u, i, t in rows])
    assert (s.users, s.items, s.actions) == (2, 4, 4)
    assert s.density == 0.5


def test_stats_empty_is_error():
    with pytest.raises(ValueError):
        dataset_stats([])


# -- chronological split ------------------------------------------------------


def test_split_ten_interactions():
    log = make_log([(0, i, 10 + i) for i in range(10)])
    split = chronological_split(log)
    us = split.users[0]
    assert len(us.train) == 7
    assert us.validation == 7  # item at index 7 (0-based position 7 of 10)
    assert us.test == [8, 9]


def test_split_five_interactions():
    log = make_log([(0, i, i) for i in range(5)])
    us = chronological_split(log).users[0]
    assert (len(us.train), us.validation, us.test) == (3, 3, [4])


def test_split_drops_short_users():
    log = make_log([(0, 0, 1), (0, 1, 2), (1, 0, 1), (1, 1, 2), (1, 2, 3)])
    split = chronological_split(log)
    assert 0 not in split.users
    assert split.dropped_users == 1
    assert 1 in split.users
    assert split.num_users == 2  # dropped users keep their dense id slot


def test_split_orders_by_timestamp_then_file_order():
    log = make_log([(0, 5, 30), (0, 6, 10), (0, 7, 30), (0, 8, 20)])
    us = chronological_split(log).users[0]
    assert us.full_sequence() == [6, 8, 5, 7]


def test_split_round_trip_property():
    rng = np.random.default_rng(7)
    rows = []
    for user in range(20):
        n = int(rng.integers(1, 15))
        times = rng.integers(0, 50, size=n)
        for t in times:
            rows.append((user, int(rng.integers(0, 30)), int(t)))
    log = make_log(rows, num_users=20, num_items=30)
    split = chronological_split(log)
    for user_id, us in split.users.items():
        events = sorted(
            [(x.timestamp, x.item_id) for x in log.interactions if x.user_id == user_id],
            key=lambda e: e[0])
        assert us.full_sequence() == [item for _, item in events]
        assert len(us.train) >= 0 and us.validation is not None and len(us.test) >= 1


def test_split_is_deterministic():
    log = make_log([(u, i, i * 7 % 13) for u in range(5) for i in range(8)])
    a = chronological_split(log)
    b = chronological_split(log)
    assert {u: (s.train, s.validation, s.test) for u, s in a.users.items()} == \
           {u: (s.train, s.validation, s.test) for u, s in b.users.items()}


# -- popularity grouping ------------------------------------------------------


def grouped_split(counts, num_items=None):
    """One user interacting counts[i] times with item i, long trains."""
    rows = []
    t = 0
    for item, c in enumerate(counts):
        for _ in range(c):
            rows.append((0, item, t))
            t += 1
    ni = num_items if num_items is not None else len(counts)
    log = make_log(rows, num_users=1, num_items=ni)
    # use ratio pushing everything into train to make counts exact
    return chronological_split(log, ratio=0.99)


def test_grouping_sizes_1682_items():
    split = grouped_split([1] * 1682)
    g = group_items_by_popularity(split)
    assert g.popular_count == 336
    assert g.longtail_count == 1346
    assert abs(g.beta - 1346 / 1682) < 1e-12


def test_grouping_ten_items_descending_counts():
    split = grouped_split(list(range(10, 0, -1)))
    g = group_items_by_popularity(split)
    assert list(np.where(g.group == POPULAR)[0]) == [0, 1]
    assert g.beta == 0.8


def test_grouping_tie_break_by_item_id():
    split = grouped_split([3, 3, 3, 3, 3])
    g = group_items_by_popularity(split)
    assert list(np.where(g.group == POPULAR)[0]) == [0]


def test_grouping_too_few_items():
    split = grouped_split([2, 2, 2, 2])
    with pytest.raises(ValueError):
        group_items_by_popularity(split)


def test_grouping_is_partition():
    rng = np.random.default_rng(3)
    split = grouped_split([int(c) for c in rng.integers(1, 9, size=37)])
    g = group_items_by_popularity(split)
    assert g.popular_count + g.longtail_count == 37
    assert set(np.unique(g.group)) <= {POPULAR, LONGTAIL}


def test_grouping_scope_train_vs_full():
    # Item 1 dominates only via its validation/test events; the scopes must
    # crown different winners.
    rows = [(0, 0, t) for t in range(4)] + [(0, 1, 4 + t) for t in range(6)]
    rows += [(1, i, 100 + i) for i in range(2, 5)]
    log = make_log(rows, num_users=2, num_items=5)
    split = chronological_split(log)
    g_train = group_items_by_popularity(split, scope="train")
    g_full = group_items_by_popularity(split, scope="full")
    assert g_train.group[0] == POPULAR and g_train.group[1] == LONGTAIL
    assert g_full.group[1] == POPULAR and g_full.group[0] == LONGTAIL


def test_grouping_counts_exclude_validation_and_test():
    # user 0: train [0,0,0], val 1, test [1,1]; item 1 outnumbers item 0
    # overall but not in train.
    rows = [(0, 0, 0), (0, 0, 1), (0, 0, 2), (0, 0, 3), (0, 1, 4), (0, 1, 5),
            (0, 1, 6)]
    rows += [(1, i, 50 + i) for i in range(2, 5)]
    log = make_log(rows, num_users=2, num_items=5)
    split = chronological_split(log)
    g = group_items_by_popularity(split, scope="train")
    assert g.group[0] == POPULAR
    assert g.group[1] == LONGTAIL


# -- file formats -------------------------------------------------------------


def test_split_manifest_round_trip(tmp_path):
    log = make_log([(u, (u + i) % 9, i) for u in range(4) for i in range(7)],
                   num_users=4, num_items=9)
    split = chronological_split(log)
    path = tmp_path / "split.json"
    write_split_manifest(split, path)
    loaded = read_split_manifest(path, num_users=split.num_users,
                                 num_items=split.num_items)
    assert loaded.num_users == split.num_users
    assert loaded.num_items == split.num_items
    for uid, us in split.users.items():
        got = loaded.users[uid]
        assert (got.train, got.validation, got.test) == (us.train, us.validation, us.test)


def test_grouping_csv_round_trip(tmp_path):
    split = grouped_split(list(range(12, 0, -1)))
    g = group_items_by_popularity(split)
    path = tmp_path / "grouping.csv"
    write_grouping_csv(g, path)
    loaded = read_grouping_csv(path)
    np.testing.assert_array_equal(loaded.group, g.group)
    assert abs(loaded.beta - g.beta) < 1e-9
    first = path.read_text().splitlines()[0]
    assert first == "item_id,group,beta"
