import numpy as np
import pytest

from morec.checkpoint import CheckpointError, SchemaError, VersionError
from morec.data import SplitDataset, UserSplit
from morec.embed import (
    EmbeddingTable,
    MfConfig,
    load_embeddings,
    mf_gradients,
    pretrain_mf,
    save_embeddings,
)


def split_from_lists(train_lists, num_items):
    users = {
        uid: UserSplit(train=list(items), validation=None, test=[])
        for uid, items in enumerate(train_lists)
    }
    return SplitDataset(users=users, num_users=len(train_lists),
                        num_items=num_items)


def test_single_pair_converges_to_label():
    split = split_from_lists([[0]], num_items=1)
    cfg = MfConfig(dim=4, epochs=400, lr=0.1, reg=0.0,
                   negatives_per_positive=0, seed=1)
    table, losses = pretrain_mf(split, cfg)
    pred = float(table.user_embeddings[0] @ table.item_embeddings[0])
    assert abs(pred - 1.0) <= 0.05
    assert losses[-1] < losses[0]


def test_same_seed_is_bit_identical():
    split = split_from_lists([[0, 1, 2], [1, 3], [0, 2, 4]], num_items=5)
    cfg = MfConfig(dim=8, epochs=3, lr=0.05, reg=1e-4,
                   negatives_per_positive=2, seed=42)
    t1, l1 = pretrain_mf(split, cfg)
    t2, l2 = pretrain_mf(split, cfg)
    np.testing.assert_array_equal(t1.user_embeddings, t2.user_embeddings)
    np.testing.assert_array_equal(t1.item_embeddings, t2.item_embeddings)
    assert l1 == l2


def test_loss_decreases_on_synthetic_data():
    rng = np.random.default_rng(0)
    train_lists = [list(rng.choice(30, size=10, replace=False)) for _ in range(25)]
    split = split_from_lists(train_lists, num_items=30)
    cfg = MfConfig(dim=8, epochs=4, lr=0.05, reg=1e-4,
                   negatives_per_positive=4, seed=7)
    _, losses = pretrain_mf(split, cfg)
    assert losses[1] < losses[0]
    assert losses[-1] < losses[0]


def test_mf_gradients_match_finite_differences():
    rng = np.random.default_rng(9)
    reg = 0.3
    for label in (0.0, 1.0):
        e_u = rng.normal(size=6)
        v_i = rng.normal(size=6)
        g_u, g_v, _ = mf_gradients(e_u, v_i, label, reg)

        def loss(a, b):
            return 0.5 * ((a @ b - label) ** 2 + reg * (a @ a + b @ b))

        eps = 1e-6
        for j in range(6):
            for vec, grad in ((e_u, g_u), (v_i, g_v)):
                bump = np.zeros(6)
                bump[j] = eps
                if vec is e_u:
                    num = (loss(e_u + bump, v_i) - loss(e_u - bump, v_i)) / (2 * eps)
                else:
                    num = (loss(e_u, v_i + bump) - loss(e_u, v_i - bump)) / (2 * eps)
                rel = abs(num - grad[j]) / max(abs(num), abs(grad[j]), 1e-8)
                assert rel <= 1e-4


def test_regularization_bounds_norms():
    split = split_from_lists([[0, 1]] * 10, num_items=2)
    cfg = MfConfig(dim=4, epochs=50, lr=0.2, reg=0.01,
                   negatives_per_positive=1, seed=3)
    table, _ = pretrain_mf(split, cfg)
    assert np.abs(table.user_embeddings).max() < 1e3
    assert np.abs(table.item_embeddings).max() < 1e3


def test_empty_train_split_is_error():
    split = split_from_lists([[]], num_items=3)
    with pytest.raises(ValueError):
        pretrain_mf(split, MfConfig())


def test_non_positive_dim_is_error():
    split = split_from_lists([[0]], num_items=1)
    with pytest.raises(ValueError):
        pretrain_mf(split, MfConfig(dim=0))


# -- persistence --------------------------------------------------------------


def random_table(seed=0, users=5, items=9, dim=6):
    rng = np.random.default_rng(seed)
    return EmbeddingTable(
        user_embeddings=rng.normal(size=(users, dim)).astype(np.float32),
        item_embeddings=rng.normal(size=(items, dim)).astype(np.float32),
    )


def test_save_load_round_trip_bit_exact(tmp_path):
    table = random_table()
    path = tmp_path / "emb.ckpt"
    save_embeddings(table, path)
    loaded = load_embeddings(path)
    np.testing.assert_array_equal(loaded.user_embeddings, table.user_embeddings)
    np.testing.assert_array_equal(loaded.item_embeddings, table.item_embeddings)
    assert loaded.dim == table.dim


def test_truncated_embedding_file(tmp_path):
    path = tmp_path / "emb.ckpt"
    save_embeddings(random_table(), path)
    path.write_bytes(path.read_bytes()[:-7])
    with pytest.raises(CheckpointError):
        load_embeddings(path)


def test_wrong_magic_bytes(tmp_path):
    path = tmp_path / "emb.ckpt"
    save_embeddings(random_table(), path)
    raw = bytearray(path.read_bytes())
    raw[:6] = b"XXXXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(VersionError):
        load_embeddings(path)


def test_indivisible_array_length_is_schema_error(tmp_path):
    from morec.checkpoint import save_arrays

    path = tmp_path / "emb.ckpt"
    save_arrays(path, {
        "dim": np.array([4.0], dtype=np.float32),
        "user_embeddings": np.zeros(10, dtype=np.float32),  # not divisible by 4
        "item_embeddings": np.zeros(8, dtype=np.float32),
    })
    with pytest.raises(SchemaError):
        load_embeddings(path)
