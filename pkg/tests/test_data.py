import numpy as np
import pytest

from fedshield.data import (
    LabeledDataset,
    PartitionSpec,
    class_centers,
    generate_synthetic,
    load_dataset,
    partition,
    poison,
    save_dataset,
    train_test_split,
)
from fedshield.errors import ConfigurationError, DataError, DatasetParseError


def small(num_classes=4, dim=6, per_class=50, seed=0, noise_scale=1.0):
    return generate_synthetic(num_classes, dim, per_class, seed=seed, noise_scale=noise_scale)


def test_zero_noise_puts_samples_on_centers():
    ds = small(noise_scale=0.0)
    for c in range(ds.num_classes):
        rows = ds.features[ds.labels == c]
        np.testing.assert_array_equal(rows, np.broadcast_to(rows[0], rows.shape))
        assert np.linalg.norm(rows[0]) == pytest.approx(1.0)


def test_balance():
    ds = generate_synthetic(2, 3, 10, seed=1)
    assert len(ds) == 20
    np.testing.assert_array_equal(ds.class_counts(), [10, 10])


def test_same_seed_is_bit_identical():
    assert small(seed=5).equals(small(seed=5))
    assert not small(seed=5).equals(small(seed=6))


def test_noise_levels_are_tagged_and_balanced():
    ds = generate_synthetic(3, 4, 10, noise_levels=[2, 18], seed=0)
    for c in range(3):
        levels = ds.noise_level[ds.labels == c]
        assert sorted(set(levels)) == [2.0, 18.0]
        assert np.sum(levels == 2) == 5


def test_higher_noise_level_means_smaller_spread():
    ds = generate_synthetic(2, 8, 2000, noise_levels=[2, 18], seed=0)
    centers = np.array([ds.features[(ds.labels == c) & (ds.noise_level == 18)].mean(axis=0) for c in range(2)])
    spread = {
        lv: np.linalg.norm(ds.features[ds.noise_level == lv] - centers[ds.labels[ds.noise_level == lv]], axis=1).mean()
        for lv in (2.0, 18.0)
    }
    assert spread[18.0] < spread[2.0] / 4


def test_centers_are_unit_and_separated():
    c = class_centers(11, 8, 0)
    np.testing.assert_allclose(np.linalg.norm(c, axis=1), 1.0)
    d = np.linalg.norm(c[:, None] - c[None], axis=2)
    assert d[~np.eye(11, dtype=bool)].min() >= np.sqrt(2) - 1e-9


def test_too_many_classes_for_dimension():
    with pytest.raises(ConfigurationError):
        generate_synthetic(9, 4, 5)


def test_noiseless_data_is_linearly_separable():
    ds = small(num_classes=5, dim=6, noise_scale=0.0)
    # nearest-center linear rule: argmax <x, center_c>
    centers = np.array([ds.features[ds.labels == c][0] for c in range(5)])
    assert np.all(np.argmax(ds.features @ centers.T, axis=1) == ds.labels)


@pytest.mark.parametrize("bad", [dict(num_classes=1), dict(dim=1), dict(samples_per_class=0)])
def test_generator_validation(bad):
    kwargs = {**dict(num_classes=3, dim=3, samples_per_class=3), **bad}
    with pytest.raises(ConfigurationError):
        generate_synthetic(**kwargs)


def _row_keys(ds):
    return {tuple(r) for r in ds.features}


def test_partition_dominant_fraction():
    ds = generate_synthetic(4, 6, 400, seed=0)
    shards = partition(ds, PartitionSpec(num_clients=4, shard_size=100, seed=1))
    for k, shard in enumerate(shards):
        assert len(shard) == 100
        assert abs(np.sum(shard.labels == k) - 50) <= 1
        others = np.bincount(shard.labels, minlength=4)[[c for c in range(4) if c != k]]
        assert others.max() - others.min() <= 1


def test_partition_is_disjoint_subset():
    ds = generate_synthetic(5, 6, 200, seed=2)
    shards = partition(ds, PartitionSpec(num_clients=11, seed=3))
    all_rows = _row_keys(ds)
    seen = set()
    total = 0
    for shard in shards:
        rows = _row_keys(shard)
        assert rows <= all_rows
        assert not rows & seen
        seen |= rows
        total += len(shard)
    assert total == len(seen) <= len(ds)


def test_partition_default_size_is_feasible_and_large():
    ds = generate_synthetic(5, 6, 200, seed=2)
    shards = partition(ds, PartitionSpec(num_clients=11, seed=3))
    size = len(shards[0])
    assert all(len(s) == size for s in shards)
    # one more sample per shard would overdraw some class
    with pytest.raises(DataError):
        partition(ds, PartitionSpec(num_clients=11, seed=3, shard_size=size + 1))


def test_partition_single_client_takes_everything():
    labels = np.array([0] * 10 + [1] * 5 + [2] * 5)
    ds = LabeledDataset(np.arange(40.0).reshape(20, 2), labels, np.zeros(20), 3)
    (shard,) = partition(ds, PartitionSpec(num_clients=1, seed=0))
    assert len(shard) == 20
    assert _row_keys(shard) == _row_keys(ds)


def test_partition_is_deterministic():
    ds = small(per_class=100)
    a = partition(ds, PartitionSpec(num_clients=3, seed=9))
    b = partition(ds, PartitionSpec(num_clients=3, seed=9))
    assert all(x.equals(y) for x, y in zip(a, b))


def test_partition_names_missing_class():
    labels = np.array([0] * 20 + [1] * 2)
    ds = LabeledDataset(np.zeros((22, 2)), labels, np.zeros(22), 2)
    with pytest.raises(DataError, match="class 1"):
        partition(ds, PartitionSpec(num_clients=2, shard_size=10, seed=0))


def test_poison_example():
    ds = LabeledDataset(np.eye(4), [3, 1, 3, 2], np.zeros(4), 6)
    out = poison(ds, (3, 5))
    np.testing.assert_array_equal(out.labels, [5, 1, 5, 2])
    np.testing.assert_array_equal(ds.labels, [3, 1, 3, 2])
    np.testing.assert_array_equal(out.features, ds.features)
    np.testing.assert_array_equal(out.noise_level, ds.noise_level)


def test_poison_absent_class_is_noop():
    full = small()
    shard = full.subset(np.flatnonzero(full.labels != 2))
    assert poison(shard, (2, 0)).equals(shard)


def test_poison_changes_only_source_labels():
    ds = small()
    out = poison(ds, (1, 3))
    changed = out.labels != ds.labels
    np.testing.assert_array_equal(changed, ds.labels == 1)
    assert np.all(out.labels[changed] == 3)


def test_poison_rejects_identity_flip():
    with pytest.raises(ConfigurationError):
        poison(small(), (1, 1))


def test_stratified_split():
    ds = small(per_class=50)
    train, test = train_test_split(ds, 0.4, seed=0)
    np.testing.assert_array_equal(test.class_counts(), [20] * 4)
    assert len(train) + len(test) == len(ds)
    assert not _row_keys(train) & _row_keys(test)


def test_save_load_round_trip(tmp_path):
    ds = small()
    path = tmp_path / "ds.txt"
    save_dataset(ds, path)
    assert load_dataset(path).equals(ds)
    assert path.read_text().startswith("fldata v1 n=200 d=6 M=4\n")


def test_truncated_file_is_a_parse_error(tmp_path):
    path = tmp_path / "ds.txt"
    save_dataset(small(), path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(DatasetParseError) as info:
        load_dataset(path)
    assert info.value.line is not None


def test_malformed_number_reports_line(tmp_path):
    path = tmp_path / "ds.txt"
    path.write_text("fldata v1 n=2 d=2 M=3\n0 2 0.5 1.5\n1 2 abc 1.0\n")
    with pytest.raises(DatasetParseError, match="line 3"):
        load_dataset(path)


def test_bad_header(tmp_path):
    path = tmp_path / "ds.txt"
    path.write_text("something else\n")
    with pytest.raises(DatasetParseError, match="line 1"):
        load_dataset(path)


def test_label_beyond_header_classes_is_data_error(tmp_path):
    path = tmp_path / "ds.txt"
    path.write_text("fldata v1 n=1 d=2 M=5\n7 2 0.5 1.5\n")
    with pytest.raises(DataError):
        load_dataset(path)
