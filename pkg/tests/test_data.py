import inspect

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coldstart_al import data
from coldstart_al.data import (
    BudgetError,
    BudgetLedger,
    DatasetFormatError,
    IndexPartition,
    LabelOracle,
    PartitionError,
    SamplePool,
    annotate,
    cycle_quota,
    initial_random_sample,
    load_fer2013_csv,
    synth_gaussian_mixture,
    write_fer_csv,
)
from coldstart_al.numcore import ContractError, RngStream


def fresh_state(labels, budget, initial=1, cycles=2):
    labels = np.asarray(labels)
    oracle = LabelOracle(labels, int(labels.max()) + 1 if labels.max() > 0 else 2)
    part = IndexPartition(len(labels))
    ledger = BudgetLedger(budget, initial, cycles, len(labels))
    return part, ledger, oracle


def check_partition(part):
    labeled = set(part.labeled)
    unlabeled = set(part.unlabeled.tolist())
    assert not labeled & unlabeled
    assert labeled | unlabeled == set(range(part.size))
    assert len(labeled) == len(part.labeled)


class TestCycleQuota:
    def test_even_split(self):
        ledger = BudgetLedger(40, 10, 7, 100)
        assert [cycle_quota(ledger, k) for k in range(1, 8)] == [10, 5, 5, 5, 5, 5, 5]

    def test_remainder_goes_to_last_cycle(self):
        ledger = BudgetLedger(40, 12, 7, 100)
        assert [cycle_quota(ledger, k) for k in range(1, 8)] == [12, 4, 4, 4, 4, 4, 8]

    def test_two_cycles(self):
        ledger = BudgetLedger(40, 12, 2, 100)
        assert cycle_quota(ledger, 2) == 28

    def test_out_of_range_cycle(self):
        with pytest.raises(ContractError):
            cycle_quota(BudgetLedger(10, 2, 3, 10), 4)

    @settings(max_examples=300, deadline=None)
    @given(st.integers(0, 5000), st.integers(0, 5000), st.integers(2, 60))
    def test_quotas_sum_to_budget(self, a, b, c):
        s, n = min(a, b), max(a, b)
        ledger = BudgetLedger(n, s, c, n)
        quotas = [cycle_quota(ledger, k) for k in range(1, c + 1)]
        assert sum(quotas) == n
        assert all(q >= 0 for q in quotas)

    def test_invalid_ledger(self):
        with pytest.raises(ContractError):
            BudgetLedger(5, 6, 3, 10)
        with pytest.raises(ContractError):
            BudgetLedger(5, 1, 1, 10)

    def test_from_fractions(self):
        ledger = BudgetLedger.from_fractions(2000, 0.2, 0.01, 7)
        assert (ledger.total_budget, ledger.initial_size) == (400, 20)


class TestInitialSample:
    def test_counts(self):
        part, ledger, oracle = fresh_state(np.arange(10) % 2, budget=5, initial=3)
        labels = initial_random_sample(part, ledger, oracle, RngStream(0))
        assert len(part.labeled) == 3 and len(part.unlabeled) == 7
        assert ledger.spent == 3 and oracle.query_count == 3
        np.testing.assert_array_equal(labels, np.arange(10)[part.labeled_array] % 2)
        check_partition(part)

    def test_whole_pool(self):
        part, ledger, oracle = fresh_state(np.arange(6) % 2, budget=6, initial=6)
        initial_random_sample(part, ledger, oracle, RngStream(1))
        assert part.unlabeled.size == 0

    def test_called_twice(self):
        part, ledger, oracle = fresh_state(np.arange(6) % 2, budget=6, initial=2)
        initial_random_sample(part, ledger, oracle, RngStream(1))
        with pytest.raises(PartitionError):
            initial_random_sample(part, ledger, oracle, RngStream(1))

    def test_uniform_frequency(self):
        counts = np.zeros(5, dtype=int)
        for seed in range(10000):
            part, ledger, oracle = fresh_state(np.arange(5) % 2, budget=1, initial=1)
            initial_random_sample(part, ledger, oracle, RngStream(seed))
            counts[part.labeled[0]] += 1
        assert np.all(np.abs(counts - 2000) <= 150), counts


class TestAnnotate:
    labels = np.array([0, 1, 2, 1, 0])

    def test_single(self):
        part, ledger, oracle = fresh_state(self.labels, budget=3)
        out = annotate(part, ledger, oracle, [2])
        assert out.tolist() == [2]
        assert part.labeled == [2] and oracle.query_count == 1

    def test_empty_is_noop(self):
        part, ledger, oracle = fresh_state(self.labels, budget=3)
        assert annotate(part, ledger, oracle, []).size == 0
        assert ledger.spent == 0 and oracle.query_count == 0

    def test_budget_exceeded_leaves_state_unchanged(self):
        part, ledger, oracle = fresh_state(self.labels, budget=2)
        annotate(part, ledger, oracle, [0])
        with pytest.raises(BudgetError, match="remaining budget 1"):
            annotate(part, ledger, oracle, [1, 2])
        assert part.labeled == [0] and ledger.spent == 1 and oracle.query_count == 1
        check_partition(part)

    def test_already_labeled_names_index(self):
        part, ledger, oracle = fresh_state(self.labels, budget=4)
        annotate(part, ledger, oracle, [3])
        with pytest.raises(PartitionError, match="index 3"):
            annotate(part, ledger, oracle, [1, 3])
        assert part.labeled == [3]

    def test_out_of_range_and_duplicates(self):
        part, ledger, oracle = fresh_state(self.labels, budget=4)
        with pytest.raises(PartitionError):
            annotate(part, ledger, oracle, [7])
        with pytest.raises(PartitionError):
            annotate(part, ledger, oracle, [1, 1])

    def test_oracle_has_no_public_label_accessor(self):
        public = [name for name in dir(LabelOracle) if not name.startswith("_")]
        assert sorted(public) == ["num_classes", "query_count"]
        oracle = LabelOracle([0, 1], 2)
        assert "0, 1" not in repr(oracle)


class TestPoolTypes:
    def test_pool_rejects_bad_shapes(self):
        with pytest.raises(ContractError):
            SamplePool(np.zeros((0, 3)), 2)
        with pytest.raises(ContractError):
            SamplePool(np.zeros((3, 2)), 1)

    def test_pool_features_are_read_only(self):
        pool = SamplePool(np.zeros((3, 2)), 2)
        with pytest.raises(ValueError):
            pool.features[0, 0] = 1.0

    def test_oracle_label_range(self):
        with pytest.raises(ContractError):
            LabelOracle([0, 3], 3)


class TestSynthetic:
    def test_balanced_counts(self):
        _, oracle = synth_gaussian_mixture(4, 5, 30, 0.2, [1, 1, 1, 1], RngStream(0))
        labels = oracle._reveal(np.arange(len(oracle)))
        assert np.bincount(labels).tolist() == [30, 30, 30, 30]

    def test_imbalanced_counts(self):
        _, oracle = synth_gaussian_mixture(3, 5, 10, 0.2, [4, 1, 0.5], RngStream(0))
        assert np.bincount(oracle._reveal(np.arange(len(oracle)))).tolist() == [40, 10, 5]

    def test_same_seed_identical(self):
        a, _ = synth_gaussian_mixture(3, 4, 10, 0.3, [1, 1, 1], RngStream(3))
        b, _ = synth_gaussian_mixture(3, 4, 10, 0.3, [1, 1, 1], RngStream(3))
        np.testing.assert_array_equal(a.features, b.features)

    def test_features_scaled_to_unit_range(self):
        pool, _ = synth_gaussian_mixture(3, 4, 20, 0.5, [1, 1, 1], RngStream(4))
        assert pool.features.min() == 0.0 and pool.features.max() == 1.0

    def test_means_on_unit_sphere(self):
        means = data.mixture_means(6, 8, RngStream(0))
        np.testing.assert_allclose(np.linalg.norm(means, axis=1), 1.0, atol=1e-12)

    def test_nonpositive_imbalance(self):
        with pytest.raises(ContractError):
            synth_gaussian_mixture(2, 3, 5, 0.1, [1, 0], RngStream(0))

    def test_tiny_spread_is_separable_with_two_labels_per_class(self):
        from coldstart_al.models import IdentityEncoder, TrainConfig, build_classifier, predict_proba, train_supervised

        pool, oracle = synth_gaussian_mixture(2, 4, 50, 1e-3, [1, 1], RngStream(5))
        y = oracle._reveal(np.arange(len(pool)))
        idx = np.concatenate([np.flatnonzero(y == k)[:2] for k in range(2)])
        model = build_classifier(IdentityEncoder(4), 2, RngStream(0), dropout_rate=0.0)
        cfg = TrainConfig(optimizer="sgd", learning_rate=0.5, batch_size=4, epochs=100, seed=0)
        model, _ = train_supervised(model, pool.features, idx, y[idx], cfg)
        acc = np.mean(predict_proba(model, pool.features).argmax(axis=1) == y)
        assert acc == 1.0


def fixture_rows():
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, size=(4, 2304))
    pixels[0, 0] = 255
    pixels[1, 0] = 0
    return pixels, [3, 0, 6, 2], ["Training", "Training", "PublicTest", "Training"]


def write_raw(path, pixels, labels, usages):
    lines = ["emotion,pixels,Usage"]
    for p, y, u in zip(pixels, labels, usages):
        lines.append(f"{y},{' '.join(map(str, p))},{u}")
    path.write_text("\n".join(lines) + "\n")


class TestFer2013Loader:
    def test_fixture_round_trip(self, tmp_path):
        pixels, labels, usages = fixture_rows()
        path = tmp_path / "fer.csv"
        write_raw(path, pixels, labels, usages)
        pool, oracle = load_fer2013_csv(path)
        assert len(pool) == 3 and pool.dims == 2304 and pool.num_classes == 7
        assert pool.image_shape == (48, 48)
        train = [0, 1, 3]
        np.testing.assert_array_equal(pool.features, pixels[train] / 255.0)
        assert oracle._reveal(np.arange(3)).tolist() == [3, 0, 2]
        assert pool.features[0, 0] == 1.0 and pool.features[1, 0] == 0.0

    def test_public_test_split(self, tmp_path):
        pixels, labels, usages = fixture_rows()
        path = tmp_path / "fer.csv"
        write_raw(path, pixels, labels, usages)
        pool, oracle = load_fer2013_csv(path, usage="PublicTest")
        assert len(pool) == 1 and oracle._reveal(np.array([0])).tolist() == [6]

    def test_writer_round_trip(self, tmp_path):
        pixels, labels, _ = fixture_rows()
        path = tmp_path / "w.csv"
        write_fer_csv(path, pixels / 255.0, labels)
        pool, _ = load_fer2013_csv(path)
        np.testing.assert_array_equal(pool.features, pixels / 255.0)

    def test_wrong_pixel_count_names_count_and_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("emotion,pixels,Usage\n1," + " ".join(["0"] * 2304) + ",Training\n2,1 2 3,Training\n")
        with pytest.raises(DatasetFormatError, match=r"line 3: expected 2304 pixels, found 3"):
            load_fer2013_csv(path)

    def test_malformed_row_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("emotion,pixels,Usage\nx,1 2,Training\n")
        with pytest.raises(DatasetFormatError, match="line 2"):
            load_fer2013_csv(path, expected_pixels=2)

    def test_pixel_out_of_range(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("emotion,pixels,Usage\n1,1 256,Training\n")
        with pytest.raises(DatasetFormatError, match="line 2"):
            load_fer2013_csv(path, expected_pixels=2)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("label,pixels,Usage\n")
        with pytest.raises(DatasetFormatError, match="header"):
            load_fer2013_csv(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_fer2013_csv(tmp_path / "absent.csv")


def test_module_exposes_no_label_getter():
    names = [n for n, _ in inspect.getmembers(data, inspect.isfunction) if not n.startswith("_")]
    assert not any("label" in n and "get" in n for n in names)
