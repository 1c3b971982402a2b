import pytest
import numpy as np

from src.core.random_streams import Stream, make_rng
from src.tools.data_gen import (
    AR_SUBDIAG_HIGH, AR_SUBDIAG_LOW, ar_next, ar_trajectory_sample, collect_ar_samples,
    dataset_frame, finite_surrogate, make_ar_stream, make_node_dataset, node_least_squares,
)
from src.tools.objectives import LossFamily


class TestARStream:

    def test_transition_structure(self):
        stream = make_ar_stream(d=12, seed=3)
        a = stream.a_matrix
        sub = a[np.arange(1, 12), np.arange(11)]
        assert np.all((sub >= AR_SUBDIAG_LOW) & (sub <= AR_SUBDIAG_HIGH))
        assert np.count_nonzero(a) == 11
        assert np.linalg.norm(stream.u) == pytest.approx(1.0)

    def test_first_draw_only_moves_first_coordinate(self):
        stream = make_ar_stream(d=6, seed=0)
        features, label = ar_next(stream)
        assert features[0] != 0
        assert np.all(features[1:] == 0)
        assert label in (0, 1)
        assert stream.emitted == 1

    def test_same_seed_same_stream(self):
        first, second = make_ar_stream(d=8, seed=5), make_ar_stream(d=8, seed=5)
        for _ in range(50):
            a, b = first.next(), second.next()
            assert np.array_equal(a[0], b[0]) and a[1] == b[1]

    def test_noise_stream_shares_setup(self):
        run = make_ar_stream(d=8, seed=5)
        held_out = make_ar_stream(d=8, seed=5, noise_stream=Stream.AR_EVAL)
        assert np.array_equal(run.a_matrix, held_out.a_matrix)
        assert np.array_equal(run.u, held_out.u)
        assert not np.array_equal(run.next()[0], held_out.next()[0])

    def test_returned_features_are_copies(self):
        stream = make_ar_stream(d=4, seed=1)
        features, _ = stream.next()
        features[:] = 100.0
        assert not np.any(stream.xi1 == 100.0)

    def test_flip_rate(self):
        stream = make_ar_stream(d=20, seed=2, flip_prob=0.2)
        features, labels = collect_ar_samples(stream, 20_000, burn_in=100)
        clean = (features @ stream.u > 0).astype(float)
        assert np.mean(clean != labels) == pytest.approx(0.2, abs=0.015)

    def test_no_flips(self):
        stream = make_ar_stream(d=10, seed=4, flip_prob=0.0)
        features, labels = collect_ar_samples(stream, 500, burn_in=10)
        assert np.array_equal((features @ stream.u > 0).astype(float), labels)

    def test_collect_advances_cursor(self):
        stream = make_ar_stream(d=5, seed=0)
        collect_ar_samples(stream, 30, burn_in=20)
        assert stream.emitted == 50

    def test_trajectory_sample_leaves_cursor(self):
        stream = make_ar_stream(d=5, seed=0)
        stream.next()
        before = stream.xi1.copy()
        ar_trajectory_sample(stream, 16, make_rng(0, Stream.SGDT))
        assert stream.emitted == 1
        assert np.array_equal(stream.xi1, before)

    def test_trajectory_sample_reproducible(self):
        stream = make_ar_stream(d=5, seed=0)
        a = ar_trajectory_sample(stream, 8, make_rng(1, Stream.SGDT))
        b = ar_trajectory_sample(stream, 8, make_rng(1, Stream.SGDT))
        assert np.array_equal(a[0], b[0]) and a[1] == b[1]

    def test_scalar_process_has_no_transition(self):
        stream = make_ar_stream(d=1, seed=7)
        assert stream.a_matrix.shape == (1, 1)
        assert stream.a_matrix[0, 0] == 0.0
        assert abs(stream.u[0]) == pytest.approx(1.0)
        features, labels = collect_ar_samples(stream, 200, burn_in=0)
        assert features.shape == (200, 1)
        assert set(np.unique(labels)) <= {0.0, 1.0}

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            make_ar_stream(d=0)
        with pytest.raises(ValueError):
            make_ar_stream(flip_prob=1.5)
        with pytest.raises(ValueError):
            ar_trajectory_sample(make_ar_stream(d=4), 0, make_rng(0))


class TestNodeDataset:

    def test_noiseless_labels(self):
        dataset = make_node_dataset(n=20, d=10, seed=1)
        assert dataset.features.shape == (20, 10)
        assert np.allclose(dataset.labels, dataset.features @ dataset.beta_star)

    def test_reproducible(self):
        first, second = make_node_dataset(seed=9), make_node_dataset(seed=9)
        assert np.array_equal(first.features, second.features)
        assert np.array_equal(first.beta_star, second.beta_star)

    def test_components(self):
        dataset = make_node_dataset(n=6, d=3, seed=0)
        components = node_least_squares(dataset)
        assert len(components) == 6
        assert all(c.family == LossFamily.LEAST_SQUARES for c in components)
        assert components[2].value(dataset.beta_star) == pytest.approx(0.0, abs=1e-20)

    def test_invalid_sizes(self):
        with pytest.raises(ValueError):
            make_node_dataset(n=0)


class TestSurrogate:

    def test_shape_and_family(self):
        components = finite_surrogate(LossFamily.SIGMOID_SQ, 15, 4, seed=2, burn_in=50)
        assert len(components) == 15
        assert {c.dimension for c in components} == {4}
        assert all(c.target in (0.0, 1.0) for c in components)

    def test_reproducible(self):
        first = finite_surrogate(LossFamily.LOGISTIC, 5, 3, seed=7, burn_in=10)
        second = finite_surrogate(LossFamily.LOGISTIC, 5, 3, seed=7, burn_in=10)
        assert all(np.array_equal(a.features, b.features) for a, b in zip(first, second))


class TestDatasetFrame:

    def test_columns(self):
        dataset = make_node_dataset(n=4, d=2, seed=0)
        frame = dataset_frame(dataset.features, dataset.labels, dataset.beta_star)
        assert list(frame.columns) == ["index", "x0", "x1", "y", "beta_star0", "beta_star1"]
        assert len(frame) == 4
        assert frame["y"].tolist() == pytest.approx(dataset.labels.tolist())
