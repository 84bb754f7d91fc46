from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from localfp.dataio import (
    Dataset,
    LogisticObjective,
    ParseError,
    Sample,
    load_libsvm,
    logistic_cyclic_operators,
    logistic_gd_operators,
    logistic_value_grad,
    parse_libsvm,
    partition,
    smoothness_constant,
    to_libsvm,
    with_auto_kappa,
)
from localfp.operators import Sampler, verify_property

FIXTURE = Path(__file__).parent / "data" / "a9a_sample.txt"


@pytest.fixture(scope="module")
def a9a():
    return with_auto_kappa(load_libsvm(FIXTURE))


def central_diff(f, x, h=1e-6):
    g = np.empty_like(x)
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


class TestParse:
    def test_single_line(self):
        ds = parse_libsvm("+1 1:0.5 3:2\n")
        assert ds.samples == (Sample(1, (1, 3), (0.5, 2.0)),)
        assert ds.d == 3

    def test_labels_and_blank_lines(self):
        ds = parse_libsvm("-1 2:1\n\n1 1:1\n")
        assert ds.n == 2 and ds.d == 2
        assert [s.label for s in ds.samples] == [-1, 1]

    @pytest.mark.parametrize("text,lineno", [
        ("0 1:1\n", 1),
        ("+1 1:1\n+2 1:1\n", 2),
        ("+1 3:1 2:1\n", 1),
        ("+1 1:1 1:2\n", 1),
        ("+1 a:1\n", 1),
        ("+1 1=1\n", 1),
        ("+1 0:1\n", 1),
        ("+1 1:nan\n", 1),
        ("x 1:1\n", 1),
    ])
    def test_errors_carry_line(self, text, lineno):
        with pytest.raises(ParseError, match=f"line {lineno}"):
            parse_libsvm(text)

    def test_empty(self):
        with pytest.raises(ParseError):
            parse_libsvm("\n\n")

    def test_label_only_row(self):
        assert parse_libsvm("-1\n").samples[0].indices == ()

    def test_fixture_shape(self, a9a):
        assert a9a.n == 100
        assert a9a.d <= 123
        assert all(len(s.indices) == 14 for s in a9a.samples)

    def test_dim_padding(self):
        ds = load_libsvm(FIXTURE, dim=200)
        assert ds.d == 200
        with pytest.raises(ValueError):
            load_libsvm(FIXTURE, dim=5)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([-1, 1]),
                          st.dictionaries(st.integers(1, 50),
                                          st.floats(-1e6, 1e6, allow_nan=False),
                                          max_size=6)),
                min_size=1, max_size=8))
def test_round_trip(rows):
    samples = tuple(Sample(b, tuple(sorted(f)), tuple(f[i] for i in sorted(f)))
                    for b, f in rows)
    ds = Dataset(samples, max([max(s.indices, default=0) for s in samples]))
    assert parse_libsvm(to_libsvm(ds)).samples == samples


class TestPartition:
    def test_contiguous(self):
        ds = parse_libsvm("".join(f"+1 1:{i}\n" for i in range(1, 5)))
        shards = partition(ds, 2).shards
        assert [s.tolist() for s in shards] == [[0, 1], [2, 3]]

    def test_sizes(self):
        ds = parse_libsvm("+1 1:1\n" * 5)
        assert [len(s) for s in partition(ds, 2).shards] == [3, 2]

    def test_equal_trims(self):
        ds = parse_libsvm("+1 1:1\n" * 5)
        assert [len(s) for s in partition(ds, 2, equal=True).shards] == [2, 2]

    def test_shuffled_deterministic(self, a9a):
        a = partition(a9a, 7, "shuffled", seed=3)
        b = partition(a9a, 7, "shuffled", seed=3)
        assert all(np.array_equal(x, y) for x, y in zip(a.shards, b.shards))
        allidx = np.concatenate(a.shards)
        assert sorted(allidx.tolist()) == list(range(100))

    @pytest.mark.parametrize("M", [0, 101, 2.5])
    def test_out_of_range(self, a9a, M):
        with pytest.raises(ValueError):
            partition(a9a, M)

    def test_bad_strategy(self, a9a):
        with pytest.raises(ValueError):
            partition(a9a, 2, "striped")


class TestSmoothness:
    def test_rank_one(self):
        assert smoothness_constant(parse_libsvm("+1 1:2\n")) == pytest.approx(1.0, rel=1e-8)

    def test_zero_features(self):
        assert smoothness_constant(parse_libsvm("+1\n-1\n")) == 0.0

    def test_duplication_invariant(self, a9a):
        dup = Dataset(a9a.samples + a9a.samples, a9a.d)
        assert smoothness_constant(dup) == pytest.approx(a9a.L_loss, rel=1e-7)

    def test_feature_scaling(self, a9a):
        scaled = Dataset(tuple(Sample(s.label, s.indices, tuple(3 * v for v in s.values))
                               for s in a9a.samples), a9a.d)
        assert smoothness_constant(scaled) == pytest.approx(9 * a9a.L_loss, rel=1e-7)

    def test_against_dense_eig(self, a9a):
        A = a9a.matrix().toarray()
        lam = np.linalg.eigvalsh(A.T @ A)[-1]
        assert a9a.L_loss == pytest.approx(lam / (4 * a9a.n), rel=1e-7)

    def test_auto_kappa(self, a9a):
        assert a9a.kappa == a9a.L_loss / a9a.n


class TestLogistic:
    def test_at_zero(self, a9a):
        val, grad = logistic_value_grad(a9a, 0.3, np.zeros(a9a.d))
        assert val == pytest.approx(np.log(2.0), rel=1e-15)
        A, b = a9a.matrix().toarray(), a9a.labels()
        np.testing.assert_allclose(grad, -(A.T @ b) / (2 * a9a.n), rtol=1e-14, atol=1e-16)

    def test_perfect_classification_limit(self):
        ds = parse_libsvm("+1 1:1\n")
        val, grad = logistic_value_grad(ds, 0.0, np.array([1e3]))
        assert val == 0.0 or val < 1e-300
        assert np.all(np.isfinite(grad))

    def test_no_overflow(self, a9a):
        x = np.full(a9a.d, 100.0)
        val, grad = logistic_value_grad(a9a, a9a.kappa, x)
        assert np.isfinite(val) and np.all(np.isfinite(grad))

    def test_dimension(self, a9a):
        with pytest.raises(ValueError):
            logistic_value_grad(a9a, 0.1, np.zeros(3))

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, a9a, seed):
        x = np.random.default_rng(seed).standard_normal(a9a.d) * 0.3
        obj = LogisticObjective(a9a, a9a.kappa)
        g = obj.value_grad(x)[1]
        fd = central_diff(lambda z: obj.value_grad(z)[0], x)
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-9)

    def test_shard_gradients_average(self, a9a):
        part = partition(a9a, 4, equal=True)
        x = np.random.default_rng(0).standard_normal(a9a.d)
        full = logistic_value_grad(a9a, a9a.kappa, x)[1]
        shard = np.mean([logistic_value_grad(a9a, a9a.kappa, x, s)[1] for s in part.shards],
                        axis=0)
        np.testing.assert_allclose(shard, full, rtol=1e-12, atol=1e-15)

    def test_sample_grads_sum(self, a9a):
        obj = LogisticObjective(a9a, a9a.kappa, rows=range(10))
        x = np.random.default_rng(1).standard_normal(a9a.d)
        total = np.mean([g(x) for g in obj.sample_grads()], axis=0)
        np.testing.assert_allclose(total, obj.grad(x), rtol=1e-12, atol=1e-15)


class TestOperators:
    def test_gd_firmly_nonexpansive(self, a9a):
        part = partition(a9a, 4)
        ops, gamma = logistic_gd_operators(a9a, part, a9a.kappa)
        assert gamma == pytest.approx(1.0 / (max(smoothness_constant(a9a, rows=s)
                                                 for s in part.shards) + a9a.kappa))
        for op in ops:
            assert op.props.firmly_nonexpansive
            rep = verify_property(op, "firmly_nonexpansive", sampler=Sampler(300, radius=5.0))
            assert rep.passed, rep

    def test_cyclic_shared_structure(self, a9a):
        part = partition(a9a, 3)
        ops = logistic_cyclic_operators(a9a, part, a9a.kappa)
        assert len(ops) == 3 and ops[0].dim == a9a.d
        assert verify_property(ops[0], "nonexpansive", sampler=Sampler(50)).passed
