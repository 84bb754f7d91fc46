import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from localfp.operators import (
    DimensionError,
    NumericalFailure,
    Operator,
    OperatorProperties,
    Sampler,
    affine_fixed_point,
    apply,
    average,
    contraction_factor,
    empirical_rho,
    identity,
    make_affine_operator,
    make_cyclic_gd_operator,
    make_gd_operator,
    pairwise_sum,
    power,
    relax,
    residual,
    verify_property,
)


def affine1(a, b):
    return make_affine_operator([[a]], [b])


def quad_grad(mu, c):
    return lambda x: mu * (x - c)


class TestOperatorProperties:
    def test_firm_fills_alpha(self):
        assert OperatorProperties(firmly_nonexpansive=True).alpha == 0.5

    def test_small_alpha_implies_firm(self):
        assert OperatorProperties(alpha=0.3).firmly_nonexpansive

    def test_contradiction_rejected(self):
        with pytest.raises(ValueError):
            OperatorProperties(alpha=0.8, firmly_nonexpansive=True)

    @pytest.mark.parametrize("kw", [{"alpha": 0.0}, {"alpha": 1.5}, {"chi": 1.0},
                                    {"chi": -0.1}, {"rho": 0.0}])
    def test_ranges(self, kw):
        with pytest.raises(ValueError):
            OperatorProperties(**kw)


class TestApply:
    def test_identity(self):
        np.testing.assert_array_equal(identity(2)(np.array([1.0, 2.0])), [1.0, 2.0])

    def test_affine_fixed_point_value(self):
        np.testing.assert_allclose(affine1(0.75, 0.25)(np.array([1.0])), [1.0], rtol=0, atol=0)

    def test_one_shot_gd(self):
        op = make_gd_operator(lambda x: x, 1.0, 1)
        np.testing.assert_array_equal(op(np.array([5.0])), [0.0])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            identity(2)(np.zeros(3))

    def test_non_finite_names_operator(self):
        op = Operator(lambda x: x * np.inf, 1, name="blowup")
        with pytest.raises(NumericalFailure, match="blowup"):
            op(np.array([1.0]))

    def test_wrong_output_shape(self):
        op = Operator(lambda x: np.zeros(2), 1)
        with pytest.raises(DimensionError):
            op(np.array([1.0]))

    def test_immutable(self):
        with pytest.raises(AttributeError):
            identity(1).dim = 3

    def test_deterministic(self):
        op = affine1(0.3, 0.1)
        x = np.array([0.7])
        assert op(x).tobytes() == op(x.copy()).tobytes()


class TestRelax:
    def test_lambda_one(self):
        op = affine1(0.75, 0.25)
        assert relax(op, 1.0) is op

    @pytest.mark.parametrize("lam", [0.2, 0.5, 1.7])
    def test_identity_invariant(self, lam):
        x = np.array([3.0, -1.0])
        np.testing.assert_allclose(relax(identity(2), lam)(x), x)

    def test_affine_half(self):
        op = relax(affine1(0.75, 0.25), 0.5)
        A, b = op.affine
        np.testing.assert_allclose(A, [[0.875]])
        np.testing.assert_allclose(b, [0.125])
        np.testing.assert_allclose(op(np.array([2.0])), [0.875 * 2 + 0.125])

    def test_props(self):
        op = affine1(0.75, 0.25).with_props(OperatorProperties(alpha=0.5, chi=0.75))
        r = relax(op, 0.5)
        assert r.props.alpha == pytest.approx(0.25)
        # lam chi + 1 - lam
        assert r.props.chi == pytest.approx(0.875)

    def test_bad_lambda(self):
        with pytest.raises(ValueError):
            relax(identity(1), 0.0)


class TestPower:
    def test_H1(self):
        op = affine1(0.75, 0.25)
        x = np.array([0.3])
        np.testing.assert_array_equal(power(op, 1)(x), op(x))

    def test_affine_square(self):
        A, b = power(affine1(0.75, 0.25), 2).affine
        np.testing.assert_allclose(A, [[0.5625]])
        np.testing.assert_allclose(b, [0.4375])

    def test_declared_chi(self):
        op = affine1(0.9, 0.0).with_props(OperatorProperties(chi=0.9))
        assert power(op, 3).props.chi == pytest.approx(0.729)

    def test_matches_repeated_application(self):
        op = Operator(lambda x: np.cos(x), 2)
        x = np.array([0.1, 2.0])
        np.testing.assert_array_equal(power(op, 3)(x), op(op(op(x))))


class TestAverage:
    def test_single(self):
        op = affine1(0.4, 1.0)
        x = np.array([2.0])
        np.testing.assert_array_equal(average([op])(x), op(x))

    def test_two_node_example(self):
        g1 = make_gd_operator(quad_grad(1.0, 1.0), 0.25, 1)
        g2 = make_gd_operator(quad_grad(4.0, -1.0), 0.25, 1)
        T = average([g1, g2])
        for x in (-3.0, 0.0, 1.5):
            np.testing.assert_allclose(T(np.array([x])), [0.375 * x - 0.375], atol=1e-15)
        # same via the affine path
        Ta = average([affine1(0.75, 0.25), affine1(0.0, -1.0)])
        np.testing.assert_allclose(affine_fixed_point(Ta), [-0.6], atol=1e-15)

    def test_identities(self):
        x = np.array([1.0, -2.0])
        np.testing.assert_array_equal(average([identity(2)] * 3)(x), x)

    def test_props_combine(self):
        a = identity(1).with_props(OperatorProperties(alpha=0.5, chi=0.2, rho=3.0))
        b = identity(1).with_props(OperatorProperties(alpha=0.7, chi=0.6, rho=1.0))
        p = average([a, b]).props
        assert (p.alpha, p.chi, p.rho) == (0.7, 0.6, 1.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            average([identity(1), identity(2)])


class TestResidual:
    def test_fixed_point_zero(self):
        np.testing.assert_array_equal(residual(affine1(0.75, 0.25), np.array([1.0])), [0.0])

    def test_affine(self):
        np.testing.assert_allclose(residual(affine1(0.75, 0.25), np.array([0.0])), [-0.25])

    def test_gd_residual_is_scaled_gradient(self):
        op = make_gd_operator(quad_grad(1.0, 1.0), 0.25, 1)
        np.testing.assert_allclose(residual(op, np.array([0.0])), [-0.25])


class TestGD:
    def test_one_shot_constant(self):
        op = make_gd_operator(lambda x: x, 1.0, 3)
        np.testing.assert_array_equal(op(np.array([1.0, 2.0, 3.0])), np.zeros(3))

    def test_declared_chi(self):
        op = make_affine_operator([[0.75]], [0.25])
        assert op.props.chi == pytest.approx(0.75)
        g = make_gd_operator(quad_grad(1.0, 1.0), 0.25, 1)
        np.testing.assert_allclose(g(np.array([2.0])), [0.75 * 2 + 0.25])


class TestCyclicGD:
    def test_single_sample(self):
        op = make_cyclic_gd_operator([quad_grad(2.0, 1.0)], 2.0, 1)
        np.testing.assert_allclose(op(np.array([3.0])), [3.0 - 0.5 * 2.0 * 2.0])

    def test_two_sample_hand_composition(self):
        op = make_cyclic_gd_operator([quad_grad(1.0, 1.0), quad_grad(1.0, -1.0)], 1.0, 1)
        for x in (-2.0, 0.0, 3.0):
            np.testing.assert_allclose(op(np.array([x])), [0.25 * x + 0.25])

    def test_sequential_order(self):
        op = make_cyclic_gd_operator([quad_grad(1.0, 1.0), quad_grad(1.0, -1.0)], 1.0, 1,
                                     order="sequential")
        # S2 after S1: 0.25 x - 0.25
        np.testing.assert_allclose(op(np.array([1.0])), [0.0])

    def test_shared_minimizer_fixed(self):
        grads = [quad_grad(m, 0.7) for m in (0.5, 1.0, 2.0)]
        op = make_cyclic_gd_operator(grads, 2.0, 1)
        np.testing.assert_allclose(op(np.array([0.7])), [0.7])


class TestAffine:
    def test_constant_map(self):
        op = make_affine_operator([[0.0]], [2.0])
        np.testing.assert_array_equal(affine_fixed_point(op), [2.0])

    def test_epoch_value(self):
        op = affine1(0.28125, -0.28125)
        np.testing.assert_allclose(affine_fixed_point(op), [-0.28125 / 0.71875], rtol=1e-15)
        np.testing.assert_allclose(affine_fixed_point(op), [-0.391304347826087])

    def test_singular(self):
        with pytest.raises(np.linalg.LinAlgError):
            affine_fixed_point(make_affine_operator(np.eye(2), [0.0, 0.0]))

    def test_contraction_factor_exact(self):
        ops = [make_affine_operator(np.diag([0.5, -0.2]), [0, 0]),
               make_affine_operator(np.diag([0.1, 0.3]), [1, 1])]
        assert contraction_factor(ops) == pytest.approx(0.5)

    def test_contraction_factor_unknown(self):
        assert contraction_factor([Operator(np.sin, 1)]) is None


def test_pairwise_sum_order_fixed():
    rng = np.random.default_rng(1)
    terms = [rng.standard_normal(3) for _ in range(7)]
    np.testing.assert_allclose(pairwise_sum(terms), np.sum(terms, axis=0), rtol=1e-14)
    assert pairwise_sum(terms).tobytes() == pairwise_sum(list(terms)).tobytes()


class TestVerifyProperty:
    def test_identity_nonexpansive(self):
        rep = verify_property(identity(2), "nonexpansive")
        assert rep.passed
        assert rep.worst_slack == 0.0

    def test_doubling_fails_with_witness(self):
        rep = verify_property(Operator(lambda x: 2 * x, 2), "nonexpansive")
        assert not rep.passed
        x, y = rep.witness
        assert np.linalg.norm(2 * x - 2 * y) > np.linalg.norm(x - y)

    def test_gd_cocoercive(self):
        # spectrum {1, 2}, gamma = 1/2
        op = make_affine_operator(np.diag([0.5, 0.0]), [0.0, 0.0])
        assert verify_property(op, "cocoercive", rho=2.0).passed
        assert not verify_property(op, "cocoercive", rho=2.5).passed

    def test_contractive(self):
        op = affine1(0.6, 1.0)
        assert verify_property(op, "contractive", chi=0.6).passed
        assert not verify_property(op, "contractive", chi=0.5).passed

    def test_firm_vs_reflection(self):
        # x -> -x is nonexpansive but not firmly so
        op = Operator(lambda x: -x, 1)
        assert verify_property(op, "nonexpansive").passed
        assert not verify_property(op, "firmly_nonexpansive").passed

    def test_missing_parameter(self):
        with pytest.raises(ValueError):
            verify_property(identity(1), "contractive")

    def test_empirical_rho_upper_estimate(self):
        op = make_affine_operator(np.diag([0.5, 0.0]), [0.0, 0.0])
        assert empirical_rho(op, Sampler(num_pairs=200)) >= 2.0 - 1e-9


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-0.99, 0.99), b=st.floats(-5, 5), lam=st.floats(0.05, 1.0),
       H=st.integers(1, 6))
def test_relax_power_affine_consistent(a, b, lam, H):
    """Affine bookkeeping agrees with evaluating the composed closures."""
    op = power(relax(affine1(a, b), lam), H)
    A, c = op.affine
    x = np.array([0.37])
    y = x.copy()
    for _ in range(H):
        y = (1 - lam) * y + lam * (a * y + b)
    np.testing.assert_allclose(op(x), y, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(A @ x + c, y, rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(mu=st.floats(0.1, 10.0), seed=st.integers(0, 2**16))
def test_gd_at_one_over_L_is_firm(mu, seed):
    op = make_gd_operator(quad_grad(mu, 0.0), 1.0 / mu, 1)
    assert verify_property(op, "firmly_nonexpansive", sampler=Sampler(100, seed=seed)).passed
