import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from eduattn.attention import masked_sparsemax, simplex_project_oracle, softmax, sparsemax
from eduattn.errors import DimensionError, NumericError, ScaleError
from eduattn.tensor import grad_check, parameter, tsum

vectors = arrays(np.float64, st.integers(1, 8),
                 elements=st.floats(-5, 5, allow_nan=False, allow_infinity=False))


class TestSparsemax:
    def test_constant_is_uniform(self):
        np.testing.assert_allclose(sparsemax([2.5] * 4).scores, 0.25)

    def test_example(self):
        np.testing.assert_allclose(sparsemax([1.0, 0.5, -1.0]).scores, [0.75, 0.25, 0.0], atol=1e-12)

    def test_large_margin(self):
        p = sparsemax([10.0, 0.0, 0.0])
        np.testing.assert_array_equal(p.scores, [1.0, 0.0, 0.0])
        assert p.support == frozenset({0})

    def test_softmax_has_no_zero_where_sparsemax_does(self):
        z = [1.0, 0.5, -1.0]
        assert (softmax(z) > 0).all()
        assert (sparsemax(z).scores == 0).any()

    def test_errors(self):
        with pytest.raises(DimensionError):
            sparsemax([])
        with pytest.raises(NumericError):
            sparsemax([1.0, np.nan])
        with pytest.raises(NumericError):
            sparsemax([1.0, np.inf])

    @given(vectors)
    def test_on_simplex(self, z):
        p = sparsemax(z).scores
        assert (p >= 0).all()
        assert abs(p.sum() - 1) < 1e-9

    @given(vectors, st.floats(-100, 100))
    def test_translation_invariance(self, z, c):
        np.testing.assert_allclose(sparsemax(z + c).scores, sparsemax(z).scores, atol=1e-9)

    @given(vectors)
    def test_idempotent(self, z):
        p = sparsemax(z).scores
        np.testing.assert_allclose(sparsemax(p).scores, p, atol=1e-12)

    @given(vectors, st.floats(1.0, 10.0))
    def test_support_shrinks_with_scaling(self, z, a):
        # scaling scores up can only remove entries from the support
        assert sparsemax(a * z).support <= sparsemax(z).support

    @given(arrays(np.float64, st.integers(1, 7), elements=st.floats(-3, 3)))
    @settings(max_examples=60)
    def test_matches_oracle(self, z):
        np.testing.assert_allclose(sparsemax(z).scores, simplex_project_oracle(z).scores, atol=1e-9)


class TestOracle:
    def test_fixed_point(self):
        np.testing.assert_allclose(simplex_project_oracle([0.7, 0.3]).scores, [0.7, 0.3], atol=1e-15)

    def test_singleton(self):
        assert simplex_project_oracle([-42.0]).scores.tolist() == [1.0]
        assert sparsemax([-42.0]).scores.tolist() == [1.0]

    def test_scale_error(self):
        with pytest.raises(ScaleError):
            simplex_project_oracle(np.zeros(11))


class TestSoftmax:
    def test_constant(self):
        np.testing.assert_allclose(softmax([3.0, 3.0]), [0.5, 0.5])

    def test_closed_form(self):
        np.testing.assert_allclose(softmax([0.0, np.log(3)]), [0.25, 0.75], atol=1e-15)

    def test_stable(self):
        p = softmax([1000.0, 0.0])
        assert np.isfinite(p).all() and p[0] == pytest.approx(1.0)


class TestMaskedSparsemax:
    def test_mask_excludes(self):
        x = parameter(np.array([[5.0, 1.0, 0.5, -1.0]]))
        out = masked_sparsemax(x, np.array([[False, True, True, True]])).data
        np.testing.assert_allclose(out, [[0.0, 0.75, 0.25, 0.0]], atol=1e-12)

    def test_fully_masked_row(self):
        with pytest.raises(DimensionError):
            masked_sparsemax(parameter(np.zeros((2, 3))), np.array([[1, 1, 1], [0, 0, 0]], bool))

    def test_backward_matches_fd(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = parameter(rng.normal(size=(3, 5)))
            mask = rng.random((3, 5)) > 0.3
            mask[:, 0] = True
            w = rng.normal(size=(3, 5))
            assert grad_check(lambda: tsum(masked_sparsemax(x, mask) * w), [x]) < 1e-6

    @given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
                  elements=st.floats(-3, 3)))
    @settings(max_examples=40)
    def test_rows_match_vector_version(self, z):
        out = masked_sparsemax(parameter(z)).data
        for row, p in zip(z, out):
            np.testing.assert_allclose(p, sparsemax(row).scores, atol=1e-12)
