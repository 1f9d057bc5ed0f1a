"""
Tests for Lovász-Softmax and cross-entropy, including the definitional
extension oracle.
"""

import itertools
import math

import numpy as np
import pytest

from cycleseg import settings
from cycleseg.errors import LabelError, ShapeError
from cycleseg.gradcheck import check_gradients
from cycleseg.loss import (
    cross_entropy,
    error_vector,
    jaccard_set_loss,
    lovasz_extension,
    lovasz_extension_oracle,
    lovasz_grad,
    lovasz_softmax,
    loss_by_name,
)
from cycleseg.tensor import Parameter, Tensor


def _logits_for(mask, margin):
    """Logits favouring the mask's class by `margin` at every pixel."""
    fg = np.asarray(mask, dtype=float)
    return Tensor(np.stack([(1 - fg) * margin, fg * margin])[None])


@pytest.fixture
def mask():
    m = np.zeros((4, 4), dtype=np.uint8)
    m[1:3, 1:4] = 1
    return m


class TestLovaszExtension:
    def test_matches_definition_on_random_vectors(self, rng):
        for _ in range(200):
            n = int(rng.integers(1, 11))
            errors = rng.uniform(size=n)
            fg = rng.uniform(size=n) > 0.5
            assert lovasz_extension(errors, fg) == pytest.approx(lovasz_extension_oracle(errors, fg), abs=1e-10)

    def test_equals_set_function_on_vertices(self, rng):
        fg_patterns = [rng.uniform(size=8) > 0.5 for _ in range(4)] + [np.zeros(8, bool), np.ones(8, bool)]
        for bits in itertools.product((0.0, 1.0), repeat=8):
            errors = np.array(bits)
            for fg in fg_patterns:
                expected = jaccard_set_loss(errors.astype(bool), fg)
                assert lovasz_extension(errors, fg) == pytest.approx(expected, abs=1e-12)

    def test_pixel_permutation_invariance(self, rng):
        errors = rng.uniform(size=9)
        fg = rng.uniform(size=9) > 0.4
        perm = rng.permutation(9)
        assert lovasz_extension(errors[perm], fg[perm]) == pytest.approx(lovasz_extension(errors, fg), abs=1e-12)

    def test_grad_sums_to_full_loss(self):
        g = lovasz_grad([1, 0, 1, 1, 0])
        assert g.sum() == pytest.approx(1.0)
        assert np.all(g >= 0)


class TestErrorVector:
    def test_errors_and_signs(self):
        probs = np.array([[0.2, 0.8], [0.9, 0.1], [0.6, 0.4]])
        ev = error_vector(probs, np.array([1, 0, 1]), cls=1)
        assert np.allclose(ev.errors, [0.2, 0.1, 0.6])
        assert ev.signed_labels.tolist() == [1, -1, 1]
        assert ev.foreground.tolist() == [True, False, True]


class TestLovaszSoftmax:
    def test_perfect_prediction(self, mask):
        assert lovasz_softmax(_logits_for(mask, 50.0), mask).item() == pytest.approx(0.0, abs=1e-12)

    def test_completely_wrong(self, mask):
        loss = lovasz_softmax(_logits_for(1 - mask, 50.0), mask).item()
        assert loss == pytest.approx(1.0, abs=1e-9)

    def test_absent_class_is_skipped(self):
        mask = np.ones((3, 3), dtype=np.uint8)
        # background is absent, so only the foreground term counts
        loss = lovasz_softmax(_logits_for(mask, 50.0), mask).item()
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_non_negative(self, rng, mask):
        for _ in range(10):
            logits = Tensor(rng.normal(size=(1, 2, 4, 4)) * 3)
            assert lovasz_softmax(logits, mask).item() >= 0.0

    def test_gradient(self, rng, mask):
        logits = Parameter(rng.normal(size=(1, 2, 4, 4)))
        worst = check_gradients(lambda: lovasz_softmax(logits, mask), [logits],
                                settings.GRADCHECK_STEP_COMPOSED, max_entries=32)
        assert worst < 1e-4

    def test_label_error(self):
        bad = np.full((2, 2), 2)
        with pytest.raises(LabelError):
            lovasz_softmax(Tensor(np.zeros((1, 2, 2, 2))), bad)

    def test_shape_error(self, mask):
        with pytest.raises(ShapeError):
            lovasz_softmax(Tensor(np.zeros((1, 2, 3, 3))), mask)


class TestCrossEntropy:
    def test_uniform_logits(self, mask):
        assert cross_entropy(Tensor(np.zeros((1, 2, 4, 4))), mask).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_confident_and_correct(self, mask):
        assert cross_entropy(_logits_for(mask, 40.0), mask).item() == pytest.approx(0.0, abs=1e-12)

    def test_gradient(self, rng, mask):
        logits = Parameter(rng.normal(size=(1, 2, 4, 4)))
        worst = check_gradients(lambda: cross_entropy(logits, mask), [logits],
                                settings.GRADCHECK_STEP_PRIMITIVE, max_entries=32)
        assert worst < 1e-6

    def test_label_error(self):
        with pytest.raises(LabelError):
            cross_entropy(Tensor(np.zeros((1, 2, 2, 2))), np.array([[0, 1], [1, -1]]))


def test_loss_by_name():
    assert loss_by_name("lovasz") is lovasz_softmax
    with pytest.raises(ValueError):
        loss_by_name("dice")
