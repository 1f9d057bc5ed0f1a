"""
Tests for cycle refinement and the full forward pass.
"""

import numpy as np
import pytest

from cycleseg.convlstm import cell_step, init_state
from cycleseg.crm import CRMConfig, LevelParams, forward_full, refine
from cycleseg.errors import GroupTooSmall, InvalidConfig
from cycleseg.layers import EncoderConfig
from cycleseg.model import CycleSegNet
from cycleseg.rcm import rcm_group_forward
from cycleseg.tensor import Tensor

C = 4


@pytest.fixture
def level(rng):
    return LevelParams.init(rng, C)


def _states(level, rng, k=2):
    return [init_state(Tensor(rng.normal(size=(1, C, 4, 4))), level.lstm) for _ in range(k)]


class TestCRMConfig:
    @pytest.mark.parametrize("kwargs,error", [
        ({"steps": 0}, InvalidConfig),
        ({"branches": 1}, GroupTooSmall),
        ({"exchange": "M_add"}, InvalidConfig),
        ({"exchange": "M_cat", "branches": 3}, InvalidConfig),
        ({"roi": (0, 2)}, InvalidConfig),
    ])
    def test_invalid(self, kwargs, error):
        with pytest.raises(error):
            CRMConfig(**kwargs)


class TestRefine:
    def test_identical_branches_stay_identical(self, level, rng):
        feature = rng.normal(size=(1, C, 4, 4))
        states = [init_state(Tensor(feature), level.lstm), init_state(Tensor(feature.copy()), level.lstm)]
        result = refine(states, CRMConfig(steps=4), level)
        for step in result.trace:
            assert np.array_equal(step[0].hidden.data, step[1].hidden.data)
            assert np.array_equal(step[0].cell.data, step[1].cell.data)

    def test_single_step_is_exchange_then_cell(self, level, rng):
        states = _states(level, rng)
        result = refine(states, CRMConfig(steps=1), level)
        cells = [s.cell for s in states]
        for b in range(2):
            x = rcm_group_forward(b, cells, level.exchange)
            manual = cell_step(x, states[b], level.lstm)
            assert np.array_equal(result.states[b].hidden.data, manual.hidden.data)

    def test_trace_length(self, level, rng):
        result = refine(_states(level, rng, k=3), CRMConfig(steps=5, branches=3), level)
        assert len(result.trace) == 5
        assert all(len(step) == 3 for step in result.trace)
        assert result.states is result.trace[-1]

    @pytest.mark.parametrize("kind", ["M_cat", "M_mul", "none"])
    def test_baseline_exchanges_run(self, level, rng, kind):
        result = refine(_states(level, rng), CRMConfig(steps=2, exchange=kind), level)
        assert result.states[0].hidden.shape == (1, C, 4, 4)

    def test_too_few_branches(self, level, rng):
        with pytest.raises(GroupTooSmall):
            refine(_states(level, rng, k=1), CRMConfig(steps=1), level)


class TestForwardFull:
    def test_output_shape_at_default_size(self, rng):
        model = CycleSegNet.init(EncoderConfig(), levels=1, seed=0)
        images = [Tensor(rng.uniform(size=(1, 3, 64, 64))) for _ in range(2)]
        result = forward_full(images, model, CRMConfig(steps=1))
        assert [lg.shape for lg in result.logits] == [(1, 2, 64, 64)] * 2

    def test_identical_images(self, tiny_model, tiny_crm, rng):
        image = rng.uniform(size=(1, 3, 16, 16))
        result = forward_full([Tensor(image), Tensor(image.copy())], tiny_model, tiny_crm)
        assert np.array_equal(result.logits[0].data, result.logits[1].data)

    def test_branch_permutation_equivariance(self, tiny_model, tiny_crm, image_pair):
        forward = forward_full(image_pair, tiny_model, tiny_crm).logits
        swapped = forward_full(image_pair[::-1], tiny_model, tiny_crm).logits
        assert np.array_equal(forward[0].data, swapped[1].data)
        assert np.array_equal(forward[1].data, swapped[0].data)

    def test_group_of_three(self, tiny_model, rng):
        images = [Tensor(rng.uniform(size=(1, 3, 16, 16))) for _ in range(3)]
        result = forward_full(images, tiny_model, CRMConfig(steps=1, branches=3))
        assert len(result.logits) == 3

    def test_per_step_logits(self, tiny_model, image_pair):
        cfg = CRMConfig(steps=3)
        result = forward_full(image_pair, tiny_model, cfg, per_step=True)
        assert len(result.step_logits) == 3
        assert np.array_equal(result.step_logits[-1][0].data, result.logits[0].data)

    def test_multi_level(self, tiny_encoder, image_pair, tiny_crm):
        model = CycleSegNet.init(tiny_encoder, levels=2, seed=1, zero_head=False)
        result = forward_full(image_pair, model, tiny_crm)
        assert result.logits[0].shape == (1, 2, 16, 16)

    def test_single_image(self, tiny_model, tiny_crm, image_pair):
        with pytest.raises(GroupTooSmall):
            forward_full(image_pair[:1], tiny_model, tiny_crm)
