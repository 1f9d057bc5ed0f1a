"""
Tests for the shared ConvLSTM cell.
"""

import numpy as np
import pytest

from cycleseg.convlstm import ConvLSTMParams, ConvLSTMState, cell_step, gate_activations, init_state
from cycleseg.errors import ShapeError
from cycleseg.tensor import Tensor

SHAPE = (1, 4, 5, 5)


@pytest.fixture
def params(rng):
    return ConvLSTMParams.init(rng, in_channels=6, width=4)


def _zero(params):
    for p in params.parameters():
        p.assign(np.zeros(p.shape))
    return params


def _state(rng):
    return ConvLSTMState(Tensor(rng.normal(size=SHAPE)), Tensor(rng.normal(size=SHAPE)))


def test_zero_everything(params):
    _zero(params)
    zero = Tensor(np.zeros(SHAPE))
    prev = ConvLSTMState(zero, zero)
    gates = gate_activations(zero, prev, params)
    for name in ("i", "f", "o"):
        assert np.all(gates[name].data == 0.5)
    assert np.all(gates["c"].data == 0.0)
    state = cell_step(zero, prev, params)
    assert np.all(state.cell.data == 0.0)
    assert np.all(state.hidden.data == 0.0)


def test_memory_passthrough(params, rng):
    _zero(params)
    params.b_f.assign(np.full(4, 20.0))
    params.b_i.assign(np.full(4, -20.0))
    prev = _state(rng)
    state = cell_step(Tensor(rng.normal(size=SHAPE)), prev, params)
    assert np.allclose(state.cell.data, prev.cell.data, atol=1e-6)


def test_activation_bounds(params, rng):
    prev = _state(rng)
    x = Tensor(rng.normal(size=SHAPE) * 3)
    gates = gate_activations(x, prev, params)
    for name in ("i", "f", "o"):
        assert np.all((gates[name].data > 0) & (gates[name].data < 1))
    state = cell_step(x, prev, params)
    assert np.all(np.abs(state.hidden.data) <= np.abs(np.tanh(state.cell.data)))
    assert np.all(np.abs(state.hidden.data) <= 1.0)


def test_standard_candidate_applies_gate_once(params, rng):
    prev = _state(rng)
    x = Tensor(rng.normal(size=SHAPE))
    gates = gate_activations(x, prev, params)
    i, f, c = gates["i"].data, gates["f"].data, gates["c"].data
    doubled = cell_step(x, prev, params)
    single = cell_step(x, prev, params, standard_candidate=True)
    assert np.allclose(doubled.cell.data, f * prev.cell.data + i * i * c, atol=1e-14)
    assert np.allclose(single.cell.data, f * prev.cell.data + i * c, atol=1e-14)


def test_deterministic(params, rng):
    prev = _state(rng)
    x = Tensor(rng.normal(size=SHAPE))
    assert np.array_equal(cell_step(x, prev, params).hidden.data, cell_step(x, prev, params).hidden.data)


def test_input_shape_mismatch(params, rng):
    with pytest.raises(ShapeError):
        cell_step(Tensor(np.zeros((1, 4, 3, 3))), _state(rng), params)


def test_state_shapes_must_match():
    with pytest.raises(ShapeError):
        ConvLSTMState(Tensor(np.zeros((1, 4, 2, 2))), Tensor(np.zeros((1, 4, 3, 3))))


class TestInitState:
    def test_zero_feature(self, params):
        state = init_state(Tensor(np.zeros((1, 6, 5, 5))), params)
        assert np.all(state.hidden.data == 0.0)
        assert state.hidden is state.cell

    def test_shared_projection(self, params, rng):
        feature = rng.normal(size=(1, 6, 5, 5))
        a = init_state(Tensor(feature), params)
        b = init_state(Tensor(feature.copy()), params)
        assert np.array_equal(a.cell.data, b.cell.data)

    def test_wrong_channels(self, params):
        with pytest.raises(ShapeError):
            init_state(Tensor(np.zeros((1, 4, 5, 5))), params)
