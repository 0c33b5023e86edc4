import numpy as np
import pytest

import config
from core.gradients import GradientSet
from core.optimizer import AdamOptimizer
from utils.seeding import derive_rng


def gradient_like(model, fill):
    arrays = {group: {name: np.full(param.shape, fill, dtype=np.float64) for name, param in params.items()}
              for group, params in model.parameter_groups().items()}
    return GradientSet.from_arrays(arrays)


def test_first_step_moves_by_the_learning_rate(make_model):
    model = make_model(dtype=np.float64)
    before = model.full_arrays()
    optimizer = AdamOptimizer(model, learning_rate=0.01)
    optimizer.step(gradient_like(model, 3.0))
    for group, arrays in model.full_arrays().items():
        for name, values in arrays.items():
            np.testing.assert_allclose(before[group][name] - values, 0.01, rtol=1e-6)


def test_learning_rate_override_applies_to_one_step(make_model):
    model = make_model(dtype=np.float64)
    before = model.full_arrays()
    optimizer = AdamOptimizer(model, learning_rate=0.01)
    optimizer.step(gradient_like(model, 3.0), groups=("intermediate",), learning_rate=0.005)
    moved = model.full_arrays()
    for name, values in moved["intermediate"].items():
        np.testing.assert_allclose(before["intermediate"][name] - values, 0.005, rtol=1e-6)
    assert optimizer.learning_rate == 0.01


def test_step_limited_to_groups(make_model):
    model = make_model()
    before = model.full_arrays()
    optimizer = AdamOptimizer(model)
    optimizer.step(gradient_like(model, 1.0), groups=("intermediate",))
    after = model.full_arrays()
    for name in before["extractor"]:
        np.testing.assert_array_equal(after["extractor"][name], before["extractor"][name])
    assert all(key[0] == "intermediate" for key in optimizer.state)
    assert all(after["intermediate"][name].dtype == np.float32 for name in after["intermediate"])


def test_reset_forgets_moments(make_model):
    model = make_model()
    optimizer = AdamOptimizer(model)
    optimizer.step(gradient_like(model, 1.0))
    optimizer.reset(("extractor", "classifier"))
    assert {key[0] for key in optimizer.state} == {"intermediate"}
    assert all(moments.step == 1 for moments in optimizer.state.values())
    optimizer.set_learning_rate(0.5)
    assert optimizer.learning_rate == 0.5


def test_derived_streams_are_keyed():
    a = derive_rng(1, "partition", 2).random(4)
    assert np.array_equal(a, derive_rng(1, "partition", 2).random(4))
    assert not np.array_equal(a, derive_rng(1, "partition", 3).random(4))
    assert not np.array_equal(a, derive_rng(1, "sample", 2).random(4))
    assert not np.array_equal(a, derive_rng(2, "partition", 2).random(4))


def test_thread_count(monkeypatch):
    monkeypatch.setenv(config.THREADS_ENV_VAR, "3")
    assert config.thread_count() == 3
    monkeypatch.setenv(config.THREADS_ENV_VAR, "0")
    assert config.thread_count() == 1
    monkeypatch.delenv(config.THREADS_ENV_VAR)
    assert config.thread_count() >= 1


@pytest.mark.parametrize("num_clients", [1, 10, 13])
def test_default_variant_assignment_cycles(num_clients):
    assignment = config.default_variant_assignment(num_clients)
    assert sorted(assignment) == list(range(num_clients))
    assert assignment[0] == "A"
    if num_clients >= 10:
        assert "".join(assignment[k] for k in range(10)) == "AABCCDDEEE"
