from collections import Counter

from hypothesis import given, settings, strategies as st
import numpy as np
import pytest

from diffuir.degradations import (PAPER_TASK_WEIGHTS, TASKS, DatasetSpec, box_blur, degrade,
                                  draw_tasks, equalize_histogram, haze, low_light, make_batch,
                                  make_split, synth_clean)
from diffuir.errors import ConfigError
from diffuir.metrics import psnr


def test_operator_examples():
    np.testing.assert_allclose(haze(np.full((3, 4, 4), 0.5), 0.6, 1.0), 0.7)
    assert low_light(np.array([0.81]), 2.0, 1.0)[0] == pytest.approx(0.6561)
    flat = np.full((3, 9, 9), 0.37)
    np.testing.assert_allclose(box_blur(flat, 3), flat, atol=1e-15)


def test_synth_clean_basics():
    a = synth_clean(4, 8)
    assert a.shape == (3, 8, 8) and a.min() >= 0 and a.max() <= 1
    np.testing.assert_array_equal(synth_clean(9), synth_clean(9))
    with pytest.raises(ConfigError):
        synth_clean(0, 7)


def test_clean_generator_balance():
    mean = np.mean([synth_clean(s) for s in range(1000)], axis=0)
    assert 0.3 <= mean.min() and mean.max() <= 0.7


@settings(max_examples=40, deadline=None)
@given(task=st.sampled_from(TASKS), seed=st.integers(0, 2**40))
def test_every_sample_degrades(task, seed):
    s = degrade(task, synth_clean(seed), seed + 1)
    assert s.Iin.min() >= 0 and s.Iin.max() <= 1
    assert s.I0.shape == s.Iin.shape
    np.testing.assert_array_equal(s.Ires, s.Iin - s.I0)
    p = psnr(s.Iin, s.I0)
    assert np.isfinite(p) and p < 40


def test_parameter_ranges():
    for seed in range(50):
        I0 = synth_clean(seed)
        lo = degrade("lowlight", I0, seed).params
        assert 1.8 <= lo["gamma"] <= 2.6 and 0.5 <= lo["gain"] <= 0.8
        hz = degrade("dehaze", I0, seed).params
        assert 0.4 <= hz["tau"] <= 0.8 and 0.8 <= hz["A"] <= 1.0
        assert degrade("deblur", I0, seed).params["k"] in (3, 5)


def test_additive_tasks_only_brighten():
    for task in ("derain", "desnow"):
        s = degrade(task, synth_clean(3), 5)
        assert (s.Ires >= -1e-15).all() and s.Ires.max() > 0.2


def test_unknown_task():
    with pytest.raises(ConfigError):
        degrade("desmoke", synth_clean(0), 0)


def test_mixing_frequencies():
    rng = np.random.default_rng(0)
    counts = Counter(draw_tasks(PAPER_TASK_WEIGHTS, 100_000, rng))
    for t, w in PAPER_TASK_WEIGHTS.items():
        assert abs(counts[t] / 100_000 - w) < 0.01


def test_single_task_weights():
    spec = DatasetSpec(task_weights=(1, 0, 0, 0, 0))
    assert {s.task for s in make_batch(spec, 30, 1)} == {"derain"}


@pytest.mark.parametrize("w", [(0.5, 0.5, 0.5, 0, 0), (1.2, -0.2, 0, 0, 0), {"desmoke": 1.0}])
def test_invalid_weights(w):
    with pytest.raises(ConfigError):
        DatasetSpec(task_weights=w)


def test_batch_determinism_and_defaults():
    spec = DatasetSpec()
    a, b = make_batch(spec, seed=3), make_batch(spec, seed=3)
    assert len(a) == 10
    for x, y in zip(a, b):
        assert x.task == y.task
        assert x.I0.tobytes() == y.I0.tobytes() and x.Iin.tobytes() == y.Iin.tobytes()


def test_splits_are_disjoint_and_balanced():
    spec = DatasetSpec(samples_per_task=4)
    test, train = make_split(spec, "test"), make_split(spec, "train")
    assert Counter(s.task for s in test) == {t: 4 for t in TASKS}
    assert not {s.I0.tobytes() for s in test} & {s.I0.tobytes() for s in train}
    with pytest.raises(ConfigError):
        make_split(spec, "val")


def test_equalization_option():
    I0 = synth_clean(1)
    plain = degrade("lowlight", I0, 2)
    eq = degrade("lowlight", I0, 2, equalize_lowlight=True)
    assert eq.Iin.mean() > plain.Iin.mean()
    assert equalize_histogram(plain.Iin).max() <= 1.0
