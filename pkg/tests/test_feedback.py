import numpy as np
import pytest

from neuroloop.codec import EncodingParams, ParameterError, stage2_layout
from neuroloop.feedback import (
    FeedbackKind, FeedbackParams, plasticity_feedback, reinforcing_feedback, select_feedback,
)


@pytest.mark.parametrize("reward,kind", [
    (2.0, FeedbackKind.REINFORCING),
    (0.0, FeedbackKind.PLASTICITY),
    (-0.2, FeedbackKind.PLASTICITY),
    (1e-9, FeedbackKind.REINFORCING),
])
def test_select_feedback(reward, kind):
    assert select_feedback(reward) is kind


def test_inherits_stimulation_settings():
    p = FeedbackParams.inherit(EncodingParams(amplitude=1.0, pulse_width=160.0))
    m = reinforcing_feedback(1.0, stage2_layout(), p)
    assert (m.amplitude, m.pulse_width) == (1.0, 160.0)


def test_reinforcing_structure_two_second_interaction():
    layout = stage2_layout()
    m = reinforcing_feedback(2.0, layout, FeedbackParams())
    assert m.bins == 4000
    for ch in layout.active:
        t = m.onset_times(ch)
        assert len(t) == 40
        bursts = t.reshape(5, 8)
        assert np.all(np.diff(bursts, axis=1) == 10)
        assert np.allclose(bursts[:, 0] + 40, [(k + 0.5) * 800 for k in range(5)])
    idle = [c for c in range(64) if c not in layout.active]
    assert m.onsets[idle].sum() == 0


def test_reinforcing_deterministic():
    a = reinforcing_feedback(1.0, stage2_layout(), FeedbackParams())
    b = reinforcing_feedback(1.0, stage2_layout(), FeedbackParams())
    assert np.array_equal(a.onsets, b.onsets)


def test_reinforcing_rejects_short_window():
    with pytest.raises(ParameterError):
        reinforcing_feedback(0.15, stage2_layout(), FeedbackParams())
    # exactly fits: 5 x 80 ms in 400 ms
    m = reinforcing_feedback(0.2, stage2_layout(), FeedbackParams())
    assert m.onsets[stage2_layout().encoding[0]].sum() == 40


def test_plasticity_activation_fraction():
    layout = stage2_layout()
    p = FeedbackParams()
    rng = np.random.default_rng(2024)
    n_active = len(layout.active)
    fractions = []
    for _ in range(1000):
        m = plasticity_feedback(0.5, layout, p, rng)
        fractions.append((m.onsets[list(layout.active)].sum(axis=1) > 0).mean())
    mean = np.mean(fractions)
    sigma = np.sqrt((1 / 3) * (2 / 3) / (1000 * n_active))
    assert abs(mean - 1 / 3) <= 3 * sigma


def test_plasticity_isi_bounds_and_scope():
    layout = stage2_layout()
    rng = np.random.default_rng(5)
    idle = [c for c in range(64) if c not in layout.active]
    isis = []
    for _ in range(200):
        m = plasticity_feedback(2.0, layout, FeedbackParams(), rng)
        assert m.bins == 4000
        assert m.onsets[idle].sum() == 0
        for ch in layout.active:
            t = m.onset_times(ch)
            isis.extend(np.diff(t).tolist())
    isis = np.array(isis)
    assert len(isis) > 1000
    assert isis.min() >= 40 and isis.max() <= 333.4


def test_plasticity_seeded():
    a = plasticity_feedback(1.0, stage2_layout(), FeedbackParams(), np.random.default_rng(9))
    b = plasticity_feedback(1.0, stage2_layout(), FeedbackParams(), np.random.default_rng(9))
    assert np.array_equal(a.onsets, b.onsets)
