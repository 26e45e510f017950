import numpy as np
import pytest

import flashcards as fc
from flashcards import autoencoder as ae
from flashcards import capture
from flashcards.errors import ConfigError, DataError


def _config(n=32, r=10, seed=5, **kw):
    return capture.FlashcardConfig(
        n_flashcards=n, iterations=r,
        pattern=fc.PatternSpec(seed=seed, **kw),
    )


def test_recursive_pass_zero_is_identity(tiny_trained):
    model, _ = tiny_trained
    x = fc.generate_patterns(fc.PatternSpec(count=4, seed=1))
    assert np.array_equal(capture.recursive_pass(model, x, 0), x)


def test_recursive_pass_composition(tiny_trained):
    model, _ = tiny_trained
    x = fc.generate_patterns(fc.PatternSpec(count=4, seed=2))
    whole = capture.recursive_pass(model, x, 5)
    split = capture.recursive_pass(model, capture.recursive_pass(model, x, 3), 2)
    assert np.array_equal(whole, split)


def test_recursive_pass_negative_rejected(tiny_trained):
    model, _ = tiny_trained
    with pytest.raises(ConfigError):
        capture.recursive_pass(model, np.zeros((1, 32, 32, 3), np.float32), -1)


def test_construct_deterministic(tiny_trained):
    model, _ = tiny_trained
    a = capture.construct_flashcards(model, _config())
    b = capture.construct_flashcards(model, _config())
    assert np.array_equal(a.images, b.images)
    assert a.source_model_id == b.source_model_id
    assert np.array_equal(a.delta_mae, b.delta_mae)


def test_construct_leaves_model_untouched(tiny_trained):
    model, _ = tiny_trained
    before = ae.model_id(model)
    capture.construct_flashcards(model, _config(n=16))
    assert ae.model_id(model) == before


def test_construct_r_zero_returns_raw_patterns(tiny_trained):
    model, _ = tiny_trained
    cards = capture.construct_flashcards(model, _config(n=3, r=0))
    raw = fc.generate_patterns(fc.PatternSpec(count=3, seed=5))
    assert np.array_equal(cards.images, raw)
    assert cards.delta_mae is None
    with pytest.raises(DataError):
        cards.bounds


def test_construct_from_untrained_model_allowed(tiny_config):
    model = fc.build_ae(tiny_config, seed=42)  # negative control, no guard
    cards = capture.construct_flashcards(model, _config(n=4, r=3))
    assert cards.images.shape == (4, 32, 32, 3)


def test_delta_shrinks_with_iterations(tiny_trained):
    model, _ = tiny_trained
    x = fc.generate_patterns(fc.PatternSpec(count=24, seed=3))
    f1 = capture.recursive_pass(model, x, 1)
    f9 = capture.recursive_pass(model, x, 9)
    f10 = capture.recursive_pass(model, f9, 1)
    early = np.abs(f1.astype(np.float64) - x).mean()
    late = np.abs(f10.astype(np.float64) - f9).mean()
    assert late < early


def test_delta_curve_settles_after_three_passes(tiny_trained, blob_sets):
    """Soft property: past r=3 the per-pass change should not grow, in at
    least 9 of 10 seeded runs."""
    model, _ = tiny_trained
    train, _ = blob_sets
    settled = 0
    for seed in range(10):
        report = capture.sweep_r(model, _config(n=24, seed=seed),
                                 train.images, r_max=7)
        deltas = report.delta_mae_curve
        if all(deltas[r] <= deltas[r - 1] * (1 + 1e-6) for r in range(4, 8)):
            settled += 1
    assert settled >= 9


def test_flashcard_set_roundtrip(tmp_path, tiny_trained):
    model, _ = tiny_trained
    cards = capture.construct_flashcards(model, _config(n=8, r=2))
    path = tmp_path / "cards.fct"
    cards.save(path)
    back = capture.FlashcardSet.load(path)
    assert np.array_equal(back.images, cards.images)
    assert back.source_model_id == cards.source_model_id
    assert back.r_used == 2
    assert np.allclose(back.delta_mae, cards.delta_mae)


def test_flashcard_set_tamper_detection(tmp_path, tiny_trained):
    model, _ = tiny_trained
    cards = capture.construct_flashcards(model, _config(n=4, r=1))
    path = tmp_path / "cards.fct"
    cards.save(path)
    blob = bytearray(path.read_bytes())
    blob[-1] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(DataError, match="hash"):
        capture.FlashcardSet.load(path)


def test_sweep_requires_rmax(tiny_trained, blob_sets):
    model, _ = tiny_trained
    train, _ = blob_sets
    with pytest.raises(ConfigError):
        capture.sweep_r(model, _config(), train.images, r_max=1)


def test_sweep_curve_shapes(tiny_trained, blob_sets):
    model, _ = tiny_trained
    train, _ = blob_sets
    report = capture.sweep_r(model, _config(n=40), train.images, r_max=6,
                             epsilon1=0.05)
    assert report.r_values == list(range(7))
    assert len(report.flsd_curve) == 7
    assert len(report.delta_mae_curve) == 7
    assert np.isnan(report.delta_mae_curve[0])
    assert 1 <= report.recommended_r <= 6
    assert report.p1_satisfied in (True, False)


def test_sweep_self_reference_hits_zero(tiny_trained):
    model, _ = tiny_trained
    fixed_r = 3
    cards = capture.construct_flashcards(model, _config(n=40, r=fixed_r))
    report = capture.sweep_r(model, _config(n=40), cards.images, r_max=5)
    assert report.flsd_curve[fixed_r] <= 1e-6


def test_sweep_p1_bookkeeping_recomputable(tiny_trained):
    model, _ = tiny_trained
    report = capture.sweep_r(model, _config(n=20),
                             fc.generate_patterns(fc.PatternSpec(count=30, seed=8)),
                             r_max=4, epsilon1=0.5)
    # independent recomputation of the per-pass deltas
    x = fc.generate_patterns(fc.PatternSpec(count=20, seed=5))
    for r in range(1, 5):
        nxt = fc.forward(model, x)
        per_sample = np.abs(nxt.astype(np.float64) - x).mean(axis=(1, 2, 3))
        assert report.delta_mae_curve[r] == pytest.approx(per_sample.mean(), abs=1e-9)
        assert report.delta_max_curve[r] == pytest.approx(per_sample.max(), abs=1e-9)
        x = nxt
    gamma2 = report.delta_max_curve[report.recommended_r]
    assert report.p1_satisfied == (gamma2 < 0.5)


def test_sweep_trained_vs_untrained_minimum(tiny_trained, tiny_config, blob_sets):
    """An untrained model's latent-distance curve has no pronounced dip."""
    trained, _ = tiny_trained
    untrained = fc.build_ae(tiny_config, seed=77)
    train, _ = blob_sets

    def min_over_median(model):
        rep = capture.sweep_r(model, _config(n=64, seed=21), train.images, r_max=12)
        curve = np.array(rep.flsd_curve[1:])
        return curve.min() / np.median(curve)

    assert min_over_median(trained) < min_over_median(untrained)
