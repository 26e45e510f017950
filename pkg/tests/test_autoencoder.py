import numpy as np
import pytest
import torch

import flashcards as fc
from flashcards import autoencoder as ae
from flashcards.errors import ConfigError, DataError, NumericError

# (name, parameters, latent) triples the family must reproduce exactly
FAMILY_TABLE = [
    ("Blk_4_fil_16", 24_083, 64),
    ("Blk_4_fil_32", 94_243, 128),
    ("Blk_4_fil_64", 372_803, 256),
    ("Blk_4_fil_128", 1_482_883, 512),
    ("Blk_3_fil_64", 298_947, 1024),
    ("Blk_2_fil_32", 57_251, 2048),
]


@pytest.mark.parametrize("name,params,latent", FAMILY_TABLE)
def test_family_parameter_counts(name, params, latent):
    config = fc.AEConfig.from_name(name)
    assert config.latent_dim == latent
    assert fc.build_ae(config).parameter_count() == params


def test_too_many_blocks_rejected():
    with pytest.raises(ConfigError, match="underflow"):
        fc.AEConfig(num_blocks=6, num_filters=4)


def test_latent_dim_mismatch_rejected():
    with pytest.raises(ConfigError, match="latent"):
        fc.AEConfig(num_blocks=4, num_filters=16, latent_dim=100)


def test_bad_family_name():
    with pytest.raises(ConfigError):
        fc.AEConfig.from_name("Conv_4_64")


def test_init_deterministic(tiny_config):
    a = fc.build_ae(tiny_config, seed=9)
    b = fc.build_ae(tiny_config, seed=9)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)
    c = fc.build_ae(tiny_config, seed=10)
    assert any(not torch.equal(pa, pc)
               for pa, pc in zip(a.parameters(), c.parameters()))


def test_forward_contract(tiny_config, blob_sets):
    train, _ = blob_sets
    model = fc.build_ae(tiny_config, seed=0)
    out = fc.forward(model, train.images[:6])
    assert out.shape == (6, 32, 32, 3)
    assert out.min() > 0.0 and out.max() < 1.0
    assert np.array_equal(out, fc.forward(model, train.images[:6]))


def test_forward_shape_mismatch(tiny_config):
    model = fc.build_ae(tiny_config, seed=0)
    with pytest.raises(DataError):
        fc.forward(model, np.zeros((2, 16, 16, 3), np.float32))


def test_encode_contract(tiny_config, blob_sets):
    train, _ = blob_sets
    model = fc.build_ae(tiny_config, seed=0)
    latents = fc.encode(model, train.images[:5])
    assert latents.shape == (5, tiny_config.latent_dim)
    assert np.abs(latents).max() < 1.0  # tanh range
    doubled = np.concatenate([train.images[:3], train.images[:3]])
    z = fc.encode(model, doubled)
    assert np.array_equal(z[:3], z[3:])


def test_loss_decreases_first_epochs(tiny_trained):
    _, report = tiny_trained
    train_curve = [h["train_mae"] for h in report.history[:5]]
    assert train_curve[-1] < train_curve[0]


def test_training_deterministic(tiny_config, blob_sets):
    train, _ = blob_sets
    tr, va = fc.train_val_split(train, 0.2, seed=0)
    runs = []
    for _ in range(2):
        model = fc.build_ae(tiny_config, seed=4)
        rep = fc.train_ae(model, tr.images[:64], va.images[:16],
                          fc.TrainHyper(epochs=3, batch_size=32, seed=4))
        runs.append((rep.history, ae.params_blob(model)))
    assert runs[0][0] == runs[1][0]
    assert runs[0][1] == runs[1][1]


def test_replay_weight_zero_matches_plain(tiny_config, blob_sets):
    train, _ = blob_sets
    tr, va = fc.train_val_split(train, 0.2, seed=0)
    cards = fc.generate_patterns(fc.PatternSpec(count=32, seed=7))
    out = []
    for replay, weight in ((None, 1.0), (cards, 0.0)):
        model = fc.build_ae(tiny_config, seed=4)
        fc.train_ae(model, tr.images[:64], va.images[:16],
                    fc.TrainHyper(epochs=3, batch_size=32, seed=4),
                    replay=replay, replay_weight=weight)
        out.append(ae.params_blob(model))
    assert out[0] == out[1]


def test_replay_history_keys(tiny_config, blob_sets):
    train, _ = blob_sets
    tr, va = fc.train_val_split(train, 0.2, seed=0)
    cards = fc.generate_patterns(fc.PatternSpec(count=40, seed=7))
    model = fc.build_ae(tiny_config, seed=4)
    rep = fc.train_ae(model, tr.images[:64], va.images[:16],
                      fc.TrainHyper(epochs=2, batch_size=32, seed=4),
                      replay=cards, replay_weight=1.0)
    assert "replay_mae" in rep.history[0]
    assert "replay_holdout_mae" in rep.history[0]
    assert rep.history[0]["monitor"] > rep.history[0]["val_mae"]


def test_early_stop_restores_best(tiny_config, blob_sets):
    train, _ = blob_sets
    tr, va = fc.train_val_split(train, 0.2, seed=0)
    model = fc.build_ae(tiny_config, seed=1)
    rep = fc.train_ae(model, tr.images[:48], va.images[:16],
                      fc.TrainHyper(epochs=12, batch_size=16,
                                    early_stop_patience=3, seed=1))
    final_val = ae.evaluate_mae(model, va.images[:16])
    best_seen = min(h["monitor"] for h in rep.history)
    assert final_val == pytest.approx(best_seen, abs=1e-6)
    assert rep.history[rep.best_epoch]["monitor"] == pytest.approx(best_seen)


def test_memorizes_single_sample(tiny_config, blob_sets):
    train, _ = blob_sets
    one = train.images[:1]
    model = fc.build_ae(fc.AEConfig(num_blocks=4, num_filters=8), seed=0)
    fc.train_ae(model, one, one,
                fc.TrainHyper(epochs=400, batch_size=1,
                              early_stop_patience=400, seed=0))
    assert ae.evaluate_mae(model, one) < 0.02


def test_nan_loss_aborts(tiny_config, blob_sets):
    train, _ = blob_sets
    model = fc.build_ae(tiny_config, seed=0)
    with torch.no_grad():
        next(model.parameters())[0, 0, 0, 0] = float("nan")
    with pytest.raises(NumericError, match="epoch 0"):
        fc.train_ae(model, train.images[:16], train.images[16:24],
                    fc.TrainHyper(epochs=1, batch_size=8, seed=0))


def test_empty_replay_with_weight_rejected(tiny_config, blob_sets):
    train, _ = blob_sets
    model = fc.build_ae(tiny_config, seed=0)
    with pytest.raises(DataError):
        fc.train_ae(model, train.images[:16], train.images[16:24],
                    fc.TrainHyper(epochs=1, batch_size=8, seed=0),
                    replay=train.images[:0], replay_weight=1.0)


def test_recon_bounds_ordered(tiny_trained):
    _, report = tiny_trained
    eps1, eps2 = report.recon_bounds
    assert 0.0 <= eps1 <= eps2


def test_checkpoint_roundtrip(tmp_path, tiny_trained, blob_sets):
    model, report = tiny_trained
    train, _ = blob_sets
    path = tmp_path / "model.ckpt"
    fc.save_checkpoint(path, model, model.config.to_dict(), report.history)
    loaded, config, history = fc.load_checkpoint(path)
    assert config.name == model.config.name
    assert history == report.history
    assert np.array_equal(fc.forward(loaded, train.images[:4]),
                          fc.forward(model, train.images[:4]))


def test_checkpoint_blob_size_mismatch(tmp_path, tiny_trained):
    model, _ = tiny_trained
    other = fc.AEConfig(num_blocks=4, num_filters=4)
    path = tmp_path / "bad.ckpt"
    fc.save_checkpoint(path, model, other.to_dict())  # config lies about arch
    with pytest.raises(DataError, match="mismatch"):
        fc.load_checkpoint(path)


def test_model_id_stable(tiny_trained):
    model, _ = tiny_trained
    assert ae.model_id(model) == ae.model_id(model)
    fresh = fc.build_ae(model.config, seed=123)
    assert ae.model_id(fresh) != ae.model_id(model)
