import numpy as np
import pytest

from voxmamba.errors import ConfigError, DivergenceError
from voxmamba.tensor import Tensor
from voxmamba.train import (RAdam, dice_ce_loss, fit, linear_lr,
                            make_optimizer, one_hot, predict_labels,
                            train_step)
from voxmamba.unet import VariantConfig, build_variant
from voxmamba.volio import SynthTaskSpec, generate


def _micro_model(seed=0, classes=2, variant="baseline"):
    cfg = VariantConfig(variant=variant, stages=2, widths=(4, 8),
                        crop=(8, 8, 8), classes=classes)
    return build_variant(cfg, seed=seed)


def _blob_data(n=2, dims=(8, 8, 8)):
    spec = SynthTaskSpec(kind="blobs", dims=dims, classes=2, seed=3)
    return generate(spec, n)


def test_one_hot():
    oh = one_hot(np.array([[0, 2], [1, 1]]), 3)
    assert oh.shape == (4, 3)
    assert np.array_equal(oh.argmax(axis=1), [0, 2, 1, 1])


def test_loss_perfect_prediction_is_near_zero():
    labels = (np.random.default_rng(0).random((6, 6, 6)) < 0.4).astype(int)
    logits = np.where(one_hot(labels, 2).reshape(6, 6, 6, 2) > 0, 50.0, -50.0)
    loss = dice_ce_loss(Tensor(logits), labels)
    assert float(loss.data) < 1e-4


def test_loss_decreases_with_better_prediction():
    rng = np.random.default_rng(1)
    labels = (rng.random((6, 6, 6)) < 0.4).astype(int)
    good = one_hot(labels, 2).reshape(6, 6, 6, 2) * 4 - 2
    bad = rng.standard_normal((6, 6, 6, 2))
    assert (float(dice_ce_loss(Tensor(good), labels).data)
            < float(dice_ce_loss(Tensor(bad), labels).data))


def test_linear_schedule():
    assert linear_lr(3e-4, 0, 300) == 3e-4
    assert abs(linear_lr(3e-4, 150, 300) - 1.5e-4) < 1e-18
    assert abs(linear_lr(3e-4, 299, 300) - 3e-4 / 300) < 1e-18


def test_radam_rectification_warmup():
    # for the first few steps the variance term is untractable (rho <= 4)
    # and the update must fall back to the un-adapted rule
    p = Tensor(np.array([1.0]), requires_grad=True)
    opt = RAdam([p])
    p.grad = np.array([1.0])
    opt.step(0.1)
    # m_hat = 1 after bias correction: un-adapted step of exactly lr
    assert abs(float(p.data[0]) - 0.9) < 1e-12


def test_adam_fallback_matches_adam_update():
    p = Tensor(np.array([2.0]), requires_grad=True)
    opt = make_optimizer([p], "adam")
    p.grad = np.array([0.5])
    opt.step(0.1)
    # first Adam step moves by ~lr regardless of gradient scale
    assert abs(float(p.data[0]) - (2.0 - 0.1 * 0.5 / (0.5 + 1e-8))) < 1e-9


def test_make_optimizer_rejects_unknown():
    with pytest.raises(ConfigError):
        make_optimizer([], "sgd")


def test_optimizer_state_roundtrip():
    rng = np.random.default_rng(2)
    p = Tensor(rng.standard_normal(4), requires_grad=True)
    opt = make_optimizer([p])
    for _ in range(3):
        p.grad = rng.standard_normal(4)
        opt.step(0.01)
    state = {k: v.copy() for k, v in opt.state_arrays().items()}

    q = Tensor(p.data.copy(), requires_grad=True)
    opt2 = make_optimizer([q])
    opt2.load_state_arrays(state)
    g = rng.standard_normal(4)
    p.grad = g.copy()
    q.grad = g.copy()
    opt.step(0.01)
    opt2.step(0.01)
    assert np.array_equal(p.data, q.data)


def test_train_step_reduces_loss_on_blob_task():
    model = _micro_model(seed=4)
    data = _blob_data(2)
    opt = make_optimizer(model.parameters())
    first = train_step(model, data, opt, 1e-2, 0)
    losses = [first]
    for i in range(1, 200):
        losses.append(train_step(model, data, opt, 1e-2, i))
    assert losses[-1] < 0.5 * first


def test_train_step_raises_divergence_with_step_index():
    model = _micro_model(seed=5)
    data = _blob_data(1)
    # blow up a weight so the forward pass overflows float32
    model.named_parameters()["enc0.0.w"].data[:] = 1e38
    opt = make_optimizer(model.parameters())
    with pytest.raises(DivergenceError) as e:
        train_step(model, data, opt, 1e-3, step_index=17)
    assert e.value.step == 17


def test_predict_labels_tie_breaks_low_class():
    class Const:
        def __call__(self, x):
            return Tensor(np.zeros((*x.shape[:3], 3), dtype=np.float32))

    pred = predict_labels(Const(), np.zeros((2, 2, 2, 1), dtype=np.float32))
    assert np.all(pred == 0)


def test_fit_is_deterministic():
    data = _blob_data(4)
    logs = []
    for _ in range(2):
        model = _micro_model(seed=6)
        hist, best, _ = fit(model, data[:3], data[3:], epochs=3,
                            base_lr=1e-3, seed=11)
        logs.append([r["train_loss"] for r in hist])
    assert logs[0] == logs[1]


def test_fit_zero_lr_flat_loss():
    data = _blob_data(3)
    model = _micro_model(seed=7)
    hist, _, _ = fit(model, data[:2], data[2:], epochs=3, base_lr=0.0, seed=1)
    losses = {round(r["train_loss"], 10) for r in hist}
    assert len(losses) == 1


def test_fit_tracks_best_epoch():
    data = _blob_data(4)
    model = _micro_model(seed=8)
    hist, best, _ = fit(model, data[:3], data[3:], epochs=4, base_lr=3e-3,
                        seed=2)
    epoch, val, snap = best
    assert 0 <= epoch < 4
    assert val == max(r["val_dsc"] for r in hist)
    assert set(snap) == set(model.named_parameters())
