import numpy as np
import pytest

from voxmamba.errors import ConfigError, ShapeError
from voxmamba.tensor import Tensor
from voxmamba.train import dice_ce_loss
from voxmamba.unet import VARIANTS, VariantConfig, build_variant

from oracles import numeric_grad, rel_err

SMALL = dict(stages=2, widths=(4, 8), crop=(8, 8, 8), classes=2)


def _build(variant, seed=0, **over):
    kw = {**SMALL, **over}
    return build_variant(VariantConfig(variant=variant, **kw), seed=seed)


def test_config_validation():
    with pytest.raises(ConfigError):
        VariantConfig(variant="nope", **SMALL).validate()
    with pytest.raises(ConfigError):
        VariantConfig(stages=3, widths=(4, 8), crop=(8, 8, 8)).validate()
    with pytest.raises(ConfigError):
        VariantConfig(stages=2, widths=(8, 4), crop=(8, 8, 8)).validate()
    with pytest.raises(ConfigError):
        VariantConfig(stages=3, widths=(4, 8, 16), crop=(8, 10, 8)).validate()
    with pytest.raises(ConfigError):
        VariantConfig(**{**SMALL, "classes": 1}).validate()
    with pytest.raises(ConfigError):
        VariantConfig(direction_set=((0, 1, 2), (0, 1, 2)),
                      **SMALL).validate()


def test_config_roundtrip():
    cfg = VariantConfig(variant="pansegmamba", **SMALL)
    assert VariantConfig.from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("variant", VARIANTS)
def test_forward_shape(variant):
    m = _build(variant)
    rng = np.random.default_rng(40)
    x = rng.standard_normal((8, 8, 8, 1)).astype(np.float32)
    out = m(Tensor(x))
    assert out.shape == (8, 8, 8, 2)
    assert np.all(np.isfinite(out.data))


def test_forward_rejects_wrong_shape():
    m = _build("baseline")
    with pytest.raises(ShapeError):
        m(Tensor(np.zeros((8, 8, 4, 1), dtype=np.float32)))


def test_mamba_placement_counts():
    for stages, widths in ((2, (4, 8)), (3, (4, 8, 16))):
        kw = dict(stages=stages, widths=widths, crop=(8, 8, 8), classes=2)
        assert _build("baseline", **kw).mamba_module_count() == 0
        for v in ("segmamba", "pansegmamba", "multisegmamba"):
            m = _build(v, **kw)
            assert m.mamba_module_count() == stages
            assert "bottleneck" in m.mamba
        m = _build("segmamba-skip", **kw)
        assert m.mamba_module_count() == stages - 1
        assert all(k.startswith("skip") for k in m.mamba)


def test_param_count_ordering():
    counts = {v: _build(v).num_params()
              for v in ("baseline", "segmamba", "pansegmamba",
                        "multisegmamba")}
    assert (counts["baseline"] < counts["segmamba"]
            < counts["pansegmamba"] < counts["multisegmamba"])


def test_shared_components_identical_across_variants():
    base = _build("baseline", seed=5).named_parameters()
    seg = _build("segmamba", seed=5).named_parameters()
    for name, t in base.items():
        assert np.array_equal(t.data, seg[name].data), name


def test_zeroed_segmamba_equals_baseline_bitwise():
    rng = np.random.default_rng(41)
    x = rng.standard_normal((8, 8, 8, 1)).astype(np.float32)
    base = _build("baseline", seed=5)
    seg = _build("segmamba", seed=5)
    for module in seg.mamba.values():
        module.zero_residual_branches()
    assert np.array_equal(base(Tensor(x)).data, seg(Tensor(x)).data)


def test_deterministic_build():
    a = _build("pansegmamba", seed=9).named_parameters()
    b = _build("pansegmamba", seed=9).named_parameters()
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)
    c = _build("pansegmamba", seed=10).named_parameters()
    assert not all(np.array_equal(a[k].data, c[k].data) for k in a)


def test_load_state_roundtrip_and_mismatch():
    m = _build("segmamba", seed=1)
    state = {k: t.data.copy() for k, t in m.named_parameters().items()}
    m2 = _build("segmamba", seed=2)
    m2.load_state(state)
    for k, t in m2.named_parameters().items():
        assert np.array_equal(t.data, state[k])
    with pytest.raises(ConfigError):
        _build("baseline").load_state(state)


def test_full_model_loss_grad_matches_finite_differences():
    # end-to-end gradient through conv/norm/scan/upsampling and the
    # Dice+CE objective on an 8-cube micro model
    cfg = VariantConfig(variant="segmamba", **SMALL)
    m = build_variant(cfg, seed=7, dtype=np.float64)
    rng = np.random.default_rng(42)
    x = rng.standard_normal((8, 8, 8, 1))
    labels = (rng.random((8, 8, 8)) < 0.3).astype(np.int64)

    loss = dice_ce_loss(m(Tensor(x)), labels)
    for p in m.parameters():
        p.grad = None
    loss.backward()

    w = m.named_parameters()["enc0.0.w"]

    def f(arrs):
        w.data = arrs[0]
        from voxmamba.tensor import no_grad
        with no_grad():
            return float(dice_ce_loss(m(Tensor(x)), labels).data)

    orig = w.data.copy()
    # small step: curvature through the deep composition dominates the
    # truncation error well before float64 cancellation noise kicks in
    num = numeric_grad(f, [orig.copy()], 0, h=2e-5)
    w.data = orig
    assert rel_err(w.grad, num) < 1e-3
