import json

import numpy as np
import pytest

from piwad.data import FeatureTable
from piwad.effects import (
    EffectQuery,
    average_total_effect,
    default_step,
    dynamic_total_effect,
    effect_report,
    main_effect,
    write_curves_csv,
    write_effects_csv,
    write_effects_json,
)
from piwad.model import ModelConfig, init_model
from piwad.training import GanConfig
from piwad.wgan import init_gan, train_wgan


def uniform_table(n=400, m=2, seed=0, lo=0.0, hi=10.0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(lo, hi, size=(n, m))
    X[0], X[1] = lo, hi
    return FeatureTable([f"x{j + 1}" for j in range(m)], X, np.ones(n))


@pytest.fixture(scope="module")
def gan():
    return train_wgan(uniform_table(), GanConfig(iterations=5, batch_size=16), seed=0)


def linear_model(table, weights, bias, gamma=5):
    """Piecewise-only model computing bias + sum_j weights[j] * (x_j - low_j)."""
    model = init_model(table, ModelConfig(gamma=gamma, second_order=False, higher_order=False, init="zeros"))
    spec = model.encoder.spec
    w = np.zeros((spec.width, 1))
    for j, wj in enumerate(weights):
        w[spec.block(j), 0] = wj * np.diff(spec.boundaries[j])
    model.store["pw.w"] = w
    model.store["pw.b"] = np.array(bias)
    return model


def test_linear_slope_everywhere(gan):
    model = linear_model(uniform_table(), [2.0, -1.0], 100.0)
    curve = dynamic_total_effect(model, gan, EffectQuery(0, np.linspace(0, 9, 10), 1.0, k=64))
    np.testing.assert_allclose(curve.effect, 2.0, rtol=1e-9)
    np.testing.assert_allclose(curve.stderr, 0.0, atol=1e-9)


def test_dead_relu_region_gives_zero(gan):
    model = linear_model(uniform_table(), [1.0, 0.0], -100.0)
    curve = dynamic_total_effect(model, gan, EffectQuery(0, np.linspace(0, 10, 5), 1.0, k=32))
    assert np.all(curve.effect == 0)


def test_step_is_clamped_at_the_top(gan):
    model = linear_model(uniform_table(), [2.0, 0.0], 50.0)
    curve = dynamic_total_effect(model, gan, EffectQuery(0, [9.5, 10.0], 1.0, k=16))
    np.testing.assert_allclose(curve.steps, [0.5, 1.0])
    np.testing.assert_allclose(curve.effect, 2.0, rtol=1e-9)
    with pytest.raises(ValueError):
        dynamic_total_effect(model, gan, EffectQuery(0, [9.5], 1.0, k=16, clamp=False))


def test_untrained_generator_is_rejected():
    t = uniform_table()
    with pytest.raises(ValueError, match="trained"):
        dynamic_total_effect(linear_model(t, [1, 1], 1), init_gan(t), EffectQuery(0, [1.0], 1.0))


def test_query_validation():
    with pytest.raises(ValueError):
        EffectQuery(0, [1.0], 1.0, k=0)
    with pytest.raises(ValueError):
        EffectQuery(0, [1.0], 0.0)
    with pytest.raises(ValueError):
        EffectQuery(0, [2.0, 1.0], 1.0)


def test_average_total_effect_modes():
    grid = np.linspace(0, 10, 11)
    assert average_total_effect(grid, np.full(11, 2.0)) == 2.0
    assert average_total_effect(grid, np.full(11, 2.0), "eq12-endpoints") == 0.0
    assert average_total_effect([0, 10], [0, 10], "eq12-endpoints") == 1.0
    with pytest.raises(ValueError):
        average_total_effect([3, 3], [1, 2])
    with pytest.raises(ValueError):
        average_total_effect([1], [1])


def test_main_effect_examples():
    t = uniform_table()
    sl = init_model(t, ModelConfig(encoder="simple-linear", init="zeros"))
    sl.store["pw.w"] = np.array([[0.3], [-0.2]])
    assert [main_effect(sl, 0), main_effect(sl, 1)] == [0.3, -0.2]
    pw = init_model(uniform_table(m=1), ModelConfig(gamma=2, init="zeros"))
    assert main_effect(pw, 0) == 0.0
    pw.store["pw.w"] = np.array([[1.0], [3.0]])
    assert main_effect(pw, 0) == pytest.approx(0.4)
    with pytest.raises(ValueError):
        main_effect(init_model(t, ModelConfig(encoder="ordinal")), 0)


def test_default_step_rules():
    t = uniform_table()
    assert default_step(linear_model(t, [1, 1], 1), 0) == 1.0
    small = uniform_table(lo=0.0, hi=0.5)
    assert default_step(linear_model(small, [1, 1], 1), 0) == pytest.approx(0.1)


def test_binary_feature_uses_flip():
    rng = np.random.default_rng(0)
    X = np.column_stack([rng.integers(0, 2, 300).astype(float), rng.uniform(0, 10, 300)])
    t = FeatureTable(["flag", "x"], X, np.ones(300))
    g = train_wgan(t, GanConfig(iterations=2, batch_size=8))
    model = linear_model(t, [3.0, 0.5], 20.0, gamma=1)
    rep = effect_report(model, g, features=[0], k=64)
    assert rep.reports[0].grid == [0.0]
    assert rep.reports[0].total_grid_mean == pytest.approx(3.0)


def test_report_determinism_and_flags(gan, tmp_path):
    model = linear_model(uniform_table(), [2.0, 1.0], 50.0)
    a = effect_report(model, gan, k=32, grid_points=5, seed=4)
    b = effect_report(model, gan, k=32, grid_points=5, seed=4)
    assert a.to_dict() == b.to_dict()
    assert a.flagged == [] and a.sign_flips == []
    assert [r.total_grid_mean for r in a.reports] == pytest.approx([2.0, 1.0])
    assert [r.main_effect for r in a.reports] == pytest.approx([2.0, 1.0])
    write_effects_json(tmp_path / "e.json", a)
    write_effects_csv(tmp_path / "e.csv", a)
    write_curves_csv(tmp_path / "c.csv", a)
    assert json.loads((tmp_path / "e.json").read_text())["features"][0]["feature"] == "x1"
    assert (tmp_path / "e.csv").read_text().splitlines()[0].startswith("feature,main_effect,total_effect_grid_mean")
    assert len((tmp_path / "c.csv").read_text().splitlines()) == 1 + 2 * 5


def test_empty_feature_set(gan):
    model = linear_model(uniform_table(), [2.0, 1.0], 50.0)
    assert effect_report(model, gan, features=[]).reports == []


def test_opposite_sign_is_flagged(gan):
    t = uniform_table()
    model = init_model(t, ModelConfig(gamma=5, second_order=False, layers=1, width=1, init="zeros"))
    model.store["pw.b"] = np.array(200.0)
    spec = model.encoder.spec
    w = np.zeros((spec.width, 1))
    w[spec.block(0), 0] = 0.5 * np.diff(spec.boundaries[0])
    model.store["pw.w"] = w
    # an always-active hidden unit that falls with x1 faster than the main effect rises
    model.store["nh.W0"] = np.array([[-1.0], [0.0]])
    model.store["nh.b0"] = np.array([10.0])
    model.store["nh.out"] = np.array([[3.0]])
    rep = effect_report(model, gan, features=[0], k=128, grid_points=5)
    r = rep.reports[0]
    assert r.main_effect == pytest.approx(0.5)
    assert r.total_grid_mean < 0
    assert r.sign_flip and r.divergent


def test_grid_points_are_order_independent(gan):
    model = linear_model(uniform_table(), [2.0, 1.0], 50.0)
    model.store["pw.w"] = model.store["pw.w"] * np.linspace(0.5, 1.5, model.store["pw.w"].size)[:, None]
    full = dynamic_total_effect(model, gan, EffectQuery(1, [1.0, 5.0, 8.0], 1.0, k=16, seed=2))
    single = dynamic_total_effect(model, gan, EffectQuery(1, [1.0, 5.0, 8.0], 1.0, k=16, seed=2))
    assert full.effect.tobytes() == single.effect.tobytes()


def test_stderr_halves_when_k_quadruples():
    from piwad.synth import gaussian_fixture, gen_synthetic

    t, _ = gen_synthetic(gaussian_fixture(n=500, m=3, seed=0))
    g = train_wgan(t, GanConfig(iterations=20, batch_size=32), seed=0)
    model = init_model(t, ModelConfig(init="uniform"), seed=0)
    model.store["pw.b"] = np.array(50.0)
    model.store["att.out"] = np.array(3.0)
    grid = np.linspace(-1, 1, 5)
    small = dynamic_total_effect(model, g, EffectQuery(0, grid, 1.0, k=500, seed=0)).stderr
    big = dynamic_total_effect(model, g, EffectQuery(0, grid, 1.0, k=2000, seed=0)).stderr
    ratio = np.mean(small) / np.mean(big)
    assert ratio == pytest.approx(2.0, rel=0.2)
