import numpy as np
import pytest

from piwad.data import FeatureTable
from piwad.model import ModelConfig
from piwad.synth import SynthSpec, gen_synthetic
from piwad.training import (
    ABLATIONS,
    EarlyStopping,
    NumericError,
    TrainConfig,
    ablation_config,
    cross_validate,
    fold_assignment,
    metrics,
    split_indices,
    stopping_epoch,
    train,
    write_history,
)


def test_metric_examples():
    m = metrics([0.0], [np.e - 1])
    assert m.msle == pytest.approx(1.0, abs=1e-15) and m.male == pytest.approx(1.0, abs=1e-15)
    m = metrics([1.0, 0.0], [0.0, 2.0])
    assert (m.mse, m.mae) == (2.5, 1.5)


def test_metrics_zero_on_perfect_prediction_and_reject_negatives():
    t = np.array([0.0, 3.0, 10.0])
    assert metrics(t, t).as_dict() == {"mse": 0.0, "mae": 0.0, "msle": 0.0, "male": 0.0}
    with pytest.raises(ValueError):
        metrics([-1.0], [1.0])
    with pytest.raises(ValueError):
        metrics([1.0, 2.0], [1.0])


def test_literal_stopping_rule_first_epoch():
    assert stopping_epoch([0.05, 0.04], epsilon=0.1, min_epochs=1) == 1


def test_stopping_rule_trace():
    losses = [5.0, 2.0, 1.5, 1.45, 1.3]
    # deltas: 5, 3, 0.5, 0.05 -> stops at epoch 4
    assert stopping_epoch(losses, epsilon=0.1, min_epochs=1) == 4
    assert stopping_epoch(losses, epsilon=0.1, min_epochs=5) is None
    rule = EarlyStopping(0.1, 1)
    assert [rule.update(v) for v in losses[:4]] == [False, False, False, True]


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        TrainConfig(epsilon=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    cfg = TrainConfig(seed=3).with_model(attention=False)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_zero_target_converges_first_epoch():
    X = np.random.default_rng(0).uniform(size=(40, 2))
    t = FeatureTable(["a", "b"], X, np.zeros(40))
    cfg = TrainConfig(model=ModelConfig(init="zeros"), min_epochs=1)
    res = train(cfg, t.subset(range(30)), t.subset(range(30, 40)))
    assert len(res.history) == 1 and res.stopped_early
    np.testing.assert_array_equal(res.model.predict(X), 0.0)


def test_linear_recovery_within_200_epochs():
    spec = SynthSpec("linear", n=2000, m=2, coefficients=[2, 1], intercept=3)
    t, _ = gen_synthetic(spec)
    tr, va, _ = split_indices(t.n, 0)
    cfg = TrainConfig(epochs=200, lr=1e-2, epsilon=1e-3, min_epochs=100)
    res = train(cfg, t.subset(tr), t.subset(va))
    assert res.history[-1][2] < 0.05 * np.var(t.target)
    losses = np.array([h[1] for h in res.history])
    ma = np.convolve(losses, np.ones(10) / 10, mode="valid")
    assert ma[-1] < ma[0]


def test_schema_and_empty_validation():
    t = FeatureTable(["a"], np.arange(6.0)[:, None], np.arange(6.0))
    other = FeatureTable(["b"], np.arange(6.0)[:, None], np.arange(6.0))
    with pytest.raises(ValueError):
        train(TrainConfig(), t, other)
    with pytest.raises(ValueError):
        train(TrainConfig(), t, t.subset([]))


def test_numeric_abort_names_batch():
    X = np.random.default_rng(0).uniform(size=(20, 1))
    t = FeatureTable(["a"], X, np.full(20, 1e200))
    with pytest.raises(NumericError, match="batch 0"):
        train(TrainConfig(), t, t)


def test_folds_partition_the_rows():
    parts = fold_assignment(103, 10, seed=1)
    allidx = np.concatenate(parts)
    assert sorted(allidx.tolist()) == list(range(103))
    sizes = [len(p) for p in parts]
    assert max(sizes) - min(sizes) <= 1
    with pytest.raises(ValueError):
        fold_assignment(10, 2, 0)
    with pytest.raises(ValueError):
        fold_assignment(5, 6, 0)


def test_cross_validation_shape():
    spec = SynthSpec("linear", n=120, m=2, coefficients=[1, 1], intercept=2)
    t, _ = gen_synthetic(spec)
    cv = cross_validate(TrainConfig(epochs=3), t, folds=4)
    assert len(cv.folds) == 4
    assert len(cv.rows()) == 6
    assert cv.mean.mse == pytest.approx(np.mean([f.mse for f in cv.folds]))


def test_ablation_table_has_every_variant():
    assert len(ABLATIONS) == 11
    cfg = ablation_config(TrainConfig(), "ordinal-one-hot-20")
    assert (cfg.model.encoder, cfg.model.gamma) == ("ordinal-one-hot", 20)
    assert not ablation_config(TrainConfig(), "without-attention").model.attention
    with pytest.raises(ValueError):
        ablation_config(TrainConfig(), "without-everything")


def test_history_csv(tmp_path):
    write_history(tmp_path / "h.csv", [(1, 2.0, 3.0)])
    assert (tmp_path / "h.csv").read_text() == "epoch,L_tr,L_val\n1,2.0,3.0\n"


def test_least_squares_start_recovers_linear_slopes():
    from piwad.effects import main_effect
    from piwad.model import init_model
    from piwad.training import least_squares_start

    spec = SynthSpec("linear", n=500, m=2, coefficients=[2, 3], intercept=20)
    t, _ = gen_synthetic(spec)
    model = init_model(t, ModelConfig(), seed=0)
    least_squares_start(model, t)
    assert [main_effect(model, j) for j in range(2)] == pytest.approx([2.0, 3.0], rel=1e-9)
    assert not model.store["nh.out"].any() and model.store["att.out"] == 0
    np.testing.assert_allclose(model.predict(t.X), t.target, rtol=1e-9)
    shrunk = init_model(t, ModelConfig(), seed=0)
    least_squares_start(shrunk, t, l2=10.0)
    assert abs(main_effect(shrunk, 0)) < 0.5 * 2.0
    with pytest.raises(ValueError):
        TrainConfig(piecewise_init="magic")
