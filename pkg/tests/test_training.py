import numpy as np
import pytest

from bdgstn.data import make_windows
from bdgstn.exceptions import ConfigurationError
from bdgstn.metrics import METRIC_NAMES
from bdgstn.model import init_params, sir_rollout, sir_update
from bdgstn.optim import AdamState, adam_step
from bdgstn.simulator import SimConfig, simulate
from bdgstn.tensor import Tensor
from bdgstn.training import (TrainConfig, baseline_persistence, baseline_sir_fit, build_static_graph,
                             evaluate_split, optimize, predict_windows, train)

from test_data import small_dataset


@pytest.fixture(scope="module")
def sim():
    return simulate(SimConfig(n_patches=4, days=60, seed=3))


def test_adam_zero_grad_keeps_params():
    p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
    p["w"].grad = np.zeros(2)
    adam_step(p, AdamState(), 1e-3)
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])


def test_adam_first_step_is_lr_sign():
    p = {"w": Tensor(np.zeros(3), requires_grad=True)}
    p["w"].grad = np.array([0.3, -5.0, 1e-3])
    state = adam_step(p, AdamState(), 1e-2)
    np.testing.assert_allclose(p["w"].data, -1e-2 * np.sign(p["w"].grad), rtol=1e-4)
    assert state.step == 1 and state.m["w"].shape == (3,)


def test_adam_matches_reference_recursion(rng):
    w0 = rng.normal(size=4)
    grads = rng.normal(size=(5, 4))
    p = {"w": Tensor(w0.copy(), requires_grad=True)}
    state = AdamState()
    m = v = np.zeros(4)
    w = w0.copy()
    for t, g in enumerate(grads, 1):
        p["w"].grad = g
        adam_step(p, state, 0.1)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p["w"].data, w, rtol=1e-12)


def test_train_config_validation():
    with pytest.raises(ConfigurationError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigurationError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigurationError):
        TrainConfig(horizon=7)


def test_history_and_determinism(sim):
    cfg = TrainConfig(epochs=6, seed=1)
    a, b = train(sim, cfg), train(sim, cfg)
    assert len(a.history) == 6
    assert set(a.history[0]) == {"epoch", "train_loss"} | {f"val_{k}" for k in METRIC_NAMES}
    assert [r["train_loss"] for r in a.history] == [r["train_loss"] for r in b.history]
    assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)
    c = train(sim, TrainConfig(epochs=6, seed=2))
    assert c.history[-1]["train_loss"] != a.history[-1]["train_loss"]


def test_best_validation_checkpoint_restored(sim):
    res = train(sim, TrainConfig(epochs=8, seed=0))
    best = min(range(8), key=lambda i: res.history[i]["val_mae"])
    assert res.best_epoch == best + 1
    assert evaluate_split(res, sim, "val").mae == pytest.approx(res.history[best]["val_mae"], rel=1e-12)


def test_loss_mostly_non_increasing(sim):
    res = train(sim, TrainConfig(epochs=60))
    losses = np.array([r["train_loss"] for r in res.history])
    assert np.mean(np.diff(losses) <= 0) >= 0.8


def test_overfit_single_window(sim):
    cfg = TrainConfig(epochs=200, learning_rate=1e-2)
    mc = cfg.model_config()
    from bdgstn.data import fit_normalizer
    norm = fit_normalizer(sim, range(0, 36))
    w = make_windows(sim, range(20, 30), 5, 5, norm)
    one = type(w)(w.inputs[:1], w.targets[:1], w.raw_inputs[:1], w.raw_targets[:1], w.starts[:1])
    params = init_params(sim.n_patches, mc, seed=0)
    history, _ = optimize(params, one, None, norm, sim.population, mc, None, cfg.epochs, cfg.learning_rate)
    assert history[-1]["train_loss"] <= 0.5 * history[0]["train_loss"]


def test_nan_loss_names_epoch_and_window(sim):
    cfg = TrainConfig(epochs=3)
    mc = cfg.model_config()
    from bdgstn.data import fit_normalizer
    norm = fit_normalizer(sim, range(0, 36))
    w = make_windows(sim, range(0, 36), 5, 5, norm)
    w.inputs[4, 0, 0, 0] = np.nan
    with np.errstate(invalid="ignore"), pytest.raises(FloatingPointError, match=r"epoch 1, window 4"):
        optimize(init_params(sim.n_patches, mc), w, None, norm, sim.population, mc, None, 3, 1e-3)


def test_evaluate_split_report_and_purity(sim):
    res = train(sim, TrainConfig(epochs=2))
    r1, steps = evaluate_split(res, sim, "test", per_step=True)
    r2 = evaluate_split(res, sim, "test")
    assert r1 == r2 and len(steps) == 5
    assert set(METRIC_NAMES) <= set(r1.as_dict())
    with pytest.raises(ConfigurationError):
        evaluate_split(res, sim, "holdout")


def test_evaluate_split_perfect_case():
    ds = small_dataset(N=3, T=60)
    ds.series[:, :, 1] = 12.0
    res = train(ds, TrainConfig(epochs=1))
    for p in res.params.values():
        p.data = np.zeros_like(p.data)
    rep = evaluate_split(res, ds, "test")
    assert (rep.mae, rep.rmse, rep.mape) == (0.0, 0.0, 0.0)


def test_perfect_predictions_metric_values(sim):
    res = train(sim, TrainConfig(epochs=1))
    w = make_windows(sim, res.splits[2], 5, 5, res.normalizer)
    pred = predict_windows(res.params, w, res.normalizer, res.population, res.config.model_config())
    assert pred.shape == w.raw_targets.shape


@pytest.mark.parametrize("mode", ["geography", "gravity", "dtw", "pcc"])
def test_static_graphs_use_training_days(sim, mode):
    A = build_static_graph(sim, mode, range(0, 36))
    np.testing.assert_allclose(A.sum(axis=1), 1.0, atol=1e-12)
    assert build_static_graph(sim, "fused", range(0, 36)) is None


def test_static_graph_missing_inputs():
    ds = small_dataset(coords=False, adjacency=False)
    for mode in ("geography", "gravity"):
        with pytest.raises(ConfigurationError):
            build_static_graph(ds, mode, range(0, 10))


def test_persistence_examples(rng):
    w = rng.uniform(1, 10, size=(4, 3, 5, 3))
    out = baseline_persistence(w, 7)
    assert out.shape == (4, 3, 7)
    np.testing.assert_array_equal(out, np.repeat(w[..., -1, 1:2], 7, axis=-1))
    const = np.full((1, 2, 5, 3), 4.0)
    np.testing.assert_array_equal(baseline_persistence(const, 3), const[..., :3, 1])


def _sir_window(beta, gamma, T=5, pop=1000.0, I0=50.0):
    S, I, R = pop - I0, I0, 0.0
    rows = []
    for _ in range(T):
        rows.append((S, I, R))
        S, I, R = sir_update(S, I, R, pop, beta, gamma)
    return np.array(rows)[None]


def test_sir_fit_recovers_rates():
    fc, b, g = baseline_sir_fit(_sir_window(0.3, 0.1), 5, [1000.0], return_rates=True)
    assert abs(b[0] - 0.3) <= 0.01 and abs(g[0] - 0.1) <= 0.01
    w = _sir_window(0.3, 0.1)
    expect = sir_rollout(*w[0, -1], 1000.0, 0.3, 0.1, 5)
    np.testing.assert_allclose(fc[0], expect, rtol=1e-9)


def test_sir_fit_absorbing_and_conservation():
    w = np.zeros((2, 5, 3))
    w[..., 0] = 500.0
    w[1, :, 2] = 20.0
    np.testing.assert_array_equal(baseline_sir_fit(w, 4), 0.0)
    win = _sir_window(0.35, 0.05, pop=2000.0)
    _, b, g = baseline_sir_fit(win, 5, return_rates=True)
    S, I, R = win[0, -1]
    for _ in range(5):
        S, I, R = sir_update(S, I, R, 2000.0, b[0], g[0])
        assert abs(S + I + R - 2000.0) <= 1e-9 * 2000.0
