"""Acceptance suite: one test per release criterion, each printing a PASS/FAIL
line. Run with ``pytest tests/test_acceptance.py -v -s``."""

import functools
import math
import time

import numpy as np
import pytest

from nssid.autodiff import grad_check
from nssid.data import (Dataset, enumerate_windows, sample_batch, split_train_val,
                        synth_integrator_system, synth_system)
from nssid.estimators import build_estimator, estimate_graph
from nssid.evaluation import evaluate_model, fit_index
from nssid.experiments import FactorGrid, enumerate_grid, load_records, replicate, \
    run_campaign
from nssid.nets import LstmSpec, MlpSpec, init_params, lstm_apply, mlp_apply
from nssid.ssmodel import ModelSpec, build_model, output_graph, sim_states_graph, \
    simulate
from nssid.training import (TrainConfig, fitting_predictions, load_checkpoint,
                            minibatch_loss, save_checkpoint, train)
from nssid.analysis import interactions, main_effects, replication_stats
from tests.test_analysis import fixture_12_rows
from tests.test_evaluation import direct_fit
from tests.test_training import naive_minibatch_loss


def criterion(name):
    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                result = fn(*args, **kwargs)
            except BaseException:
                print(f"\nACCEPTANCE {name}: FAIL")
                raise
            print(f"\nACCEPTANCE {name}: PASS")
            return result
        return wrapper
    return decorate


# -- 1. gradient correctness ------------------------------------------------------


@criterion("gradient-correctness")
def test_gradient_correctness_50_instances():
    """>= 50 randomized instances across MLP, LSTM, estimator+rollout (H=10),
    and the minibatch loss; central differences at step 1e-6, max relative
    error < 1e-4, in under 2 minutes."""
    start = time.monotonic()
    checked = 0

    # 15 MLPs (varying dims, with and without bypass)
    for seed in range(15):
        rng = np.random.default_rng(1000 + seed)
        spec = MlpSpec(int(rng.integers(1, 4)), int(rng.integers(2, 6)),
                       int(rng.integers(1, 3)), skip=bool(seed % 2))
        params = init_params(spec, seed=seed)
        x = rng.standard_normal((2, spec.in_dim))
        target = rng.standard_normal((2, spec.out_dim))

        def graph(tape, spec=spec, x=x, target=target):
            return tape.mean_sq(tape.sub(mlp_apply(tape, spec, tape.const(x)),
                                         tape.const(target)))

        report = grad_check(graph, params, fd_step=1e-6, tolerance=1e-4)
        assert report.passed, (seed, report)
        checked += 1

    # 15 LSTMs over 4..6 step sequences
    for seed in range(15):
        rng = np.random.default_rng(2000 + seed)
        spec = LstmSpec(int(rng.integers(1, 3)), int(rng.integers(2, 4)),
                        int(rng.integers(1, 3)))
        params = init_params(spec, seed=seed)
        steps = rng.standard_normal((int(rng.integers(4, 7)), spec.in_dim))
        target = rng.standard_normal(spec.out_dim)

        def graph(tape, spec=spec, steps=steps, target=target):
            xs = [tape.const(steps[t]) for t in range(len(steps))]
            return tape.mean_sq(tape.sub(lstm_apply(tape, spec, xs),
                                         tape.const(target)))

        report = grad_check(graph, params, fd_step=1e-6, tolerance=1e-4)
        assert report.passed, (seed, report)
        checked += 1

    # 10 estimator + H=10 rollout losses (FF and LSTM estimators)
    for seed in range(10):
        rng = np.random.default_rng(3000 + seed)
        model = build_model(ModelSpec(2, 1, 1, hidden=3, skip=True), seed=seed)
        kind = "FF" if seed % 2 == 0 else "LSTM"
        est = build_estimator(kind, 3, 2, 1, 1, hidden_size=3, seed=seed + 1)
        u_win = rng.standard_normal((2, 3, 1))
        y_win = rng.standard_normal((2, 3, 1))
        u_fit = rng.standard_normal((2, 10, 1))
        target = rng.standard_normal((2, 11, 1))

        def graph(tape, model=model, est=est, u_win=u_win, y_win=y_win,
                  u_fit=u_fit, target=target):
            x0 = estimate_graph(tape, est, model, u_win, y_win)
            states = sim_states_graph(tape, model, x0, u_fit)
            total = None
            for k, x_k in enumerate(states):
                resid = tape.sub(output_graph(tape, model, x_k),
                                 tape.const(target[:, k]))
                sq = tape.sum_sq(resid)
                total = sq if total is None else tape.add(total, sq)
            return tape.scale(total, 1.0 / len(states))

        report = grad_check(graph, [model.params, est.params], fd_step=1e-6,
                            tolerance=1e-4)
        assert report.passed, (seed, kind, report)
        checked += 1

    # 10 full minibatch losses over all four estimator kinds
    for seed in range(10):
        rng = np.random.default_rng(4000 + seed)
        model = build_model(ModelSpec(2, 1, 1, hidden=3, skip=True), seed=seed + 7)
        kind = ("FF", "LSTM", "ZERO", "RAND")[seed % 4]
        est = build_estimator(kind, 2, 2, 1, 1, hidden_size=3, seed=seed + 3)
        ds = Dataset(rng.standard_normal((20, 1)), rng.standard_normal((20, 1)))
        batch = sample_batch(ds, 2, 3, 2, rng)

        def graph(tape, model=model, est=est, batch=batch, seed=seed):
            # RAND draws are redrawn identically per evaluation: fixed seed
            x0 = estimate_graph(tape, est, model, batch.u_est, batch.y_est,
                                rng=np.random.default_rng(seed))
            states = sim_states_graph(tape, model, x0,
                                      batch.u_fit[:, :batch.m_f - 1])
            total = None
            for j, x_j in enumerate(states):
                resid = tape.sub(output_graph(tape, model, x_j),
                                 tape.const(batch.y_fit[:, j]))
                sq = tape.sum_sq(resid)
                total = sq if total is None else tape.add(total, sq)
            return tape.scale(total, 1.0 / (batch.b * batch.m))

        stores = [model.params] + ([est.params] if est.params is not None else [])
        report = grad_check(graph, stores, fd_step=1e-6, tolerance=1e-4)
        assert report.passed, (seed, kind, report)
        checked += 1

    elapsed = time.monotonic() - start
    assert checked >= 50
    assert elapsed < 120.0, f"gradient checks took {elapsed:.1f}s"


# -- 2. loss-oracle equivalence ------------------------------------------------------


@criterion("loss-oracle-equivalence")
def test_loss_oracle_equivalence():
    for seed in range(20):
        rng = np.random.default_rng(500 + seed)
        model = build_model(ModelSpec(2, 1, 1, hidden=4, skip=True), seed=seed)
        kind = "ZERO" if seed % 2 == 0 else "FF"
        est = build_estimator(kind, 3, 2, 1, 1, hidden_size=4, seed=seed + 9)
        ds = Dataset(rng.standard_normal((40, 1)), rng.standard_normal((40, 1)))
        batch = sample_batch(ds, 3, 5, 6, rng)
        loss, _ = minibatch_loss(model, est, batch)
        expected = naive_minibatch_loss(model, est, batch)
        assert float(loss.value) == pytest.approx(expected, rel=1e-12), seed

    for n, m_e, m_f in ((30, 3, 5), (100, 10, 15), (12, 1, 2)):
        ds = Dataset(np.zeros((n, 1)), np.ones((n, 1)))
        windows = enumerate_windows(ds, m_e, m_f, stride=1)
        assert len(windows.start_indices) == n - (m_e + m_f)


# -- 3. ZERO-estimator semantics -----------------------------------------------------


@criterion("zero-estimator-semantics")
@pytest.mark.filterwarnings("ignore:estimation window")
def test_zero_estimator_semantics():
    for seed in range(10):
        rng = np.random.default_rng(700 + seed)
        n_x = int(rng.integers(1, 4))
        model = build_model(ModelSpec(n_x, 1, 1, hidden=4, skip=True), seed=seed)
        m_e = int(rng.integers(1, 6))
        m_f = int(rng.integers(1, 8))
        est = build_estimator("ZERO", m_e, n_x, 1, 1)
        ds = Dataset(rng.standard_normal((40, 1)), rng.standard_normal((40, 1)))
        batch = sample_batch(ds, m_e, m_f, 4, rng)
        preds = fitting_predictions(model, est, batch)
        for row, start in enumerate(batch.start_indices):
            u_open = ds.u[start:start + m_e + m_f - 1]
            _, y_open = simulate(model, np.zeros(n_x), u_open)
            assert np.array_equal(preds[row], y_open[m_e:]), (seed, row)


# -- 4. FIT oracle and invariance -----------------------------------------------------


@criterion("fit-oracle")
def test_fit_oracle_and_invariance():
    rng = np.random.default_rng(0)
    for _ in range(100):
        y = rng.standard_normal(30)
        y_sim = y + rng.uniform(0.0, 1.0) * rng.standard_normal(30)
        assert fit_index(y, y_sim) == pytest.approx(
            direct_fit(list(y), list(y_sim)), abs=1e-10)
        c = rng.uniform(0.2, 4.0) * rng.choice([-1.0, 1.0])
        d = rng.uniform(-5.0, 5.0)
        assert fit_index(c * y + d, c * y_sim + d) == pytest.approx(
            fit_index(y, y_sim), abs=1e-10)
    y = rng.standard_normal(25)
    assert fit_index(y, y) == 100.0
    assert fit_index(y, np.full(25, y.mean())) == pytest.approx(0.0, abs=1e-10)


# -- 5. desk-scale identification ------------------------------------------------------


@criterion("desk-scale-identification")
def test_desk_scale_identification():
    """Stable synth benchmark reaches FIT >= 90% with the FF estimator, and the
    trained FF estimator strictly beats RAND initialization on an
    integrator-augmented system; all inside a 10-minute budget."""
    start = time.monotonic()

    ds, _ = synth_system(2024, n_x=2, n=10000, noise_std=0.01)
    train_rec, test_rec = split_train_val(ds, 0.2)
    tr, va = split_train_val(train_rec, 0.2)
    cfg = TrainConfig(est_type="FF", batch_size=64, seq_fit_len=64, seq_est_len=20,
                      learning_rate=1e-3, seed=2024, max_iters=2000, val_every=20)
    ckpt, _ = train(ModelSpec(2, 1, 1, hidden=15, skip=True), cfg, tr, va)
    report = evaluate_model(ckpt, test_rec, init_policy="estimator")
    print(f"\n  stable synth test FIT: {report.fit_percent:.2f}%")
    assert report.fit_percent >= 90.0

    ids, _ = synth_integrator_system(77, n=6000, noise_std=0.01)
    itrain, itest = split_train_val(ids, 0.2)
    itr, iva = split_train_val(itrain, 0.2)
    fits = {}
    for kind in ("FF", "RAND"):
        icfg = TrainConfig(est_type=kind, batch_size=64, seq_fit_len=64,
                           seq_est_len=20, learning_rate=1e-3, seed=31,
                           max_iters=1200, val_every=20)
        ickpt, _ = train(ModelSpec(2, 1, 1, hidden=15, skip=True), icfg, itr, iva)
        fits[kind] = evaluate_model(ickpt, itest, init_policy="estimator").fit_percent
    print(f"  integrator FIT: FF {fits['FF']:.2f}% vs RAND {fits['RAND']:.2f}%")
    assert fits["FF"] > fits["RAND"]

    elapsed = time.monotonic() - start
    assert elapsed < 600.0, f"desk-scale experiments took {elapsed:.1f}s"


# -- 6. repeatability statistics --------------------------------------------------------


@criterion("repeatability-statistics")
def test_repeatability_pipeline():
    ds, _ = synth_system(5, n_x=2, n=700, noise_std=0.02)
    train_rec, test_rec = split_train_val(ds, 0.25)
    spec = ModelSpec(2, 1, 1, hidden=5, skip=True)
    cfg = TrainConfig(est_type="FF", batch_size=8, seq_fit_len=10, seq_est_len=5,
                      est_hidden_size=5, max_iters=40, val_every=10)
    records = replicate(cfg, list(range(20)), spec, train_rec, test_rec)
    assert len(records) == 20
    stats = replication_stats(records)
    assert math.isfinite(stats.mean) and math.isfinite(stats.std)
    assert stats.significance_3sigma == pytest.approx(3.0 * stats.std, rel=1e-12)
    assert int(stats.bin_counts.sum()) == 20


# -- 7. factorial bookkeeping --------------------------------------------------------------


@criterion("factorial-bookkeeping")
def test_factorial_bookkeeping():
    wh = FactorGrid({
        "est_type": ["FF", "LSTM", "ZERO", "RAND"],
        "max_time": [300, 1800, 3600],
        "batch_size": [32, 128, 512, 1032],
        "seq_fit_len": [40, 80, 160, 320],
        "seq_est_len": [10, 20, 40, 80],
    })
    assert len(enumerate_grid(wh)) == 768
    pick_place = FactorGrid({
        "est_type": ["FF", "LSTM", "ZERO", "RAND"],
        "max_time": [300, 1800],
        "batch_size": [32, 128, 1032],
        "seq_fit_len": [64, 256, 512],
        "seq_est_len": [10, 40, 100],
        "est_hidden_size": [10, 30],
    })
    assert len(enumerate_grid(pick_place)) == 432


# -- 8. effects-analysis oracle ----------------------------------------------------------


@criterion("effects-analysis-oracle")
def test_effects_analysis_oracle():
    records = fixture_12_rows()
    table_a = main_effects(records, "est_type")
    assert table_a.rows[0].mean == pytest.approx(86.0, abs=1e-10)
    assert table_a.rows[1].mean == pytest.approx(66.6666666666666667, abs=1e-10)
    grid = interactions(records, "est_type", "batch_size")
    assert np.allclose(grid.means, [[91.0, 86.0, 81.0], [72.0, 66.0, 62.0]],
                       atol=1e-10)
    grand = float(np.mean([r["fit_percent"] for r in records]))
    for factor in ("est_type", "batch_size"):
        assert main_effects(records, factor).grand_mean == pytest.approx(
            grand, abs=1e-10)


# -- 9. determinism and persistence ---------------------------------------------------------


@criterion("determinism-and-persistence")
def test_determinism_and_persistence(tmp_path):
    ds, _ = synth_system(6, n_x=2, n=300, noise_std=0.02)
    train_rec, test_rec = split_train_val(ds, 0.25)
    spec = ModelSpec(2, 1, 1, hidden=4, skip=True)
    base = TrainConfig(batch_size=4, seq_fit_len=6, seq_est_len=3,
                       est_hidden_size=3, max_iters=5, val_every=2)
    grid = FactorGrid({"est_type": ["ZERO", "RAND"], "batch_size": [4, 8]},
                      seeds=[0])

    fits = []
    for k in range(2):
        records = run_campaign(grid, train_rec, test_rec, spec,
                               tmp_path / f"campaign{k}", base=base)
        fits.append([r.fit_percent for r in sorted(records, key=lambda r: r.key())])
    assert fits[0] == fits[1]

    # resume: a second pass over the same directory re-runs nothing
    records = run_campaign(grid, train_rec, test_rec, spec, tmp_path / "campaign0",
                           base=base)
    keys = [r.key() for r in load_records(tmp_path / "campaign0" / "results.csv")]
    assert len(keys) == len(set(keys)) == 4

    # checkpoint persistence: bit-identical simulations, FIT to 1e-12
    tr, va = split_train_val(train_rec, 0.2)
    ckpt, _ = train(spec, base, tr, va)
    path = tmp_path / "ckpt.json"
    save_checkpoint(ckpt, path)
    back = load_checkpoint(path)
    rng = np.random.default_rng(3)
    x0 = rng.standard_normal(2)
    u = rng.standard_normal((50, 1))
    _, y_a = simulate(ckpt.model, x0, u)
    _, y_b = simulate(back.model, x0, u)
    assert np.array_equal(y_a, y_b)
    f_a = evaluate_model(ckpt, test_rec).fit_percent
    f_b = evaluate_model(back, test_rec).fit_percent
    assert f_a == pytest.approx(f_b, abs=1e-12)


# -- 10. wall-clock contract -----------------------------------------------------------------


@criterion("wall-clock-contract")
def test_wall_clock_contract(tmp_path):
    ds, _ = synth_system(8, n_x=2, n=2000, noise_std=0.02)
    train_rec, _ = split_train_val(ds, 0.2)
    tr, va = split_train_val(train_rec, 0.2)
    cfg = TrainConfig(est_type="ZERO", batch_size=16, seq_fit_len=20, seq_est_len=10,
                      max_time=5.0, max_iters=None, val_every=20)
    t0 = time.monotonic()
    ckpt, log = train(ModelSpec(2, 1, 1, hidden=8, skip=True), cfg, tr, va)
    took = time.monotonic() - t0
    iter_times = np.diff([r.elapsed_s for r in log]) if len(log) > 1 else [0.1]
    slack = max(1.0, 3.0 * float(np.max(iter_times)))
    assert took <= 5.0 + slack, f"train took {took:.2f}s (slack {slack:.2f}s)"
    assert math.isfinite(ckpt.best_val_loss)
    path = tmp_path / "wall.json"
    save_checkpoint(ckpt, path)
    assert load_checkpoint(path).best_val_loss == ckpt.best_val_loss
