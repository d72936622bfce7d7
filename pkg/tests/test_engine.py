import math
from itertools import combinations

import numpy as np
import pytest

from noisyfed import (ClientData, ConfigError, DivergenceError,
                      LearningRateSchedule, QuadraticTask, RunConfig,
                      aggregate, local_train, make_task, run, sample_clients,
                      uplink_transmit)
from noisyfed.engine import downlink_broadcast
from noisyfed.seeding import DOMAIN_DOWNLINK, stream


def test_sample_clients_full_set(rng):
    assert np.array_equal(sample_clients(5, 5, rng), np.arange(5))


def test_sample_clients_subset_frequencies(rng):
    n, k, draws = 6, 2, 100_000
    counts = {s: 0 for s in combinations(range(n), k)}
    for _ in range(draws):
        picked = tuple(sample_clients(n, k, rng))
        counts[picked] += 1
    p = 1.0 / math.comb(n, k)
    se = math.sqrt(p * (1 - p) / draws)
    for subset, count in counts.items():
        assert abs(count / draws - p) <= 3.5 * se, subset


def test_sample_clients_marginal_inclusion(rng):
    n, k, draws = 8, 3, 50_000
    hits = np.zeros(n)
    for _ in range(draws):
        hits[sample_clients(n, k, rng)] += 1
    p = k / n
    se = math.sqrt(p * (1 - p) / draws)
    assert np.all(np.abs(hits / draws - p) <= 4 * se)


def test_sample_clients_invalid():
    with pytest.raises(ConfigError):
        sample_clients(3, 4, np.random.default_rng(0))


def test_downlink_noise_free_exact(rng):
    w = rng.normal(size=12)
    out = downlink_broadcast(w, range(4), lambda k: 0.0, "gaussian",
                             lambda k: np.random.default_rng(k))
    for received, noise in out.values():
        assert np.array_equal(received, w)
        assert np.array_equal(noise, np.zeros(12))


def test_downlink_variance_matches_schedule():
    w = np.zeros(100_000)
    zeta2 = 0.3
    out = downlink_broadcast(w, [0], lambda k: zeta2, "gaussian",
                             lambda k: np.random.default_rng(77))
    _, noise = out[0]
    assert abs(noise.var() - zeta2) / zeta2 <= 0.05


def test_downlink_clients_independent():
    w = np.zeros(100_000)
    out = downlink_broadcast(
        w, [0, 1], lambda k: 1.0, "gaussian",
        lambda k: stream(3, DOMAIN_DOWNLINK, k, 1))
    corr = np.corrcoef(out[0][1], out[1][1])[0, 1]
    assert abs(corr) < 0.02


def test_local_train_fixed_point():
    # Targets consistent with the start point and no ridge: zero gradient.
    features = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    w0 = np.array([2.0, -1.0])
    task = QuadraticTask(
        clients=[ClientData(features=features, targets=features @ w0)],
        ridge=0.0, dim=2)
    lr = LearningRateSchedule(mu=1.0, kappa=1.0, local_epochs=1)
    out = local_train(w0, task, 0, 5, None, lr, 0, np.random.default_rng(0))
    assert np.allclose(out, w0, atol=1e-14)


def test_local_train_single_full_batch_step():
    features = np.array([[1.0, 2.0], [3.0, -1.0]])
    targets = np.array([1.0, 0.5])
    task = QuadraticTask(
        clients=[ClientData(features=features, targets=targets)],
        ridge=0.1, dim=2)
    lr = LearningRateSchedule(mu=1.0, kappa=1.0, local_epochs=1)
    w0 = np.array([0.3, -0.2])
    out = local_train(w0, task, 0, 1, None, lr, 0, np.random.default_rng(0))
    grad = features.T @ (features @ w0 - targets) / 2.0 + 0.1 * w0
    assert np.allclose(out, w0 - lr.eta(1) * grad, atol=1e-14)


def test_local_full_batch_descent_is_contraction():
    task = make_task(n_clients=1, dim=4, samples_per_client=10, ridge=0.2,
                     noise_std=1.0, seed=6)
    opt = task.client_optimum(0)
    lr = LearningRateSchedule(mu=1.0, kappa=1.0, local_epochs=1)
    w = opt + 3.0
    dists = [float(np.sum((w - opt) ** 2))]
    for step in range(30):
        w = local_train(w, task, 0, 1, None, lr, step, np.random.default_rng(0))
        dists.append(float(np.sum((w - opt) ** 2)))
    assert all(a > b for a, b in zip(dists, dists[1:]))


def test_uplink_noise_free_both_modes(rng):
    w_local = rng.normal(size=6)
    w_prev = rng.normal(size=6)
    w_rec = w_prev + rng.normal(size=6)
    zero = np.zeros(6)
    assert np.array_equal(uplink_transmit(w_local, "MT", None, None, zero),
                          w_local)
    out = uplink_transmit(w_local, "MDT", w_prev, w_rec, zero)
    assert np.allclose(out, w_local - (w_rec - w_prev), atol=1e-15)


def test_uplink_mdt_recovers_injected_downlink_noise(rng):
    w_local = rng.normal(size=8)
    w_prev = rng.normal(size=8)
    downlink_noise = rng.normal(size=8)
    out = uplink_transmit(w_local, "MDT", w_prev, w_prev + downlink_noise,
                          np.zeros(8))
    assert np.allclose(out - w_local, -downlink_noise, atol=1e-14)


def test_uplink_mdt_requires_cached_reception(rng):
    with pytest.raises(ConfigError):
        uplink_transmit(rng.normal(size=3), "MDT", None, None, np.zeros(3))


def test_uplink_mt_residual_variance(rng):
    w = np.zeros(100_000)
    sigma2 = 0.4
    noise = rng.normal(scale=math.sqrt(sigma2), size=w.size)
    out = uplink_transmit(w, "MT", None, None, noise)
    assert abs(out.var() - sigma2) / sigma2 <= 0.05


def test_aggregate_matches_mean_oracle(rng):
    vectors = [rng.normal(size=9) for _ in range(7)]
    naive = sum(vectors) / 7.0
    assert np.allclose(aggregate(vectors), naive, atol=1e-12)
    assert np.array_equal(aggregate([vectors[0]]), vectors[0])
    same = [vectors[1]] * 4
    assert np.allclose(aggregate(same), vectors[1], atol=1e-15)


def test_degenerate_run_equals_plain_gradient_descent():
    task = make_task(n_clients=1, dim=4, samples_per_client=10, ridge=0.2,
                     noise_std=1.0, seed=6)
    cfg = RunConfig(n_participants=1, rounds=40, local_epochs=1,
                    batch_size=None, policy_name="noise_free", seed=0)
    result = run(task, cfg)

    w = np.zeros(4)
    lr = result.lr
    for t in range(1, 41):
        w = w - lr.eta(t) * task.client_gradient(0, w)
    assert np.allclose(result.final_model, w, atol=1e-12)
    opt = task.global_optimum()
    assert result.traces[-1].sq_dist == pytest.approx(
        float(np.sum((w - opt) ** 2)), abs=1e-12)


def test_identical_seeds_identical_traces(small_task):
    kw = dict(n_participants=3, rounds=15, local_epochs=2, batch_size=3,
              mode="MT", policy_name="mt_partial", seed=21)
    a = run(small_task, RunConfig(**kw))
    b = run(small_task, RunConfig(**kw))
    assert all(x.as_row() == y.as_row() for x, y in zip(a.traces, b.traces))
    assert np.array_equal(a.final_model, b.final_model)


def test_virtual_process_equivalence(small_task):
    # Training every client but aggregating only the sampled ones reproduces
    # the sampled-only run exactly, for both transmission modes.
    for mode, policy, params in (("MT", "mt_partial", {}),
                                 ("MDT", "mdt_constant_snr",
                                  {"snr_target": 5.0})):
        kw = dict(n_participants=2, rounds=10, local_epochs=2, batch_size=3,
                  mode=mode, policy_name=policy, policy_params=params, seed=4)
        plain = run(small_task, RunConfig(**kw))
        virtual = run(small_task, RunConfig(**kw, virtual_all_clients=True))
        assert np.array_equal(plain.final_model, virtual.final_model)
        assert all(x.sq_dist == y.sq_dist
                   for x, y in zip(plain.traces, virtual.traces))


def test_virtual_sequences_identities(small_task):
    cfg = RunConfig(n_participants=6, rounds=8, local_epochs=2, batch_size=3,
                    mode="MT", policy_name="mt_full", seed=13,
                    record_virtual=True)
    result = run(small_task, cfg)
    assert len(result.virtual) == 8
    for i, v in enumerate(result.virtual):
        # Full participation: the sampling-average equals the all-client
        # average, and the server model is exactly the noise-bearing average.
        assert np.allclose(v.u_bar, v.v_bar, atol=1e-12)
        assert np.allclose(v.u_bar - v.p_bar, -result.mean_uplink_noise[i],
                           atol=1e-12)
        if i + 1 < len(result.virtual):
            next_down = result.mean_downlink_noise[i + 1]
            assert np.allclose(v.w_bar - v.p_bar, next_down, atol=1e-12)


def test_virtual_p_bar_is_global_model(small_task):
    cfg = RunConfig(n_participants=6, rounds=6, local_epochs=2, batch_size=3,
                    mode="MT", policy_name="mt_full", seed=3,
                    record_virtual=True)
    result = run(small_task, cfg)
    # Recompute the traced distances from p_bar: identical means p_bar == w_t.
    opt = result.constants.opt
    for v, tr in zip(result.virtual, result.traces):
        assert float(np.sum((v.p_bar - opt) ** 2)) == pytest.approx(
            tr.sq_dist, abs=1e-12)


def test_virtual_sequences_coincide_without_noise(small_task):
    cfg = RunConfig(n_participants=6, rounds=5, local_epochs=2, batch_size=3,
                    mode="MT", policy_name="noise_free", seed=8,
                    record_virtual=True)
    result = run(small_task, cfg)
    for v in result.virtual:
        assert np.allclose(v.v_bar, v.u_bar, atol=1e-14)
        assert np.allclose(v.u_bar, v.p_bar, atol=1e-14)
        assert np.allclose(v.p_bar, v.w_bar, atol=1e-14)


def test_virtual_recording_requires_full_participation(small_task):
    with pytest.raises(ConfigError):
        run(small_task, RunConfig(n_participants=2, rounds=3,
                                  policy_name="noise_free",
                                  record_virtual=True))


def test_divergence_guard_aborts_with_partial_trace(small_task):
    cfg = RunConfig(n_participants=3, rounds=50, local_epochs=2, batch_size=3,
                    mode="MT", policy_name="equal_power",
                    policy_params={"snr_db": -70.0}, seed=2,
                    divergence_factor=100.0)
    with pytest.raises(DivergenceError) as excinfo:
        run(small_task, cfg)
    assert len(excinfo.value.traces) >= 1


def test_mdt_residual_is_model_plus_upload_minus_downlink_noise(small_task):
    # In the noiseless-uplink limit the reconstruction differs from the local
    # model by exactly the injected downlink noise (per-round check).
    cfg = RunConfig(n_participants=6, rounds=4, local_epochs=2, batch_size=3,
                    mode="MDT", policy_name="mdt_constant_snr",
                    policy_params={"snr_target": 1e12}, seed=5,
                    record_virtual=True)
    result = run(small_task, cfg)
    for i, v in enumerate(result.virtual):
        gap = v.u_bar - v.p_bar
        expected = result.mean_downlink_noise[i] - result.mean_uplink_noise[i]
        assert np.allclose(gap, expected, atol=1e-10)


def test_schedule_on_iteration_timeline(small_task):
    cfg = RunConfig(n_participants=3, rounds=10, local_epochs=2, batch_size=3,
                    mode="MT", policy_name="mt_partial", seed=6,
                    schedule_on="iteration")
    result = run(small_task, cfg)
    # Iteration indexing evaluates the uplink schedule at t*E: strictly less
    # noise than round indexing at the same round.
    round_cfg = RunConfig(n_participants=3, rounds=10, local_epochs=2,
                          batch_size=3, mode="MT", policy_name="mt_partial",
                          seed=6)
    round_result = run(small_task, round_cfg)
    assert result.traces[0].sigma2_ul < round_result.traces[0].sigma2_ul


def test_analog_channel_run_converges(small_task):
    cfg = RunConfig(n_participants=3, rounds=40, local_epochs=2, batch_size=3,
                    mode="MT", channel="analog_physical",
                    policy_name="power_t2", seed=10)
    result = run(small_task, cfg)
    assert result.traces[-1].sq_dist < result.traces[0].sq_dist
    assert all(tr.div_ul == 1 for tr in result.traces)


def test_analog_diversity_run_uses_integer_orders(small_task):
    cfg = RunConfig(n_participants=3, rounds=40, local_epochs=2, batch_size=3,
                    mode="MT", channel="analog_physical",
                    policy_name="diversity_t2",
                    policy_params={"rho_uplink": 2.0, "rho_downlink": 2.0},
                    seed=10)
    result = run(small_task, cfg)
    orders = [tr.div_ul for tr in result.traces]
    assert orders == sorted(orders)
    assert orders[-1] > orders[0] >= 1
    assert result.traces[-1].sq_dist < result.traces[0].sq_dist


def test_energy_accumulates_monotonically(small_task):
    cfg = RunConfig(n_participants=3, rounds=20, local_epochs=2, batch_size=3,
                    mode="MT", policy_name="power_t2", seed=1)
    result = run(small_task, cfg)
    energies = [tr.energy_cum for tr in result.traces]
    assert all(a < b for a, b in zip(energies, energies[1:]))
    assert result.energy_uplink > 0 and result.energy_downlink > 0


def test_trace_rounds_strictly_increasing(small_task):
    cfg = RunConfig(n_participants=3, rounds=12, local_epochs=1, batch_size=3,
                    policy_name="noise_free", seed=0)
    result = run(small_task, cfg)
    ts = [tr.t for tr in result.traces]
    assert ts == list(range(1, 13))
