"""The statistical oracles behind the convergence guarantees.

Each oracle re-derives one moment identity from scratch: averaged uplink
noise, subset sampling of frozen local models, the differential-upload
variance bound, and the one-step SGD contraction.  The script then compares
the closed-form distance bound against both the numeric recursion it was
derived from and an actual simulated run.
"""

import numpy as np

from noisyfed import (BoundSpec, LearningRateSchedule, RunConfig,
                      convergence_bound, derive_constants, induction_constant,
                      make_task, recursion_envelope, run, run_oracle)

rng = np.random.default_rng(7)
task = make_task(n_clients=6, dim=6, samples_per_client=12, heterogeneity=1.0,
                 ridge=0.1, noise_std=4.0, seed=5)
constants = derive_constants(task, batch=3, trajectory_radius=8.0)
lr = LearningRateSchedule.from_constants(constants, 3)

print("task constants: mu=%.3f L=%.3f Gamma=%.3f H^2=%.1f" %
      (constants.mu, constants.lipschitz, constants.gamma_noniid,
       constants.grad_bound))
print()

print(run_oracle("aggregation_noise", n_clients=4, dim=3, variances=0.5,
                 replicas=100_000, rng=rng).line())

start = constants.opt + rng.normal(size=task.dim)
models = []
for k in range(task.n_clients):
    w = start.copy()
    for j in range(1, 4):
        picks = rng.choice(12, size=3, replace=False)
        w = w - lr.eta(j) * task.sample_gradient(k, w, picks)
    models.append(w)
print(run_oracle("client_sampling", models=np.stack(models),
                 n_participants=2, eta=lr.eta(3), local_epochs=3,
                 grad_bound=constants.grad_bound).line())

print(run_oracle("differential_upload", task=task,
                 w_prev=constants.opt + 0.5, n_participants=2,
                 snr_target=10.0, downlink_variance=0.1, local_epochs=3,
                 batch=3, replicas=10_000, rng=rng).line())

state = np.stack([constants.opt + 0.3 * rng.normal(size=task.dim)
                  for _ in range(task.n_clients)])
print(run_oracle("sgd_one_step", task=task, state=state, lr=lr, iter_index=4,
                 batch=3, replicas=10_000, rng=rng, constants=constants).line())

print()
spec = BoundSpec(variant="mt_full", constants=constants, local_epochs=3,
                 n_clients=task.n_clients, n_participants=task.n_clients,
                 dim=task.dim,
                 initial_gap=float(np.sum(constants.opt ** 2)))
v = induction_constant(spec)
envelope = recursion_envelope(spec, 200)
print(f"induction constant v = {v:.1f}; numeric recursion stays below "
      f"v/(gamma+t): {bool(np.all(envelope <= v / (lr.gamma + np.arange(201)) + 1e-9))}")

stack = []
for s in range(10):
    cfg = RunConfig(n_participants=task.n_clients, rounds=120, local_epochs=3,
                    batch_size=3, mode="MT", policy_name="mt_full",
                    seed=900 + s)
    stack.append(run(task, cfg).sq_dists)
mean_sq = np.mean(stack, axis=0)
print()
print(f"{'round':>6} {'mean dist^2':>12} {'closed-form bound':>18} {'slack':>10}")
for t in (1, 10, 40, 120):
    bound = convergence_bound(t, spec)
    print(f"{t:>6} {mean_sq[t - 1]:>12.4f} {bound:>18.1f} "
          f"{bound / mean_sq[t - 1]:>10.0f}x")
print()
print("the bound is intentionally conservative: its gradient-norm constant is")
print("a worst case over the whole trajectory ball. the decay RATE is the")
print("sharp claim, and the measured trace follows it.")
