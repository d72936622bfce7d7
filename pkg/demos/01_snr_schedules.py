"""Tour of the SNR-control schedules.

Prints the noise-power schedules for all three run families, shows that they
sit exactly on the decaying SGD-noise floor, and tabulates the quadratic power
growth, the exact budget split, and the five-stage diversity staircase.
"""

import numpy as np

from noisyfed import (LearningRateSchedule, budget_split, diversity_orders,
                      downlink_power, mdt_downlink_noise, mt_full_noise,
                      mt_partial_noise, reference_diversity_schedule,
                      uplink_power)

lr = LearningRateSchedule(mu=1.0, kappa=1.0, local_epochs=5)
n_clients, n_participants, snr_target = 10, 5, 10.0

print("learning rate: eta_t = 2/(mu (gamma + t)), gamma =", lr.gamma)
print()
print(f"{'t':>5} {'total ul':>10} {'total dl':>10} {'per-cl ul':>10} "
      f"{'per-cl dl':>10} {'mdt dl':>10}")
for t in (1, 2, 5, 10, 50, 100, 500):
    su, sd = mt_full_noise(t, n_clients, lr)
    pu, pd = mt_partial_noise(t, n_clients, n_participants, lr)
    md = mdt_downlink_noise(t, n_clients, n_participants, snr_target, lr)
    print(f"{t:>5} {su:>10.4f} {sd:>10.4f} {pu:>10.4f} {pd:>10.4f} {md:>10.4f}")

print()
print("the schedules hug the SGD noise floor: schedule(t+1) == N^2 eta_t^2")
for t in (1, 10, 100):
    lhs = mt_full_noise(t + 1, n_clients, lr)[0]
    rhs = n_clients ** 2 * lr.eta(t) ** 2
    print(f"  t={t:<4} schedule={lhs:.6f}  N^2 eta^2={rhs:.6f}  "
          f"ratio={lhs / rhs:.12f}")

print()
print("transmit power growing as t^2 (uplink / downlink):")
for t in (1, 10, 100, 1000):
    print(f"  t={t:<5} rho_ul={uplink_power(t, n_participants, lr):>12.2f}  "
          f"rho_dl={downlink_power(t, n_clients, lr):>12.2f}")

split = budget_split(100.0, 10)
print()
print("quadratic split of a budget of 100 over 10 rounds "
      f"(sum={split.sum():.12f}):")
print(" ", np.array2string(split, precision=3))

print()
print("five-stage diversity staircase over 500 rounds, per-shot power 10:")
prev = None
for t in range(1, 501):
    order = reference_diversity_schedule(t)
    if order != prev:
        agree = diversity_orders(order * 10.0, 10.0) == order
        print(f"  from round {t:>3}: order {order:>2} "
              f"(ceiling rule agrees: {agree})")
        prev = order
