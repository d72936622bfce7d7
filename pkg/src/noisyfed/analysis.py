"""Convergence-bound evaluation, rate fitting, and the statistical oracles.

The oracles are deliberately independent of the engine: they re-create each
moment claim from scratch (exhaustive enumeration where the combinatorics
allow it, vectorized Monte Carlo otherwise) and compare against the closed
forms with 4-standard-error or 5% tolerances.
"""

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import ConfigError, StatisticalPowerError
from .policies import LearningRateSchedule
from .tasks import derive_constants
from .vectors import squared_distance

BOUND_VARIANTS = ("mt_full", "mt_partial", "mdt_constant_snr")

_MIN_MC_REPLICAS = 10_000
_EXHAUSTIVE_SUBSET_LIMIT = 10_000


@dataclass(frozen=True)
class BoundSpec:
    """Inputs of the closed-form convergence bound for one run family."""

    variant: str
    constants: object
    local_epochs: int
    n_clients: int
    n_participants: int
    dim: int
    initial_gap: float
    snr_target: float = None

    def __post_init__(self):
        if self.variant not in BOUND_VARIANTS:
            raise ConfigError(f"variant must be one of {BOUND_VARIANTS}")
        if self.variant == "mdt_constant_snr" and not self.snr_target:
            raise ConfigError("mdt_constant_snr needs a positive snr_target")
        if not 1 <= self.n_participants <= self.n_clients:
            raise ConfigError("need 1 <= participants <= clients")

    @property
    def lr(self):
        return LearningRateSchedule.from_constants(self.constants,
                                                   self.local_epochs)


def sampling_deficiency(n_clients, n_participants):
    """(N - K) / (N - 1), defined as 0 under full participation (any N)."""
    if n_participants == n_clients:
        return 0.0
    return (n_clients - n_participants) / (n_clients - 1)


def rate_constant(spec):
    """The aggregate constant scaling the 1/t convergence bound.

    Sums the SGD-variance, heterogeneity, local-drift, client-sampling, and
    channel-noise contributions appropriate to the run family.
    """
    c = spec.constants
    e = spec.local_epochs
    h2 = c.grad_bound
    base = (c.sgd_var_mean_over_squared_clients
            + 6.0 * c.lipschitz * c.gamma_noniid
            + 8.0 * (e - 1) ** 2 * h2)
    frac = sampling_deficiency(spec.n_clients, spec.n_participants)
    sampling = frac * 4.0 / spec.n_participants * e ** 2 * h2
    if spec.variant == "mt_full":
        return base + 2.0 * spec.dim
    if spec.variant == "mt_partial":
        return base + sampling + 2.0 * spec.dim
    mdt = 4.0 * e ** 2 * h2 / (spec.n_participants * spec.snr_target)
    return base + sampling + mdt + spec.dim


def bound_formula(t, mu, kappa, gamma, rate_const, local_epochs, initial_gap):
    """The raw 1/(gamma+t) bound expression, all symbols supplied explicitly."""
    bracket = 4.0 * rate_const / mu ** 2 \
        + (8.0 * kappa + local_epochs) * initial_gap
    return bracket / (gamma + t)


def convergence_bound(t, spec):
    """Closed-form upper bound on the expected squared distance after round t."""
    if t < 0:
        raise ConfigError("round index must be >= 0")
    lr = spec.lr
    return bound_formula(t, lr.mu, lr.kappa, lr.gamma, rate_constant(spec),
                         spec.local_epochs, spec.initial_gap)


def induction_constant(spec):
    """max{beta^2 D / (beta mu - 1), (gamma + 1) * initial_gap}."""
    lr = spec.lr
    d_const = rate_constant(spec)
    return max(lr.beta ** 2 * d_const / (lr.beta * lr.mu - 1.0),
               (lr.gamma + 1.0) * spec.initial_gap)


def recursion_envelope(spec, steps):
    """Iterate the one-step contraction numerically from the initial gap.

    Returns the sequence ``delta_0 .. delta_steps`` obeyed by
    ``delta_(t+1) = (1 - eta_t mu) delta_t + eta_t^2 D``; by construction it
    never exceeds ``induction_constant / (gamma + t)``.
    """
    lr = spec.lr
    d_const = rate_constant(spec)
    deltas = [spec.initial_gap]
    for t in range(1, steps + 1):
        eta = lr.eta(t)
        deltas.append((1.0 - eta * lr.mu) * deltas[-1] + eta ** 2 * d_const)
    return np.array(deltas)


@dataclass(frozen=True)
class RateFit:
    """Log-log least-squares fit of distance against round index."""

    slope: float
    intercept: float
    window: tuple
    residual: float
    excluded: int = 0


def fit_rate(rounds, values, window):
    """Fit log(value) = slope * log(t) + intercept over ``window = (lo, hi)``.

    Nonpositive values inside the window are excluded and counted; at least
    ten usable points are required.
    """
    rounds = np.asarray(rounds, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    lo, hi = window
    in_window = (rounds >= lo) & (rounds <= hi)
    usable = in_window & (values > 0)
    excluded = int(in_window.sum() - usable.sum())
    if usable.sum() < 10:
        raise ConfigError("rate fit needs at least 10 positive points in window")
    x = np.log(rounds[usable])
    y = np.log(values[usable])
    slope, intercept = np.polyfit(x, y, 1)
    resid = float(np.sqrt(np.mean((y - (slope * x + intercept)) ** 2)))
    return RateFit(slope=float(slope), intercept=float(intercept),
                   window=(lo, hi), residual=resid, excluded=excluded)


# ---------------------------------------------------------------------------
# Statistical oracles.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OracleReport:
    """Outcome of one statistical check."""

    name: str
    passed: bool
    estimate: float
    reference: float
    tolerance: float
    detail: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] {self.name}: estimate={self.estimate:.6g} "
                f"reference={self.reference:.6g} tol={self.tolerance:.3g} "
                f"{self.detail}").rstrip()


def _require_replicas(replicas):
    if replicas < _MIN_MC_REPLICAS:
        raise StatisticalPowerError(
            f"need at least {_MIN_MC_REPLICAS} replicas, got {replicas}")


def aggregation_noise_oracle(n_clients, dim, variances, replicas, rng,
                             rel_tol=0.05):
    """Moments of the averaged uplink noise across clients.

    Checks that the client-averaged noise has zero mean (within 4 standard
    errors per coordinate) and squared norm ``dim * sum(var) / N^2`` within
    ``rel_tol``.
    """
    _require_replicas(replicas)
    variances = np.broadcast_to(np.asarray(variances, dtype=np.float64),
                                (n_clients,))
    draws = rng.normal(size=(replicas, n_clients, dim)) \
        * np.sqrt(variances)[None, :, None]
    averaged = draws.mean(axis=1)
    predicted = dim * float(variances.sum()) / n_clients ** 2

    norms = np.einsum("rd,rd->r", averaged, averaged)
    estimate = float(norms.mean())
    var_ok = abs(estimate - predicted) <= rel_tol * predicted

    coord_mean = averaged.mean(axis=0)
    coord_se = averaged.std(axis=0, ddof=1) / math.sqrt(replicas)
    mean_ok = bool(np.all(np.abs(coord_mean) <= 4.0 * coord_se))

    return OracleReport(
        name="aggregation_noise_moments",
        passed=var_ok and mean_ok,
        estimate=estimate,
        reference=predicted,
        tolerance=rel_tol,
        detail=f"zero-mean check {'ok' if mean_ok else 'failed'}",
    )


def client_sampling_oracle(models, n_participants, eta, local_epochs,
                           grad_bound, replicas=None, rng=None):
    """Moments of subset-averaging applied to frozen local models.

    Enumerates all subsets exactly when their count is at most 10^4 (Monte
    Carlo otherwise): the subset average must be unbiased for the full average
    and its variance must respect the sampling-deficiency bound
    ``(N-K)/(N-1) * 4/K * eta^2 E^2 H^2``.
    """
    models = np.atleast_2d(np.asarray(models, dtype=np.float64))
    n_clients = models.shape[0]
    if not 1 <= n_participants <= n_clients:
        raise ConfigError("need 1 <= participants <= clients")
    full_mean = models.mean(axis=0)
    n_subsets = math.comb(n_clients, n_participants)

    if n_subsets <= _EXHAUSTIVE_SUBSET_LIMIT:
        subset_means = np.array([
            models[list(s)].mean(axis=0)
            for s in combinations(range(n_clients), n_participants)])
        exact = True
    else:
        if rng is None:
            raise ConfigError("Monte Carlo sampling oracle needs an rng")
        _require_replicas(replicas or 0)
        picks = np.argpartition(rng.random((replicas, n_clients)),
                                n_participants - 1, axis=1)[:, :n_participants]
        subset_means = models[picks].mean(axis=1)
        exact = False

    mean_of_means = subset_means.mean(axis=0)
    if exact:
        unbiased = bool(np.allclose(
            mean_of_means, full_mean,
            rtol=0.0, atol=1e-12 * (1.0 + np.abs(full_mean).max())))
    else:
        se = subset_means.std(axis=0, ddof=1) / math.sqrt(len(subset_means))
        unbiased = bool(np.all(np.abs(mean_of_means - full_mean)
                               <= 4.0 * se + 1e-15))
    deviations = subset_means - full_mean
    variance = float(np.einsum("sd,sd->s", deviations, deviations).mean())
    bound = (sampling_deficiency(n_clients, n_participants)
             * 4.0 / n_participants * eta ** 2 * local_epochs ** 2 * grad_bound)
    passed = unbiased and variance <= bound * (1.0 + 1e-9)
    return OracleReport(
        name="client_sampling_moments",
        passed=passed,
        estimate=variance,
        reference=bound,
        tolerance=0.0,
        detail=("exhaustive" if exact else "monte-carlo")
        + ("" if unbiased else "; unbiasedness failed"),
    )


def _train_replicas(task, client, starts, local_epochs, batch, lr, start_iter,
                    rng):
    """Vectorized mini-batch SGD over replica rows of ``starts`` (R, dim)."""
    c = task.clients[client]
    size = c.size
    w = np.array(starts, dtype=np.float64, copy=True)
    n_rep = w.shape[0]
    for j in range(1, local_epochs + 1):
        eta = lr.eta(start_iter + j)
        if batch >= size:
            resid = w @ c.features.T - c.targets[None, :]
            grads = resid @ c.features / size + task.ridge * w
        else:
            picks = np.argpartition(rng.random((n_rep, size)), batch - 1,
                                    axis=1)[:, :batch]
            rows = c.features[picks]                       # (R, B, dim)
            resid = np.einsum("rbd,rd->rb", rows, w) - c.targets[picks]
            grads = np.einsum("rb,rbd->rd", resid, rows) / batch \
                + task.ridge * w
        w = w - eta * grads
    return w


def differential_upload_oracle(task, w_prev, n_participants, snr_target,
                               downlink_variance, local_epochs, batch,
                               replicas, rng, start_iter=None):
    """Second moment of the gap between the sampling-only average and the
    reconstructed global model under constant-SNR differential upload.

    Reconstructs the claim from scratch: per replica, every client receives a
    noisy broadcast, trains, and uploads its differential with noise scaled to
    hit ``snr_target``; a random subset of size K is aggregated.  The measured
    E||gap||^2 must stay below
    ``(1 + 1/nu) d/K zeta^2 + 4 E^2/(K nu) eta^2 H^2``.
    """
    _require_replicas(replicas)
    n_clients = task.n_clients
    dim = task.dim
    if start_iter is None:
        start_iter = 0
    lr = LearningRateSchedule(
        mu=_task_mu(task), kappa=_task_kappa(task), local_epochs=local_epochs)

    w_prev = np.asarray(w_prev, dtype=np.float64)
    # Broadcast noise, local training, and differentials for every client in
    # every replica (train-all-aggregate-some keeps the subsets exchangeable).
    received = np.empty((n_clients, replicas, dim))
    trained = np.empty((n_clients, replicas, dim))
    for k in range(n_clients):
        noise = rng.normal(size=(replicas, dim)) * math.sqrt(downlink_variance)
        received[k] = w_prev[None, :] + noise
        trained[k] = _train_replicas(task, k, received[k], local_epochs, batch,
                                     lr, start_iter, rng)
    diffs = trained - received                             # (N, R, dim)
    diff_power = np.einsum("krd,krd->kr", diffs, diffs)
    sigma2 = diff_power / (dim * snr_target)
    uplink = rng.normal(size=(n_clients, replicas, dim)) \
        * np.sqrt(sigma2)[:, :, None]

    picks = np.argpartition(rng.random((replicas, n_clients)),
                            n_participants - 1, axis=1)[:, :n_participants]
    rows = np.arange(replicas)[:, None]
    sel_trained = trained[picks, rows, :]                  # (R, K, dim)
    sel_payload = (diffs + uplink)[picks, rows, :]
    u_bar = sel_trained.mean(axis=1)
    recon = w_prev[None, :] + sel_payload.mean(axis=1)
    gap = u_bar - recon
    gaps = np.einsum("rd,rd->r", gap, gap)
    estimate = float(gaps.mean())

    eta = lr.eta(start_iter + local_epochs)
    h2 = _grad_bound_for(task, w_prev, local_epochs, lr, downlink_variance)
    rhs = ((1.0 + 1.0 / snr_target) * dim / n_participants * downlink_variance
           + 4.0 * local_epochs ** 2 / (n_participants * snr_target)
           * eta ** 2 * h2)
    return OracleReport(
        name="differential_upload_variance",
        passed=estimate <= rhs,
        estimate=estimate,
        reference=rhs,
        tolerance=0.0,
        detail=f"E={local_epochs} nu={snr_target}",
    )


def sgd_one_step_oracle(task, state, lr, iter_index, batch, replicas, rng,
                        constants):
    """One SGD step from a frozen per-client state: the averaged iterate's
    expected squared distance to the optimum must respect the one-step
    contraction-plus-noise bound (with 4-standard-error slack on the
    Monte-Carlo side)."""
    _require_replicas(replicas)
    state = np.atleast_2d(np.asarray(state, dtype=np.float64))
    n_clients = state.shape[0]
    dim = state.shape[1]
    w_star = constants.opt
    eta = lr.eta(iter_index)

    w_bar = state.mean(axis=0)
    mean_grads = np.zeros((replicas, dim))
    for k in range(n_clients):
        c = task.clients[k]
        size = c.size
        if batch >= size:
            mean_grads += task.client_gradient(k, state[k])[None, :]
        else:
            picks = np.argpartition(rng.random((replicas, size)), batch - 1,
                                    axis=1)[:, :batch]
            rows = c.features[picks]
            resid = np.einsum("rbd,d->rb", rows, state[k]) - c.targets[picks]
            mean_grads += np.einsum("rb,rbd->rd", resid, rows) / batch \
                + task.ridge * state[k][None, :]
    mean_grads /= n_clients
    v_bar = w_bar[None, :] - eta * mean_grads
    diff = v_bar - w_star[None, :]
    lhs_samples = np.einsum("rd,rd->r", diff, diff)
    estimate = float(lhs_samples.mean())
    se = float(lhs_samples.std(ddof=1)) / math.sqrt(replicas)

    e = lr.local_epochs
    noise_const = (constants.sgd_var_mean_over_squared_clients
                   + 6.0 * constants.lipschitz * constants.gamma_noniid
                   + 8.0 * (e - 1) ** 2 * constants.grad_bound)
    rhs = (1.0 - eta * constants.mu) * squared_distance(w_bar, w_star) \
        + eta ** 2 * noise_const
    return OracleReport(
        name="sgd_one_step_bound",
        passed=estimate <= rhs + 4.0 * se,
        estimate=estimate,
        reference=rhs,
        tolerance=4.0 * se,
        detail=f"iter={iter_index}",
    )


def _task_mu(task):
    ridge = task.ridge
    return ridge + min(np.linalg.eigvalsh(task._data_hessian(k))[0]
                       for k in range(task.n_clients))


def _task_kappa(task):
    ridge = task.ridge
    mu = _task_mu(task)
    lip = ridge + max(np.linalg.eigvalsh(task._data_hessian(k))[-1]
                      for k in range(task.n_clients))
    return lip / mu


def _grad_bound_for(task, w_prev, local_epochs, lr, downlink_variance):
    """Conservative stochastic-gradient norm bound over the states the
    differential-upload oracle actually visits."""
    w_star = task.global_optimum()
    # Start spread: distance of w_prev plus a generous noise allowance, then
    # room for the local steps themselves.
    start = math.sqrt(squared_distance(w_prev, w_star))
    noise_room = 6.0 * math.sqrt(task.dim * max(downlink_variance, 1e-12))
    radius = max(2.0 * (start + noise_room), 1.0)
    return derive_constants(task, task.samples_per_client, radius).grad_bound


ORACLE_KINDS = ("aggregation_noise", "client_sampling", "differential_upload",
                "sgd_one_step")


def run_oracle(kind, **params):
    """Dispatch an oracle by name (see :data:`ORACLE_KINDS`)."""
    table = {
        "aggregation_noise": aggregation_noise_oracle,
        "client_sampling": client_sampling_oracle,
        "differential_upload": differential_upload_oracle,
        "sgd_one_step": sgd_one_step_oracle,
    }
    if kind not in table:
        raise ConfigError(f"unknown oracle kind {kind!r}")
    return table[kind](**params)
