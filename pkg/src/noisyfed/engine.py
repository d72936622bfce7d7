"""The federated-averaging-over-noisy-channels state machine.

One run executes, per round: uniform client sampling, noisy downlink broadcast
of the current global model, local mini-batch SGD at each sampled client,
noisy uplink of either the full local model (``MT``) or its differential
against the model the client just received (``MDT``), and server-side
averaging.  Every stochastic component owns a seed-derived stream keyed by
(domain, client, round), so traces are bit-reproducible, clients can be
processed in any order, and training all clients while aggregating only the
sampled ones yields exactly the same trajectory as sampling first.

The learning rate is indexed on the per-iteration timeline (round t covers
iterations (t-1)E+1 .. tE); noise and power schedules are indexed per round by
default, switchable to the aggregation-instant iteration index.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import (NoiseSpec, add_effective_noise, analog_downlink_receive,
                      analog_uplink_aggregate, measure_global_snr)
from .errors import AggregationError, ConfigError, DivergenceError
from .policies import build_policy, LearningRateSchedule, mdt_uplink_variance
from .seeding import (DOMAIN_BATCH, DOMAIN_DOWNLINK, DOMAIN_FADE_DOWNLINK,
                      DOMAIN_FADE_UPLINK, DOMAIN_SAMPLING, DOMAIN_UPLINK,
                      stream)
from .tasks import derive_constants, stochastic_gradient
from .vectors import mean_of, squared_distance

TRACE_COLUMNS = ("t", "sq_dist", "loss", "eta", "sigma2_ul", "zeta2_dl",
                 "rho_ul", "rho_dl", "div_ul", "div_dl", "snr_global",
                 "energy_cum")

TRANSMISSION_MODES = ("MT", "MDT")
CHANNEL_LAYERS = ("effective_noise", "analog_physical")
SCHEDULE_TIMELINES = ("round", "iteration")


@dataclass(frozen=True)
class RoundTrace:
    """Observables recorded after each aggregation round."""

    t: int
    sq_dist: float
    loss: float
    eta: float
    sigma2_ul: float
    zeta2_dl: float
    rho_ul: float
    rho_dl: float
    div_ul: int
    div_dl: int
    snr_global: float
    energy_cum: float

    def as_row(self):
        return tuple(getattr(self, name) for name in TRACE_COLUMNS)


@dataclass(frozen=True)
class VirtualSequences:
    """Averaged trajectories at one aggregation instant (full participation).

    ``p_bar`` coincides with the server's global model; ``w_bar`` adds the mean
    of the next broadcast's downlink noises; ``u_bar`` strips the uplink noise
    and ``v_bar`` averages the raw local models (equal to ``u_bar`` under full
    participation).
    """

    round_index: int
    v_bar: np.ndarray
    u_bar: np.ndarray
    p_bar: np.ndarray
    w_bar: np.ndarray


@dataclass
class RunConfig:
    """Complete description of one experiment (policy given by name+params)."""

    n_participants: int
    rounds: int
    local_epochs: int = 1
    batch_size: int = None          # None = full batch
    mode: str = "MT"
    channel: str = "effective_noise"
    distribution: str = "gaussian"
    seed: int = 0
    policy_name: str = "noise_free"
    policy_params: dict = field(default_factory=dict)
    w0: object = None               # None = zero vector
    schedule_on: str = "round"
    record_virtual: bool = False
    virtual_all_clients: bool = False
    divergence_factor: float = 1e6
    trajectory_radius_factor: float = 2.0

    def __post_init__(self):
        if self.n_participants < 1 or self.rounds < 1 or self.local_epochs < 1:
            raise ConfigError("participants, rounds and local_epochs must be >= 1")
        if self.mode not in TRANSMISSION_MODES:
            raise ConfigError(f"mode must be one of {TRANSMISSION_MODES}")
        if self.channel not in CHANNEL_LAYERS:
            raise ConfigError(f"channel must be one of {CHANNEL_LAYERS}")
        if self.schedule_on not in SCHEDULE_TIMELINES:
            raise ConfigError(f"schedule_on must be one of {SCHEDULE_TIMELINES}")
        if self.divergence_factor <= 1:
            raise ConfigError("divergence_factor must exceed 1")
        if self.trajectory_radius_factor <= 0:
            raise ConfigError("trajectory_radius_factor must be positive")


@dataclass
class RunResult:
    """Everything observable from one run."""

    traces: list
    constants: object
    lr: LearningRateSchedule
    sampled: list
    virtual: list
    mean_uplink_noise: list
    mean_downlink_noise: list
    initial_model: np.ndarray
    final_model: np.ndarray
    policy_name: str
    policy_params: dict
    energy_uplink: float
    energy_downlink: float
    diagnostics: dict

    @property
    def sq_dists(self):
        return np.array([tr.sq_dist for tr in self.traces])

    @property
    def rounds(self):
        return np.array([tr.t for tr in self.traces])


def sample_clients(n_clients, n_participants, rng):
    """Uniform without-replacement subset of clients, returned sorted."""
    if not 1 <= n_participants <= n_clients:
        raise ConfigError("need 1 <= participants <= clients")
    picked = rng.choice(n_clients, size=n_participants, replace=False)
    return np.sort(picked)


def downlink_broadcast(w_global, recipients, variance_for, distribution, rng_for):
    """Deliver the global model to each recipient over its own noisy link.

    ``variance_for``/``rng_for`` map a client index to its noise variance and
    generator.  Returns ``{client: (received, noise)}``.
    """
    out = {}
    for k in recipients:
        spec = NoiseSpec(variance=variance_for(k), distribution=distribution)
        received = add_effective_noise(w_global, spec, rng_for(k))
        out[int(k)] = (received, received - w_global)
    return out


def local_train(w_start, task, client, n_steps, batch, lr, start_iter, rng,
                record_iterates=False):
    """Run ``n_steps`` of mini-batch SGD from ``w_start`` on one client.

    The learning rate of local step j is ``lr.eta(start_iter + j)`` on the
    extended per-iteration timeline.  A full batch uses the exact gradient and
    consumes no randomness.
    """
    size = task.clients[client].size
    batch = size if batch is None else batch
    w = np.array(w_start, dtype=np.float64, copy=True)
    iterates = []
    for j in range(1, n_steps + 1):
        eta = lr.eta(start_iter + j)
        if batch >= size:
            grad = task.client_gradient(client, w)
        else:
            grad = stochastic_gradient(task, client, w, batch, rng)
        w = w - eta * grad
        if not np.all(np.isfinite(w)):
            raise DivergenceError(
                f"client {client}: non-finite iterate at local step {j}")
        if record_iterates:
            iterates.append(w.copy())
    if record_iterates:
        return w, iterates
    return w


def uplink_transmit(w_local, mode, w_prev_global, w_received, noise):
    """Server-side reconstruction of one client's upload.

    ``MT`` uploads the model itself; ``MDT`` uploads the differential against
    the model the client received this round, which the server adds back onto
    its retained global model.  ``noise`` is the effective uplink perturbation.
    """
    if mode == "MT":
        return w_local + noise
    if mode == "MDT":
        if w_received is None or w_prev_global is None:
            raise ConfigError(
                "differential upload needs the client's received model and "
                "the server's retained global model")
        differential = w_local - w_received
        return w_prev_global + differential + noise
    raise ConfigError(f"unknown transmission mode {mode!r}")


def aggregate(received):
    """Plain average of the received models (equal dataset sizes)."""
    received = list(received)
    if not received:
        raise AggregationError("no received models to aggregate")
    return mean_of(received)


def _schedule_indices(cfg, t):
    """(uplink, downlink) schedule indices for round t under the configured
    timeline."""
    if cfg.schedule_on == "round":
        return t, t
    e = cfg.local_epochs
    return t * e, max((t - 1) * e, 1)


def run(task, config, policy=None):
    """Execute a run and return its :class:`RunResult`.

    A prebuilt policy may be supplied; otherwise it is constructed from
    ``config.policy_name``/``policy_params`` and the task's derived constants.
    """
    n_clients = task.n_clients
    n_participants = config.n_participants
    if n_participants > n_clients:
        raise ConfigError("participants exceed the number of clients")
    dim = task.dim
    batch = config.batch_size if config.batch_size is not None \
        else task.samples_per_client
    epochs = config.local_epochs
    seed = config.seed

    w_star = task.global_optimum()
    w0 = np.zeros(dim) if config.w0 is None \
        else np.array(config.w0, dtype=np.float64, copy=True)
    if w0.shape != (dim,):
        raise ConfigError("w0 has the wrong dimension")
    initial_sq = squared_distance(w0, w_star)
    start_dist = math.sqrt(initial_sq)
    radius = config.trajectory_radius_factor * max(start_dist, 1.0)
    constants = derive_constants(task, batch, radius)
    lr = LearningRateSchedule.from_constants(constants, epochs)
    if policy is None:
        policy = build_policy(config.policy_name, config.policy_params,
                              constants, n_clients, n_participants, epochs)

    record_virtual = config.record_virtual
    if record_virtual and n_participants != n_clients:
        raise ConfigError("virtual-sequence tracing requires full participation")
    train_all = config.virtual_all_clients or record_virtual

    # Divergence guard; floored so a start at the optimum still tolerates noise.
    guard = config.divergence_factor * max(initial_sq, 1.0)

    w = w0.copy()
    traces = []
    sampled_sets = []
    virtual = []
    pending_virtual = None      # awaiting next round's downlink noise means
    mean_up_noises = []
    mean_down_noises = []
    energy_ul = 0.0
    energy_dl = 0.0
    max_iterate_dist = start_dist
    fade_retries = 0

    def downlink_variance(rp, k):
        return rp.downlink_variance_for(k)

    for t in range(1, config.rounds + 1):
        idx_up, idx_down = _schedule_indices(config, t)
        rp_up = policy.round_params(idx_up)
        rp_down = rp_up if idx_down == idx_up else policy.round_params(idx_down)

        selected = sample_clients(n_clients, n_participants,
                                  stream(seed, DOMAIN_SAMPLING, 0, t))
        sampled_sets.append(selected)
        recipients = np.arange(n_clients) if train_all else selected

        # (1) Downlink broadcast.
        received = {}
        down_noises = {}
        if config.channel == "effective_noise":
            delivered = downlink_broadcast(
                w, recipients,
                lambda k: downlink_variance(rp_down, k),
                config.distribution,
                lambda k: stream(seed, DOMAIN_DOWNLINK, int(k), t))
            for k, (w_hat, noise) in delivered.items():
                received[k] = w_hat
                down_noises[k] = noise
        else:
            for k in recipients:
                k = int(k)
                est, info = analog_downlink_receive(
                    w, power=rp_down.rho_dl,
                    rng=stream(seed, DOMAIN_FADE_DOWNLINK, k, t),
                    copies=rp_down.div_dl)
                fade_retries += info["retries"]
                received[k] = est
                down_noises[k] = est - w

        # (2) Local mini-batch SGD.
        local = {}
        for k in recipients:
            k = int(k)
            max_iterate_dist = max(max_iterate_dist,
                                   math.sqrt(squared_distance(received[k], w_star)))
            w_local = local_train(received[k], task, k, epochs, batch, lr,
                                  start_iter=(t - 1) * epochs,
                                  rng=stream(seed, DOMAIN_BATCH, k, t))
            local[k] = w_local
            max_iterate_dist = max(max_iterate_dist,
                                   math.sqrt(squared_distance(w_local, w_star)))

        # (3) Uplink transmission and (4) aggregation.
        realized_sigma2 = []
        if config.channel == "effective_noise":
            uploads = []
            up_noises = []
            for k in selected:
                k = int(k)
                var = rp_up.uplink_variance_for(k)
                if var is None:
                    diff = local[k] - received[k]
                    var = mdt_uplink_variance(diff, rp_up.snr_target)
                realized_sigma2.append(var)
                spec = NoiseSpec(variance=var, distribution=config.distribution)
                rng_up = stream(seed, DOMAIN_UPLINK, k, t)
                noise = add_effective_noise(np.zeros(dim), spec, rng_up) \
                    if var > 0 else np.zeros(dim)
                up_noises.append(noise)
                uploads.append(uplink_transmit(local[k], config.mode, w,
                                               received[k], noise))
            w_next = aggregate(uploads)
            mean_up_noises.append(np.mean(up_noises, axis=0))
        else:
            payload = np.stack([
                local[int(k)] if config.mode == "MT"
                else local[int(k)] - received[int(k)]
                for k in selected])
            agg, info = analog_uplink_aggregate(
                payload, power=rp_up.rho_ul,
                rng=stream(seed, DOMAIN_FADE_UPLINK, 0, t),
                copies=rp_up.div_ul)
            fade_retries += info["retries"]
            w_next = agg if config.mode == "MT" else w + agg
            payload_mean = payload.mean(axis=0)
            mean_up_noises.append(agg - payload_mean)
            realized_sigma2.append(1.0 / (rp_up.rho_ul * rp_up.div_ul))

        mean_down_noises.append(
            np.mean([down_noises[int(k)] for k in recipients], axis=0))

        # Realized global SNR from the simulation's ground truth.
        signal_sum = np.sum([local[int(k)] for k in selected], axis=0)
        noise_sum = n_participants * w_next - signal_sum
        snr = measure_global_snr(signal_sum, noise_sum, config.mode)

        energy_ul += rp_up.energy_ul
        energy_dl += rp_down.energy_dl
        sq = squared_distance(w_next, w_star)
        trace = RoundTrace(
            t=t,
            sq_dist=sq,
            loss=task.global_loss(w_next),
            eta=lr.eta((t - 1) * epochs + 1),
            sigma2_ul=float(np.mean(realized_sigma2)),
            zeta2_dl=float(np.mean([downlink_variance(rp_down, int(k))
                                    for k in recipients])),
            rho_ul=rp_up.rho_ul,
            rho_dl=rp_down.rho_dl,
            div_ul=rp_up.div_ul,
            div_dl=rp_down.div_dl,
            snr_global=snr.ratio,
            energy_cum=energy_ul + energy_dl,
        )
        traces.append(trace)

        if record_virtual:
            all_local = np.stack([local[k] for k in range(n_clients)])
            v_bar = all_local.mean(axis=0)
            u_bar = np.mean([local[int(k)] for k in selected], axis=0)
            if pending_virtual is not None:
                virtual.append(pending_virtual)
            pending_virtual = VirtualSequences(
                round_index=t, v_bar=v_bar, u_bar=u_bar, p_bar=w_next.copy(),
                w_bar=None)
            if virtual:
                prev = virtual[-1]
                virtual[-1] = replace(
                    prev, w_bar=prev.p_bar + mean_down_noises[-1])

        if not np.all(np.isfinite(w_next)) or sq > guard:
            raise DivergenceError(
                f"round {t}: squared distance {sq:.3e} exceeded the guard "
                f"{guard:.3e}", traces=traces)
        w = w_next

    if record_virtual and pending_virtual is not None:
        # Complete the last w_bar with a final virtual broadcast.
        t_final = config.rounds + 1
        _, idx_down = _schedule_indices(config, t_final)
        rp_final = policy.round_params(idx_down)
        tail = downlink_broadcast(
            w, np.arange(n_clients),
            lambda k: downlink_variance(rp_final, k),
            config.distribution,
            lambda k: stream(seed, DOMAIN_DOWNLINK, int(k), t_final))
        tail_mean = np.mean([noise for (_, noise) in tail.values()], axis=0)
        virtual.append(replace(pending_virtual,
                               w_bar=pending_virtual.p_bar + tail_mean))

    diagnostics = {
        "max_iterate_distance": max_iterate_dist,
        "trajectory_radius": radius,
        "radius_exceeded": max_iterate_dist > radius,
        "fade_retries": fade_retries,
    }
    return RunResult(
        traces=traces,
        constants=constants,
        lr=lr,
        sampled=sampled_sets,
        virtual=virtual,
        mean_uplink_noise=mean_up_noises,
        mean_downlink_noise=mean_down_noises,
        initial_model=w0,
        final_model=w,
        policy_name=getattr(policy, "name", config.policy_name),
        policy_params=policy.params(),
        energy_uplink=energy_ul,
        energy_downlink=energy_dl,
        diagnostics=diagnostics,
    )
