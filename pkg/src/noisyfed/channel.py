"""Channel models: scheduled effective noise and an analog fading layer.

Two abstractions, matching how the rest of the package consumes them:

* effective noise — zero-mean IID perturbations parameterized purely by their
  per-element variance, with Gaussian, uniform, or Laplace marginals;
* an analog layer — narrowband fading with truncated channel inversion at the
  transmitter, over-the-air summation of simultaneous uploads, and receiver
  diversity combining.  Transmitted values ride the in-phase component and the
  post-processing effective noise is modeled as real with unit variance per
  element at unit power.

Deep fades are handled by redrawing the fade (a retransmission) whenever the
small-scale magnitude falls below the inversion floor; after ``max_retries``
consecutive failures the transmission errors out.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ChannelError, CombiningError, ConfigError, PolicyError

NOISE_DISTRIBUTIONS = ("gaussian", "uniform", "laplace")

INVERSION_FLOOR = 0.05
MAX_FADE_RETRIES = 10


@dataclass(frozen=True)
class NoiseSpec:
    """Zero-mean IID effective noise with a prescribed per-element variance."""

    variance: float
    distribution: str = "gaussian"

    def __post_init__(self):
        if self.variance < 0:
            raise PolicyError("noise variance must be non-negative")
        if self.distribution not in NOISE_DISTRIBUTIONS:
            raise ConfigError(
                f"unknown distribution {self.distribution!r}; "
                f"expected one of {NOISE_DISTRIBUTIONS}")


def sample_noise(spec, size, rng):
    """Draw IID noise matching ``spec``'s variance exactly in expectation."""
    if spec.variance == 0.0:
        return np.zeros(size)
    std = math.sqrt(spec.variance)
    if spec.distribution == "gaussian":
        return rng.normal(0.0, std, size=size)
    if spec.distribution == "uniform":
        half_width = math.sqrt(3.0 * spec.variance)
        return rng.uniform(-half_width, half_width, size=size)
    # Laplace with scale b has variance 2 b^2.
    return rng.laplace(0.0, math.sqrt(spec.variance / 2.0), size=size)


def add_effective_noise(v, spec, rng):
    """Return ``v`` plus IID effective noise; exact copy when variance is 0."""
    v = np.asarray(v, dtype=np.float64)
    if spec.variance == 0.0:
        return v.copy()
    return v + sample_noise(spec, v.shape, rng)


@dataclass(frozen=True)
class FadingDraw:
    """Large-scale pathloss plus per-element complex small-scale gains."""

    pathloss_exponent: float
    distance: float
    small_scale: np.ndarray

    def __post_init__(self):
        if self.distance <= 0:
            raise ConfigError("distance must be positive")

    @property
    def large_scale(self):
        return self.distance ** (-self.pathloss_exponent / 2.0)


def draw_fades(shape, rng, floor=INVERSION_FLOOR, max_retries=MAX_FADE_RETRIES):
    """Rayleigh small-scale gains with E|h|^2 = 1, redrawn above ``floor``.

    Returns ``(gains, retries)`` where ``retries`` counts redraws (each one a
    retransmission of that element).
    """
    gains = (rng.normal(size=shape) + 1j * rng.normal(size=shape)) / math.sqrt(2.0)
    retries = 0
    mask = np.abs(gains) < floor
    attempts = 0
    while np.any(mask):
        attempts += 1
        if attempts > max_retries:
            raise ChannelError(
                f"deep fade persisted beyond {max_retries} retransmissions")
        n_bad = int(mask.sum())
        retries += n_bad
        redraw = (rng.normal(size=n_bad) + 1j * rng.normal(size=n_bad)) \
            / math.sqrt(2.0)
        gains[mask] = redraw
        mask = np.abs(gains) < floor
    return gains, retries


def analog_uplink_aggregate(models, power, rng, copies=1, distance=1.0,
                            pathloss=2.0, floor=INVERSION_FLOOR,
                            max_retries=MAX_FADE_RETRIES, noise_scale=1.0):
    """Over-the-air sum of simultaneous uploads under channel inversion.

    Every client pre-inverts its fade so each element arrives as
    ``sqrt(power)/K * sum_k models[k]`` plus unit-variance receiver noise; the
    returned vector is rescaled by ``1/sqrt(power)``, i.e. the client average
    plus noise of per-element variance ``1/(power * copies)``.  ``copies``
    independent receptions are averaged.  ``noise_scale=0`` disables receiver
    noise (test hook).

    Returns ``(aggregate, info)`` with ``info['retries']`` counting deep-fade
    retransmissions and ``info['peak_power']`` the largest instantaneous
    transmit power used by any element.
    """
    models = np.atleast_2d(np.asarray(models, dtype=np.float64))
    n_clients, dim = models.shape
    if power <= 0:
        raise PolicyError("transmit power must be positive")
    if copies < 1:
        raise ConfigError("copies must be >= 1")

    large_scale = distance ** (-pathloss / 2.0)
    total_retries = 0
    peak_power = 0.0
    mean = models.mean(axis=0)
    received = []
    for _ in range(copies):
        gains, retries = draw_fades((n_clients, dim), rng, floor, max_retries)
        total_retries += retries
        # Inversion cancels the channel exactly; its cost shows up as the
        # instantaneous power sqrt(power)/(large_scale*|h|) per element.
        inst = power / (large_scale ** 2 * np.abs(gains) ** 2)
        peak_power = max(peak_power, float(inst.max()))
        noise = noise_scale * rng.normal(size=dim)
        received.append(mean + noise / math.sqrt(power))
    aggregate = diversity_combine(received)
    return aggregate, {"retries": total_retries, "peak_power": peak_power}


def analog_downlink_receive(v, power, rng, copies=1, distance=1.0,
                            pathloss=2.0, floor=INVERSION_FLOOR,
                            max_retries=MAX_FADE_RETRIES, noise_scale=1.0):
    """One client's reception of a broadcast, equalized per copy and combined.

    The receiver divides each copy by its known complex gain (same truncated
    inversion floor as the uplink), so copy q carries noise of per-element
    variance ``1/(power * distance**-pathloss * |h_q|^2)``.

    Returns ``(estimate, info)``.
    """
    v = np.asarray(v, dtype=np.float64)
    if power <= 0:
        raise PolicyError("transmit power must be positive")
    if copies < 1:
        raise ConfigError("copies must be >= 1")
    gain2 = distance ** (-pathloss)
    total_retries = 0
    received = []
    for _ in range(copies):
        fades, retries = draw_fades(v.shape, rng, floor, max_retries)
        total_retries += retries
        noise_std = noise_scale / np.sqrt(power * gain2 * np.abs(fades) ** 2)
        received.append(v + noise_std * rng.normal(size=v.shape))
    return diversity_combine(received), {"retries": total_retries}


def diversity_combine(copies):
    """Average independent receptions; noise variance drops by the copy count."""
    copies = list(copies)
    if not copies:
        raise CombiningError("no copies to combine")
    stack = np.stack([np.asarray(c, dtype=np.float64) for c in copies])
    return stack.mean(axis=0)


@dataclass(frozen=True)
class SnrMeasurement:
    """Realized signal/noise powers for one aggregation round."""

    signal_power: float
    noise_power: float
    ratio: float


def measure_global_snr(signal_sum, noise_sum, mode="MT"):
    """Per-round realized SNR of the aggregate: ||signal||^2 / ||noise||^2.

    For differential upload the caller's ``noise_sum`` already contains both
    uplink and downlink terms.  Zero noise reports an infinite ratio.
    """
    if mode not in ("MT", "MDT"):
        raise ConfigError("mode must be 'MT' or 'MDT'")
    signal_sum = np.asarray(signal_sum, dtype=np.float64)
    noise_sum = np.asarray(noise_sum, dtype=np.float64)
    if signal_sum.shape != noise_sum.shape:
        raise ConfigError("signal and noise sums must have equal lengths")
    sig = float(signal_sum @ signal_sum)
    noi = float(noise_sum @ noise_sum)
    ratio = math.inf if noi == 0.0 else sig / noi
    return SnrMeasurement(signal_power=sig, noise_power=noi, ratio=ratio)
