"""Quadratic-phase AWGN channel per receive node, priors, and RNG stream derivation."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .framing import Frame

TWO_PI = 2.0 * np.pi


class Role(IntEnum):
    """Stream roles; part of the key that selects an independent RNG substream."""

    DATA = 0
    PARAMS = 1
    NOISE = 2
    ESTIMATOR = 3


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Counter-based Philox stream keyed by ``(seed, *key)``.

    Distinct keys give non-overlapping streams, so results do not depend on the
    order in which bursts or nodes are processed.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def wrap_phase(x):
    """Map angles to (-pi, pi]; both +pi and -pi map to +pi."""
    return np.pi - np.mod(np.pi - np.asarray(x, dtype=np.float64), TWO_PI)


def wrapped_error(estimate, truth):
    """Smallest signed difference estimate - truth modulo 2*pi."""
    return wrap_phase(np.asarray(estimate) - np.asarray(truth))


@dataclass(frozen=True)
class PriorSpec:
    omega_max: float = 0.01
    epsilon_max: float = 1e-5

    def __post_init__(self):
        if not (self.omega_max > 0 and self.epsilon_max > 0):
            raise ValueError("prior half-widths must be positive")
        if self.omega_max >= 0.5 or self.epsilon_max >= 1e-2:
            raise ValueError("prior half-widths are not small compared to 1/T, 1/T^2")


@dataclass(frozen=True)
class ChannelParams:
    theta: float
    omega: float
    epsilon: float

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.omega, self.epsilon])


@dataclass(frozen=True, eq=False)
class NodeObservation:
    samples: np.ndarray
    sigma2: float
    node_id: int = 0

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")

    @property
    def length(self) -> int:
        return self.samples.size


def sample_params(rng: np.random.Generator, prior: PriorSpec) -> ChannelParams:
    theta = float(wrap_phase(rng.uniform(-np.pi, np.pi)))
    omega = float(rng.uniform(-prior.omega_max, prior.omega_max))
    epsilon = float(rng.uniform(-prior.epsilon_max, prior.epsilon_max))
    return ChannelParams(theta, omega, epsilon)


def unwrapped_trajectory(p: ChannelParams, L: int) -> np.ndarray:
    k = np.arange(L, dtype=np.float64)
    return p.theta + p.omega * k + p.epsilon * k * k


def phase_trajectory(p: ChannelParams, L: int) -> np.ndarray:
    if L < 1:
        raise ValueError("L must be >= 1")
    return wrap_phase(unwrapped_trajectory(p, L))


def apply(frame: Frame, p: ChannelParams, sigma2: float, rng: np.random.Generator,
          node_id: int = 0) -> NodeObservation:
    """y_k = x_k exp(j phi_k) + v_k with complex noise of total variance sigma2."""
    phi = phase_trajectory(p, frame.length)
    scale = np.sqrt(sigma2 / 2.0)
    noise = scale * (rng.standard_normal(frame.length) + 1j * rng.standard_normal(frame.length))
    return NodeObservation(frame.symbols * np.exp(1j * phi) + noise, float(sigma2), node_id)


def snr_db_to_sigma2(snr_db) -> float:
    """Es/N0 in dB to total complex noise variance for unit-energy symbols."""
    return float(10.0 ** (-np.asarray(snr_db, dtype=np.float64) / 10.0))
