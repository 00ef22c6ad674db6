"""Quantized random-walk phase tracker followed by unwrapping and quadratic regression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .channel import NodeObservation, PriorSpec, TWO_PI
from .framing import ALPHABET
from .graph import NodeEstimate, symbol_pmfs

SIGMA_W_MODES = ("sixth", "uniform_var")
MEAN_MODES = ("circular", "linear")
TAIL_TOL = 1e-12


def max_phase_step(prior: PriorSpec, L: int) -> float:
    """Largest phase increment between consecutive symbols: omega_m + eps_m (2L - 3)."""
    if L < 2:
        raise ValueError("L must be >= 2")
    return prior.omega_max + prior.epsilon_max * (2 * L - 3)


def sigma_w2_from_priors(prior: PriorSpec, L: int, mode: str = "sixth") -> float:
    """Random-walk increment variance matched to the prior ranges.

    ``sixth`` uses delta/6; ``uniform_var`` the variance delta^2/3 of
    U(-delta, delta).
    """
    d = max_phase_step(prior, L)
    if mode == "sixth":
        return d / 6.0
    if mode == "uniform_var":
        return d * d / 3.0
    raise ValueError(f"sigma_w mode must be one of {SIGMA_W_MODES}")


@dataclass(frozen=True, eq=False)
class PhaseGrid:
    n_q: int
    sigma_w2: float
    angles: np.ndarray
    kernel: np.ndarray


@dataclass
class GridMessages:
    local: np.ndarray
    forward: np.ndarray
    backward: np.ndarray
    posterior: np.ndarray
    degenerate: int


@dataclass(frozen=True)
class FitResult:
    theta_hat: float
    omega_hat: float
    epsilon_hat: float
    rss: float


@dataclass(frozen=True)
class RWConfig:
    n_q: int = 100
    sigma_w_mode: str = "sixth"
    mean_mode: str = "circular"
    backend: str | None = None

    def __post_init__(self):
        if self.sigma_w_mode not in SIGMA_W_MODES:
            raise ValueError(f"sigma_w_mode must be one of {SIGMA_W_MODES}")
        if self.mean_mode not in MEAN_MODES:
            raise ValueError(f"mean_mode must be one of {MEAN_MODES}")


def grid_angles(n_q: int) -> np.ndarray:
    """Cell centres -pi + 2 pi (l + 1/2) / n_q."""
    return -np.pi + TWO_PI * (np.arange(n_q) + 0.5) / n_q


def build_kernel(n_q: int, sigma_w2: float) -> PhaseGrid:
    """Wrapped-Gaussian transition matrix on the grid (symmetric circulant, rows sum to 1)."""
    if n_q < 4:
        raise ValueError("n_q must be >= 4")
    if not sigma_w2 > 0:
        raise ValueError("sigma_w2 must be positive")
    angles = grid_angles(n_q)
    sd = np.sqrt(sigma_w2)
    # enough 2*pi translates that the dropped tail is below TAIL_TOL relative
    n_wrap = int(np.ceil((np.sqrt(2.0 * np.log(1.0 / TAIL_TOL)) * sd) / TWO_PI)) + 1
    g = np.arange(-n_wrap, n_wrap + 1)
    lag = TWO_PI * np.arange(n_q) / n_q
    lag = np.where(lag > np.pi, lag - TWO_PI, lag)
    d = lag[:, None] + TWO_PI * g[None, :]
    row0 = np.exp(-(d * d) / (2.0 * sigma_w2)).sum(axis=1)
    if row0.sum() == 0.0:
        row0 = np.zeros(n_q)
        row0[0] = 1.0
    row0 = row0 / row0.sum()
    idx = (np.arange(n_q)[None, :] - np.arange(n_q)[:, None]) % n_q
    return PhaseGrid(n_q, float(sigma_w2), angles, row0[idx])


def local_messages(y, incoming, sigma2: float, angles: np.ndarray) -> np.ndarray:
    """mu_{f_k -> phi_k}: sum_x p(x) exp(-|y_k - x e^{j phi}|^2 / sigma2) on the grid, normalized per k."""
    y = np.asarray(y)
    z = y[:, None] * np.exp(-1j * angles)[None, :]
    # the common factor exp(-(|y|^2 + 1) / sigma2) cancels in the normalization
    a = 2.0 * np.real(np.conj(ALPHABET)[None, None, :] * z[:, :, None]) / sigma2
    with np.errstate(divide="ignore"):
        logp = np.log(np.asarray(incoming, dtype=np.float64))[:, None, :]
    t = a + logp
    m = t.max(axis=(1, 2), keepdims=True)
    msg = np.exp(t - m).sum(axis=2)
    return msg / msg.sum(axis=1, keepdims=True)


def forward_backward(y, incoming, sigma2: float, grid: PhaseGrid, backend: str | None = None) -> GridMessages:
    local = local_messages(y, incoming, sigma2, grid.angles)
    fwd, bwd, post, bad = kernels.forward_backward(local, grid.kernel, backend)
    return GridMessages(local, fwd, bwd, post, int(bad))


def posterior_phase_mean(posterior, angles, mode: str = "circular") -> np.ndarray:
    p = np.asarray(posterior)
    if mode == "circular":
        return np.angle(p @ np.exp(1j * angles))
    if mode == "linear":
        return p @ angles
    raise ValueError(f"mean mode must be one of {MEAN_MODES}")


def unwrap(phases) -> np.ndarray:
    """Add multiples of 2 pi so that successive differences lie in (-pi, pi]."""
    x = np.asarray(phases, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    # whole turns to remove at each step; the input is returned unchanged when no step wraps
    turns = np.ceil((np.diff(x) - np.pi) / TWO_PI)
    out = x.copy()
    out[1:] -= TWO_PI * np.cumsum(turns)
    return out


def quadratic_fit(phases, k=None) -> FitResult:
    """Least-squares fit phases ~ theta + omega k + eps k^2 (k defaults to 0..n-1).

    Solved in a centred, scaled basis and mapped back to the k origin.
    """
    yv = np.asarray(phases, dtype=np.float64)
    kv = np.arange(yv.size, dtype=np.float64) if k is None else np.asarray(k, dtype=np.float64)
    if yv.size < 3:
        raise ValueError("need at least 3 points")
    c = kv.mean()
    s = max(np.abs(kv - c).max(), 1.0)
    t = (kv - c) / s
    X = np.stack([np.ones_like(t), t, t * t], axis=1)
    G = X.T @ X
    b = X.T @ yv
    a0, a1, a2 = np.linalg.solve(G, b)
    # phases = a0 + a1 (k-c)/s + a2 (k-c)^2/s^2
    eps = a2 / (s * s)
    om = a1 / s - 2.0 * a2 * c / (s * s)
    th = a0 - a1 * c / s + a2 * c * c / (s * s)
    resid = yv - (th + om * kv + eps * kv * kv)
    return FitResult(float(th), float(om), float(eps), float(resid @ resid))


def upward_messages(fit: FitResult, y, sigma2: float, n_preamble: int) -> np.ndarray:
    k = np.arange(np.asarray(y).size, dtype=np.float64)
    phi = fit.theta_hat + fit.omega_hat * k + fit.epsilon_hat * k * k
    return symbol_pmfs(y, phi, sigma2)


def track(y, incoming, sigma2: float, grid: PhaseGrid, mean_mode: str = "circular",
          backend: str | None = None) -> tuple[FitResult, GridMessages, np.ndarray]:
    msgs = forward_backward(y, incoming, sigma2, grid, backend)
    phases = unwrap(posterior_phase_mean(msgs.posterior, grid.angles, mean_mode))
    return quadratic_fit(phases), msgs, phases


def make_estimator(prior: PriorSpec, cfg: RWConfig, n_preamble: int, L: int):
    grid = build_kernel(cfg.n_q, sigma_w2_from_priors(prior, L, cfg.sigma_w_mode))

    def _est(obs: NodeObservation, down, rng) -> NodeEstimate:
        fit, msgs, phases = track(obs.samples, down, obs.sigma2, grid, cfg.mean_mode, cfg.backend)
        up = upward_messages(fit, obs.samples, obs.sigma2, n_preamble)
        return NodeEstimate(fit.theta_hat, fit.omega_hat, fit.epsilon_hat, up,
                            {"degenerate": msgs.degenerate}, phases)

    return _est
