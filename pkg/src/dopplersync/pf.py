"""Sequential importance sampling particle filter for (theta, omega, epsilon).

Per symbol the filter moment-matches a von Mises proposal for the initial phase
and beta proposals for the translated Doppler shift / rate, redraws the cloud,
multiplies the weights by the marginal symbol likelihood, resamples when the
effective sample size drops to N/2, and optionally regenerates the cloud around
a quadratic fit of its own phase history ("fine-tuning").
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .channel import NodeObservation, PriorSpec, wrap_phase
from .graph import NodeEstimate, symbol_pmfs
from .rw import quadratic_fit, unwrap

KAPPA_CAP = 1e4
VAR_CLAMP = 0.999
# floor on the translated variance relative to mean*(1-mean); caps U+V near 1e12
VAR_FLOOR = 1e-12
MEAN_EPS = 1e-9
RESULTANT_MIN = 1e-12


@dataclass
class ParticleSet:
    theta: np.ndarray
    omega: np.ndarray
    epsilon: np.ndarray
    weights: np.ndarray

    @property
    def n(self) -> int:
        return self.theta.size

    def copy(self) -> "ParticleSet":
        return ParticleSet(self.theta.copy(), self.omega.copy(), self.epsilon.copy(), self.weights.copy())


@dataclass(frozen=True)
class FineTuneConfig:
    enabled: bool = True
    alpha: float = 0.1
    zeta: float = 1e-3
    gamma_scale: float = 0.1
    theta_th: float = 0.05
    omega_th: float = 1e-4
    max_fires: int = 1
    # earliest firing point as a fraction of the burst; the quadratic term is
    # only resolvable from a long phase history
    start_frac: float = 0.97

    def __post_init__(self):
        if min(self.alpha, self.zeta, self.gamma_scale) <= 0:
            raise ValueError("fine-tuning half-widths must be positive")
        if not 0.0 <= self.start_frac <= 1.0:
            raise ValueError("start_frac must lie in [0, 1]")

    def first_symbol(self, n_preamble: int, L: int) -> int:
        """Smallest k at which the trigger is evaluated (always after the preamble)."""
        return max(n_preamble + 1, int(round(self.start_frac * L)))


@dataclass(frozen=True)
class PFConfig:
    n_particles: int = 400
    fine_tune: FineTuneConfig = field(default_factory=FineTuneConfig)
    kappa_cap: float = KAPPA_CAP
    backend: str | None = None

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("need at least 2 particles")


@dataclass(frozen=True)
class ProposalStats:
    mu_theta: float
    kappa_theta: float
    resultant: float
    omega_mean: float
    omega_var: float
    u_omega: float
    v_omega: float
    eps_mean: float
    eps_var: float
    u_eps: float
    v_eps: float
    clamped: bool


@dataclass
class FilterResult:
    theta_hat: np.ndarray
    omega_hat: np.ndarray
    eps_hat: np.ndarray
    phi_hat: np.ndarray
    fine_tune_at: list
    n_resamples: int
    flags: dict
    particles: ParticleSet


# ---------------------------------------------------------------- translation helpers


def to_unit(x, half_width):
    return (np.asarray(x) + half_width) / (2.0 * half_width)


def from_unit(u, half_width):
    return 2.0 * half_width * np.asarray(u) - half_width


def kappa_from_resultant(rbar: float, cap: float = KAPPA_CAP) -> float:
    """Approximate inverse of A1(kappa) = I1/I0 (three-branch rational form)."""
    r = float(rbar)
    if r < 0.53:
        k = 2.0 * r + r**3 + 5.0 * r**5 / 6.0
    elif r < 0.85:
        k = -0.4 + 1.39 * r + 0.43 / (1.0 - r)
    else:
        den = r**3 - 4.0 * r**2 + 3.0 * r
        k = cap if den <= 0.0 else 1.0 / den
    return min(k, cap)


def beta_shape(mean: float, var: float) -> tuple[float, float, bool]:
    """Moment-matched Beta(U, V); returns (U, V, clamped)."""
    m = min(max(mean, MEAN_EPS), 1.0 - MEAN_EPS)
    top = m * (1.0 - m)
    clamped = False
    if var >= top:
        var = VAR_CLAMP * top
        clamped = True
    floor = VAR_FLOOR * top
    if var < floor:
        var = floor
    c = top / var - 1.0
    return m * c, (1.0 - m) * c, clamped


def circular_mean(theta, w) -> tuple[float, float]:
    c = float(np.dot(w, np.cos(theta)))
    s = float(np.dot(w, np.sin(theta)))
    return math.atan2(s, c), math.hypot(c, s)


# ---------------------------------------------------------------- operations


def init(n: int, prior: PriorSpec, rng: np.random.Generator) -> ParticleSet:
    if n < 2:
        raise ValueError("need at least 2 particles")
    theta = rng.uniform(-np.pi, np.pi, n)
    omega = rng.uniform(-prior.omega_max, prior.omega_max, n)
    eps = rng.uniform(-prior.epsilon_max, prior.epsilon_max, n)
    return ParticleSet(theta, omega, eps, np.full(n, 1.0 / n))


def proposal_stats(ps: ParticleSet, prior: PriorSpec, kappa_cap: float = KAPPA_CAP) -> ProposalStats:
    w = ps.weights
    mu, rbar = circular_mean(ps.theta, w)
    kappa = kappa_from_resultant(rbar, kappa_cap)
    om = to_unit(ps.omega, prior.omega_max)
    ep = to_unit(ps.epsilon, prior.epsilon_max)
    om_mean = float(np.dot(w, om))
    om_var = float(np.dot(w, (om - om_mean) ** 2))
    ep_mean = float(np.dot(w, ep))
    ep_var = float(np.dot(w, (ep - ep_mean) ** 2))
    uo, vo, c1 = beta_shape(om_mean, om_var)
    ue, ve, c2 = beta_shape(ep_mean, ep_var)
    return ProposalStats(mu, kappa, rbar, om_mean, om_var, uo, vo, ep_mean, ep_var, ue, ve, c1 or c2)


def draw_particles(stats: ProposalStats, n: int, rng: np.random.Generator, prior: PriorSpec):
    """Draw (theta, omega, epsilon) arrays; the draw order is part of the RNG contract."""
    theta = rng.vonmises(stats.mu_theta, stats.kappa_theta, n)
    om = rng.beta(stats.u_omega, stats.v_omega, n)
    ep = rng.beta(stats.u_eps, stats.v_eps, n)
    return theta, from_unit(om, prior.omega_max), from_unit(ep, prior.epsilon_max)


def log_likelihood(theta, omega, eps, y: complex, k: int, incoming, sigma2: float) -> np.ndarray:
    """log sum_X p(X) exp(-|y - X e^{j phi}|^2 / sigma2) up to a particle-independent constant."""
    kf = float(k)
    phi = theta + omega * kf + eps * (kf * kf)
    a = 2.0 * (y.real * np.cos(phi) + y.imag * np.sin(phi)) / sigma2
    with np.errstate(divide="ignore"):
        lp0 = math.log(incoming[0]) if incoming[0] > 0 else -np.inf
        lp1 = math.log(incoming[1]) if incoming[1] > 0 else -np.inf
    return np.logaddexp(lp0 + a, lp1 - a)


def normalize_log_weights(logw: np.ndarray) -> tuple[np.ndarray, bool]:
    m = np.max(logw)
    if not np.isfinite(m):
        return np.full(logw.size, 1.0 / logw.size), True
    w = np.exp(logw - m)
    s = w.sum()
    if not (s > 0 and np.isfinite(s)):
        return np.full(logw.size, 1.0 / logw.size), True
    return w / s, False


def update_weights(ps: ParticleSet, y_k: complex, k: int, incoming, sigma2: float,
                   theta=None, omega=None, epsilon=None) -> tuple[ParticleSet, bool]:
    """Weight recursion w_k = w_{k-1} * sum_X mu(X) p(y_k | X, particle), normalized.

    New particle positions may be passed in; otherwise the current ones are reused.
    Returns the updated set and a degeneracy flag (weights reset to uniform).
    """
    theta = ps.theta if theta is None else theta
    omega = ps.omega if omega is None else omega
    epsilon = ps.epsilon if epsilon is None else epsilon
    with np.errstate(divide="ignore"):
        logw = np.log(ps.weights) + log_likelihood(theta, omega, epsilon, y_k, k, incoming, sigma2)
    w, bad = normalize_log_weights(logw)
    return ParticleSet(theta, omega, epsilon, w), bad


def effective_sample_size(ps_or_w) -> float:
    w = ps_or_w.weights if isinstance(ps_or_w, ParticleSet) else np.asarray(ps_or_w)
    return 1.0 / float(np.dot(w, w))


def systematic_indices(w: np.ndarray, u0: float) -> np.ndarray:
    n = w.size
    points = (u0 + np.arange(n)) / n
    return np.minimum(np.searchsorted(np.cumsum(w), points, side="right"), n - 1)


def resample(ps: ParticleSet, rng: np.random.Generator) -> ParticleSet:
    idx = systematic_indices(ps.weights, rng.random())
    n = ps.n
    return ParticleSet(ps.theta[idx], ps.omega[idx], ps.epsilon[idx], np.full(n, 1.0 / n))


def estimate(ps: ParticleSet, k: int, prev_theta: float | None = None):
    """Weighted means: returns (theta_hat, omega_hat, eps_hat, phi_hat, fallback_used)."""
    w = ps.weights
    mu, r = circular_mean(ps.theta, w)
    fallback = False
    if r < RESULTANT_MIN:
        fallback = True
        mu = 0.0 if prev_theta is None else prev_theta
    om = float(np.dot(w, ps.omega))
    ep = float(np.dot(w, ps.epsilon))
    kf = float(k)
    return mu, om, ep, mu + om * kf + ep * kf * kf, fallback


def spread(ps: ParticleSet, prior: PriorSpec) -> tuple[float, float]:
    """Weighted variance of theta (wrapped about its circular mean) and of translated omega."""
    w = ps.weights
    mu, _ = circular_mean(ps.theta, w)
    d = wrap_phase(ps.theta - mu)
    om = to_unit(ps.omega, prior.omega_max)
    om_mean = float(np.dot(w, om))
    return float(np.dot(w, d * d)), float(np.dot(w, (om - om_mean) ** 2))


def should_fine_tune(ps: ParticleSet, k: int, k_first: int, cfg: FineTuneConfig,
                     prior: PriorSpec, fires: int) -> bool:
    """Trigger check; ``k_first`` comes from ``FineTuneConfig.first_symbol``."""
    if not cfg.enabled or fires >= cfg.max_fires or k < k_first:
        return False
    var_t, var_o = spread(ps, prior)
    return var_t < cfg.theta_th and var_o < cfg.omega_th


def regen_center(center: float, half_width: float, bound: float) -> float:
    """Shift a regeneration centre so that centre +- half_width stays inside +-bound."""
    lim = max(bound - half_width, 0.0)
    return min(max(center, -lim), lim)


def fine_tune(ps: ParticleSet, history, y, k: int, incoming, sigma2: float,
              cfg: FineTuneConfig, prior: PriorSpec, rng: np.random.Generator):
    """Regenerate the cloud around a quadratic fit of the phase history phi_hat[0..k-1].

    The new particles are fresh draws of constant parameters, so they are weighted
    by the likelihood of all symbols ``y[0..k]`` (``incoming`` row per symbol).
    Returns ``(new_set, fit)`` or ``(None, None)`` when the history is too short.
    """
    hist = np.asarray(history[:k], dtype=np.float64)
    if hist.size < 3:
        return None, None
    fit = quadratic_fit(unwrap(hist))
    n = ps.n
    th0 = float(wrap_phase(fit.theta_hat))
    gamma = cfg.gamma_scale * prior.epsilon_max
    theta = wrap_phase(rng.uniform(th0 - cfg.alpha, th0 + cfg.alpha, n))
    om0 = regen_center(fit.omega_hat, cfg.zeta, prior.omega_max)
    ep0 = regen_center(fit.epsilon_hat, gamma, prior.epsilon_max)
    omega = np.clip(rng.uniform(om0 - cfg.zeta, om0 + cfg.zeta, n), -prior.omega_max, prior.omega_max)
    eps = np.clip(rng.uniform(ep0 - gamma, ep0 + gamma, n), -prior.epsilon_max, prior.epsilon_max)
    logw = np.zeros(n)
    for m in range(k + 1):
        logw += log_likelihood(theta, omega, eps, y[m], m, incoming[m], sigma2)
    w, _ = normalize_log_weights(logw)
    return ParticleSet(theta, omega, eps, w), fit


def _filter_python(y, incoming, sigma2, prior, cfg: PFConfig, rng, n_preamble) -> FilterResult:
    L = y.size
    n = cfg.n_particles
    ft = cfg.fine_tune
    th_hat = np.empty(L)
    om_hat = np.empty(L)
    ep_hat = np.empty(L)
    phi_hat = np.empty(L)
    flags = {"degenerate": 0, "theta_fallback": 0, "beta_clamped": 0}
    fired = []
    n_res = 0
    ps = init(n, prior, rng)
    k_first = ft.first_symbol(n_preamble, L)
    prev = None
    for k in range(L):
        stats = proposal_stats(ps, prior, cfg.kappa_cap)
        flags["beta_clamped"] += int(stats.clamped)
        theta, omega, eps = draw_particles(stats, n, rng, prior)
        ps, bad = update_weights(ps, y[k], k, incoming[k], sigma2, theta, omega, eps)
        flags["degenerate"] += int(bad)
        if effective_sample_size(ps) <= n / 2.0:
            ps = resample(ps, rng)
            n_res += 1
        if should_fine_tune(ps, k, k_first, ft, prior, len(fired)):
            new, _ = fine_tune(ps, phi_hat, y, k, incoming, sigma2, ft, prior, rng)
            if new is not None:
                ps = new
                fired.append(k)
        th_hat[k], om_hat[k], ep_hat[k], phi_hat[k], fb = estimate(ps, k, prev)
        flags["theta_fallback"] += int(fb)
        prev = th_hat[k]
    return FilterResult(th_hat, om_hat, ep_hat, phi_hat, fired, n_res, flags, ps)


def run_filter(y, incoming, sigma2: float, prior: PriorSpec, cfg: PFConfig,
               rng: np.random.Generator, n_preamble: int) -> FilterResult:
    """Process one frame symbol by symbol; uses the compiled loop when available."""
    y = np.ascontiguousarray(y, dtype=np.complex128)
    incoming = np.ascontiguousarray(incoming, dtype=np.float64)
    if incoming.shape != (y.size, 2):
        raise ValueError("incoming PMFs must have shape (L, 2)")
    impl = kernels.pf_filter(cfg.backend)
    if impl is None:
        return _filter_python(y, incoming, sigma2, prior, cfg, rng, n_preamble)
    ft = cfg.fine_tune
    out = impl(
        y, incoming, float(sigma2), int(cfg.n_particles), prior.omega_max, prior.epsilon_max,
        int(ft.first_symbol(n_preamble, y.size)), bool(ft.enabled), ft.alpha, ft.zeta, ft.gamma_scale * prior.epsilon_max,
        ft.theta_th, ft.omega_th, int(ft.max_fires), float(cfg.kappa_cap), rng.bit_generator,
    )
    th, om, ep, ph, fired, n_res, flags, (pt, po, pe, pw) = out
    return FilterResult(th, om, ep, ph, list(fired), int(n_res), dict(flags), ParticleSet(pt, po, pe, pw))


def upward_messages(theta_hat: float, omega_hat: float, eps_hat: float, y, sigma2: float,
                    n_preamble: int) -> np.ndarray:
    """Symbol PMFs for every position from the end-of-frame parameter estimates.

    Rows before ``n_preamble`` are returned too; the loop overwrites them with the
    known preamble symbols.
    """
    k = np.arange(np.asarray(y).size, dtype=np.float64)
    phi = theta_hat + omega_hat * k + eps_hat * k * k
    return symbol_pmfs(y, phi, sigma2)


def make_estimator(prior: PriorSpec, cfg: PFConfig, n_preamble: int):
    def _est(obs: NodeObservation, down, rng) -> NodeEstimate:
        res = run_filter(obs.samples, down, obs.sigma2, prior, cfg, rng, n_preamble)
        th, om, ep = res.theta_hat[-1], res.omega_hat[-1], res.eps_hat[-1]
        up = upward_messages(th, om, ep, obs.samples, obs.sigma2, n_preamble)
        flags = dict(res.flags, fine_tune_at=res.fine_tune_at, resamples=res.n_resamples)
        return NodeEstimate(float(th), float(om), float(ep), up, flags, res)

    return _est


def with_fine_tune(cfg: PFConfig, enabled: bool) -> PFConfig:
    return replace(cfg, fine_tune=replace(cfg.fine_tune, enabled=enabled))
