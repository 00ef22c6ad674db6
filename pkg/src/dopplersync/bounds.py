"""Data-aided joint CRB and weighted Bayesian CRB for (theta, omega, epsilon).

Both bounds assume the transmitted symbols are known. The weighted bound uses the
weighting functions q(x) = u^h (1-u)^h with u the prior-normalized position of x
in its uniform range, which vanish at the range ends and keep the bound finite.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import betaln

COND_WARN = 1e12


class IllConditionedWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FimSpec:
    L: int
    sigma2: float

    def __post_init__(self):
        if self.L < 3:
            raise ValueError("L must be >= 3 for an invertible information matrix")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")


@dataclass(frozen=True)
class WbcrbSpec:
    L: int
    sigma2: float
    omega_max: float = 0.01
    epsilon_max: float = 1e-5
    h: float = 1.0

    def __post_init__(self):
        FimSpec(self.L, self.sigma2)
        if not (self.omega_max > 0 and self.epsilon_max > 0):
            raise ValueError("prior half-widths must be positive")
        if not self.h > 0.5:
            raise ValueError("weighting index h must exceed 1/2 (B(2h+1, 2h-1) is undefined otherwise)")

    @property
    def fim_spec(self) -> FimSpec:
        return FimSpec(self.L, self.sigma2)


@dataclass(frozen=True)
class CrbReport:
    snr_db: float
    L: int
    jcrb: np.ndarray
    wbcrb: np.ndarray

    @property
    def jcrb_diag(self) -> np.ndarray:
        return np.diag(self.jcrb).copy()

    @property
    def wbcrb_diag(self) -> np.ndarray:
        return np.diag(self.wbcrb).copy()


def power_sums(L: int) -> tuple[float, float, float, float, float]:
    """sum_{k=0}^{L-1} k^p for p = 0..4 (Faulhaber), as floats."""
    n = L - 1
    s0 = L
    s1 = n * (n + 1) // 2
    s2 = n * (n + 1) * (2 * n + 1) // 6
    s3 = s1 * s1
    s4 = n * (n + 1) * (2 * n + 1) * (3 * n * n + 3 * n - 1) // 30
    return float(s0), float(s1), float(s2), float(s3), float(s4)


def _moment_matrix(L: int, diag_w: float = 1.0, off_w: float = 1.0) -> np.ndarray:
    s0, s1, s2, s3, s4 = power_sums(L)
    return np.array([
        [diag_w * s0, off_w * s1, off_w * s2],
        [off_w * s1, diag_w * s2, off_w * s3],
        [off_w * s2, off_w * s3, diag_w * s4],
    ])


def fim(spec: FimSpec) -> np.ndarray:
    return (2.0 / spec.sigma2) * _moment_matrix(spec.L)


def jcrb(spec: FimSpec) -> np.ndarray:
    """Closed-form inverse of the information matrix."""
    L = float(spec.L)
    c = spec.sigma2 / 2.0
    d3 = L**3 + 3 * L**2 + 2 * L
    d5 = L**5 - 5 * L**3 + 4 * L
    tt = (9 * (L - 1) * L + 6) / (L * (L + 1) * (L + 2))
    to = (18 - 36 * L) / d3
    te = 30 / d3
    oo = 12 * (2 * L - 1) * (8 * L - 11) / d5
    oe = -180 / (L * (L**3 + L**2 - 4 * L - 4))
    ee = 180 / d5
    return c * np.array([[tt, to, te], [to, oo, oe], [te, oe, ee]])


def inv3(m: np.ndarray) -> np.ndarray:
    """Inverse of a 3x3 matrix via the adjugate; warns when badly conditioned."""
    m = np.asarray(m, dtype=np.float64)
    a, b, c = m[0]
    d, e, f = m[1]
    g, h, i = m[2]
    adj = np.array([
        [e * i - f * h, c * h - b * i, b * f - c * e],
        [f * g - d * i, a * i - c * g, c * d - a * f],
        [d * h - e * g, b * g - a * h, a * e - b * d],
    ])
    det = a * adj[0, 0] + b * adj[1, 0] + c * adj[2, 0]
    if det == 0.0:
        raise np.linalg.LinAlgError("singular 3x3 matrix")
    cond = np.linalg.cond(m)
    if cond > COND_WARN:
        warnings.warn(f"3x3 inverse with condition number {cond:.3g}", IllConditionedWarning, stacklevel=2)
    return adj / det


def beta_fn(x: float, y: float) -> float:
    return math.exp(betaln(x, y))


def expected_q(h: float) -> float:
    """E[q] for one parameter under its uniform prior."""
    return 2.0 ** (-1.0 - 2.0 * h) * beta_fn(0.5, 1.0 + h)


def prior_info_coeff(h: float) -> float:
    """Scalar c with E[J_p] = c * P3."""
    if not h > 0.5:
        raise ValueError("weighting index h must exceed 1/2")
    return h * beta_fn(2.0 * h + 1.0, 2.0 * h - 1.0)


def lambdas(h: float) -> tuple[float, float]:
    """(lambda1, lambda2): E[q_i^2] and E[q_i] E[q_j] scaling the information matrix."""
    lam1 = h * 2.0 ** (-4.0 * h) / (0.5 + 2.0 * h) * beta_fn(0.5, 2.0 * h)
    lam2 = 4.0 ** (-1.0 - 2.0 * h) * beta_fn(0.5, 1.0 + h) ** 2
    return lam1, lam2


def quadrature_constants(h: float) -> dict:
    """The same expectations by numeric integration over u in (0, 1)."""
    q = lambda u: (u * (1.0 - u)) ** h
    dq = lambda u: h * (u * (1.0 - u)) ** (h - 1.0) * (1.0 - 2.0 * u)
    opts = dict(epsabs=1e-14, epsrel=1e-12, limit=200)
    eq = integrate.quad(q, 0.0, 1.0, **opts)[0]
    eq2 = integrate.quad(lambda u: q(u) ** 2, 0.0, 1.0, **opts)[0]
    edq2 = integrate.quad(lambda u: dq(u) ** 2, 0.0, 1.0, **opts)[0]
    return {"expected_q": eq, "lambda1": eq2, "lambda2": eq * eq, "prior_info": edq2}


@lru_cache(maxsize=None)
def validate_constants(h: float, tol: float = 1e-8) -> None:
    """Check the closed forms against quadrature; raises if they disagree."""
    num = quadrature_constants(h)
    lam1, lam2 = lambdas(h)
    closed = {
        "expected_q": expected_q(h),
        "lambda1": lam1,
        "lambda2": lam2,
        "prior_info": prior_info_coeff(h),
    }
    for key, val in closed.items():
        if abs(val - num[key]) > tol * max(abs(num[key]), 1e-300):
            raise ArithmeticError(f"{key}: closed form {val!r} vs quadrature {num[key]!r}")


def prior_matrix(omega_max: float, epsilon_max: float) -> np.ndarray:
    return np.diag([(1.0 / (2 * np.pi)) ** 2, (1.0 / (2 * omega_max)) ** 2, (1.0 / (2 * epsilon_max)) ** 2])


def prior_variances(omega_max: float, epsilon_max: float) -> np.ndarray:
    return np.array([(2 * np.pi) ** 2, (2 * omega_max) ** 2, (2 * epsilon_max) ** 2]) / 12.0


def wbcrb(spec: WbcrbSpec) -> np.ndarray:
    if spec.h > 0.5:
        validate_constants(float(spec.h))
    lam1, lam2 = lambdas(spec.h)
    eq = expected_q(spec.h)
    jd = (2.0 / spec.sigma2) * _moment_matrix(spec.L, lam1, lam2)
    jp = prior_info_coeff(spec.h) * prior_matrix(spec.omega_max, spec.epsilon_max)
    return eq * inv3(jd + jp) * eq


def crb_report(snr_db: float, L: int, omega_max: float = 0.01, epsilon_max: float = 1e-5,
               h: float = 1.0) -> CrbReport:
    sigma2 = 10.0 ** (-snr_db / 10.0)
    return CrbReport(
        float(snr_db),
        int(L),
        jcrb(FimSpec(L, sigma2)),
        wbcrb(WbcrbSpec(L, sigma2, omega_max, epsilon_max, h)),
    )


def bounds_sweep(snr_list, L: int, omega_max: float = 0.01, epsilon_max: float = 1e-5,
                 h: float = 1.0) -> list[CrbReport]:
    return [crb_report(s, L, omega_max, epsilon_max, h) for s in snr_list]
