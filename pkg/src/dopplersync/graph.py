"""Sum-product plumbing shared by both estimators.

Symbol PMFs are arrays whose last axis runs over ``framing.ALPHABET`` (length 2).
The global loop wires per-node estimators (lower part of the factor graph) to the
demapper and LDPC decoder (upper part) and exchanges PMFs between them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from . import codec
from .channel import ChannelParams, NodeObservation, unwrapped_trajectory, wrapped_error
from .framing import ALPHABET

LLR_CLIP = codec.LLR_CLIP
FEEDBACK_MODES = ("extrinsic", "posterior")


def symbol_likelihood(y, x, phi, sigma2):
    """Unnormalized p(y | x, phi) = exp(-|y - x e^{j phi}|^2 / sigma2)."""
    return np.exp(-np.abs(np.asarray(y) - np.asarray(x) * np.exp(1j * np.asarray(phi))) ** 2 / sigma2)


def _softmax_last(logits):
    logits = np.asarray(logits, dtype=np.float64)
    m = np.max(logits, axis=-1, keepdims=True)
    dead = ~np.isfinite(m)
    m = np.where(dead, 0.0, m)
    e = np.exp(logits - m)
    s = e.sum(axis=-1, keepdims=True)
    bad = dead | ~(s > 0)
    out = np.where(bad, 1.0 / logits.shape[-1], e / np.where(bad, 1.0, s))
    return out, bad[..., 0]


def symbol_pmfs(y, phi, sigma2) -> np.ndarray:
    """Normalized symbol PMFs of observations ``y`` given phases ``phi``.

    Computed from the exponent difference, so it never underflows.
    """
    z = np.asarray(y) * np.exp(-1j * np.asarray(phi))
    logits = 2.0 * np.real(np.conj(ALPHABET) * z[..., None]) / sigma2
    return _softmax_last(logits)[0]


def uniform_pmfs(n: int) -> np.ndarray:
    return np.full((n, ALPHABET.size), 1.0 / ALPHABET.size)


def point_mass_pmfs(indices) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    out = np.zeros((idx.size, ALPHABET.size))
    out[np.arange(idx.size), idx] = 1.0
    return out


def combine_nodes(upward) -> tuple[np.ndarray, np.ndarray]:
    """Normalized elementwise product over the leading (node) axis.

    Returns ``(pmf, degenerate)``; positions whose product vanishes get a
    uniform PMF and ``degenerate=True``.
    """
    up = np.asarray(upward, dtype=np.float64)
    if up.ndim < 2 or up.shape[0] < 1:
        raise ValueError("need at least one node")
    with np.errstate(divide="ignore"):
        logp = np.log(up).sum(axis=0)
    return _softmax_last(logp)


def pmf_to_llr(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore"):
        llr = np.log(p[..., 0]) - np.log(p[..., 1])
    return np.clip(np.nan_to_num(llr, nan=0.0), -LLR_CLIP, LLR_CLIP)


def llr_to_pmf(llr) -> np.ndarray:
    llr = np.clip(np.asarray(llr, dtype=np.float64), -LLR_CLIP, LLR_CLIP)
    return np.stack([expit(llr), expit(-llr)], axis=-1)


def pmf_entropy(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(p > 0, -p * np.log(p), 0.0)
    return t.sum(axis=-1)


# ---------------------------------------------------------------- global loop


@dataclass
class NodeEstimate:
    """What a per-node estimator hands back to the loop."""

    theta: float
    omega: float
    epsilon: float
    upward: np.ndarray
    flags: dict = field(default_factory=dict)
    trace: object = None

    def params(self) -> ChannelParams:
        return ChannelParams(self.theta, self.omega, self.epsilon)


# estimator(observation, downward PMFs (L, M), rng) -> NodeEstimate
Estimator = Callable[[NodeObservation, np.ndarray, np.random.Generator], NodeEstimate]


@dataclass(frozen=True)
class GlobalLoopConfig:
    global_iters: int = 1
    estimator: str = "rw"
    decoder_iters: int = codec.DEFAULT_MAX_ITERS
    feedback: str = "extrinsic"

    def __post_init__(self):
        if self.global_iters < 1:
            raise ValueError("global_iters must be >= 1")
        if self.feedback not in FEEDBACK_MODES:
            raise ValueError(f"feedback must be one of {FEEDBACK_MODES}")


@dataclass
class MessageBoard:
    """Per-frame message state; one row of PMFs per node and symbol."""

    up: np.ndarray
    down: np.ndarray
    decoder_extrinsic: np.ndarray
    preamble: np.ndarray

    @classmethod
    def start(cls, n_nodes: int, L: int, preamble_symbols, n_coded: int) -> "MessageBoard":
        pre = point_mass_pmfs(preamble_symbols)
        n_p = pre.shape[0]
        down = np.tile(uniform_pmfs(L), (n_nodes, 1, 1))
        down[:, :n_p] = pre
        up = down.copy()
        return cls(up, down, np.zeros(n_coded), pre)

    @property
    def n_preamble(self) -> int:
        return self.preamble.shape[0]

    def set_upward(self, node: int, pmfs: np.ndarray) -> None:
        self.up[node] = pmfs
        self.up[node, : self.n_preamble] = self.preamble

    def combined(self) -> tuple[np.ndarray, np.ndarray]:
        return combine_nodes(self.up[:, self.n_preamble:])

    def feed_back(self, decoder_llr: np.ndarray, mode: str) -> int:
        """Form next downward messages from decoder output; returns degenerate count."""
        n_p = self.n_preamble
        dec = llr_to_pmf(decoder_llr)
        bad = 0
        for n in range(self.up.shape[0]):
            if mode == "posterior":
                self.down[n, n_p:] = dec
                continue
            others = [dec[None]] + [self.up[m, n_p:][None] for m in range(self.up.shape[0]) if m != n]
            pmf, degenerate = combine_nodes(np.concatenate(others))
            self.down[n, n_p:] = pmf
            bad += int(degenerate.sum())
        self.down[:, :n_p] = self.preamble
        return bad


@dataclass
class IterationDiagnostics:
    iteration: int
    bit_errors: int | None
    ber: float | None
    decoder_iterations: int
    decoder_converged: bool
    estimates: list[ChannelParams | None]
    sq_errors: list[tuple[float, float, float] | None]
    dropouts: list[int]
    degenerate: int


@dataclass
class LoopResult:
    info_bits: np.ndarray
    codeword: np.ndarray
    beliefs: codec.BitBeliefs
    diagnostics: list[IterationDiagnostics]
    node_estimates: list[NodeEstimate | None]


def squared_errors(est: ChannelParams, truth: ChannelParams) -> tuple[float, float, float]:
    return (
        float(wrapped_error(est.theta, truth.theta) ** 2),
        (est.omega - truth.omega) ** 2,
        (est.epsilon - truth.epsilon) ** 2,
    )


def run_global_loop(
    observations: Sequence[NodeObservation],
    preamble_bits,
    H: codec.ParityCheckMatrix,
    cfg: GlobalLoopConfig,
    estimator: Estimator,
    rng_for: Callable[[int, int], np.random.Generator],
    info_bits=None,
    truths: Sequence[ChannelParams] | None = None,
) -> LoopResult:
    """Iterate per-node estimation, node combination and LDPC decoding.

    ``rng_for(node, iteration)`` supplies the estimator's random stream.
    ``info_bits`` and ``truths`` are only used for diagnostics.
    """
    if not observations:
        raise ValueError("no observations")
    L = observations[0].length
    if any(o.length != L for o in observations):
        raise ValueError("observations differ in length")
    pre = np.asarray(preamble_bits, dtype=np.int64)
    board = MessageBoard.start(len(observations), L, pre, H.n_cols)
    if L - board.n_preamble != H.n_cols:
        raise ValueError("payload length does not match the code length")
    diags = []
    node_est: list[NodeEstimate | None] = [None] * len(observations)
    beliefs = None
    for it in range(cfg.global_iters):
        dropouts = []
        for n, obs in enumerate(observations):
            try:
                est = estimator(obs, board.down[n], rng_for(n, it))
                if not np.all(np.isfinite(est.upward)):
                    raise FloatingPointError("non-finite upward message")
            except (FloatingPointError, np.linalg.LinAlgError, ValueError):
                est = None
            if est is None:
                dropouts.append(n)
                board.set_upward(n, uniform_pmfs(L))
            else:
                board.set_upward(n, est.upward)
            node_est[n] = est
        combined, degenerate = board.combined()
        beliefs = codec.decode(pmf_to_llr(combined), H, cfg.decoder_iters)
        board.decoder_extrinsic = beliefs.extrinsic
        decided = codec.extract_info(beliefs.hard, H)
        errs = None if info_bits is None else int(np.count_nonzero(decided != np.asarray(info_bits)))
        sq = [
            None if (e is None or truths is None) else squared_errors(e.params(), truths[n])
            for n, e in enumerate(node_est)
        ]
        bad = int(degenerate.sum())
        if it + 1 < cfg.global_iters:
            feed = beliefs.extrinsic if cfg.feedback == "extrinsic" else beliefs.llr
            bad += board.feed_back(feed, cfg.feedback)
        diags.append(
            IterationDiagnostics(
                iteration=it + 1,
                bit_errors=errs,
                ber=None if errs is None else errs / decided.size,
                decoder_iterations=beliefs.iterations,
                decoder_converged=beliefs.converged,
                estimates=[None if e is None else e.params() for e in node_est],
                sq_errors=sq,
                dropouts=dropouts,
                degenerate=bad,
            )
        )
    return LoopResult(codec.extract_info(beliefs.hard, H), beliefs.hard, beliefs, diags, node_est)


def genie_estimator(truths: Sequence[ChannelParams]) -> Estimator:
    """Estimator that returns the true parameters of the node it is called for."""

    def _est(obs: NodeObservation, down, rng) -> NodeEstimate:
        p = truths[obs.node_id]
        phi = unwrapped_trajectory(p, obs.length)
        return NodeEstimate(p.theta, p.omega, p.epsilon, symbol_pmfs(obs.samples, phi, obs.sigma2))

    return _est


def coherent_llrs(observations: Sequence[NodeObservation], truths: Sequence[ChannelParams],
                  n_preamble: int) -> np.ndarray:
    """Direct coherent BPSK LLRs 4 Re(y e^{-j phi}) / sigma2, summed over nodes."""
    total = 0.0
    for obs in observations:
        phi = unwrapped_trajectory(truths[obs.node_id], obs.length)
        total = total + 4.0 * np.real(obs.samples * np.exp(-1j * phi)) / obs.sigma2
    return np.clip(total[n_preamble:], -LLR_CLIP, LLR_CLIP)
