"""Monte Carlo experiments: estimator MSE, BER of the full receiver, convergence
traces, parameter sweeps, and CSV / plot-script output.

Every burst draws its data, channel parameters and noise from substreams keyed by
(seed, burst, node, role), so a burst's outcome does not depend on which worker
ran it or in which order. Noise is drawn as unit-variance samples and scaled per
SNR, so different SNR points see the same underlying realizations.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from functools import lru_cache

import numpy as np

from . import bounds, codec, graph, pf, rw
from .channel import (
    ChannelParams,
    NodeObservation,
    Role,
    phase_trajectory,
    rng_stream,
    sample_params,
    snr_db_to_sigma2,
    wrapped_error,
)
from .config import SimConfig
from .framing import build_frame, generate_preamble

SCHEMA = "dopplersync-results/1"
SCENARIOS = ("mse", "ber", "converge", "bounds", "sweep-particles", "sweep-iters", "nodes")
CONVERGENCE_TRUTH = ChannelParams(2.0, 0.011, -9e-6)
NO_INDEX = -1


@dataclass(frozen=True)
class ResultRow:
    scenario: str
    variant: str
    snr_db: float
    index: int
    metric: str
    value: float
    n_trials: int
    std_error: float
    fingerprint: str
    seed: int


COLUMNS = tuple(f.name for f in fields(ResultRow))


# ---------------------------------------------------------------- bursts


@lru_cache(maxsize=8)
def _code(path: str) -> tuple[codec.ParityCheckMatrix, bool]:
    return codec.load_code(path or None)


def code_for(cfg: SimConfig) -> tuple[codec.ParityCheckMatrix, bool]:
    return _code(cfg["ldpc.alist_path"])


@dataclass
class Burst:
    info_bits: np.ndarray
    preamble: np.ndarray
    truths: list
    observations: list


def make_burst(cfg: SimConfig, H: codec.ParityCheckMatrix, burst: int, snr_db: float,
               n_nodes: int, truth: ChannelParams | None = None) -> Burst:
    seed = cfg["sim.seed"]
    prior = cfg.prior()
    pre = generate_preamble(cfg["frame.preamble_seed"], cfg["frame.n_preamble"])
    info = rng_stream(seed, burst, 0, Role.DATA).integers(0, 2, H.k, dtype=np.uint8)
    frame = build_frame(pre, codec.encode(info, H), cfg.frame_config(H.n_cols))
    sigma2 = snr_db_to_sigma2(snr_db)
    scale = math.sqrt(sigma2 / 2.0)
    truths, obs = [], []
    for n in range(n_nodes):
        p = truth if truth is not None else sample_params(rng_stream(seed, burst, n, Role.PARAMS), prior)
        nr = rng_stream(seed, burst, n, Role.NOISE)
        noise = nr.standard_normal(frame.length) + 1j * nr.standard_normal(frame.length)
        y = frame.symbols * np.exp(1j * phase_trajectory(p, frame.length)) + scale * noise
        truths.append(p)
        obs.append(NodeObservation(y, sigma2, n))
    return Burst(info, pre, truths, obs)


def make_estimator(cfg: SimConfig, L: int, estimator: str | None = None):
    name = estimator or cfg["fg.estimator"]
    n_p = cfg["frame.n_preamble"]
    if name == "pf":
        return pf.make_estimator(cfg.prior(), cfg.pf_config(), n_p)
    if name == "rw":
        return rw.make_estimator(cfg.prior(), cfg.rw_config(), n_p, L)
    raise ValueError(f"unknown estimator {name!r}")


def estimator_rng(cfg: SimConfig, burst: int):
    seed = cfg["sim.seed"]
    return lambda node, it: rng_stream(seed, burst, node, Role.ESTIMATOR, it)


def initial_down(preamble, L: int) -> np.ndarray:
    down = graph.uniform_pmfs(L)
    down[: len(preamble)] = graph.point_mass_pmfs(preamble)
    return down


# ---------------------------------------------------------------- per-burst tasks


def _mse_task(values: dict, snr_db: float, bursts: range, estimator: str | None):
    cfg = SimConfig(values)
    H, _ = code_for(cfg)
    out = []
    for b in bursts:
        bu = make_burst(cfg, H, b, snr_db, 1)
        obs = bu.observations[0]
        est = make_estimator(cfg, obs.length, estimator)
        try:
            e = est(obs, initial_down(bu.preamble, obs.length), estimator_rng(cfg, b)(0, 0))
            if not np.all(np.isfinite([e.theta, e.omega, e.epsilon])):
                raise FloatingPointError("non-finite estimate")
            out.append(graph.squared_errors(e.params(), bu.truths[0]))
        except (FloatingPointError, ValueError, np.linalg.LinAlgError):
            out.append(None)
    return out


def _ber_task(values: dict, snr_db: float, bursts: range, n_nodes: int, genie: bool):
    cfg = SimConfig(values)
    H, _ = code_for(cfg)
    loop = cfg.loop_config()
    out = []
    for b in bursts:
        bu = make_burst(cfg, H, b, snr_db, n_nodes)
        L = bu.observations[0].length
        est = graph.genie_estimator(bu.truths) if genie else make_estimator(cfg, L)
        res = graph.run_global_loop(bu.observations, bu.preamble, H, loop, est, estimator_rng(cfg, b),
                                    info_bits=bu.info_bits, truths=bu.truths)
        out.append([d.bit_errors for d in res.diagnostics])
    return out


def _trace_task(values: dict, snr_db: float, bursts: range, truth: ChannelParams):
    cfg = SimConfig(values)
    H, _ = code_for(cfg)
    out = []
    for b in bursts:
        bu = make_burst(cfg, H, b, snr_db, 1, truth)
        obs = bu.observations[0]
        res = pf.run_filter(obs.samples, initial_down(bu.preamble, obs.length), obs.sigma2, cfg.prior(),
                            cfg.pf_config(), estimator_rng(cfg, b)(0, 0), cfg["frame.n_preamble"])
        out.append(np.stack([
            np.abs(wrapped_error(res.theta_hat, truth.theta)),
            res.omega_hat - truth.omega,
            res.eps_hat - truth.epsilon,
        ]))
    return out


def _chunks(n: int, parts: int) -> list[range]:
    parts = max(1, min(parts, n))
    edges = np.linspace(0, n, parts + 1).astype(int)
    return [range(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def map_bursts(task, cfg: SimConfig, n: int, *args) -> list:
    """Run ``task`` over bursts 0..n-1; results are returned in burst order."""
    workers = cfg["sim.workers"]
    chunks = _chunks(n, workers * 4 if workers > 1 else 1)
    values = dict(cfg.values)
    if workers == 1:
        parts = [task(values, args[0], c, *args[1:]) for c in chunks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futs = [ex.submit(task, values, args[0], c, *args[1:]) for c in chunks]
            parts = [f.result() for f in futs]
    return [r for part in parts for r in part]


# ---------------------------------------------------------------- statistics


def mean_and_se(samples) -> tuple[float, float]:
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        return float("nan"), float("nan")
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")
    return float(x.mean()), se


def crossing_snr(snr_db, ber, target: float) -> float:
    """SNR where a BER curve crosses ``target``, by linear interpolation of log10 BER.

    Returns NaN when the curve does not bracket the target.
    """
    s = np.asarray(snr_db, dtype=np.float64)
    b = np.asarray(ber, dtype=np.float64)
    order = np.argsort(s)
    s, b = s[order], b[order]
    lt = math.log10(target)
    for i in range(s.size - 1):
        b0, b1 = b[i], b[i + 1]
        if b0 >= target >= b1 and b0 > 0:
            if b1 <= 0:
                return float(s[i + 1])
            l0, l1 = math.log10(b0), math.log10(b1)
            if l0 == l1:
                return float(s[i])
            return float(s[i] + (l0 - lt) / (l0 - l1) * (s[i + 1] - s[i]))
    return float("nan")


# ---------------------------------------------------------------- experiments


def _row(cfg, scenario, variant, snr, metric, value, n, se=float("nan"), index=NO_INDEX):
    return ResultRow(scenario, variant, float(snr), int(index), metric, float(value), int(n), float(se),
                     cfg.fingerprint(), int(cfg["sim.seed"]))


def bound_rows(cfg: SimConfig, snr_list, L: int, scenario: str = "bounds") -> list[ResultRow]:
    rows = []
    for rep in bounds.bounds_sweep(snr_list, L, cfg["channel.omega_max"], cfg["channel.epsilon_max"],
                                   cfg["bounds.h"]):
        for name, j, w in zip(("theta", "omega", "epsilon"), rep.jcrb_diag, rep.wbcrb_diag):
            rows.append(_row(cfg, scenario, "", rep.snr_db, f"jcrb_{name}", j, 0))
            rows.append(_row(cfg, scenario, "", rep.snr_db, f"wbcrb_{name}", w, 0))
    return rows


def run_mse(cfg: SimConfig, snr_list=None, n_bursts: int | None = None,
            estimator: str | None = None, variant: str = "") -> list[ResultRow]:
    """Single node, no global iterations; per-SNR MSE of the three parameters plus bounds."""
    snr_list = cfg["sim.snr_db"] if snr_list is None else snr_list
    n = n_bursts or cfg["sim.n_bursts"]
    H, _ = code_for(cfg)
    L = cfg["frame.n_preamble"] + H.n_cols
    rows = []
    for snr in snr_list:
        res = map_bursts(_mse_task, cfg, n, snr, estimator)
        ok = np.array([r for r in res if r is not None]).reshape(-1, 3)
        for j, name in enumerate(("theta", "omega", "epsilon")):
            m, se = mean_and_se(ok[:, j])
            rows.append(_row(cfg, "mse", variant, snr, f"mse_{name}", m, ok.shape[0], se))
        rows.append(_row(cfg, "mse", variant, snr, "failures", n - ok.shape[0], n))
    rows += bound_rows(cfg, snr_list, L, "mse")
    return rows


def run_ber(cfg: SimConfig, snr_list=None, n_frames: int | None = None, n_nodes: int | None = None,
            genie: bool = True, variant: str = "", scenario: str = "ber") -> list[ResultRow]:
    """Full receiver BER over information bits; one row per global iteration.

    ``index`` holds the global iteration (1..G); the G=g row equals a separate run
    with ``fg.global_iters = g`` on the same seeds. With ``genie`` a true-parameter
    baseline is added on matched seeds.
    """
    snr_list = cfg["sim.snr_db"] if snr_list is None else snr_list
    n = n_frames or cfg["sim.n_frames"]
    nodes = n_nodes or cfg["channel.n_nodes"]
    H, _ = code_for(cfg)
    rows = []
    for snr in snr_list:
        runs = [("", False)] + ([("genie", True)] if genie else [])
        for tag, g in runs:
            res = np.array(map_bursts(_ber_task, cfg, n, snr, nodes, g), dtype=np.float64)
            for it in range(res.shape[1]):
                frac = res[:, it] / H.k
                m, se = mean_and_se(frac)
                metric = "ber" if not tag else "ber_genie"
                rows.append(_row(cfg, scenario, variant, snr, metric, m, n, se, index=it + 1))
                rows.append(_row(cfg, scenario, variant, snr, metric.replace("ber", "fer"),
                                 float(np.mean(res[:, it] > 0)), n, index=it + 1))
    return rows


@dataclass
class ConvergenceTrace:
    abs_theta: np.ndarray
    err_omega: np.ndarray
    err_epsilon: np.ndarray

    @property
    def n_bursts(self) -> int:
        return self.abs_theta.shape[0]

    def mean_abs(self) -> np.ndarray:
        """(3, L) mean over bursts of |estimate - truth| per symbol index."""
        return np.stack([self.abs_theta.mean(0), np.abs(self.err_omega).mean(0),
                         np.abs(self.err_epsilon).mean(0)])

    def abs_mean(self) -> np.ndarray:
        """(3, L) |mean over bursts of estimate - truth| per symbol index."""
        return np.stack([self.abs_theta.mean(0), np.abs(self.err_omega.mean(0)),
                         np.abs(self.err_epsilon.mean(0))])


def convergence_trace(cfg: SimConfig, snr_db: float = 8.0, n_bursts: int = 50,
                      truth: ChannelParams = CONVERGENCE_TRUTH) -> ConvergenceTrace:
    res = np.array(map_bursts(_trace_task, cfg, n_bursts, snr_db, truth))
    return ConvergenceTrace(res[:, 0], res[:, 1], res[:, 2])


def run_convergence(cfg: SimConfig, snr_db: float = 8.0, n_bursts: int | None = None,
                    truth: ChannelParams = CONVERGENCE_TRUTH) -> list[ResultRow]:
    """Per-symbol estimation error traces at a fixed truth, fine-tuning on and off."""
    n = n_bursts or cfg["sim.n_bursts"]
    rows = []
    for ft in (True, False):
        c = cfg.with_overrides(pf__fine_tune=ft)
        tr = convergence_trace(c, snr_db, n, truth)
        ma, am = tr.mean_abs(), tr.abs_mean()
        variant = "ft" if ft else "no_ft"
        for k in range(ma.shape[1]):
            for j, name in enumerate(("theta", "omega", "epsilon")):
                rows.append(_row(c, "converge", variant, snr_db, f"mae_{name}", ma[j, k], n, index=k))
                if j:
                    rows.append(_row(c, "converge", variant, snr_db, f"bias_{name}", am[j, k], n, index=k))
    return rows


@dataclass
class Crossing:
    snr_db: float
    points: dict  # snr_db -> (ber, std_error)


def find_crossing(cfg: SimConfig, target: float, start_db: float, step_db: float = 0.5,
                  n_frames: int = 3000, max_points: int = 16) -> Crossing:
    """Walk a fixed SNR grid from ``start_db`` until two neighbouring points bracket
    ``target``; every evaluated point uses ``n_frames`` frames and G = 1 results."""
    pts: dict = {}

    def ber_at(s):
        if s not in pts:
            rows = run_ber(cfg.with_overrides(fg__global_iters=1), [s], n_frames, genie=False)
            r = next(r for r in rows if r.metric == "ber" and r.index == 1)
            pts[s] = (r.value, r.std_error)
        return pts[s][0]

    s = round(start_db / step_db) * step_db
    direction = step_db if ber_at(s) > target else -step_db
    for _ in range(max_points - 1):
        nxt = s + direction
        above = ber_at(s) > target
        if (ber_at(nxt) > target) != above:
            break
        s = nxt
    else:
        return Crossing(float("nan"), pts)
    snrs = sorted(pts)
    return Crossing(crossing_snr(snrs, [pts[x][0] for x in snrs], target), pts)


def sweep(cfg: SimConfig, kind: str, values, snr_list=None, n_frames: int | None = None) -> list[ResultRow]:
    """BER sweeps over particle count, global iterations, or node count."""
    rows = []
    if kind == "particles":
        for v in values:
            c = cfg.with_overrides(pf__n_particles=int(v), fg__estimator="pf")
            rows += run_ber(c, snr_list, n_frames, genie=False, variant=f"n_particles={int(v)}",
                            scenario="sweep-particles")
    elif kind == "iters":
        g = int(max(values))
        c = cfg.with_overrides(fg__global_iters=g)
        keep = {int(v) for v in values}
        rows += [r for r in run_ber(c, snr_list, n_frames, genie=False, scenario="sweep-iters")
                 if r.index in keep]
    elif kind == "nodes":
        for v in values:
            c = cfg.with_overrides(channel__n_nodes=int(v))
            rows += run_ber(c, snr_list, n_frames, genie=False, variant=f"n_nodes={int(v)}", scenario="nodes")
    else:
        raise ValueError("sweep kind must be particles, iters or nodes")
    return rows


# ---------------------------------------------------------------- output


def csv_text(rows, cfg: SimConfig | None = None) -> str:
    buf = io.StringIO()
    buf.write(f"# schema: {SCHEMA}\n")
    buf.write("# snr_db is Es/N0 in dB; sigma2 = 10^(-snr_db/10) for unit-energy BPSK\n")
    buf.write("# theta errors are wrapped to (-pi, pi]; std_error = sample std / sqrt(n_trials)\n")
    if cfg is not None:
        substituted = code_for(cfg)[1]
        buf.write(f"# code_substituted={int(substituted)}\n")
        # the two readings of the random-walk variance differ by orders of magnitude
        buf.write(f"# rw.sigma_w_mode={cfg['rw.sigma_w_mode']} "
                  "(sixth: dphi_m/6, uniform_var: dphi_m^2/3)\n")
        buf.write(f"# fingerprint={cfg.fingerprint()}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in (getattr(r, c) for c in COLUMNS)])
    return buf.getvalue()


def emit_csv(rows, path, cfg: SimConfig | None = None) -> str:
    text = csv_text(rows, cfg)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return str(path)


def read_csv(path) -> list[ResultRow]:
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    out = []
    for rec in csv.DictReader(lines):
        out.append(ResultRow(rec["scenario"], rec["variant"], float(rec["snr_db"]), int(rec["index"]),
                             rec["metric"], float(rec["value"]), int(rec["n_trials"]),
                             float(rec["std_error"]), rec["fingerprint"], int(rec["seed"])))
    return out


_PLOT_TEMPLATE = '''"""Plot {csv_name}. Needs matplotlib."""
import csv
import os
from collections import defaultdict

import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))
with open(os.path.join(here, {csv_name!r})) as fh:
    rows = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))

curves = defaultdict(list)
for r in rows:
    x = float(r["index"]) if r["scenario"] == "converge" else float(r["snr_db"])
    curves[(r["variant"], r["metric"], r["index"] if r["scenario"] != "converge" else "")].append(
        (x, float(r["value"])))

fig, ax = plt.subplots()
for (variant, metric, idx), pts in sorted(curves.items()):
    pts.sort()
    label = " ".join(s for s in (variant, metric, f"it={{idx}}" if idx not in ("", "-1") else "") if s)
    ax.semilogy([p[0] for p in pts], [abs(p[1]) for p in pts], marker="o", label=label)
ax.set_xlabel({xlabel!r})
ax.grid(True, which="both")
ax.legend(fontsize="small")
fig.savefig(os.path.join(here, {png_name!r}), dpi=150)
'''


def emit_plotscript(rows, csv_path, script_path=None) -> str:
    csv_path = str(csv_path)
    script_path = script_path or os.path.splitext(csv_path)[0] + "_plot.py"
    base = os.path.basename(csv_path)
    xlabel = "symbol index k" if rows and rows[0].scenario == "converge" else "Es/N0 [dB]"
    text = _PLOT_TEMPLATE.format(csv_name=base, png_name=os.path.splitext(base)[0] + ".png", xlabel=xlabel)
    with open(script_path, "w") as fh:
        fh.write(text)
    return str(script_path)
