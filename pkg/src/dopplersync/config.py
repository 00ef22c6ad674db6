"""Flat ``key = value`` experiment configuration.

Every key has a default whose type decides how the value is parsed. Lines starting
with ``#`` and blank lines are ignored. Unknown keys are an error so that typos do
not silently fall back to defaults.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .channel import PriorSpec
from .codec import DEFAULT_MAX_ITERS
from .framing import DEFAULT_PREAMBLE_SEED, FrameConfig
from .graph import GlobalLoopConfig
from .pf import FineTuneConfig, PFConfig
from .rw import RWConfig

DEFAULTS: dict[str, object] = {
    "ldpc.alist_path": "",
    "ldpc.max_iters": DEFAULT_MAX_ITERS,
    "frame.n_preamble": 30,
    "frame.preamble_seed": DEFAULT_PREAMBLE_SEED,
    "channel.omega_max": 0.01,
    "channel.epsilon_max": 1e-5,
    "channel.n_nodes": 1,
    "sim.seed": 1,
    "sim.snr_db": (4.0,),
    "sim.n_bursts": 200,
    "sim.n_frames": 2000,
    "sim.workers": 1,
    "fg.global_iters": 1,
    "fg.feedback": "extrinsic",
    "fg.estimator": "rw",
    "pf.n_particles": 400,
    "pf.fine_tune": True,
    "pf.alpha": 0.1,
    "pf.zeta": 1e-3,
    "pf.gamma_scale": 0.1,
    "pf.theta_th": 0.05,
    "pf.omega_th": 1e-4,
    "pf.max_fires": 1,
    "pf.ft_start_frac": 0.97,
    "rw.n_q": 100,
    "rw.sigma_w_mode": "sixth",
    "rw.mean_mode": "circular",
    "bounds.h": 1.0,
}

ESTIMATORS = ("rw", "pf")
# Keys that change how a run executes but not what it computes.
EXECUTION_KEYS = frozenset({"sim.workers"})


class ConfigError(ValueError):
    def __init__(self, message: str, line: int = 0):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_value(key: str, text: str):
    default = DEFAULTS[key]
    text = text.strip()
    if isinstance(default, bool):
        return _parse_bool(text)
    if isinstance(default, int):
        return int(text, 0)
    if isinstance(default, float):
        return float(text)
    if isinstance(default, tuple):
        return tuple(float(t) for t in text.replace(",", " ").split())
    return text


def format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class SimConfig:
    values: dict = field(default_factory=lambda: dict(DEFAULTS))

    def __post_init__(self):
        merged = dict(DEFAULTS)
        for k, v in self.values.items():
            if k not in DEFAULTS:
                raise ConfigError(f"unknown key {k!r}")
            merged[k] = v
        self.values = merged
        self.validate()

    def __getitem__(self, key: str):
        return self.values[key]

    def with_overrides(self, **kv) -> "SimConfig":
        """Copy with overrides; keyword names use ``__`` for the dot (``pf__zeta``)."""
        vals = dict(self.values)
        for k, v in kv.items():
            vals[k.replace("__", ".")] = v
        return SimConfig(vals)

    def validate(self) -> None:
        v = self.values
        if v["fg.estimator"] not in ESTIMATORS:
            raise ConfigError(f"fg.estimator must be one of {ESTIMATORS}")
        if v["channel.n_nodes"] < 1:
            raise ConfigError("channel.n_nodes must be >= 1")
        if v["sim.n_bursts"] < 1 or v["sim.n_frames"] < 1:
            raise ConfigError("trial counts must be >= 1")
        if v["sim.workers"] < 1:
            raise ConfigError("sim.workers must be >= 1")
        try:
            self.prior()
            self.pf_config()
            self.rw_config()
            self.loop_config()
            self.frame_config(504)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # ------------------------------------------------------------ module configs

    def prior(self) -> PriorSpec:
        return PriorSpec(self["channel.omega_max"], self["channel.epsilon_max"])

    def frame_config(self, n_data: int) -> FrameConfig:
        return FrameConfig(self["frame.n_preamble"], n_data)

    def pf_config(self) -> PFConfig:
        ft = FineTuneConfig(
            enabled=self["pf.fine_tune"],
            alpha=self["pf.alpha"],
            zeta=self["pf.zeta"],
            gamma_scale=self["pf.gamma_scale"],
            theta_th=self["pf.theta_th"],
            omega_th=self["pf.omega_th"],
            max_fires=self["pf.max_fires"],
            start_frac=self["pf.ft_start_frac"],
        )
        return PFConfig(self["pf.n_particles"], ft)

    def rw_config(self) -> RWConfig:
        return RWConfig(self["rw.n_q"], self["rw.sigma_w_mode"], self["rw.mean_mode"])

    def loop_config(self) -> GlobalLoopConfig:
        return GlobalLoopConfig(
            self["fg.global_iters"], self["fg.estimator"], self["ldpc.max_iters"], self["fg.feedback"]
        )

    # ------------------------------------------------------------ serialization

    def to_text(self, skip=()) -> str:
        return "".join(f"{k} = {format_value(self.values[k])}\n" for k in sorted(self.values) if k not in skip)

    def fingerprint(self) -> str:
        """Short SHA-256 of the canonical text; changes with every key except worker count."""
        return hashlib.sha256(self.to_text(EXECUTION_KEYS).encode()).hexdigest()[:16]


def parse_config(text: str) -> SimConfig:
    vals = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected key = value, got {raw.strip()!r}", lineno)
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in vals:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        try:
            vals[key] = parse_value(key, val)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}", lineno) from None
    return SimConfig(vals)


def load_config(path) -> SimConfig:
    with open(path) as fh:
        return parse_config(fh.read())
