"""Run configuration: dataclasses plus an INI reader/writer.

Sections are ``[run]``, ``[task]``, ``[task.wind]``, ``[rl]``, ``[dob]``,
``[cbf]``, ``[residual]`` and ``[filter]``.  Unknown sections or keys are
errors.  ``python3 -m resdob.config`` prints the documented defaults.
"""
import configparser
import dataclasses
import hashlib
import io
import sys
from dataclasses import dataclass, field, fields, replace

from resdob.disturbance import RATE_CONVENTIONS, WindSpec
from resdob.env import TaskConfig, preset
from resdob.rl import PpoConfig

FILTER_MODES = ("none", "cbf", "dob_cbf", "res_cbf", "res_dob_cbf")

# mode -> (cbf, dob, residual)
MODE_COMPONENTS = {
    "none": (False, False, False),
    "cbf": (True, False, False),
    "dob_cbf": (True, True, False),
    "res_cbf": (True, False, True),
    "res_dob_cbf": (True, True, True),
}


@dataclass(frozen=True)
class DobConfig:
    a: float = 10.0
    T: float = 0.02
    error_bound: str = "auto"
    enabled: bool = True
    calibration_steps: int = 2000
    calibration_quantile: float = 0.99


@dataclass(frozen=True)
class ResidualConfig:
    learning_rate: float = 0.02
    hidden: tuple = (32, 32)
    clip_norm: float = 10.0
    enabled: bool = True


@dataclass(frozen=True)
class CbfSection:
    beta1: float = 2.0
    beta2: float = 2.0


@dataclass(frozen=True)
class FilterConfig:
    p_diag: tuple = (1.0, 1.0)


@dataclass(frozen=True)
class WindSection:
    magnitude: float = -1.0
    rate: float = 5.0
    convention: str = "rad_per_s"
    phase: float = 0.0


@dataclass(frozen=True)
class TaskSection:
    preset: str = "goal1"
    n_hazards: int = -1
    hazard_radius: float = -1.0
    hazard_speed: float = -1.0
    goal_radius: float = -1.0
    episode_length: int = 400
    mismatch_factor: float = 1.5
    plant_extras: bool = True


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    filter_mode: str = "res_dob_cbf"
    iterations: int = 150
    episodes_per_iteration: int = 1
    checkpoint_every: int = 0
    out: str = "runs/default"


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    task: TaskSection = field(default_factory=TaskSection)
    wind: WindSection = field(default_factory=WindSection)
    rl: PpoConfig = field(default_factory=PpoConfig)
    dob: DobConfig = field(default_factory=DobConfig)
    cbf: CbfSection = field(default_factory=CbfSection)
    residual: ResidualConfig = field(default_factory=ResidualConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)

    def __post_init__(self):
        if self.run.filter_mode not in FILTER_MODES:
            raise ValueError(f"filter_mode must be one of {FILTER_MODES}")
        if self.run.iterations < 0 or self.run.episodes_per_iteration < 1:
            raise ValueError("iterations must be >= 0 and episodes_per_iteration >= 1")
        if self.wind.convention not in RATE_CONVENTIONS:
            raise ValueError(f"wind convention must be one of {RATE_CONVENTIONS}")
        if self.dob.error_bound != "auto":
            if float(self.dob.error_bound) < 0.0:
                raise ValueError("dob.error_bound must be 'auto' or a number >= 0")
        if len(self.filter.p_diag) != 2 or min(self.filter.p_diag) <= 0.0:
            raise ValueError("filter.p_diag needs two positive entries")

    # derived views --------------------------------------------------------
    @property
    def components(self):
        """``(use_cbf, use_dob, use_residual)`` after applying the enable overrides."""
        cbf, dob, res = MODE_COMPONENTS[self.run.filter_mode]
        return cbf, dob and self.dob.enabled, res and self.residual.enabled

    def task_config(self):
        t = self.task
        overrides = {"episode_length": t.episode_length, "mismatch_factor": t.mismatch_factor,
                     "plant_extras": t.plant_extras}
        for name in ("n_hazards", "hazard_radius", "hazard_speed", "goal_radius"):
            value = getattr(t, name)
            if value >= 0:
                overrides[name] = value
        cfg = preset(t.preset, **overrides)
        w = self.wind
        magnitude = cfg.wind.magnitude if w.magnitude < 0 else w.magnitude
        wind = WindSpec.from_rate(magnitude, w.rate, w.convention, w.phase)
        return replace(cfg, wind=wind)

    def with_overrides(self, **sections):
        """``cfg.with_overrides(run={"seed": 3})`` style nested replacement."""
        out = self
        for name, values in sections.items():
            out = replace(out, **{name: replace(getattr(out, name), **values)})
        return out

    def to_ini(self):
        parser = _parser()
        for section, obj in _sections(self):
            parser[section] = {f.name: _format(getattr(obj, f.name)) for f in fields(obj)}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    def digest(self):
        return hashlib.sha256(self.to_ini().encode()).hexdigest()


_SECTION_ATTR = {
    "run": "run",
    "task": "task",
    "task.wind": "wind",
    "rl": "rl",
    "dob": "dob",
    "cbf": "cbf",
    "residual": "residual",
    "filter": "filter",
}

DOCS = {
    "run": {
        "seed": "master seed; split into layout, policy, init and residual streams",
        "filter_mode": "one of none, cbf, dob_cbf, res_cbf, res_dob_cbf",
        "iterations": "policy updates per run",
        "episodes_per_iteration": "complete episodes collected before each update",
        "checkpoint_every": "write a checkpoint every N iterations (0: only at the end)",
        "out": "output directory for logs and checkpoints",
    },
    "task": {
        "preset": "goal1, goal2 or arena",
        "n_hazards": "number of hazards (-1: preset value)",
        "hazard_radius": "hazard radius in m (-1: preset value)",
        "hazard_speed": "hazard speed in m/s (-1: preset value)",
        "goal_radius": "goal radius in m (-1: preset value)",
        "episode_length": "steps per episode",
        "mismatch_factor": "true plant gains = nominal gains times this factor",
        "plant_extras": "enable lateral slip and yaw damping in the true plant",
    },
    "task.wind": {
        "magnitude": "wind acceleration in m/s^2 (-1: robot default, 0.25 point / 2.5 car)",
        "rate": "direction rotation rate",
        "convention": "rad_per_s or hz (rate is revolutions per second)",
        "phase": "initial wind direction in rad",
    },
    "rl": {
        "hidden": "hidden widths of policy and value nets",
        "gamma": "discount",
        "gae_lambda": "GAE parameter",
        "clip": "PPO ratio clip",
        "epochs": "passes over the batch per update",
        "minibatch": "minibatch size",
        "policy_lr": "Adam step size for the policy",
        "value_lr": "Adam step size for both value nets",
        "lambda_lr": "Lagrange multiplier step size",
        "lambda_init": "initial Lagrange multiplier",
        "target_cost": "target cost per episode",
        "init_log_std": "initial log standard deviation of the pre-squash Gaussian",
        "entropy_coef": "bonus on sum(log_std)",
    },
    "dob": {
        "a": "predictor gain in 1/s",
        "T": "estimation sampling time in s",
        "error_bound": "estimation error bound, or auto to calibrate before training",
        "enabled": "set false to drop the observer from a mode that uses it",
        "calibration_steps": "random-policy steps used by auto calibration",
        "calibration_quantile": "quantile of the estimation error taken as the bound",
    },
    "cbf": {
        "beta1": "first class-K coefficient",
        "beta2": "second class-K coefficient",
    },
    "residual": {
        "learning_rate": "SGD step size",
        "hidden": "hidden widths of both residual nets",
        "clip_norm": "global gradient norm clip",
        "enabled": "set false to drop residual learning from a mode that uses it",
    },
    "filter": {
        "p_diag": "diagonal of the QP weighting matrix",
    },
}


def _parser():
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str  # keys are case sensitive (dob.T)
    return parser


def _sections(cfg):
    for section, attr in _SECTION_ATTR.items():
        yield section, getattr(cfg, attr)


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text, default):
    text = text.strip()
    if isinstance(default, bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(default, tuple):
        parts = [p for p in (s.strip() for s in text.split(",")) if p]
        kind = type(default[0]) if default else float
        return tuple(kind(p) for p in parts)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def parse_ini(text, base=None):
    parser = _parser()
    parser.read_string(text)
    cfg = base or RunConfig()
    for section in parser.sections():
        if section not in _SECTION_ATTR:
            raise ValueError(f"unknown config section [{section}]")
        attr = _SECTION_ATTR[section]
        obj = getattr(cfg, attr)
        known = {f.name: f for f in fields(obj)}
        values = {}
        for key, raw in parser[section].items():
            if key not in known:
                raise ValueError(f"unknown key {key!r} in [{section}]")
            values[key] = _parse(raw, getattr(obj, key))
        cfg = replace(cfg, **{attr: replace(obj, **values)})
    return cfg


def load_config(path=None):
    if path is None:
        return RunConfig()
    with open(path) as fh:
        return parse_ini(fh.read())


def defaults_reference():
    """Commented INI listing every key with its default."""
    cfg = RunConfig()
    lines = ["# Default configuration reference (generated by `python3 -m resdob.config`).", ""]
    for section, obj in _sections(cfg):
        lines.append(f"[{section}]")
        for f in fields(obj):
            doc = DOCS.get(section, {}).get(f.name)
            if doc:
                lines.append(f"# {doc}")
            lines.append(f"{f.name} = {_format(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)


def task_from_dict(data):
    """Rebuild a TaskConfig from ``dataclasses.asdict`` output."""
    data = dict(data)
    data["wind"] = WindSpec(**data["wind"])
    return TaskConfig(**data)


def task_to_dict(task):
    return dataclasses.asdict(task)


if __name__ == "__main__":
    sys.stdout.write(defaults_reference())
