"""Flat ``key = value`` run configuration shared by every CLI command.

Keys are dotted paths into the component configs::

    seed = 0
    model.preset = tiny
    model.kernel_size = 7
    train.max_epochs = 300
    rrt.step = 0.5          # comments run to end of line

``model.*`` maps to :class:`ModelConfig`, ``train.*`` to :class:`TrainConfig`,
``synth.*`` to :class:`SceneSpec`, and ``grid.*``, ``rrt.*``, ``control.*``,
``sim.*`` to the nav parameter classes. A single top-level ``seed`` feeds model
init, training order and the planner. Unknown keys are an error. The
effective config (every key, defaults included) is what :meth:`RunConfig.dumps`
echoes, so feeding that file back reproduces the run.
"""
from __future__ import annotations

import dataclasses
from pathlib import Path

from .data import SceneSpec
from .model import PRESETS, ModelConfig
from .nav.control import Gains
from .nav.grid import GridParams
from .nav.rrt import RRTParams
from .nav.sim import SimParams
from .optim import TrainConfig

# section -> (dataclass, fields that are not exposed)
SECTIONS = {
    "model": (ModelConfig, {"seed"}),
    "train": (TrainConfig, {"seed"}),
    "synth": (SceneSpec, set()),
    "grid": (GridParams, set()),
    "rrt": (RRTParams, {"seed"}),
    "control": (Gains, set()),
    "sim": (SimParams, set()),
}

# keys outside the component dataclasses
EXTRA = {
    "seed": ("int", 0),
    "model.preset": ("str", "tiny"),
    "data.val_scenes": ("int", 2),
    "eval.threshold": ("float", 0.5),
    "eval.n_thresholds": ("int", 100),
    "plan.start": ("tuple_float", None),
    "plan.goal": ("tuple_float", None),
}


class ConfigError(ValueError):
    pass


def _kind(f: dataclasses.Field) -> str:
    t = str(f.type)
    if "tuple" in t:
        return "tuple_int"
    for k in ("bool", "int", "float", "str"):
        if t.startswith(k):
            return k
    raise TypeError(f"unsupported config field type {t}")


def _schema() -> dict[str, tuple[str, object]]:
    out = dict(EXTRA)
    for sec, (cls, hidden) in SECTIONS.items():
        for f in dataclasses.fields(cls):
            if f.name in hidden:
                continue
            default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
            out[f"{sec}.{f.name}"] = (_kind(f), default)
    return out


SCHEMA = _schema()


def _parse(key: str, kind: str, text: str):
    s = text.strip()
    if s.lower() == "none":
        return None
    try:
        if kind == "bool":
            if s.lower() in ("true", "1", "yes"):
                return True
            if s.lower() in ("false", "0", "no"):
                return False
            raise ValueError(s)
        if kind == "int":
            return int(s)
        if kind == "float":
            return float(s)
        if kind == "tuple_int":
            return tuple(int(v) for v in s.replace(" ", "").split(",") if v != "")
        if kind == "tuple_float":
            return tuple(float(v) for v in s.replace(" ", "").split(",") if v != "")
        return s
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r} (expected {kind})") from None


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ",".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


class RunConfig:
    """Values explicitly set by file or flags; everything else falls back to defaults."""

    def __init__(self, values: dict | None = None):
        self.values: dict = {}
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        if isinstance(value, str):
            value = _parse(key, SCHEMA[key][0], value)
        self.values[key] = value

    def get(self, key: str):
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        if key in self.values:
            return self.values[key]
        if key.startswith("model.") and key != "model.preset":
            preset = PRESETS.get(self.get("model.preset"), {})
            name = key.split(".", 1)[1]
            if name in preset:
                return preset[name]
        return SCHEMA[key][1]

    # --- parsing ---------------------------------------------------------

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        cfg = cls()
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{n}: expected 'key = value', got {raw.strip()!r}")
            k, v = (s.strip() for s in line.split("=", 1))
            try:
                cfg.set(k, v)
            except ConfigError as e:
                raise ConfigError(f"{source}:{n}: {e}") from None
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        return cls.parse(p.read_text(), str(p))

    def override(self, items) -> "RunConfig":
        """Apply ``key=value`` strings (CLI ``--set``) on top of this config."""
        for item in items or ():
            if "=" not in item:
                raise ConfigError(f"override must be key=value, got {item!r}")
            k, v = (s.strip() for s in item.split("=", 1))
            self.set(k, v)
        return self

    def dumps(self) -> str:
        """Effective config: every key with its resolved value, sorted."""
        lines = ["# effective configuration"]
        lines += [f"{k} = {_format(self.get(k))}" for k in sorted(SCHEMA)]
        return "\n".join(lines) + "\n"

    def write(self, path):
        Path(path).write_text(self.dumps())

    # --- builders --------------------------------------------------------

    def _build(self, sec: str, cls, **extra):
        try:
            obj = cls(**extra, **self._section(sec))
            if hasattr(obj, "validate"):
                obj.validate()
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid {sec}.* settings: {e}") from None
        return obj

    def _section(self, sec: str) -> dict:
        cls, hidden = SECTIONS[sec]
        return {f.name: self.get(f"{sec}.{f.name}") for f in dataclasses.fields(cls) if f.name not in hidden}

    def model_config(self) -> ModelConfig:
        if self.get("model.preset") not in PRESETS:
            raise ConfigError(f"unknown model preset {self.get('model.preset')!r}; choose from {sorted(PRESETS)}")
        return self._build("model", ModelConfig, seed=self.get("seed"))

    def train_config(self) -> TrainConfig:
        return self._build("train", TrainConfig, seed=self.get("seed"))

    def scene_spec(self) -> SceneSpec:
        return self._build("synth", SceneSpec)

    def grid_params(self) -> GridParams:
        return self._build("grid", GridParams)

    def rrt_params(self) -> RRTParams:
        return self._build("rrt", RRTParams, seed=self.get("seed"))

    def gains(self) -> Gains:
        return self._build("control", Gains)

    def sim_params(self) -> SimParams:
        return self._build("sim", SimParams)
