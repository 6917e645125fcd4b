"""Plain-text experiment configuration: one ``section.key = value`` per line."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..pathkit import ConfigurationError
from ..regcalc import DEFAULT_MULTIPLES, EpsilonSchedule
from .expr import compile_expr

__all__ = ["ExperimentConfig", "parse_config_text", "load_config"]

SECTIONS = ("experiment", "grid", "ensemble", "schedule", "tolerance", "problem", "pde",
            "negative", "output")
EXPR_KEYS = ("b", "b1", "sigma", "h", "phi")
TRUE = {"1", "true", "yes", "on"}
FALSE = {"0", "false", "no", "off"}


def parse_config_text(text: str) -> dict:
    """Parse lines into ``{"section.key": "value"}``; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'section.key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key.count(".") != 1 or not all(key.split(".")):
            raise ConfigurationError(f"line {lineno}: key {key!r} is not 'section.key'")
        if key.split(".")[0] not in SECTIONS:
            raise ConfigurationError(f"line {lineno}: unknown section {key.split('.')[0]!r}")
        if key in out:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _num(raw, key, kind=float, *, low=None, strict=False):
    try:
        v = kind(raw)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{key}: {raw!r} is not a valid {kind.__name__}") from None
    if kind is float and v != v:
        raise ConfigurationError(f"{key}: NaN is not allowed")
    if low is not None and (v <= low if strict else v < low):
        raise ConfigurationError(f"{key}: {v} must be {'>' if strict else '>='} {low}")
    return v


def _bool(raw, key):
    r = str(raw).strip().lower()
    if r in TRUE:
        return True
    if r in FALSE:
        return False
    raise ConfigurationError(f"{key}: {raw!r} is not a boolean")


@dataclass
class ExperimentConfig:
    """Validated configuration of one experiment run."""

    experiment: str
    t0: float = 0.0
    T: float = 1.0
    steps: int = 10000
    paths: int = 200
    seed: int = 1
    multiples: tuple = DEFAULT_MULTIPLES
    tolerances: dict = field(default_factory=dict)
    problem: dict = field(default_factory=dict)
    pde: dict = field(default_factory=dict)
    inject_defect: bool = False
    out: str = "out"
    workers: int = 1

    @property
    def schedule(self) -> EpsilonSchedule:
        return EpsilonSchedule(self.multiples)

    def tol(self, check: str, default: float | None) -> float | None:
        return self.tolerances.get(check, default)

    def pde_param(self, key, default, kind=float):
        return kind(self.pde.get(key, default))

    def expr(self, key, default=None, n=1):
        text = self.problem.get(key, default)
        return None if text is None else compile_expr(text, n)

    def echo(self) -> str:
        lines = [f"experiment.name = {self.experiment}", f"grid.t0 = {self.t0!r}",
                 f"grid.T = {self.T!r}", f"grid.steps = {self.steps}",
                 f"ensemble.paths = {self.paths}", f"ensemble.seed = {self.seed}",
                 f"ensemble.workers = {self.workers}",
                 "schedule.multiples = " + ",".join(str(m) for m in self.multiples),
                 f"negative.inject_defect = {str(self.inject_defect).lower()}",
                 f"output.dir = {self.out}"]
        lines += [f"tolerance.{k} = {v!r}" for k, v in sorted(self.tolerances.items())]
        lines += [f"problem.{k} = {v}" for k, v in sorted(self.problem.items())]
        lines += [f"pde.{k} = {v}" for k, v in sorted(self.pde.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, kv: dict, *, registry=None, overrides=None) -> "ExperimentConfig":
        kv = dict(kv)
        for k, v in (overrides or {}).items():
            if v is not None:
                kv[k] = str(v)
        name = kv.pop("experiment.name", None)
        if not name:
            raise ConfigurationError("experiment.name is required")
        if registry is not None and name not in registry:
            raise ConfigurationError(f"unknown experiment {name!r}")
        cfg = cls(name)
        known = {
            "grid.t0": ("t0", float, None), "grid.T": ("T", float, None),
            "grid.steps": ("steps", int, 2), "ensemble.paths": ("paths", int, 2),
            "ensemble.seed": ("seed", int, 0), "ensemble.workers": ("workers", int, 1),
        }
        for key, raw in kv.items():
            section, sub = key.split(".")
            if key in known:
                attr, kind, low = known[key]
                setattr(cfg, attr, _num(raw, key, kind, low=low))
            elif key == "schedule.multiples":
                cfg.multiples = tuple(_num(p, key, int, low=1) for p in raw.split(",") if p.strip())
            elif section == "tolerance":
                cfg.tolerances[sub] = _num(raw, key, float, low=0.0, strict=True)
            elif section == "problem":
                cfg.problem[sub] = raw
            elif section == "pde":
                cfg.pde[sub] = raw
            elif key == "negative.inject_defect":
                cfg.inject_defect = _bool(raw, key)
            elif key == "output.dir":
                cfg.out = raw
            else:
                raise ConfigurationError(f"unknown key {key!r}")
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not (self.T == self.T and self.t0 == self.t0) or not 0 <= self.t0 < self.T:
            raise ConfigurationError("grid needs 0 <= t0 < T")
        sched = EpsilonSchedule(self.multiples)
        if max(sched.multiples) >= self.steps:
            raise ConfigurationError("largest epsilon multiple must be below grid.steps")
        for key in EXPR_KEYS:
            if key in self.problem:
                n = int(self.problem.get("dim", 1))
                if key in ("b", "b1", "sigma") and ";" in self.problem[key]:
                    from .expr import compile_vector
                    compile_vector(self.problem[key], n)
                else:
                    compile_expr(self.problem[key], n)
        for key, raw in self.pde.items():
            _num(raw, f"pde.{key}", float)
        for key in ("x0", "level", "mu", "rate", "lambda", "delta", "bound"):
            if key in self.problem:
                _num(self.problem[key], f"problem.{key}", float)


def load_config(path: str, *, registry=None, overrides=None) -> ExperimentConfig:
    try:
        with open(path) as fp:
            text = fp.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path!r}: {exc.strerror}") from None
    return ExperimentConfig.from_mapping(parse_config_text(text), registry=registry,
                                         overrides=overrides)
