"""Experiment specification and its INI-style text format.

Defaults reproduce the best Yelp setting: K=2, T=2, D=256, lr=5e-4,
alpha=0.6, tau=0.1, lambda1=0.3, lambda2=5e-5.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .trainer import TrainConfig

# sweepable name -> (section, field)
SWEEP_KEYS = {
    "alpha": ("rdg", "alpha"),
    "terminal_time": ("rdg", "terminal_time"),
    "steps": ("rdg", "steps"),
    "dim": ("rdg", "dim"),
    "tau": ("cl", "tau"),
    "lambda1": ("cl", "lambda1"),
    "lambda2": ("cl", "lambda2"),
    "lr": ("train", "lr"),
    "batch_size": ("train", "batch_size"),
    "epochs": ("train", "epochs"),
    "variant": ("train", "variant"),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    name: str = "rdgcl"
    train_path: str = ""
    test_path: str = ""
    valid_path: str = ""
    output_dir: str = "runs"
    train: TrainConfig = field(default_factory=TrainConfig)
    ks: tuple[int, ...] = (20, 40)
    valid_frac: float = 0.1
    seeds: tuple[int, ...] = ()
    sweep: tuple[tuple[str, tuple], ...] = ()
    noise_ratios: tuple[float, ...] = (0.001, 0.003, 0.005)
    group_analysis: bool = True

    def __post_init__(self):
        if not self.ks or any(k < 1 for k in self.ks):
            raise ConfigError("ks must be a non-empty list of positive integers")
        if not 0 <= self.valid_frac < 1:
            raise ConfigError("valid_frac must lie in [0, 1)")
        for key, values in self.sweep:
            if key not in SWEEP_KEYS:
                raise ConfigError(f"unknown sweep key {key!r}; choose from {sorted(SWEEP_KEYS)}")
            if not values:
                raise ConfigError(f"sweep grid for {key!r} is empty")
        for r in self.noise_ratios:
            if not 0 <= r <= 0.1:
                raise ConfigError(f"noise ratio {r} outside [0, 0.1]")

    @property
    def run_seeds(self) -> tuple[int, ...]:
        return self.seeds or (self.train.seed,)

    def validate_paths(self, need_test: bool = True) -> None:
        missing = [p for p in (self.train_path, self.test_path if need_test else "", self.valid_path)
                   if p and not Path(p).is_file()]
        if not self.train_path:
            raise ConfigError("no train file given")
        if need_test and not self.test_path:
            raise ConfigError("no test file given")
        if missing:
            raise ConfigError(f"missing input files: {', '.join(missing)}")

    def with_param(self, key: str, value) -> "ExperimentSpec":
        section, name = SWEEP_KEYS[key]
        if section == "train":
            return replace(self, train=replace(self.train, **{name: value}))
        sub = replace(getattr(self.train, section), **{name: value})
        return replace(self, train=replace(self.train, **{section: sub}))


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(raw: str, like, key: str):
    raw = raw.strip()
    try:
        if isinstance(like, bool):
            low = raw.lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(raw)
            return low in ("true", "yes", "1")
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(like).__name__}") from exc
    return raw


def _sweep_value(key: str, raw: str):
    section, name = SWEEP_KEYS[key]
    default = getattr(TrainConfig() if section == "train" else getattr(TrainConfig(), section), name)
    return _coerce(raw, default, f"sweep.{key}")


def _split_list(raw: str) -> list[str]:
    return [x.strip() for x in raw.split(",") if x.strip()]


def serialize(spec: ExperimentSpec) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    t = spec.train
    cp["experiment"] = {
        "name": spec.name,
        "ks": _fmt(spec.ks),
        "valid_frac": _fmt(spec.valid_frac),
        "seeds": _fmt(spec.seeds),
    }
    cp["paths"] = {"train": spec.train_path, "test": spec.test_path, "valid": spec.valid_path,
                   "output": spec.output_dir}
    cp["train"] = {f.name: _fmt(getattr(t, f.name)) for f in fields(t) if f.name not in ("cl", "rdg")}
    cp["rdg"] = {f.name: _fmt(getattr(t.rdg, f.name)) for f in fields(t.rdg)
                 if f.name not in ("diffusion", "reaction")}
    cp["cl"] = {f.name: _fmt(getattr(t.cl, f.name)) for f in fields(t.cl)}
    cp["sweep"] = {k: _fmt(v) for k, v in spec.sweep}
    cp["robustness"] = {"noise_ratios": _fmt(spec.noise_ratios), "group_analysis": _fmt(spec.group_analysis)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _section(cp, name: str, template) -> dict:
    if not cp.has_section(name):
        return {}
    known = {f.name for f in fields(template)}
    out = {}
    for key, raw in cp.items(name):
        if key not in known:
            raise ConfigError(f"unknown key [{name}] {key}")
        out[key] = _coerce(raw, getattr(template, key), f"{name}.{key}")
    return out


def parse(text: str) -> ExperimentSpec:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    allowed = {"experiment", "paths", "train", "rdg", "cl", "sweep", "robustness"}
    extra = set(cp.sections()) - allowed
    if extra:
        raise ConfigError(f"unknown sections: {sorted(extra)}")
    base = TrainConfig()
    try:
        rdg = replace(base.rdg, **_section(cp, "rdg", base.rdg))
        cl = replace(base.cl, **_section(cp, "cl", base.cl))
        train = replace(base, rdg=rdg, cl=cl, **_section(cp, "train", base))
    except (TypeError, ValueError, NotImplementedError) as exc:
        raise ConfigError(str(exc)) from exc

    kw: dict = {"train": train}
    if cp.has_section("experiment"):
        e = cp["experiment"]
        unknown = set(e) - {"name", "ks", "valid_frac", "seeds"}
        if unknown:
            raise ConfigError(f"unknown key(s) in [experiment]: {sorted(unknown)}")
        if "name" in e:
            kw["name"] = e["name"]
        if "ks" in e:
            kw["ks"] = tuple(_coerce(x, 0, "experiment.ks") for x in _split_list(e["ks"]))
        if "valid_frac" in e:
            kw["valid_frac"] = _coerce(e["valid_frac"], 0.0, "experiment.valid_frac")
        if "seeds" in e:
            kw["seeds"] = tuple(_coerce(x, 0, "experiment.seeds") for x in _split_list(e["seeds"]))
    if cp.has_section("paths"):
        p = cp["paths"]
        unknown = set(p) - {"train", "test", "valid", "output"}
        if unknown:
            raise ConfigError(f"unknown key(s) in [paths]: {sorted(unknown)}")
        for key, attr in (("train", "train_path"), ("test", "test_path"), ("valid", "valid_path"),
                          ("output", "output_dir")):
            if key in p:
                kw[attr] = p[key].strip()
    if cp.has_section("sweep"):
        grid = []
        for key, raw in cp.items("sweep"):
            if key not in SWEEP_KEYS:
                raise ConfigError(f"unknown sweep key {key!r}")
            grid.append((key, tuple(_sweep_value(key, x) for x in _split_list(raw))))
        kw["sweep"] = tuple(grid)
    if cp.has_section("robustness"):
        r = cp["robustness"]
        unknown = set(r) - {"noise_ratios", "group_analysis"}
        if unknown:
            raise ConfigError(f"unknown key(s) in [robustness]: {sorted(unknown)}")
        if "noise_ratios" in r:
            kw["noise_ratios"] = tuple(_coerce(x, 0.0, "robustness.noise_ratios")
                                       for x in _split_list(r["noise_ratios"]))
        if "group_analysis" in r:
            kw["group_analysis"] = _coerce(r["group_analysis"], True, "robustness.group_analysis")
    return ExperimentSpec(**kw)


def load(path: str | Path) -> ExperimentSpec:
    return parse(Path(path).read_text(encoding="utf-8"))
