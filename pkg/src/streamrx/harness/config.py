"""Experiment configuration: YAML files with a versioned ``schema`` field.

A config is a mapping with the sections below (see the bundled presets for
complete examples)::

    schema: 1
    name: mimo-linear
    seed: 0
    trials: 10
    scenario:   {channel: linear|tanh|rotation, users, antennas, constellation,
                 snr_db: [..], rho, tanh_scale, alpha, noise_var}
    schedule:   {T_sync, block_len, pilots_per_block, n_blocks}
    receiver:   {kind: deepsic|monolithic, iterations, hidden}
    ssm:        {gamma, sigma2, prior_var}
    updaters:   [{name: cm-ekf}, {name: lo-fi, rank: 10, label: lofi-10}, ...]
    references: [mmse] | [map, nlms]
    nlms:       {step, delta}

Validation collects every problem before reporting, so one run of
``validate`` lists all of them.
"""

from __future__ import annotations

import copy
import math
import itertools
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping

import yaml

from ..belief import SsmHyper
from ..channel import (
    LinearMimo,
    Rotation,
    TanhMimo,
    TransmissionSchedule,
    get_constellation,
)
from ..errors import ConfigurationError
from ..learners import UPDATER_NAMES, make_updater

SCHEMA_VERSION = 1
PRESETS = ("rotation", "mimo-linear", "mimo-nonlinear", "mimo-sparse-pilots")

_CHANNELS = ("linear", "tanh", "rotation")
_RECEIVERS = ("deepsic", "monolithic")
_REFERENCES = ("mmse", "map", "nlms")

_DEFAULTS: dict = {
    "schema": SCHEMA_VERSION,
    "name": "experiment",
    "seed": 0,
    "trials": 1,
    "scenario": {
        "channel": "linear",
        "users": 3,
        "antennas": 5,
        "constellation": "qpsk",
        "snr_db": [10.0],
        "rho": 0.995,
        "tanh_scale": 1.0,
        "alpha": 2.5e-4,
        "noise_var": 1.0 / 16.0,
    },
    "schedule": {"T_sync": 256, "block_len": 64, "pilots_per_block": 16, "n_blocks": 96},
    "receiver": {"kind": "deepsic", "iterations": 3, "hidden": 24},
    "ssm": {"gamma": 0.999, "sigma2": 1e-4, "prior_var": 1.0},
    "updaters": [{"name": "cm-ekf"}],
    "references": [],
    "nlms": {"step": 0.5, "delta": 1e-6},
}


@dataclass(frozen=True)
class UpdaterSpec:
    name: str
    label: str
    options: tuple = ()

    def build(self, hyper: SsmHyper):
        return make_updater(self.name, hyper, **dict(self.options))


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    seed: int
    trials: int
    channel: str
    users: int
    antennas: int
    constellation: str
    snr_db: tuple
    rho: float
    tanh_scale: float
    alpha: float
    noise_var: float
    schedule: TransmissionSchedule
    receiver: str
    iterations: int
    hidden: tuple
    hyper: SsmHyper
    updaters: tuple
    references: tuple
    nlms_step: float
    nlms_delta: float
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def bits_per_symbol(self) -> int:
        return get_constellation(self.constellation).bits_per_symbol

    def channel_kind(self, snr_db: float):
        if self.channel == "rotation":
            return Rotation(self.alpha, self.noise_var)
        lin = LinearMimo(self.rho, snr_db)
        return TanhMimo(lin, self.tanh_scale) if self.channel == "tanh" else lin

    def snr_points(self) -> tuple:
        if self.channel == "rotation":
            # fixed noise level; report it in the same convention as the MIMO
            # channels (signal power per real dimension over noise variance)
            if self.noise_var == 0.0:
                return (math.inf,)
            return (round(10.0 * math.log10(0.5 / self.noise_var), 6),)
        return self.snr_db

    def updater(self, label: str) -> UpdaterSpec:
        for u in self.updaters:
            if u.label == label:
                return u
        raise ConfigurationError(f"no updater labelled {label!r}")


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _merge(base: dict, over: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def preset_dict(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("streamrx.harness").joinpath("presets", f"{name}.yaml").read_text()
    return yaml.safe_load(text)


def read_config_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: not valid YAML ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return data


def parse_assignment(text: str) -> tuple:
    """``a.b.c=value`` with ``value`` parsed as YAML (numbers, lists, ...)."""
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} is not of the form key=value")
    key, value = text.split("=", 1)
    return key.strip(), yaml.safe_load(value)


def set_path(data: dict, dotted: str, value) -> None:
    """Assign into nested dicts; ``updaters.<label>.<opt>`` addresses a list entry."""
    parts = dotted.split(".")
    if parts[0] == "updaters" and len(parts) == 3:
        for u in data.get("updaters", []):
            if u.get("label", u.get("name")) == parts[1]:
                u[parts[2]] = value
                return
        raise ConfigurationError(f"override {dotted!r}: no updater labelled {parts[1]!r}")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"override {dotted!r}: {p!r} is not a section")
    node[parts[-1]] = value


def load_config(source=None, *, preset: str | None = None, overrides: Iterable = (),
                seed: int | None = None, trials: int | None = None) -> ExperimentConfig:
    """Build a validated config from a preset and/or a file or mapping plus overrides."""
    data = preset_dict(preset) if preset else {}
    if source is not None:
        data = _merge(data, source if isinstance(source, Mapping) else read_config_file(source))
    data = _merge(_DEFAULTS, data)
    for item in overrides:
        key, value = parse_assignment(item) if isinstance(item, str) else item
        set_path(data, key, value)
    if seed is not None:
        data["seed"] = seed
    if trials is not None:
        data["trials"] = trials
    return validate(data)


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _num(errors, where, value, *, integer=False, lo=None, hi=None, lo_open=False):
    ok_type = isinstance(value, int) if integer else isinstance(value, (int, float))
    if isinstance(value, bool) or not ok_type:
        errors.append(f"{where}: expected {'an integer' if integer else 'a number'}, got {value!r}")
        return value
    if lo is not None and (value <= lo if lo_open else value < lo):
        errors.append(f"{where}: {value} must be {'>' if lo_open else '>='} {lo}")
    if hi is not None and value > hi:
        errors.append(f"{where}: {value} must be <= {hi}")
    return value


def validate(data: dict) -> ExperimentConfig:
    errors: list[str] = []
    known = set(_DEFAULTS)
    for k in data:
        if k not in known:
            errors.append(f"unknown top-level key {k!r}")
    if data.get("schema") != SCHEMA_VERSION:
        errors.append(f"schema: expected {SCHEMA_VERSION}, got {data.get('schema')!r}")

    _num(errors, "seed", data["seed"], integer=True, lo=0)
    _num(errors, "trials", data["trials"], integer=True, lo=1)

    sc = data["scenario"]
    for k in sc:
        if k not in _DEFAULTS["scenario"]:
            errors.append(f"scenario: unknown key {k!r}")
    if sc["channel"] not in _CHANNELS:
        errors.append(f"scenario.channel: {sc['channel']!r} not one of {_CHANNELS}")
    _num(errors, "scenario.users", sc["users"], integer=True, lo=1)
    _num(errors, "scenario.antennas", sc["antennas"], integer=True, lo=1)
    try:
        get_constellation(sc["constellation"])
    except ConfigurationError as exc:
        errors.append(f"scenario.constellation: {exc}")
    snr = sc["snr_db"]
    snr = list(snr) if isinstance(snr, (list, tuple)) else [snr]
    if not snr:
        errors.append("scenario.snr_db: need at least one SNR point")
    for i, v in enumerate(snr):
        _num(errors, f"scenario.snr_db[{i}]", v)
    _num(errors, "scenario.rho", sc["rho"], lo=0.0, hi=1.0)
    _num(errors, "scenario.tanh_scale", sc["tanh_scale"], lo=0.0, lo_open=True)
    _num(errors, "scenario.alpha", sc["alpha"])
    _num(errors, "scenario.noise_var", sc["noise_var"], lo=0.0)
    if sc["channel"] == "rotation" and (sc["users"] != 1 or sc["antennas"] != 1):
        errors.append("scenario: rotation channel requires users=1 and antennas=1")

    sch = data["schedule"]
    for k in ("T_sync", "block_len", "pilots_per_block", "n_blocks"):
        _num(errors, f"schedule.{k}", sch.get(k), integer=True, lo=0)
    for k in sch:
        if k not in _DEFAULTS["schedule"]:
            errors.append(f"schedule: unknown key {k!r}")
    schedule = None
    try:
        schedule = TransmissionSchedule(sch["T_sync"], sch["block_len"],
                                        sch["pilots_per_block"], sch["n_blocks"])
    except (ConfigurationError, TypeError) as exc:
        errors.append(f"schedule: {exc}")

    rc = data["receiver"]
    if rc["kind"] not in _RECEIVERS:
        errors.append(f"receiver.kind: {rc['kind']!r} not one of {_RECEIVERS}")
    _num(errors, "receiver.iterations", rc["iterations"], integer=True, lo=1)
    hidden = rc["hidden"]
    hidden = tuple(hidden) if isinstance(hidden, (list, tuple)) else (hidden,)
    for i, h in enumerate(hidden):
        _num(errors, f"receiver.hidden[{i}]", h, integer=True, lo=1)
    if rc["kind"] == "deepsic" and len(hidden) != 1:
        errors.append("receiver.hidden: DeepSIC modules take a single hidden width")

    hyper = None
    try:
        hyper = SsmHyper(**data["ssm"])
    except (ConfigurationError, TypeError) as exc:
        errors.append(f"ssm: {exc}")

    specs = []
    labels = set()
    if not data["updaters"]:
        errors.append("updaters: at least one updater is required")
    for i, u in enumerate(data["updaters"]):
        if not isinstance(u, Mapping) or "name" not in u:
            errors.append(f"updaters[{i}]: expected a mapping with a 'name'")
            continue
        opts = {k: v for k, v in u.items() if k not in ("name", "label")}
        label = u.get("label", u["name"])
        if label in labels:
            errors.append(f"updaters[{i}]: duplicate label {label!r}")
        labels.add(label)
        if u["name"] not in UPDATER_NAMES:
            errors.append(f"updaters[{i}]: unknown updater {u['name']!r}")
            continue
        try:
            make_updater(u["name"], hyper, **opts)
        except ConfigurationError as exc:
            errors.append(f"updaters[{i}]: {exc}")
        specs.append(UpdaterSpec(u["name"], label, tuple(sorted(opts.items()))))

    refs = tuple(data["references"] or ())
    for r in refs:
        if r not in _REFERENCES:
            errors.append(f"references: unknown reference {r!r}")
        elif r == "mmse" and sc["channel"] == "rotation":
            errors.append("references: mmse needs a MIMO channel")
        elif r in ("map", "nlms") and sc["channel"] != "rotation":
            errors.append(f"references: {r} is only defined for the rotation channel")

    nl = data["nlms"]
    _num(errors, "nlms.step", nl.get("step"), lo=0.0)
    _num(errors, "nlms.delta", nl.get("delta"), lo=0.0, lo_open=True)

    if errors:
        raise ConfigurationError(f"{len(errors)} configuration error(s)", errors=errors)

    return ExperimentConfig(
        name=str(data["name"]), seed=data["seed"], trials=data["trials"],
        channel=sc["channel"], users=sc["users"], antennas=sc["antennas"],
        constellation=sc["constellation"], snr_db=tuple(float(v) for v in snr),
        rho=float(sc["rho"]), tanh_scale=float(sc["tanh_scale"]), alpha=float(sc["alpha"]),
        noise_var=float(sc["noise_var"]), schedule=schedule, receiver=rc["kind"],
        iterations=rc["iterations"], hidden=hidden, hyper=hyper, updaters=tuple(specs),
        references=refs, nlms_step=float(nl["step"]), nlms_delta=float(nl["delta"]),
        raw=data,
    )


def expand_grid(data: dict, grid: Mapping[str, list]) -> list:
    """Every combination of the dotted-key ``grid`` applied to ``data``."""
    keys = list(grid)
    out = []
    for values in itertools.product(*(grid[k] for k in keys)):
        d = copy.deepcopy(data)
        for k, v in zip(keys, values):
            set_path(d, k, v)
        out.append((dict(zip(keys, values)), d))
    return out
