"""TOML run configuration: defaults, validation, normalization and hashing."""
from __future__ import annotations

import copy
import hashlib
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .harness import STRATEGIES, TIERS, Numerics, SweepSpec
from .optimize import OptimizerConfig

SEED_ENV = "BJJ_QSL_SEED"

DEFAULTS = {
    "model": {
        "tier": "two-mode",
        "J": 1.0,
        "dU": 0.0,
        "N": 100,
        "dimer_d_prep": -20.0,    # units of J
        "a": 2.0,
        "x_max": 16.0,
        "n_points": 1024,
        "gpe_d_prep": -1.0,
        "dt_two_mode": 1e-3,
        "dt_dimer": 2e-3,
        "dt_gpe": 2e-3,
    },
    "control": {
        "strategy": "ccp-feedback",
        "crab_guess": "ccp",
        "constraint_D0": 2.0,     # units of J
        "constraint_DT": -2.0,
        "d_max": 20.0,
        "n_modes": 5,
        "spread": 0.5,
    },
    "optimize": {
        "max_evals": 2000,
        "n_restarts": 8,
        "simplex_scale": 0.5,
        "xtol": 1e-8,
        "target": 1e-6,
        "penalty": 0.0,
        "seed": 0,
    },
    "sweep": {
        "strategies": ["ccp-feedback"],
        "interactions": [0.0],
        "T_values": [1.0],        # units of T_QSL^L
        "seeds": [],              # empty: [optimize.seed]
        "threshold": 0.01,
        "bisection_steps": 10,
        "fit_range": [0.2, 1.2],
        "tqsl": True,
    },
    "output": {
        "dir": "out",
        "snapshots": False,
    },
}

CHOICES = {
    ("model", "tier"): TIERS,
    ("control", "strategy"): STRATEGIES,
    ("control", "crab_guess"): ("ccp", "zero"),
}


def _coerce(path: str, default, value):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        if path.endswith("strategies"):
            return [_coerce(f"{path}[{i}]", "", v) for i, v in enumerate(value)]
        if path.endswith("seeds"):
            return [_coerce(f"{path}[{i}]", 0, v) for i, v in enumerate(value)]
        return [_coerce(f"{path}[{i}]", 0.0, v) for i, v in enumerate(value)]
    raise ConfigError(f"{path}: unsupported value {value!r}")


@dataclass
class RunConfig:
    data: dict

    @classmethod
    def from_dict(cls, raw: dict, env=None) -> "RunConfig":
        data = copy.deepcopy(DEFAULTS)
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a table")
        for section, body in raw.items():
            if section not in DEFAULTS:
                raise ConfigError(f"unknown key '{section}'")
            if not isinstance(body, dict):
                raise ConfigError(f"'{section}' must be a table")
            for key, value in body.items():
                path = f"{section}.{key}"
                if key not in DEFAULTS[section]:
                    raise ConfigError(f"unknown key '{path}'")
                data[section][key] = _coerce(path, DEFAULTS[section][key], value)
        env = os.environ if env is None else env
        if env.get(SEED_ENV, "") != "":
            try:
                seed = int(env[SEED_ENV])
            except ValueError:
                raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
            data["optimize"]["seed"] = seed
            data["sweep"]["seeds"] = [seed]
        cfg = cls(data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, env=None) -> "RunConfig":
        path = Path(path)
        try:
            with path.open("rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(raw, env)

    @classmethod
    def loads(cls, text: str, env=None) -> "RunConfig":
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"cannot parse config: {exc}") from None
        return cls.from_dict(raw, env)

    def validate(self) -> None:
        d = self.data
        for (section, key), allowed in CHOICES.items():
            if d[section][key] not in allowed:
                raise ConfigError(f"{section}.{key}: {d[section][key]!r} not one of {list(allowed)}")
        sw = d["sweep"]
        for s in sw["strategies"]:
            if s not in STRATEGIES:
                raise ConfigError(f"sweep.strategies: unknown strategy {s!r}")
        for key in ("strategies", "interactions", "T_values"):
            if not sw[key]:
                raise ConfigError(f"sweep.{key} must not be empty")
        if any(T <= 0 for T in sw["T_values"]):
            raise ConfigError("sweep.T_values must be positive")
        if any(x < 0 for x in sw["interactions"]):
            raise ConfigError("sweep.interactions must be non-negative")
        if len(sw["fit_range"]) != 2 or sw["fit_range"][0] >= sw["fit_range"][1]:
            raise ConfigError("sweep.fit_range must be [low, high] with low < high")
        if not 0 < sw["threshold"] < 1:
            raise ConfigError("sweep.threshold must lie in (0, 1)")
        m = d["model"]
        if m["J"] <= 0 or m["N"] < 1 or m["a"] < 0 or m["x_max"] <= 0:
            raise ConfigError("model: need J > 0, N >= 1, a >= 0, x_max > 0")
        n = m["n_points"]
        if n < 256 or n & (n - 1):
            raise ConfigError("model.n_points must be a power of two >= 256")
        if min(m["dt_two_mode"], m["dt_dimer"], m["dt_gpe"]) <= 0:
            raise ConfigError("model time steps must be positive")
        o = d["optimize"]
        if o["max_evals"] < 0 or o["n_restarts"] < 1 or d["control"]["n_modes"] < 1:
            raise ConfigError("optimize.max_evals >= 0, optimize.n_restarts >= 1, control.n_modes >= 1 required")
        if o["simplex_scale"] <= 0 or o["xtol"] <= 0:
            raise ConfigError("optimize.simplex_scale and optimize.xtol must be positive")

    # --- conversion --------------------------------------------------------

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def dumps(self) -> str:
        return tomli_w.dumps(self.data)

    def hash(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]

    @property
    def seeds(self) -> list:
        return list(self.data["sweep"]["seeds"]) or [self.data["optimize"]["seed"]]

    def numerics(self) -> Numerics:
        m, c, s = self.data["model"], self.data["control"], self.data["sweep"]
        kw = {f.name: m[f.name] for f in fields(Numerics) if f.name in m}
        kw.update(crab_guess=c["crab_guess"], constraint_D0=c["constraint_D0"], constraint_DT=c["constraint_DT"],
                  d_max=c["d_max"], threshold=s["threshold"], bisection_steps=s["bisection_steps"],
                  fit_range=tuple(s["fit_range"]))
        return Numerics(**kw)

    def optimizer(self) -> OptimizerConfig:
        o, c = self.data["optimize"], self.data["control"]
        return OptimizerConfig(max_evals=o["max_evals"], n_restarts=o["n_restarts"],
                               simplex_scale=o["simplex_scale"], xtol=o["xtol"], target=o["target"],
                               seed=o["seed"], n_modes=c["n_modes"], spread=c["spread"], penalty=o["penalty"])

    def sweep_spec(self) -> SweepSpec:
        s = self.data["sweep"]
        try:
            return SweepSpec(self.data["model"]["tier"], list(s["strategies"]), list(s["interactions"]),
                             list(s["T_values"]), self.seeds, self.numerics(), self.optimizer())
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def preset_path(name: str) -> Path:
    """Path of a bundled preset (``fig1d``, ``fig2``, ``fig3``)."""
    stem = name[:-5] if name.endswith(".toml") else name
    path = Path(__file__).parent / "presets" / f"{stem}.toml"
    if not path.exists():
        available = sorted(p.stem for p in path.parent.glob("*.toml"))
        raise ConfigError(f"unknown preset {name!r}; available: {available}")
    return path
