"""Run configuration: JSON schema, semantic validation and model construction."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .errors import AsymmetryError, InvalidParameterError, NotPSDError
from .malliavin import PINV_THRESHOLD
from .spectral import make_dense_q, make_dirichlet_laplacian, make_power_law_q

_POS = {"type": "number", "exclusiveMinimum": 0}
_VEC = {"type": "array", "items": {"type": "number"}}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["n_modes", "q", "horizon"],
    "properties": {
        "n_modes": {"type": "integer", "minimum": 1},
        "spectrum": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family"],
            "properties": {
                "family": {"enum": ["dirichlet"]},
                "nu": _POS,
                "length": _POS,
            },
        },
        "q": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family"],
            "properties": {
                "family": {"enum": ["power_law", "dense"]},
                "amplitude": _POS,
                "decay": {"type": "number", "exclusiveMinimum": 1},
                "matrix": {"type": "array", "items": _VEC},
                "path": {"type": "string"},
            },
        },
        "u0": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "coeffs": _VEC,
                "preset": {"enum": ["zero", "first_mode", "inverse_square"]},
            },
        },
        "horizon": {"type": "number", "minimum": 0},
        "n_steps": {"type": "integer", "minimum": 1},
        "dt": _POS,
        "n_samples": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "output_dir": {"type": "string"},
        "pinv_threshold": _POS,
        "simulate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"mode": {"enum": ["exact", "em"]}},
        },
        "score": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"offsets": _VEC, "direction": _VEC},
        },
        "reverse": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["sde", "ode"]},
                "t_min": _POS,
                "grid": {"enum": ["geometric", "uniform"]},
            },
        },
    },
}

DEFAULTS = {
    "spectrum": {"family": "dirichlet", "nu": 1.0, "length": float(np.pi)},
    "u0": {"preset": "zero"},
    "n_steps": 512,
    "n_samples": 1000,
    "seed": 0,
    "output_dir": "out",
    "pinv_threshold": PINV_THRESHOLD,
    "simulate": {"mode": "exact"},
    "score": {"offsets": [-2.0, -1.0, 0.0, 1.0, 2.0]},
    "reverse": {"mode": "sde", "grid": "geometric"},
}


class ConfigError(InvalidParameterError):
    """Invalid configuration; the message names the offending field."""


@dataclass(frozen=True)
class RunConfig:
    raw: dict

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def n_modes(self) -> int:
        return self.raw["n_modes"]

    @property
    def horizon(self) -> float:
        return float(self.raw["horizon"])

    @property
    def n_steps(self) -> int:
        return self.raw["n_steps"]

    @property
    def seed(self) -> int:
        return self.raw["seed"]

    def spectrum(self):
        s = self.raw["spectrum"]
        return make_dirichlet_laplacian(self.n_modes, s["length"], s["nu"])

    def q(self):
        q = self.raw["q"]
        if q["family"] == "power_law":
            return make_power_law_q(self.n_modes, q["amplitude"], q["decay"])
        return make_dense_q(np.array(q["matrix"], dtype=float))

    def u0(self) -> np.ndarray:
        u = self.raw["u0"]
        if "coeffs" in u:
            return np.array(u["coeffs"], dtype=float)
        k = np.arange(1, self.n_modes + 1, dtype=float)
        return {
            "zero": np.zeros(self.n_modes),
            "first_mode": (k == 1).astype(float),
            "inverse_square": 1.0 / k**2,
        }[u["preset"]]

    def with_seed(self, seed: int) -> "RunConfig":
        return validate(dict(self.raw, seed=int(seed)))

    def echo(self) -> dict:
        """Config as recorded in ``meta.json``: everything that affects the numbers."""
        return {k: v for k, v in self.raw.items() if k != "output_dir"}


def _field(path) -> str:
    return ".".join(str(p) for p in path) or "<root>"


def _merge(cfg: dict) -> dict:
    out = dict(cfg)
    for k, v in DEFAULTS.items():
        if isinstance(v, dict) and k != "u0":
            out[k] = {**v, **cfg.get(k, {})}
        else:
            out.setdefault(k, dict(v) if isinstance(v, dict) else v)
    return out


def validate(cfg: dict, base_dir: Path | None = None) -> RunConfig:
    """Schema check, then defaults, then cross-field checks."""
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as e:
        raise ConfigError(f"{_field(e.absolute_path)}: {e.message}") from None
    if "dt" in cfg and "n_steps" in cfg:
        raise ConfigError("dt: give either dt or n_steps, not both")
    cfg = _merge(cfg)
    n = cfg["n_modes"]
    if "dt" in cfg:
        dt = cfg.pop("dt")
        cfg["n_steps"] = max(1, int(round(cfg["horizon"] / dt)))

    q = cfg["q"]
    if q["family"] == "power_law":
        for key in ("amplitude", "decay"):
            if key not in q:
                raise ConfigError(f"q.{key}: required for the power_law family")
        extra = set(q) - {"family", "amplitude", "decay"}
    else:
        if ("matrix" in q) == ("path" in q):
            raise ConfigError("q.matrix: the dense family needs exactly one of matrix or path")
        if "path" in q:
            p = Path(q["path"])
            if base_dir is not None and not p.is_absolute():
                p = base_dir / p
            try:
                mat = np.loadtxt(p, delimiter=",", ndmin=2)
            except OSError as e:
                raise ConfigError(f"q.path: cannot read {p}: {e}") from None
            q = {"family": "dense", "matrix": mat.tolist()}
        if np.shape(q["matrix"]) != (n, n):
            raise ConfigError(f"q.matrix: shape {np.shape(q['matrix'])} does not match n_modes={n}")
        extra = set(q) - {"family", "matrix"}
    if extra:
        raise ConfigError(f"q.{sorted(extra)[0]}: not a parameter of the {q['family']} family")
    cfg["q"] = q

    u0 = cfg["u0"]
    if ("coeffs" in u0) == ("preset" in u0):
        raise ConfigError("u0.coeffs: give exactly one of coeffs or preset")
    if "coeffs" in u0 and len(u0["coeffs"]) != n:
        raise ConfigError(f"u0.coeffs: length {len(u0['coeffs'])} does not match n_modes={n}")
    cfg["u0"] = u0
    d = cfg["score"].get("direction")
    if d is not None and len(d) != n:
        raise ConfigError(f"score.direction: length {len(d)} does not match n_modes={n}")
    t_min = cfg["reverse"].get("t_min")
    if t_min is not None and not t_min < cfg["horizon"]:
        raise ConfigError("reverse.t_min: must be below horizon")

    rc = RunConfig(cfg)
    try:  # constructors enforce the remaining numerical invariants
        rc.q()
    except (InvalidParameterError, NotPSDError, AsymmetryError) as e:
        raise ConfigError(f"q.matrix: {e}") from None
    return rc


def load(path) -> RunConfig:
    """Read a config file. A ``meta.json`` from an earlier run is accepted as well."""
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"<root>: not valid JSON ({e})") from None
    if isinstance(doc, dict) and "command" in doc and "config" in doc:
        doc = doc["config"]
    return validate(doc, base_dir=path.parent)
