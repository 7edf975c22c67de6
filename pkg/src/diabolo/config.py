"""Run configuration: YAML files, bundled presets and validation.

A config is a nested mapping. A ``preset`` key (or ``--preset``) loads one of
the bundled parameter sets first; the file's own keys then override it
section by section. Every default filled during validation is recorded so
the manifest can list it.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from .errors import ConfigError
from .geometry import FieldConfig
from .rates import TransportParams
from .spinmodel import DEFAULT_MAX_DIM, ChainSpec, SiteParams

MODES = ("spectrum", "dp-scan", "atlas", "lifetime-curve", "telegraph", "analyze-trace", "fit-current")
SWEEP_AXES = ("b1", "b2", "x", "z")

DEFAULTS: dict = {
    "mode": None,
    "preset": None,
    "seed": 0,
    "threads": 1,
    "chain": {"spin": 2.0, "D": None, "E": None, "g": None, "J": None, "max_dim": DEFAULT_MAX_DIM},
    "field": {
        "b1": 0.0,
        "b2": 0.0,
        "alpha": None,
        "alpha_atomic": None,
        "alpha_tilt": 3.0,
        "beta": 0.0,
        "gamma": 0.0,
        "tip_field_mT": 0.0,
        "tip_site": 0,
        "sweep": {"axis": "b1", "start": 0.0, "stop": 6.0, "step": 0.05},
    },
    "transport": {
        "temperature": 1.3,
        "bias": 3.0,
        "current_setpoint": 10.0,
        "G_ss": 1.0,
        "tip_polarization": 0.0,
        "tip_conductance": None,
        "rate_scale": 1.0,
        "probed_sites": [0],
        "n_states": 250,
        "n_amplitudes": None,
        "pocket_threshold": 0.5,
    },
    "spectrum": {"n_states": 20},
    "dp_scan": {"resolution": 0.05, "gap_tolerance": 1e-6, "xtol": 1e-4, "longitudinal": False},
    "atlas": {
        "N": [1, 2, 3, 4],
        "J_over_absD": [-20.0, -5.0, -1.0, -0.5, 0.0, 0.5, 1.0, 5.0, 20.0],
        "bx_max": None,
        "resolution": None,
        "max_dim": 20000,
    },
    "telegraph": {
        "duration": 10.0,
        "sample_rate": 10000.0,
        "noise_rms": 0.2,
        "drift": 0.0,
        "levels_pA": [0.0, 1.0],
        "rates": None,
        "hysteresis": 0.5,
        "min_dwell": 2,
        "median_window": None,
        "low_pocket": "A",
        "min_events": 50,
        "temperature": None,
        "input": None,
    },
    "fit_current": {
        "input": None,
        "I0": None,
        "currents": [3.0, 10.0, 30.0, 100.0, 200.0, 500.0],
        "fields": [3.5, 4.1],
    },
    "output": {"dir": "out", "format": "csv"},
}

# sections whose mappings accept arbitrary values without key checks
_FREE = {("field", "sweep")}


@dataclass
class RunConfig:
    mode: str
    raw: dict
    chain: Optional[ChainSpec]
    preset: Optional[str] = None
    filled_defaults: list = field(default_factory=list)
    source: Optional[str] = None

    def section(self, name: str) -> dict:
        return self.raw[name]

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def threads(self) -> int:
        return int(self.raw["threads"])

    @property
    def out_dir(self) -> Path:
        return Path(self.raw["output"]["dir"])

    @property
    def fmt(self) -> str:
        return self.raw["output"]["format"]

    # -- derived objects -------------------------------------------------

    def field_config(self, b1: Optional[float] = None, b2: Optional[float] = None) -> FieldConfig:
        f = self.raw["field"]
        b1 = f["b1"] if b1 is None else b1
        b2 = f["b2"] if b2 is None else b2
        try:
            if f["alpha"] is not None:
                return FieldConfig(B1=b1, B2=b2, alpha=f["alpha"], beta=f["beta"], gamma=f["gamma"],
                                   alpha_tilt=f["alpha_tilt"])
            if f["alpha_atomic"] is not None:
                return FieldConfig.from_atomic(b1, f["alpha_atomic"], f["alpha_tilt"], B2=b2,
                                               beta=f["beta"], gamma=f["gamma"])
            return FieldConfig(B1=b1, B2=b2, alpha=0.0, beta=f["beta"], gamma=f["gamma"],
                               alpha_tilt=f["alpha_tilt"])
        except ValueError as exc:
            raise ConfigError(f"field: {exc}") from exc

    def sweep_values(self) -> np.ndarray:
        sw = self.raw["field"]["sweep"]
        n = int(math.floor((sw["stop"] - sw["start"]) / sw["step"] + 1e-9)) + 1
        return np.round(sw["start"] + sw["step"] * np.arange(n), 12)

    def sweep_fields(self) -> list:
        """Field points of the sweep: FieldConfig objects or crystal 3-vectors."""
        axis = self.raw["field"]["sweep"]["axis"]
        out = []
        for v in self.sweep_values():
            if axis == "b1":
                out.append(self.field_config(b1=float(v)))
            elif axis == "b2":
                out.append(self.field_config(b2=float(v)))
            elif axis == "x":
                out.append(np.array([float(v), 0.0, 0.0]))
            else:
                out.append(np.array([0.0, 0.0, float(v)]))
        return out

    def transport(self) -> TransportParams:
        t = self.raw["transport"]
        bias = t["bias"][0] if isinstance(t["bias"], list) else t["bias"]
        try:
            return TransportParams(temperature=t["temperature"], bias=bias,
                                   current_setpoint=t["current_setpoint"], G_ss=t["G_ss"],
                                   tip_polarization=t["tip_polarization"], probed_site=t["probed_sites"][0],
                                   tip_conductance=t["tip_conductance"], rate_scale=t["rate_scale"])
        except ValueError as exc:
            raise ConfigError(f"transport: {exc}") from exc

    def biases(self) -> list:
        b = self.raw["transport"]["bias"]
        return [float(v) for v in (b if isinstance(b, list) else [b])]

    def probed_tip_field(self) -> Optional[float]:
        """Tip field (T) when it follows the probed atom, else ``None``."""
        f = self.raw["field"]
        if f["tip_site"] == "probed" and f["tip_field_mT"]:
            return f["tip_field_mT"] * 1e-3
        return None


# -- loading -------------------------------------------------------------


def preset_names() -> list:
    root = resources.files("diabolo") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml") and p.name != "literature.yaml")


def load_preset(name: str) -> dict:
    root = resources.files("diabolo") / "presets"
    path = root / f"{name}.yaml"
    if name == "literature" or not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return yaml.safe_load(path.read_text())


def literature_table() -> list:
    """Published parameter rows bundled with the package."""
    root = resources.files("diabolo") / "presets"
    return yaml.safe_load((root / "literature.yaml").read_text())["rows"]


def _key_lines(text: str) -> dict:
    """Map dotted key paths to 1-based line numbers."""
    lines: dict = {}
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return lines

    def walk(n, prefix):
        if isinstance(n, yaml.MappingNode):
            for k, v in n.value:
                key = f"{prefix}.{k.value}" if prefix else str(k.value)
                lines[key] = k.start_mark.line + 1
                walk(v, key)

    if node is not None:
        walk(node, "")
    return lines


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _fill(data: dict, defaults: dict, path: tuple, filled: list, lines: dict) -> dict:
    out = {}
    for k in data:
        if k not in defaults and path not in _FREE:
            where = ".".join(path + (str(k),))
            line = lines.get(where)
            raise ConfigError(f"unknown key '{where}'" + (f" (line {line})" if line else ""))
    for k, d in defaults.items():
        sub = path + (k,)
        if k in data:
            v = data[k]
            if isinstance(d, dict) and d:
                if not isinstance(v, dict):
                    raise ConfigError(f"'{'.'.join(sub)}' must be a mapping")
                v = _fill(v, d, sub, filled, lines)
            out[k] = v
        else:
            if isinstance(d, dict) and d:
                out[k] = _fill({}, d, sub, filled, lines)
            else:
                out[k] = copy.deepcopy(d)
                filled.append(".".join(sub))
    return out


def _floats(value, name, n=None, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [value] * (n if n is not None else 1)
    if not isinstance(value, list):
        raise ConfigError(f"'{name}' must be a number or a list of numbers")
    try:
        out = [float(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigError(f"'{name}' must contain numbers only") from None
    if not all(math.isfinite(v) for v in out):
        raise ConfigError(f"'{name}' must be finite")
    if n is not None and len(out) != n:
        raise ConfigError(f"'{name}' needs {n} values, got {len(out)}")
    return out


def build_chain(raw: dict) -> ChainSpec:
    c = raw["chain"]
    f = raw["field"]
    if c["D"] is None:
        raise ConfigError("chain.D is required (or use a preset)")
    D = _floats(c["D"], "chain.D")
    n = len(D)
    E = _floats(c["E"] if c["E"] is not None else 0.0, "chain.E", n)
    g = _floats(c["g"] if c["g"] is not None else 2.0, "chain.g", n)
    J = _floats(c["J"] if c["J"] is not None else 0.0, "chain.J", n - 1) if n > 1 else []
    tip = float(f["tip_field_mT"] or 0.0) * 1e-3
    tip_site = f["tip_site"]
    if tip_site != "probed":
        if not isinstance(tip_site, int) or not 0 <= tip_site < n:
            raise ConfigError(f"field.tip_site must be 'probed' or a site index in [0, {n - 1}]")
    try:
        sites = []
        for i in range(n):
            t = tip if (tip_site != "probed" and i == tip_site) else 0.0
            sites.append(SiteParams(spin_magnitude=c["spin"], D=D[i], E=E[i], g=g[i], tip_field=(0.0, 0.0, t)))
        return ChainSpec(sites=tuple(sites), couplings=tuple(J), max_dim=int(c["max_dim"]))
    except ValueError as exc:
        raise ConfigError(f"chain: {exc}") from exc


def _validate(raw: dict) -> None:
    if raw["mode"] not in MODES:
        raise ConfigError(f"mode must be one of {', '.join(MODES)}; got {raw['mode']!r}")
    sw = raw["field"]["sweep"]
    for k in ("axis", "start", "stop", "step"):
        if k not in sw:
            raise ConfigError(f"field.sweep.{k} is required")
    extra = set(sw) - {"axis", "start", "stop", "step"}
    if extra:
        raise ConfigError(f"unknown key 'field.sweep.{sorted(extra)[0]}'")
    if sw["axis"] not in SWEEP_AXES:
        raise ConfigError(f"field.sweep.axis must be one of {SWEEP_AXES}")
    if not (isinstance(sw["step"], (int, float)) and sw["step"] > 0):
        raise ConfigError("field.sweep.step must be positive")
    if sw["stop"] < sw["start"]:
        raise ConfigError("field.sweep.stop must not be below start")
    if raw["output"]["format"] not in ("csv", "json"):
        raise ConfigError("output.format must be csv or json")
    t = raw["transport"]
    if not isinstance(t["probed_sites"], list) or not t["probed_sites"]:
        raise ConfigError("transport.probed_sites must be a non-empty list")
    if raw["threads"] < 1:
        raise ConfigError("threads must be at least 1")
    if raw["mode"] == "analyze-trace" and not raw["telegraph"]["input"]:
        raise ConfigError("analyze-trace needs telegraph.input")


def resolve(data: Optional[dict], preset: Optional[str] = None, overrides: Optional[dict] = None,
            text: str = "", source: Optional[str] = None) -> RunConfig:
    """Validate a config mapping (plus optional preset and overrides)."""
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping at the top level")
    lines = _key_lines(text)
    preset = preset or data.get("preset")
    merged = {}
    if preset:
        merged = load_preset(preset)
    merged = _merge(merged, {k: v for k, v in data.items() if k != "preset"})
    if overrides:
        merged = _merge(merged, overrides)
    merged["preset"] = preset
    filled: list = []
    raw = _fill(merged, DEFAULTS, (), filled, lines)
    _validate(raw)
    chain = None
    if raw["mode"] not in ("analyze-trace", "atlas") or raw["chain"]["D"] is not None:
        if raw["mode"] == "telegraph" and raw["telegraph"]["rates"] is not None and raw["chain"]["D"] is None:
            chain = None
        elif raw["mode"] != "fit-current" or raw["fit_current"]["input"] is None:
            chain = build_chain(raw)
    return RunConfig(mode=raw["mode"], raw=raw, chain=chain, preset=preset, filled_defaults=filled, source=source)


def load_config(path, preset: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Read and validate a YAML config file."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    text = p.read_text()
    if not text.strip():
        raise ConfigError(f"config file is empty: {p}")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1})" if mark is not None else ""
        raise ConfigError(f"cannot parse {p}{where}: {exc}") from exc
    return resolve(data, preset=preset, overrides=overrides, text=text, source=str(p))


def parse_override(item: str) -> dict:
    """``a.b.c=value`` -> nested mapping; the value is parsed as YAML."""
    key, sep, value = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"override must look like key.path=value, got {item!r}")
    out: Any = yaml.safe_load(value) if value else None
    for part in reversed(key.split(".")):
        out = {part: out}
    return out
