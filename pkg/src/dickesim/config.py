"""INI run configuration with units spelled out in every key.

Frequencies are ordinary frequencies in kHz, times in ms and rates in 1/s;
:func:`load_config` converts them once into a :class:`DickeConfig`.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from io import StringIO
from pathlib import Path

from .model import (
    ConstantRamp,
    DickeConfig,
    ExponentialRamp,
    LinearRamp,
    khz_to_angular,
)


class ConfigError(ValueError):
    pass


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.replace(",", " ").split()]


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.replace(",", " ").split()]


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text: str):
    return None if text.strip().lower() in ("", "none", "auto") else int(text)


def _opt_float(text: str):
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


# section -> key -> (parser, default); defaults are the EXP experiment
SCHEMA: dict[str, dict[str, tuple]] = {
    "system": {
        "n": (int, 68),
        "g0_khz": (float, 1.32),
        "delta_khz": (float, -1.0),
        "nbar": (float, 6.0),
        "gamma_el_per_s": (float, 120.0),
        "bias_khz": (float, 0.0),
    },
    "ramp": {
        "kind": (str, "exponential"),
        "b0_khz": (float, 7.1),
        "tau_ms": (float, 0.6),
        "tau_ramp_ms": (float, 2.0),
        "b_khz": (float, 0.0),
        "duration_ms": (_opt_float, None),
    },
    "numerics": {
        "n_max": (_opt_int, None),
        "t_final_ms": (_opt_float, None),
        "n_samples": (int, 100),
        "eta": (float, 0.02),
        "dt_max_ms": (float, 0.01),
        "krylov_tol": (float, 1e-10),
        "leak_tol": (float, 1e-6),
        "thermal_tol": (float, 1e-4),
        "workers": (int, 1),
    },
    "output": {
        "dir": (str, "out"),
        "prefix": (str, ""),
    },
    "spectrum": {
        "n_list": (_int_list, [2, 3, 5, 10, 20, 40]),
        "b_points": (int, 81),
        "b_max_over_bc": (float, 4.0),
    },
    "scan-detuning": {
        "n": (int, 40),
        "bc_khz": (float, 1.7424),
        "delta_over_bc": (_float_list, [0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 10.0, 15.0, 20.0]),
    },
    "disentangle": {
        "protocol": (str, "detuning"),
        "initial_state": (str, "ground"),
        "compare": (_bool, True),
    },
    "validate": {
        "inference_n": (int, 3),
        "inference_samples": (int, 100),
        "closed_n": (int, 2),
        "decay_n": (int, 2),
        "decay_field_over_bc": (float, 10.0),
        "decay_gamma_el_per_s": (float, 1000.0),
        "decay_t_final_ms": (float, 3.0),
        "gamma_inference_per_s": (_opt_float, None),
    },
    "sweep-nbar": {
        "nbar_list": (_float_list, [0.0, 3.0, 6.0, 9.0]),
    },
}

RAMP_KINDS = ("exponential", "linear", "constant")


@dataclass
class RunConfig:
    dicke: DickeConfig
    values: dict[str, dict] = field(default_factory=dict)
    source: str | None = None

    @property
    def workers(self) -> int:
        return self.values["numerics"]["workers"]

    @property
    def output_dir(self) -> Path:
        return Path(self.values["output"]["dir"])

    def section(self, name: str) -> dict:
        return self.values[name]

    def echo(self) -> dict:
        """Every parsed key in file units except output paths, so summaries do
        not depend on where they are written; reloads to an equal config."""
        return {sec: dict(vals) for sec, vals in self.values.items() if sec != "output"}


def _parse(parser: configparser.ConfigParser) -> dict[str, dict]:
    unknown = [s for s in parser.sections() if s not in SCHEMA]
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    values = {}
    for sec, keys in SCHEMA.items():
        given = parser[sec] if parser.has_section(sec) else {}
        extra = [k for k in given if k not in keys]
        if extra:
            raise ConfigError(f"unknown key(s) in [{sec}]: {', '.join(extra)}")
        vals = {}
        for key, (conv, default) in keys.items():
            if key in given:
                try:
                    vals[key] = conv(given[key])
                except ValueError as exc:
                    raise ConfigError(f"[{sec}] {key}: {exc}") from None
            else:
                vals[key] = list(default) if isinstance(default, list) else default
        values[sec] = vals
    if values["ramp"]["kind"] not in RAMP_KINDS:
        raise ConfigError(f"[ramp] kind must be one of {', '.join(RAMP_KINDS)}")
    if values["disentangle"]["protocol"] not in ("detuning", "resonant"):
        raise ConfigError("[disentangle] protocol must be 'detuning' or 'resonant'")
    if values["disentangle"]["initial_state"] not in ("ground", "normal"):
        raise ConfigError("[disentangle] initial_state must be 'ground' or 'normal'")
    if values["numerics"]["workers"] < 1:
        raise ConfigError("[numerics] workers must be >= 1")
    return values


def _ramp_from(vals: dict):
    kind = vals["kind"]
    try:
        if kind == "exponential":
            return ExponentialRamp(khz_to_angular(vals["b0_khz"]), vals["tau_ms"], vals["duration_ms"])
        if kind == "linear":
            return LinearRamp(khz_to_angular(vals["b0_khz"]), vals["tau_ramp_ms"])
        duration = vals["duration_ms"] if vals["duration_ms"] is not None else 1.0
        return ConstantRamp(khz_to_angular(vals["b_khz"]), duration)
    except ValueError as exc:
        raise ConfigError(f"[ramp] {exc}") from None


def dicke_from_values(values: dict[str, dict]) -> DickeConfig:
    s, n = values["system"], values["numerics"]
    try:
        return DickeConfig(
            N=s["n"],
            g0=khz_to_angular(s["g0_khz"]),
            delta=khz_to_angular(s["delta_khz"]),
            ramp=_ramp_from(values["ramp"]),
            gamma_el=s["gamma_el_per_s"],
            nbar=s["nbar"],
            bias_epsilon=khz_to_angular(s["bias_khz"]),
            n_max=n["n_max"],
            t_final=n["t_final_ms"],
            n_samples=n["n_samples"],
            eta=n["eta"],
            dt_max=n["dt_max_ms"],
            krylov_tol=n["krylov_tol"],
            leak_tol=n["leak_tol"],
            thermal_tol=n["thermal_tol"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_config(text: str, source: str | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source or "<string>")
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    values = _parse(parser)
    return RunConfig(dicke_from_values(values), values, source)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else str(value)
    return str(value)


def dump_config(values: dict[str, dict]) -> str:
    """INI text that :func:`parse_config` reads back to the same values."""
    parser = configparser.ConfigParser(interpolation=None)
    for sec, vals in values.items():
        parser[sec] = {k: _format(v) for k, v in vals.items()}
    buf = StringIO()
    parser.write(buf)
    return buf.getvalue()
