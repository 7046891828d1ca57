"""INI configuration files for fits, simulations and replicate studies.

Sections are ``[fit]``, ``[soul]``, ``[simulation]``, ``[study]`` and
``[data]``; every key is optional and falls back to the documented default.
Lists are comma separated; ``none`` selects a derived default.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import fields

from .model import FitConfig, SoulConfig, ValidationError
from .simulation import SimulationConfig


class ConfigError(ValueError):
    pass


_FIT_TYPES = {
    "K_init": int,
    "prior_variant": str,
    "omega0_ladder": "floats",
    "omega1": float,
    "omega0_tilde_ladder": "floats",
    "omega1_tilde": float,
    "alpha": "optfloat",
    "alpha_tilde": float,
    "d": float,
    "a_tilde": "optfloat",
    "b_tilde": float,
    "eta": float,
    "xi": "auto_float",
    "outcome_guided": bool,
    "mc_gamma_samples": int,
    "mc_logsumexp_samples": int,
    "mc_grad_samples": int,
    "agd_steps": int,
    "soul_refresh": int,
    "em_max_iters_per_rung": int,
    "em_tolerance": float,
    "seed": int,
    "time_budget_secs": "optfloat",
    "rebalance": bool,
}

_SOUL_TYPES = {
    "n_iters": int,
    "burn_in": int,
    "inner_samples": int,
    "delta_ula": "auto_float",
    "c0": "auto_float",
    "p_exponent": float,
    "theta_bounds": "floats",
    "log_scale": bool,
    "lambda_init": float,
}

_SIM_TYPES = {"N": int, "G": int, "K": int, "C": int, "epsilon": float, "informative": bool, "seed": int}

_STUDY_TYPES = {"n_replicates": int, "methods": "strs", "variants": "strs", "first_seed": int}

_DATA_TYPES = {"reference_class": str}

SCHEMA = {"fit": _FIT_TYPES, "soul": _SOUL_TYPES, "simulation": _SIM_TYPES, "study": _STUDY_TYPES, "data": _DATA_TYPES}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(raw, kind):
    raw = raw.strip()
    if kind is bool:
        if raw.lower() in _TRUE:
            return True
        if raw.lower() in _FALSE:
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if kind == "floats":
        return tuple(float(v) for v in raw.split(",") if v.strip())
    if kind == "strs":
        return tuple(v.strip() for v in raw.split(",") if v.strip())
    if kind == "optfloat":
        return None if raw.lower() in ("", "none") else float(raw)
    if kind == "auto_float":
        return "auto" if raw.lower() == "auto" else float(raw)
    return kind(raw)


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, (tuple, list)):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _line_of(text, section, key):
    current = None
    for n, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            continue
        if current == section and re.match(rf"\s*{re.escape(key)}\s*[=:]", line, flags=re.IGNORECASE):
            return n
    return None


def parse_config_text(text, source="<config>"):
    """Parse INI text into ``{section: {key: typed value}}``."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}".replace("\n", " ")) from None
    out = {}
    for section in parser.sections():
        if section not in SCHEMA:
            line = _line_of_section(text, section)
            raise ConfigError(f"{source}, line {line}: unknown section [{section}]")
        types = SCHEMA[section]
        vals = {}
        for key, raw in parser.items(section):
            line = _line_of(text, section, key)
            if key not in types:
                raise ConfigError(f"{source}, line {line}: unknown key {key!r} in [{section}]")
            try:
                vals[key] = _convert(raw, types[key])
            except ValueError as exc:
                raise ConfigError(f"{source}, line {line}: bad value for {key!r}: {exc}") from None
        out[section] = vals
    return out


def _line_of_section(text, section):
    for n, line in enumerate(text.splitlines(), start=1):
        if line.strip() == f"[{section}]":
            return n
    return None


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    return parse_config_text(text, str(path))


def fit_config_from(sections, **overrides) -> FitConfig:
    soul_kw = dict(sections.get("soul", {}))
    fit_kw = dict(sections.get("fit", {}))
    fit_kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        soul = SoulConfig(**soul_kw)
        cfg = FitConfig(soul=soul, **fit_kw)
        if "omega0_ladder" in fit_kw and "omega0_tilde_ladder" not in fit_kw:
            cfg = cfg.with_updates(omega0_tilde_ladder=(5.0,) * len(cfg.omega0_ladder))
        cfg.check()
    except (TypeError, ValidationError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def simulation_config_from(sections, **overrides) -> SimulationConfig:
    kw = dict(sections.get("simulation", {}))
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = SimulationConfig(**kw)
        cfg.check()
    except (TypeError, ValidationError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def study_config_from(sections, **overrides):
    from .evaluation import StudyConfig

    kw = dict(sections.get("study", {}))
    kw.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = StudyConfig(dataset=simulation_config_from(sections), base=fit_config_from(sections), **kw)
        cfg.check()
    except (TypeError, ValidationError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def sections_from(fit=None, simulation=None, study=None, data=None):
    """Inverse of the ``*_config_from`` helpers: resolved configs back to sections."""
    out = {}
    if fit is not None:
        out["fit"] = {f.name: getattr(fit, f.name) for f in fields(fit) if f.name != "soul"}
        out["soul"] = {f.name: getattr(fit.soul, f.name) for f in fields(fit.soul)}
    if simulation is not None:
        out["simulation"] = {f.name: getattr(simulation, f.name) for f in fields(simulation)}
    if study is not None:
        out["study"] = {
            "n_replicates": study.n_replicates,
            "methods": study.methods,
            "variants": study.variants,
            "first_seed": study.first_seed,
        }
    if data:
        out["data"] = dict(data)
    return out


def format_config(sections):
    """Render sections as INI text that :func:`parse_config_text` reads back."""
    lines = []
    for section in ("fit", "soul", "simulation", "study", "data"):
        if section not in sections:
            continue
        lines.append(f"[{section}]")
        for key, value in sections[section].items():
            lines.append(f"{key} = {_format(value)}")
        lines.append("")
    return "\n".join(lines)


def default_config_text():
    return format_config(sections_from(FitConfig(), SimulationConfig()))
