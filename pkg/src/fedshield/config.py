"""INI-style experiment config files.

Layout (only ``rounds`` is required; unknown sections or keys are errors)::

    [experiment]
    rounds = 40
    seed = 0
    aggregator = dual_attention   # fedavg | none | multikrum | dual_attention
    beta = 0.75

    [data]
    num_classes = 5
    dim = 16
    samples_per_class = 1000
    noise_levels = 2, 6, 10, 14, 18
    noise_scale = 1.5
    test_fraction = 0.4

    [model]
    hidden_sizes = 32

    [training]
    local_epochs = 1
    batch_size = 32
    learning_rate = 0.05

    [federation]
    num_clients = 11
    dominant_fraction = 0.5
    dominant_classes =            # empty: client k -> class k mod M

    [multikrum]
    f = 0
    m =                           # empty: K - f

    [attack]
    malicious = 1, 2
    targets = 0, 0
    sources =                     # empty: each client's dominant class

A ``[manifest]`` section is accepted and ignored so run manifests can be fed
back in as configs.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .errors import ConfigurationError
from .orchestrator import ExperimentConfig, Flip

_INT = "int"
_FLOAT = "float"
_STR = "str"
_INTS = "ints"
_FLOATS = "floats"
_OPT_INT = "optional int"
_OPT_INTS = "optional ints"

# (section, key) -> (ExperimentConfig field, kind)
FIELDS = {
    ("experiment", "rounds"): ("rounds", _INT),
    ("experiment", "seed"): ("seed", _INT),
    ("experiment", "aggregator"): ("aggregator", _STR),
    ("experiment", "beta"): ("beta", _FLOAT),
    ("data", "num_classes"): ("num_classes", _INT),
    ("data", "dim"): ("dim", _INT),
    ("data", "samples_per_class"): ("samples_per_class", _INT),
    ("data", "noise_levels"): ("noise_levels", _FLOATS),
    ("data", "noise_scale"): ("noise_scale", _FLOAT),
    ("data", "test_fraction"): ("test_fraction", _FLOAT),
    ("model", "hidden_sizes"): ("hidden_sizes", _INTS),
    ("training", "local_epochs"): ("local_epochs", _INT),
    ("training", "batch_size"): ("batch_size", _INT),
    ("training", "learning_rate"): ("learning_rate", _FLOAT),
    ("federation", "num_clients"): ("num_clients", _INT),
    ("federation", "dominant_fraction"): ("dominant_fraction", _FLOAT),
    ("federation", "dominant_classes"): ("dominant_classes", _OPT_INTS),
    ("multikrum", "f"): ("multikrum_f", _INT),
    ("multikrum", "m"): ("multikrum_m", _OPT_INT),
}
ATTACK_KEYS = ("malicious", "targets", "sources")
REQUIRED = (("experiment", "rounds"),)
IGNORED_SECTIONS = ("manifest",)


def _parse(value: str, kind: str, where: str):
    text = value.strip()
    try:
        if kind == _INT:
            return int(text)
        if kind == _FLOAT:
            return float(text)
        if kind == _STR:
            return text
        items = [v.strip() for v in text.split(",") if v.strip()]
        if kind in (_INTS, _OPT_INTS):
            if kind == _OPT_INTS and not items:
                return None
            return tuple(int(v) for v in items)
        if kind == _FLOATS:
            return tuple(float(v) for v in items)
        if kind == _OPT_INT:
            return int(text) if text else None
    except ValueError:
        raise ConfigurationError(f"{where}: cannot read {text!r} as {kind}") from None
    raise AssertionError(kind)


def _parse_attack(section) -> tuple[Flip, ...]:
    unknown = set(section) - set(ATTACK_KEYS)
    if unknown:
        raise ConfigurationError(f"[attack]: unknown key {sorted(unknown)[0]!r}")
    clients = _parse(section.get("malicious", ""), _INTS, "[attack] malicious")
    targets = _parse(section.get("targets", ""), _INTS, "[attack] targets")
    sources = _parse(section.get("sources", ""), _INTS, "[attack] sources")
    if len(targets) != len(clients):
        raise ConfigurationError(
            f"[attack] targets: need one target per malicious client ({len(clients)}), got {len(targets)}"
        )
    if sources and len(sources) != len(clients):
        raise ConfigurationError(
            f"[attack] sources: need one source per malicious client ({len(clients)}), got {len(sources)}"
        )
    return tuple(
        Flip(c, t, sources[i] if sources else None) for i, (c, t) in enumerate(zip(clients, targets))
    )


def parse_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(
        inline_comment_prefixes=("#", ";"), interpolation=None, strict=True
    )
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"config syntax error: {exc}") from None

    known_sections = {s for s, _ in FIELDS} | {"attack"} | set(IGNORED_SECTIONS)
    kwargs = {}
    for section in parser.sections():
        if section not in known_sections:
            raise ConfigurationError(f"unknown section [{section}]")
        if section in IGNORED_SECTIONS:
            continue
        if section == "attack":
            kwargs["flips"] = _parse_attack(parser[section])
            continue
        for key, value in parser[section].items():
            if (section, key) not in FIELDS:
                raise ConfigurationError(f"[{section}]: unknown key {key!r}")
            name, kind = FIELDS[(section, key)]
            kwargs[name] = _parse(value, kind, f"[{section}] {key}")

    for section, key in REQUIRED:
        if FIELDS[(section, key)][0] not in kwargs:
            raise ConfigurationError(f"missing required field {key!r} in [{section}]")
    kwargs.update(overrides or {})
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), overrides)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(config: ExperimentConfig, extra: dict | None = None) -> str:
    """Fully expanded config text; ``extra`` goes into a trailing [manifest] section."""
    sections: dict[str, list[str]] = {}
    for (section, key), (name, _) in FIELDS.items():
        sections.setdefault(section, []).append(f"{key} = {_fmt(getattr(config, name))}")
    resolved = config.poison_spec().flips
    clients = tuple(f.client for f in config.flips)
    sections["attack"] = [
        f"malicious = {_fmt(clients)}",
        f"targets = {_fmt(tuple(resolved[c][1] for c in clients))}",
        f"sources = {_fmt(tuple(resolved[c][0] for c in clients))}",
    ]
    if extra:
        sections["manifest"] = [f"{k} = {v}" for k, v in extra.items()]
    blocks = [f"[{name}]\n" + "\n".join(lines) for name, lines in sections.items()]
    return "\n\n".join(blocks) + "\n"
