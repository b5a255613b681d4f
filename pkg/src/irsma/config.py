"""Experiment configuration: an INI-style key/value file with one section per module.

Every key is known in advance; unknown sections or keys, and values that do
not parse, raise :class:`ConfigError` naming the offending line.  Keys
marked as sweep axes accept comma-separated lists and the experiment runs
over their Cartesian product.
"""

from __future__ import annotations

import configparser
import itertools
import re
from dataclasses import dataclass, field, replace

from .channel import FadingParams, db_to_linear, dbm_to_watts, default_geometry
from .orchestrator import ACCESS, ADJUSTMENT, SchemeConfig
from .phase import SrocrParams
from .power import PowerBudget

__all__ = ["ConfigError", "ExperimentConfig", "SweepPoint", "load_config", "parse_config", "PRESETS"]


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


def _floats(s):
    return [float(v) for v in s.split(",") if v.strip()]


def _ints(s):
    return [int(v) for v in s.split(",") if v.strip()]


def _words(s):
    return [v.strip() for v in s.split(",") if v.strip()]


def _optional_level(s):
    s = s.strip().lower()
    return None if s in ("none", "inf", "continuous") else int(s)


# section -> key -> (parser, default, is_sweep_axis)
SCHEMA = {
    "scenario": {
        "irs_x": (_floats, "70", True),
        "reference_loss_db": (float, "-30", False),
        "exp_bu": (float, "3.5", False),
        "exp_bi": (float, "2.2", False),
        "exp_iu": (float, "2.8", False),
    },
    "fading": {
        "rician_factor_db": (float, "3", False),
        "noise_power_dbm": (float, "-90", False),
        "states": (int, "10000", False),
    },
    "irs": {
        "elements": (_ints, "30", True),
        "levels": (_optional_level, "3", False),
    },
    "budget": {
        "avg_power_dbm": (_floats, "20", True),
        "peak_offset_db": (float, "3", False),
        "min_rate": (_floats, "1.0", True),
    },
    "scheme": {
        "access": (_words, "NOMA", True),
        "adjustment": (_words, "dynamic", True),
        "block_size": (int, "100", False),
        "samples_per_block": (int, "8", False),
        "ao_max_rounds": (int, "10", False),
        "convergence_eps": (float, "0.01", False),
    },
    "srocr": {
        "eps1": (float, "0.999", False),
        "eps2": (float, "0.001", False),
        "delta0": (float, "0.1", False),
        "max_iter": (int, "30", False),
    },
    "run": {
        "seed": (int, "1", False),
        "draws": (int, "1", False),
        "threads": (int, "1", False),
        "output": (str, "results.csv", False),
    },
}


@dataclass(frozen=True)
class SweepPoint:
    access: str
    adjustment: str
    elements: int
    avg_power_dbm: float
    min_rate: float
    irs_x: float
    seed: int


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)
    source: str = "<config>"

    def get(self, section, key):
        return self.values[section][key]

    @property
    def states(self) -> int:
        return self.get("fading", "states")

    @property
    def levels(self):
        return self.get("irs", "levels")

    def with_overrides(self, seed=None, states=None, threads=None, output=None) -> "ExperimentConfig":
        vals = {s: dict(kv) for s, kv in self.values.items()}
        if seed is not None:
            vals["run"]["seed"] = int(seed)
        if states is not None:
            if states < 1:
                raise ConfigError("states must be >= 1", source="--states")
            vals["fading"]["states"] = int(states)
        if threads is not None:
            if threads < 1:
                raise ConfigError("threads must be >= 1", source="--threads")
            vals["run"]["threads"] = int(threads)
        if output is not None:
            vals["run"]["output"] = str(output)
        return ExperimentConfig(vals, self.source)

    def points(self) -> list[SweepPoint]:
        run = self.values["run"]
        seeds = range(run["seed"], run["seed"] + run["draws"])
        axes = itertools.product(
            self.get("scheme", "access"), self.get("scheme", "adjustment"), self.get("irs", "elements"),
            self.get("budget", "avg_power_dbm"), self.get("budget", "min_rate"), self.get("scenario", "irs_x"),
            seeds,
        )
        return [SweepPoint(*a) for a in axes]

    def geometry(self, point: SweepPoint):
        sc = self.values["scenario"]
        geom = default_geometry(point.seed, irs_x=point.irs_x)
        return replace(geom, reference_loss=db_to_linear(sc["reference_loss_db"]),
                       exp_bu=sc["exp_bu"], exp_bi=sc["exp_bi"], exp_iu=sc["exp_iu"])

    def fading(self, point: SweepPoint) -> FadingParams:
        fd = self.values["fading"]
        return FadingParams(db_to_linear(fd["rician_factor_db"]), point.elements,
                            dbm_to_watts(fd["noise_power_dbm"]), seed=point.seed)

    def budget(self, point: SweepPoint) -> PowerBudget:
        avg = dbm_to_watts(point.avg_power_dbm)
        peak = dbm_to_watts(point.avg_power_dbm + self.get("budget", "peak_offset_db"))
        return PowerBudget(avg, peak, point.min_rate)

    def scheme(self, point: SweepPoint) -> SchemeConfig:
        s, r = self.values["scheme"], self.values["srocr"]
        return SchemeConfig(
            access=point.access, adjustment=point.adjustment, block_size=s["block_size"],
            samples_per_block=s["samples_per_block"], ao_max_rounds=s["ao_max_rounds"],
            convergence_eps=s["convergence_eps"], levels=self.levels,
            srocr=SrocrParams(r["eps1"], r["eps2"], r["delta0"], r["max_iter"]),
            workers=self.get("run", "threads"),
        )


def _key_lines(text: str) -> dict:
    """Map ``(section, key)`` and ``(section, None)`` to 1-based line numbers."""
    lines = {}
    section = None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, None), n)
            continue
        m = re.match(r"([^=:]+)[=:]", line)
        if m and section is not None:
            lines.setdefault((section, m.group(1).strip().lower()), n)
    return lines


def parse_config(text: str, source: str = "<config>", base: str | None = None) -> ExperimentConfig:
    """Parse ``text``; keys it sets override those of the optional ``base`` layer."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        if base is not None:
            cp.read_string(base, source=source + "[base]")
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        msg = exc.message.splitlines()[0] if hasattr(exc, "message") else str(exc)
        raise ConfigError(msg, line, source) from None
    where = _key_lines(text)
    if base is not None:
        where = _key_lines(base) | where
    values = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", where.get((section, None)), source)
        for key in cp[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", where.get((section, key)), source)
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (parse, default, _) in keys.items():
            raw = cp.get(section, key, fallback=default)
            line = where.get((section, key))
            try:
                val = parse(raw)
            except ValueError:
                raise ConfigError(f"cannot parse {section}.{key} = {raw!r}", line, source) from None
            if isinstance(val, list) and not val:
                raise ConfigError(f"{section}.{key} is empty", line, source)
            values[section][key] = val
    _validate(values, where, source)
    return ExperimentConfig(values, source)


def _validate(v, where, source):
    def check(ok, section, key, msg):
        if not ok:
            raise ConfigError(f"{section}.{key}: {msg}", where.get((section, key)), source)

    for a in v["scheme"]["access"]:
        check(a in ACCESS, "scheme", "access", f"{a!r} not in {ACCESS}")
    for a in v["scheme"]["adjustment"]:
        check(a in ADJUSTMENT, "scheme", "adjustment", f"{a!r} not in {ADJUSTMENT}")
    check(v["fading"]["states"] >= 1, "fading", "states", "must be >= 1")
    check(all(n >= 0 for n in v["irs"]["elements"]), "irs", "elements", "must be >= 0")
    lv = v["irs"]["levels"]
    check(lv is None or 1 <= lv <= 8, "irs", "levels", "must be in 1..8 or none")
    check(v["budget"]["peak_offset_db"] >= 0, "budget", "peak_offset_db", "peak power must not be below average")
    check(all(r >= 0 for r in v["budget"]["min_rate"]), "budget", "min_rate", "must be >= 0")
    check(v["scheme"]["block_size"] >= 1, "scheme", "block_size", "must be >= 1")
    check(1 <= v["scheme"]["samples_per_block"] <= v["scheme"]["block_size"], "scheme", "samples_per_block",
          "must lie in [1, block_size]")
    check(v["scheme"]["ao_max_rounds"] >= 1, "scheme", "ao_max_rounds", "must be >= 1")
    check(v["scheme"]["convergence_eps"] > 0, "scheme", "convergence_eps", "must be positive")
    check(0 < v["srocr"]["eps1"] <= 1, "srocr", "eps1", "must lie in (0, 1]")
    check(v["srocr"]["delta0"] > 0, "srocr", "delta0", "must be positive")
    check(v["run"]["draws"] >= 1, "run", "draws", "must be >= 1")
    check(v["run"]["threads"] >= 1, "run", "threads", "must be >= 1")
    for x in v["scenario"]["irs_x"]:
        check(x > 0, "scenario", "irs_x", "IRS must not sit on the BS")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", source=str(path)) from None
    return parse_config(text, source=str(path))


_POWER_SWEEP = "0, 5, 10, 15, 20, 25, 30"

# Figure presets: simulation-section parameters with F reduced to 10^4.
PRESETS = {
    "fig3": """
[scheme]
access = NOMA
adjustment = dynamic, one_time
[budget]
avg_power_dbm = 20
""",
    "fig4": f"""
[scheme]
access = NOMA, TDMA, FDMA
adjustment = dynamic
[budget]
avg_power_dbm = {_POWER_SWEEP}
""",
    "fig5": f"""
[scheme]
access = NOMA, TDMA, FDMA
adjustment = dynamic, one_time
[budget]
avg_power_dbm = {_POWER_SWEEP}
""",
    "fig6": """
[scheme]
access = NOMA, TDMA, FDMA
adjustment = dynamic
[budget]
avg_power_dbm = 20
min_rate = 0, 0.5, 1, 1.5, 2, 2.5
""",
    "fig7": f"""
[scheme]
access = NOMA, TDMA, FDMA
adjustment = one_time
[irs]
elements = 0, 30
[budget]
avg_power_dbm = {_POWER_SWEEP}
""",
    "fig8": """
[scheme]
access = NOMA, TDMA, FDMA
adjustment = one_time
[irs]
elements = 0, 10, 20, 30, 40
""",
    "fig9": """
[scheme]
access = NOMA, TDMA, FDMA
adjustment = one_time
[scenario]
irs_x = 10, 20, 30, 40, 50, 60, 70, 80
""",
}
