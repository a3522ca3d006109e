"""Experiment configuration, seeded runs, and result files.

Config files are INI documents with sections ``[experiment]``, ``[system]``,
``[observation]``, ``[filter]``, ``[ensemble]`` and ``[output]``. Named
presets cover the standard twin experiments and can be
overridden key by key.

Random streams: the seed feeds a ``numpy.random.SeedSequence`` whose three
spawned children drive, in order, the reference observations, the
observation ensembles, and the initial ensemble.
"""
from __future__ import annotations

import configparser
import csv
import io
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .filter import ConfigError, FilterConfig, run_filter
from .metrics import COLUMNS, MetricSeries, Summary
from .model import DivergenceError, default_initial_state, generate_truth, spin_up
from .observation import NoiseDistribution, ObservationModel

CSV_HEADER = ("cycle", "time", "frmse", "armse", "fcrps", "acrps")
VARIANT_LABELS = {"cg": "CG-EnKF", "ns": "NS-EnKF", "vanilla": "V-EnKF"}
VARIANT_ORDER = ("cg", "ns", "vanilla")
DEFAULT_INFLATION = {"vanilla": 1.0, "cg": 1.0, "ns": 1.05}


@dataclass
class SystemConfig:
    dimension: int = 40
    forcing: float = 8.0
    dt: float = 0.01
    spin_up: float = 9.0
    cycles: int = 100


@dataclass
class EnsembleConfig:
    offset: float = 0.0
    spread: float = 1.0


@dataclass
class OutputConfig:
    csv: str | None = None
    summary: str | None = None
    window_start: int | None = None
    window_stop: int | None = None

    @property
    def window(self):
        if self.window_start is None and self.window_stop is None:
            return None
        return slice(self.window_start, self.window_stop)


@dataclass
class ExperimentConfig:
    system: SystemConfig
    observation: ObservationModel
    filter: FilterConfig
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0
    preset: str | None = None

    def validate(self):
        s = self.system
        if s.dimension < 4:
            raise ConfigError("dimension must be >= 4")
        if not s.dt > 0:
            raise ConfigError("dt must be > 0")
        if s.spin_up < 0:
            raise ConfigError("spin_up must be >= 0")
        if s.cycles < 1:
            raise ConfigError("cycles must be >= 1")
        if self.ensemble.spread < 0:
            raise ConfigError("ensemble spread must be >= 0")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        self.filter.validate(self.observation)
        return self

    def to_dict(self) -> dict:
        return asdict(self)


# Presets: section -> key -> value, plus per-variant inflation defaults.
_SF = {"system": {"cycles": 100, "spin_up": 9.0}, "filter": {"radius": 1.0}}
PRESETS = {
    "cubic-sf-comparison": {**_SF, "observation": {"map": "cubic", "noise": "gaussian"},
                            "inflation": {"cg": 1.05, "ns": 1.05, "vanilla": 1.0}},
    "linear-sf-comparison": {**_SF, "observation": {"map": "linear", "noise": "gaussian"},
                             "inflation": {"cg": 1.05, "ns": 1.05, "vanilla": 1.0}},
}
# n = 400: at n = 100 the un-inflated CG-EnKF collapses within a few hundred cycles
_LONG = {"system": {"cycles": 5500, "spin_up": 9.0},
         "filter": {"radius": 1.0, "ensemble_size": 400}}
for _name, _map, _noise, _infl in [
        ("linear", "linear", "gaussian", {"cg": 1.0, "ns": 1.05, "vanilla": 1.0}),
        ("exponential", "linear", "exponential", {"cg": 1.0, "ns": 1.05, "vanilla": 1.0}),
        ("bimodal", "linear", "bimodal", {"cg": 1.0, "ns": 1.0, "vanilla": 1.0}),
        ("cubic", "cubic", "gaussian", {"cg": 1.0, "ns": 1.05, "vanilla": 1.0}),
        ("pareto", "linear", "pareto", {"cg": 1.0, "ns": 1.05, "vanilla": 1.0})]:
    PRESETS[f"long-run-{_name}"] = {**_LONG, "observation": {"map": _map, "noise": _noise},
                                    "inflation": _infl}
PRESETS["long-run"] = PRESETS["long-run-linear"]

# Benchmark tables as rows of (preset, variants).
TABLES = {
    "1": [("cubic-sf-comparison", ("cg", "ns"))],
    "2": [("linear-sf-comparison", ("cg", "ns"))],
    "3": [("long-run-linear", ("cg", "ns", "vanilla")),
          ("long-run-exponential", ("cg", "ns", "vanilla")),
          ("long-run-bimodal", ("cg", "ns", "vanilla")),
          ("long-run-cubic", ("cg", "ns")),
          ("long-run-pareto", ("ns",))],
}

_KEYS = {
    "experiment": {"seed": int, "preset": str},
    "system": {"dimension": int, "forcing": float, "dt": float, "spin_up": float,
               "cycles": int},
    "observation": {"map": str, "noise": str, "mean": float, "std": float,
                    "mode_offset": float, "component_std": float, "shape": float,
                    "scale": float, "location": float},
    "filter": {"variant": str, "ensemble_size": int, "inflation": float, "radius": float,
               "obs_noise_var": float, "allow_misspecified": bool,
               "divergence_rmse": float, "divergence_patience": int},
    "ensemble": {"offset": float, "spread": float},
    "output": {"csv": str, "summary": str, "window_start": int, "window_stop": int},
}

_NOISE_DEFAULTS = {
    "gaussian": {"mean": 0.0, "std": 1.0},
    "exponential": {"mean": 1.0},
    "bimodal": {"mode_offset": 5.0, "component_std": 1.0},
    "pareto": {"shape": 0.5, "scale": 1.0, "location": 2.0},
    "none": {},
}


def _convert(section: str, key: str, raw):
    kind = _KEYS[section][key]
    if not isinstance(raw, str):
        return kind(raw)
    try:
        if kind is bool:
            return configparser.ConfigParser.BOOLEAN_STATES[raw.strip().lower()]
        return kind(raw.strip())
    except (KeyError, ValueError):
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}")


def _read_document(text: str) -> dict:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"malformed config: {err}") from err
    doc = {}
    for section in parser.sections():
        if section not in _KEYS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in _KEYS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            doc.setdefault(section, {})[key] = _convert(section, key, raw)
    return doc


def build_config(doc: dict, preset: str | None = None, **overrides) -> ExperimentConfig:
    """Assemble and validate a config from a nested dict of section values.

    Precedence, lowest first: built-in defaults, preset, document, overrides.
    Overrides accept ``seed``, ``variant``, ``cycles`` and ``allow_misspecified``.
    """
    doc = {s: dict(v) for s, v in doc.items()}
    preset = overrides.pop("preset", None) or preset or doc.get("experiment", {}).get("preset")
    merged: dict = {}
    inflation_defaults = DEFAULT_INFLATION
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        for section, values in PRESETS[preset].items():
            if section == "inflation":
                inflation_defaults = values
            else:
                merged.setdefault(section, {}).update(values)
    for section, values in doc.items():
        merged.setdefault(section, {}).update(values)
    for key, section in (("seed", "experiment"), ("variant", "filter"),
                         ("cycles", "system"), ("allow_misspecified", "filter")):
        if overrides.get(key) is not None:
            merged.setdefault(section, {})[key] = overrides[key]

    flt = merged.get("filter", {})
    variant = flt.get("variant")
    if variant is None:
        raise ConfigError("missing required field [filter] variant")

    obs = merged.get("observation", {})
    noise_kind = obs.get("noise", "gaussian")
    if noise_kind not in _NOISE_DEFAULTS:
        raise ConfigError(f"unknown noise {noise_kind!r}")
    noise_params = {**_NOISE_DEFAULTS[noise_kind],
                    **{k: v for k, v in obs.items() if k not in ("map", "noise")}}
    try:
        noise = NoiseDistribution(noise_kind, **noise_params)
        obs_model = ObservationModel(obs.get("map", "linear"), noise)
    except ValueError as err:
        raise ConfigError(str(err)) from err

    default_var = noise.variance if noise.kind == "gaussian" else 1.0
    fcfg = FilterConfig(
        variant=variant,
        n=flt.get("ensemble_size", 100),
        inflation=flt.get("inflation", inflation_defaults.get(variant, 1.0)),
        radius=flt.get("radius", 1.0),
        obs_noise_var=flt.get("obs_noise_var", default_var),
        allow_misspecified=flt.get("allow_misspecified", False),
        divergence_rmse=flt.get("divergence_rmse", 1e3),
        divergence_patience=flt.get("divergence_patience", 5),
    )
    cfg = ExperimentConfig(
        system=SystemConfig(**merged.get("system", {})),
        observation=obs_model,
        filter=fcfg,
        ensemble=EnsembleConfig(**merged.get("ensemble", {})),
        output=OutputConfig(**merged.get("output", {})),
        seed=merged.get("experiment", {}).get("seed", 0),
        preset=preset,
    )
    return cfg.validate()


def parse_config(text: str, preset: str | None = None, **overrides) -> ExperimentConfig:
    return build_config(_read_document(text), preset, **overrides)


def load_config(path, preset: str | None = None, **overrides) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    return parse_config(text, preset, **overrides)


def streams(seed: int):
    """(reference_rng, obs_rng, init_rng) spawned from one seed."""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)


def make_truth(system: SystemConfig):
    """Spin up from the perturbed fixed point, then integrate the window."""
    x0 = default_initial_state(system.dimension, system.forcing)
    start = spin_up(x0, system.dt, system.spin_up, system.forcing)
    return generate_truth(start, system.dt, system.cycles, system.forcing,
                          t0=system.spin_up)


@dataclass
class RunReport:
    config: ExperimentConfig
    series: MetricSeries
    status: str  # "completed" or "diverged"
    diverged_at: int | None = None
    message: str = ""
    provenance: dict = field(default_factory=dict)

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    def summary(self, window=None) -> Summary | None:
        window = window if window is not None else self.config.output.window
        if not self.series.cycles:
            return None
        return self.series.summary(window)

    @property
    def status_label(self) -> str:
        return self.status if self.completed else f"diverged@{self.diverged_at}"


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    ref_rng, obs_rng, init_rng = streams(cfg.seed)
    s = cfg.system
    try:
        truth = make_truth(s)
    except DivergenceError as err:
        raise ConfigError(f"truth integration diverged: {err}") from err
    n = cfg.filter.n
    initial = (truth.states[0] + cfg.ensemble.offset
               + cfg.ensemble.spread * init_rng.standard_normal((n, s.dimension)))
    result = run_filter(truth, cfg.filter, cfg.observation, initial, obs_rng, ref_rng,
                        forcing=s.forcing)
    provenance = {"package": __version__, "numpy": np.__version__, "seed": cfg.seed,
                  "threads": os.environ.get("ENSEMBLE_DA_THREADS", "1")}
    status = "completed" if result.completed else "diverged"
    return RunReport(cfg, result.metrics, status, result.diverged_at, result.message,
                     provenance)


def format_float(x: float) -> str:
    return repr(float(x))


def csv_text(series: MetricSeries) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for k, row in enumerate(series.cycles):
        writer.writerow([k, format_float(row.time)]
                        + [format_float(getattr(row, c)) for c in COLUMNS])
    return buf.getvalue()


def emit_csv(report: RunReport, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(csv_text(report.series))
    except OSError as err:
        raise OSError(f"cannot write metrics CSV {path}: {err}") from err
    return path


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "cycle" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]


SUMMARY_HEADER = ("Observation", "Experiment", "Seed", "Mean FCRPS", "Mean ACRPS",
                  "FRMSE", "ARMSE", "Inflation", "Time (s)")


def _observation_label(cfg: ExperimentConfig) -> str:
    if cfg.observation.map == "cubic":
        return "Cubic"
    return {"gaussian": "Linear", "none": "Linear (exact)", "exponential": "Exponential",
            "bimodal": "Bimodal", "pareto": "Pareto"}[cfg.observation.noise.kind]


def summary_rows(reports) -> list[list[str]]:
    if not reports:
        raise ValueError("need at least one report")
    rows = []
    for rep in reports:
        summ = rep.summary()
        if rep.completed and summ is not None:
            cells = [f"{getattr(summ, c):.4f}" for c in ("fcrps", "acrps", "frmse", "armse")]
        else:
            cells = [rep.status_label] * 4
        rows.append([_observation_label(rep.config),
                     VARIANT_LABELS[rep.config.filter.variant], str(rep.config.seed),
                     *cells, f"{rep.config.filter.inflation:g}",
                     f"{rep.series.wallclock:.3f}"])
    return rows


def emit_summary(reports) -> str:
    """Aligned plain-text table, one row per report."""
    rows = [list(SUMMARY_HEADER)] + summary_rows(reports)
    widths = [max(len(r[i]) for r in rows) for i in range(len(SUMMARY_HEADER))]
    lines = [" | ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def summary_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_HEADER)
    writer.writerows(summary_rows(reports))
    return buf.getvalue()


def table_configs(table: str, seeds, cycles: int | None = None,
                  allow_misspecified: bool = False, variants=None):
    """Configs for every (row, seed) of a benchmark table, in table row order."""
    if table not in TABLES:
        raise ConfigError(f"unknown table {table!r}; choose from {sorted(TABLES)}")
    out = []
    for preset, row_variants in TABLES[table]:
        obs_is_gaussian = PRESETS[preset]["observation"]["noise"] == "gaussian"
        for variant in row_variants:
            if variants and variant not in variants:
                continue
            if variant == "vanilla" and not obs_is_gaussian and not allow_misspecified:
                continue
            for seed in seeds:
                out.append(build_config({}, preset, seed=seed, variant=variant,
                                        cycles=cycles,
                                        allow_misspecified=allow_misspecified or None))
    return out


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    return replace(cfg, seed=seed)
