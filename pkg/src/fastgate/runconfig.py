"""Run configuration: a single JSON document in user units.

Frequencies arrive in MHz, times in microseconds, wavelengths in nm and
masses in amu; everything is validated and normalised to SI here, before
any physics sees it.  Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .chain import TrapConfig
from .constants import CONSTANTS
from .fidelity import ThermalSpec
from .optimize import Stage1Config, Stage2Config


class ConfigError(ValueError):
    """Invalid or unknown configuration content (CLI exit code 2)."""


SWEEP_VARIABLES = ("num_ions", "repetition_rate", "epsilon", "temperature", "jitter")


def _check_keys(block: dict, allowed: set, where: str):
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(sorted(unknown))}")


def _get_number(block: dict, key: str, where: str, default=None, positive=False):
    value = block.get(key, default)
    if value is None:
        return None
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"{where}.{key} must be a number")
    if positive and not value > 0:
        raise ConfigError(f"{where}.{key} must be positive")
    return float(value)


@dataclass(frozen=True)
class RunConfig:
    """Validated, SI-normalised run description."""

    trap: TrapConfig
    thermal: ThermalSpec
    targets: object            # (mu, nu) pair or "edge" / "middle"
    stage1_kwargs: dict
    stage2: Stage2Config
    sweep_variable: str | None
    sweep_values: tuple
    jitter_samples: int
    seed: int

    def resolved_targets(self, num_ions: int | None = None) -> tuple:
        n = num_ions if num_ions is not None else self.trap.num_ions
        if self.targets == "edge":
            pair = (0, 1)
        elif self.targets == "middle":
            lo = max(0, (n - 1) // 2)
            pair = (lo, lo + 1)
        else:
            pair = tuple(self.targets)
        if not (0 <= pair[0] < n and 0 <= pair[1] < n):
            raise ConfigError(f"target ions {pair} out of range for {n} ions")
        return pair

    def stage1_config(self, num_ions: int | None = None, **overrides) -> Stage1Config:
        kwargs = dict(self.stage1_kwargs)
        kwargs["targets"] = self.resolved_targets(num_ions)
        kwargs["thermal"] = self.thermal
        kwargs.update(overrides)
        return Stage1Config(**kwargs)


def _parse_trap(block: dict) -> TrapConfig:
    _check_keys(
        block,
        {"num_ions", "radial_freq_mhz", "axial_freq_mhz", "mass_amu",
         "wavelength_nm", "quartic_j_per_m4"},
        "trap",
    )
    num_ions = block.get("num_ions", 5)
    if not isinstance(num_ions, int) or isinstance(num_ions, bool) or num_ions < 1:
        raise ConfigError("trap.num_ions must be a positive integer")
    kwargs = {"num_ions": num_ions}
    radial = _get_number(block, "radial_freq_mhz", "trap", default=5.0, positive=True)
    kwargs["radial_frequency"] = 2.0 * math.pi * radial * 1e6
    axial = _get_number(block, "axial_freq_mhz", "trap", positive=True)
    if axial is not None:
        kwargs["axial_frequency_override"] = 2.0 * math.pi * axial * 1e6
    mass = _get_number(block, "mass_amu", "trap", positive=True)
    if mass is not None:
        kwargs["ion_mass"] = mass * CONSTANTS.atomic_mass_unit
    wavelength = _get_number(block, "wavelength_nm", "trap", positive=True)
    if wavelength is not None:
        kwargs["laser_wavelength"] = wavelength * 1e-9
    quartic = _get_number(block, "quartic_j_per_m4", "trap")
    if quartic is not None:
        kwargs["quartic_coefficient"] = quartic
    try:
        return TrapConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_thermal(block: dict) -> ThermalSpec:
    _check_keys(block, {"nbar", "temperature_k"}, "thermal")
    if "nbar" in block and "temperature_k" in block:
        raise ConfigError("thermal: give either nbar or temperature_k, not both")
    try:
        if "temperature_k" in block:
            return ThermalSpec(nbar=None, temperature=float(block["temperature_k"]))
        nbar = block.get("nbar", 0.1)
        return ThermalSpec(nbar=tuple(nbar) if isinstance(nbar, list) else float(nbar))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"thermal: {exc}") from exc


def _parse_targets(value):
    if value in ("edge", "middle"):
        return value
    if (
        isinstance(value, (list, tuple))
        and len(value) == 2
        and all(isinstance(v, int) and not isinstance(v, bool) and v >= 0 for v in value)
    ):
        return (value[0], value[1])
    raise ConfigError('stage1.targets must be "edge", "middle", or a pair of ion indices')


def _parse_stage1(block: dict) -> dict:
    _check_keys(
        block,
        {"targets", "group_count", "gate_time_scan_us", "z_bound_max", "epsilon",
         "top_k", "restarts", "max_sdks", "pulse_counting"},
        "stage1",
    )
    kwargs: dict = {}
    kwargs["targets"] = _parse_targets(block.get("targets", "middle"))
    if "group_count" in block:
        kwargs["group_count"] = block["group_count"]
    scan = block.get("gate_time_scan_us")
    if scan is not None:
        if isinstance(scan, dict):
            _check_keys(scan, {"start", "stop", "step"}, "stage1.gate_time_scan_us")
            start = _get_number(scan, "start", "scan", positive=True)
            stop = _get_number(scan, "stop", "scan", positive=True)
            step = _get_number(scan, "step", "scan", positive=True)
            if None in (start, stop, step) or stop < start:
                raise ConfigError("stage1.gate_time_scan_us needs start <= stop and a step")
            count = int(round((stop - start) / step)) + 1
            values = [start + k * step for k in range(count) if start + k * step <= stop + 1e-12]
        elif isinstance(scan, list) and scan:
            values = [float(v) for v in scan]
        else:
            raise ConfigError("stage1.gate_time_scan_us must be a list or {start, stop, step}")
        kwargs["gate_time_scan"] = tuple(v * 1e-6 for v in values)
    if "z_bound_max" in block:
        bound = block["z_bound_max"]
        if not isinstance(bound, int) or bound < 1:
            raise ConfigError("stage1.z_bound_max must be a positive integer")
        kwargs["z_bound_schedule"] = tuple(range(1, bound + 1))
    for key in ("epsilon",):
        if key in block:
            kwargs[key] = _get_number(block, key, "stage1")
    for key in ("top_k", "restarts", "max_sdks"):
        if key in block:
            value = block[key]
            if not isinstance(value, int) or value < 0:
                raise ConfigError(f"stage1.{key} must be a non-negative integer")
            kwargs[key] = value
    if "pulse_counting" in block:
        if block["pulse_counting"] not in ("pi_pulses", "sdks"):
            raise ConfigError('stage1.pulse_counting must be "pi_pulses" or "sdks"')
        kwargs["pulse_counting"] = block["pulse_counting"]
    return kwargs


def _parse_stage2(block: dict) -> Stage2Config:
    _check_keys(
        block, {"repetition_rate_mhz", "timing_variation", "local_restarts"}, "stage2"
    )
    kwargs = {}
    rate = _get_number(block, "repetition_rate_mhz", "stage2", positive=True)
    if rate is not None:
        kwargs["repetition_rate"] = rate * 1e6
    variation = _get_number(block, "timing_variation", "stage2")
    if variation is not None:
        kwargs["timing_variation"] = variation
    if "local_restarts" in block:
        value = block["local_restarts"]
        if not isinstance(value, int) or value < 0:
            raise ConfigError("stage2.local_restarts must be a non-negative integer")
        kwargs["local_restarts"] = value
    try:
        return Stage2Config(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_sweep(block: dict):
    _check_keys(block, {"variable", "values", "start", "stop", "steps", "samples"}, "sweep")
    variable = block.get("variable")
    if variable not in SWEEP_VARIABLES:
        raise ConfigError(
            f"sweep.variable must be one of {', '.join(SWEEP_VARIABLES)}; got {variable!r}"
        )
    samples = block.get("samples", 100)
    if not isinstance(samples, int) or samples < 1:
        raise ConfigError("sweep.samples must be a positive integer")
    if "values" in block:
        values = block["values"]
        if not isinstance(values, list) or not values:
            raise ConfigError("sweep.values must be a non-empty list")
        values = [float(v) for v in values]
    else:
        start = _get_number(block, "start", "sweep")
        stop = _get_number(block, "stop", "sweep")
        steps = block.get("steps")
        if start is None or stop is None or not isinstance(steps, int) or steps < 2:
            raise ConfigError("sweep needs values, or start/stop with steps >= 2")
        values = [start + (stop - start) * k / (steps - 1) for k in range(steps)]
    if variable == "num_ions":
        values = [int(round(v)) for v in values]
        if any(v < 2 for v in values):
            raise ConfigError("sweep over num_ions needs values >= 2")
    return variable, tuple(values), samples


def load_run_config(data: dict | None) -> RunConfig:
    """Validate a parsed config document and normalise it to SI."""
    data = dict(data or {})
    _check_keys(
        data,
        {"schema_version", "trap", "thermal", "stage1", "stage2", "sweep", "seed"},
        "config",
    )
    for key in ("trap", "thermal", "stage1", "stage2", "sweep"):
        if key in data and not isinstance(data[key], dict):
            raise ConfigError(f"config.{key} must be an object")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")

    sweep_variable, sweep_values, samples = (None, (), 100)
    if "sweep" in data:
        sweep_variable, sweep_values, samples = _parse_sweep(data["sweep"])

    return RunConfig(
        trap=_parse_trap(data.get("trap", {})),
        thermal=_parse_thermal(data.get("thermal", {})),
        targets=_parse_targets(data.get("stage1", {}).get("targets", "middle")),
        stage1_kwargs={
            k: v for k, v in _parse_stage1(data.get("stage1", {})).items() if k != "targets"
        },
        stage2=_parse_stage2(data.get("stage2", {})),
        sweep_variable=sweep_variable,
        sweep_values=sweep_values,
        jitter_samples=samples,
        seed=seed,
    )


def load_run_config_file(path: str | None) -> RunConfig:
    if path is None:
        return load_run_config({})
    try:
        with open(path, encoding="utf-8") as handle:
            data = json.load(handle)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a JSON object")
    return load_run_config(data)


def normalized_config_dict(config: RunConfig) -> dict:
    """SI echo of the effective configuration, for provenance headers."""
    trap = config.trap
    return {
        "trap": {
            "num_ions": trap.num_ions,
            "ion_mass_kg": trap.ion_mass,
            "laser_wavelength_m": trap.laser_wavelength,
            "radial_frequency_rad_s": trap.radial_frequency,
            "axial_frequency_rad_s": trap.axial_freq,
            "quartic_j_per_m4": trap.quartic,
        },
        "thermal": config.thermal.to_json_dict(),
        "targets": list(config.targets) if not isinstance(config.targets, str) else config.targets,
        "stage2": {
            "repetition_rate_hz": config.stage2.repetition_rate,
            "timing_variation": config.stage2.timing_variation,
            "local_restarts": config.stage2.local_restarts,
        },
        "seed": config.seed,
    }
