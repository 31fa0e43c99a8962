"""AC-Stark phase shifts on shelved qubits.

While the gate's ultra-fast pulses drive the target ions, the remaining ions
sit shelved in metastable levels.  The pulse light, far detuned from the
dipole-allowed routes out of those levels, still shifts them; the
differential shift between the two shelf levels winds qubit phase at a rate
set by the drive intensity, integrated over the pi-pulse duration.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

SPEED_OF_LIGHT = 2.99792458e8  # m/s


class ResonantShelfTransition(ValueError):
    """A shelf route is resonant with the drive; shelving there is unphysical."""


@dataclass(frozen=True)
class TransitionData:
    """One dipole-allowed route out of a shelf level.

    `dipole_moment_ratio` is the transition dipole moment relative to the
    driven transition's moment, so the route's Rabi frequency is
    ratio * drive Rabi frequency.
    """

    label: str
    wavelength: float            # m
    dipole_moment_ratio: float

    def __post_init__(self):
        if not self.wavelength > 0.0:
            raise ValueError("wavelength must be positive")
        if self.dipole_moment_ratio < 0.0:
            raise ValueError("dipole ratio must be non-negative")

    @property
    def angular_frequency(self) -> float:
        return 2.0 * math.pi * SPEED_OF_LIGHT / self.wavelength


@dataclass(frozen=True)
class ShelfLevel:
    label: str
    routes: tuple


@dataclass(frozen=True)
class ShelvingScenario:
    """Drive parameters plus the two shelf levels holding the qubit.

    `drive_rabi_frequency` is angular (s^-1): the paper-style "300 GHz"
    drive is 3e11 s^-1.  The qubit phase convention is shift(second level)
    minus shift(first level).
    """

    drive_rabi_frequency: float  # rad/s
    drive_wavelength: float      # m
    shelf_levels: tuple          # (ShelfLevel, ShelfLevel)

    def __post_init__(self):
        if not self.drive_rabi_frequency > 0.0 or not self.drive_wavelength > 0.0:
            raise ValueError("drive Rabi frequency and wavelength must be positive")
        if len(self.shelf_levels) != 2:
            raise ValueError("exactly two shelf levels are required")

    @property
    def laser_angular_frequency(self) -> float:
        return 2.0 * math.pi * SPEED_OF_LIGHT / self.drive_wavelength

    @property
    def pi_time(self) -> float:
        """Duration of one pi pulse, tau = pi / Omega."""
        return math.pi / self.drive_rabi_frequency


def stark_shift(transition: TransitionData, scenario: ShelvingScenario) -> float:
    """Leading-order AC Stark shift of a shelf level through one route, s^-1.

    Signed as Omega^2 / (4 (w_L - w_0)): positive for blue detuning of the
    drive relative to the route, negative for red.
    """
    detuning = scenario.laser_angular_frequency - transition.angular_frequency
    if detuning == 0.0:
        raise ResonantShelfTransition(
            f"route {transition.label} is resonant with the drive"
        )
    omega = transition.dipole_moment_ratio * scenario.drive_rabi_frequency
    return omega**2 / (4.0 * detuning)


def level_shift(level: ShelfLevel, scenario: ShelvingScenario) -> float:
    """Total shift of one shelf level: sum over its listed routes, s^-1."""
    return sum(stark_shift(route, scenario) for route in level.routes)


def qubit_phase_per_pulse(scenario: ShelvingScenario) -> float:
    """Differential qubit phase from one pi pulse, rad.

    tau_pi times the difference of the two shelf-level shifts (second minus
    first); identical shelf levels give zero by cancellation.
    """
    first, second = scenario.shelf_levels
    return scenario.pi_time * (level_shift(second, scenario) - level_shift(first, scenario))


def gate_phase_budget(phase_per_pulse: float, pulse_pairs: int) -> float:
    """Accumulated shelf-qubit phase over a gate of counter-propagating pairs."""
    if pulse_pairs < 0:
        raise ValueError("pulse_pairs must be non-negative")
    return 2.0 * pulse_pairs * phase_per_pulse


def load_atomic_data(path=None) -> dict:
    """Load a shelving data file; defaults to the shipped Ca-40 values."""
    if path is None:
        text = resources.files("fastgate").joinpath("data/ca40_shelving.json").read_text()
    else:
        with open(path, encoding="utf-8") as handle:
            text = handle.read()
    data = json.loads(text)
    for key in ("drive", "qubit_levels"):
        if key not in data:
            raise ValueError(f"atomic data file missing '{key}'")
    if len(data["qubit_levels"]) != 2:
        raise ValueError("atomic data file must define exactly two qubit levels")
    return data


def scenario_from_data(data: dict, drive_rabi_frequency: float) -> ShelvingScenario:
    """Build a `ShelvingScenario` from a parsed atomic data file."""
    levels = tuple(
        ShelfLevel(
            label=level["level"],
            routes=tuple(
                TransitionData(
                    label=t["label"],
                    wavelength=t["wavelength_nm"] * 1e-9,
                    dipole_moment_ratio=t["dipole_ratio"],
                )
                for t in level["transitions"]
            ),
        )
        for level in data["qubit_levels"]
    )
    return ShelvingScenario(
        drive_rabi_frequency=drive_rabi_frequency,
        drive_wavelength=data["drive"]["wavelength_nm"] * 1e-9,
        shelf_levels=levels,
    )
