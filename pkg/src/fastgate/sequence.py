"""Pulse-sequence representation: antisymmetric kick groups and expanded trains.

A gate is parameterised by signed group sizes z_j and group times t_j that are
antisymmetric about the gate midpoint (t = 0): z_{-j} = -z_j, t_{-j} = -t_j.
Each group of |z_j| momentum kicks is realised as individual 2*hbar*k SDKs
spaced by the laser repetition period.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass


class BurstOverlap(ValueError):
    """Adjacent kick bursts would overlap at the requested repetition rate."""


class GridResolutionError(ValueError):
    """The repetition-rate grid cannot resolve the requested group timings."""


@dataclass(frozen=True, eq=False)
class PulseGroupSequence:
    """Antisymmetric pulse-group sequence targeting one ion pair.

    `group_sizes[i]` kicks arrive together at `group_times[i]` (seconds,
    relative to the gate midpoint).  Negative size means the kick direction is
    reversed.  `gate_time` is the total design duration T_G; all group times
    lie within [-T_G/2, +T_G/2].
    """

    group_sizes: tuple
    group_times: tuple
    target_ions: tuple
    gate_time: float

    def __post_init__(self):
        z, t = self.group_sizes, self.group_times
        if len(z) != len(t):
            raise ValueError("group_sizes and group_times must have equal length")
        if len(z) == 0 or len(z) % 2 != 0:
            raise ValueError("group count must be even and non-zero")
        if any(int(v) != v for v in z):
            raise ValueError("group sizes must be integers")
        for i in range(len(z)):
            if z[i] != -z[len(z) - 1 - i] or t[i] != -t[len(t) - 1 - i]:
                raise ValueError("group sizes and times must be exactly antisymmetric")
        if any(t[i] >= t[i + 1] for i in range(len(t) - 1)):
            raise ValueError("group times must be strictly increasing")
        if not self.gate_time > 0.0 or abs(t[0]) > 0.5 * self.gate_time * (1.0 + 1e-9):
            raise ValueError("group times must lie within [-T_G/2, +T_G/2]")
        mu, nu = self.target_ions
        if mu == nu or mu < 0 or nu < 0:
            raise ValueError("target ions must be a pair of distinct non-negative indices")

    @classmethod
    def from_half(cls, half_sizes, half_times, target_ions, gate_time) -> "PulseGroupSequence":
        """Build the full antisymmetric sequence from its positive-time half."""
        half_sizes = [int(v) for v in half_sizes]
        half_times = [float(v) for v in half_times]
        if any(tv <= 0.0 for tv in half_times):
            raise ValueError("half times must be strictly positive")
        sizes = tuple(-v for v in reversed(half_sizes)) + tuple(half_sizes)
        times = tuple(-v for v in reversed(half_times)) + tuple(half_times)
        return cls(sizes, times, tuple(target_ions), float(gate_time))

    @property
    def half_sizes(self) -> tuple:
        return self.group_sizes[len(self.group_sizes) // 2:]

    @property
    def half_times(self) -> tuple:
        return self.group_times[len(self.group_times) // 2:]

    @property
    def total_sdks(self) -> int:
        return int(sum(abs(v) for v in self.group_sizes))

    @property
    def kick_span(self) -> float:
        """Time span (s) covered by non-empty groups; 0.0 if all groups are empty."""
        nonzero = [t for z, t in zip(self.group_sizes, self.group_times) if z != 0]
        return 2.0 * max(abs(t) for t in nonzero) if nonzero else 0.0

    def trimmed(self) -> "PulseGroupSequence":
        """Drop empty trailing groups, shortening the reported gate time.

        Optimal sequences often end with z = 0 at the outermost slots; removing
        them shortens the gate without changing its action.  Interior empty
        groups are kept (they carry no kicks either way).
        """
        half_z = list(self.half_sizes)
        half_t = list(self.half_times)
        while half_z and half_z[-1] == 0:
            half_z.pop()
            half_t.pop()
        if not half_z or len(half_z) == len(self.half_sizes):
            return self
        return PulseGroupSequence.from_half(
            half_z, half_t, self.target_ions, 2.0 * half_t[-1]
        )

    def to_json_dict(self) -> dict:
        return {
            "group_sizes": [int(v) for v in self.group_sizes],
            "group_times_s": [float(v) for v in self.group_times],
            "targets": [int(v) for v in self.target_ions],
            "gate_time_s": float(self.gate_time),
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "PulseGroupSequence":
        return cls(
            tuple(int(v) for v in data["group_sizes"]),
            tuple(float(v) for v in data["group_times_s"]),
            tuple(int(v) for v in data["targets"]),
            float(data["gate_time_s"]),
        )


@dataclass(frozen=True, eq=False)
class KickTrain:
    """Fully expanded SDK train on the repetition-rate grid.

    `repetition_rate` is None for the instantaneous-group limit used by the
    closed-form cost (all kicks of a group coincide); on a real grid every
    kick time is an integer multiple of the repetition period relative to the
    train start.
    """

    kick_times: tuple
    kick_signs: tuple
    target_ions: tuple
    repetition_rate: float | None = None

    def __post_init__(self):
        times, signs = self.kick_times, self.kick_signs
        if len(times) != len(signs):
            raise ValueError("kick_times and kick_signs must have equal length")
        if any(s not in (-1, 1) for s in signs):
            raise ValueError("kick signs must be +1 or -1")
        if any(times[i] > times[i + 1] for i in range(len(times) - 1)):
            raise ValueError("kick times must be non-decreasing")
        if self.repetition_rate is not None:
            period = 1.0 / self.repetition_rate
            gaps = [times[i + 1] - times[i] for i in range(len(times) - 1)]
            if any(g < period * (1.0 - 1e-9) for g in gaps):
                raise BurstOverlap("consecutive kicks closer than one repetition period")
            if times:
                t0 = times[0]
                for tv in times:
                    steps = (tv - t0) * self.repetition_rate
                    if abs(steps - round(steps)) > 1e-6:
                        raise GridResolutionError(
                            "kick times are not integer multiples of the repetition period"
                        )

    @property
    def num_kicks(self) -> int:
        return len(self.kick_times)

    @property
    def midpoint(self) -> float:
        if not self.kick_times:
            return 0.0
        return 0.5 * (self.kick_times[0] + self.kick_times[-1])

    def scaled_times(self, factor: float) -> "KickTrain":
        """Train with all kick times scaled by `factor` (repetition-rate jitter)."""
        return KickTrain(
            kick_times=tuple(tv * factor for tv in self.kick_times),
            kick_signs=self.kick_signs,
            target_ions=self.target_ions,
            repetition_rate=None if self.repetition_rate is None else self.repetition_rate / factor,
        )

    def to_json_dict(self) -> dict:
        return {
            "rep_rate_hz": None if self.repetition_rate is None else float(self.repetition_rate),
            "targets": [int(v) for v in self.target_ions],
            "kicks": [
                {"t_s": float(tv), "sign": int(sv)}
                for tv, sv in zip(self.kick_times, self.kick_signs)
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)

    @classmethod
    def from_json_dict(cls, data: dict) -> "KickTrain":
        rate = data.get("rep_rate_hz")
        return cls(
            kick_times=tuple(float(k["t_s"]) for k in data["kicks"]),
            kick_signs=tuple(int(k["sign"]) for k in data["kicks"]),
            target_ions=tuple(int(v) for v in data["targets"]),
            repetition_rate=None if rate is None else float(rate),
        )

    @classmethod
    def from_json(cls, text: str) -> "KickTrain":
        return cls.from_json_dict(json.loads(text))


def instantaneous_train(sequence: PulseGroupSequence) -> KickTrain:
    """Instantaneous-group limit: all |z_j| kicks of a group exactly at t_j."""
    times, signs = [], []
    for z, t in zip(sequence.group_sizes, sequence.group_times):
        times.extend([t] * abs(z))
        signs.extend([1 if z > 0 else -1] * abs(z))
    return KickTrain(tuple(times), tuple(signs), sequence.target_ions, repetition_rate=None)


def snap_group_time(
    time: float, size: int, repetition_rate: float, grid_phase: float = 0.0
) -> float:
    """Snap a group centre to the grid slot compatible with its burst parity.

    Odd bursts sit on integer grid points n/R; even bursts sit half a period
    off the integer grid so that their kicks land on it.  Mirrored groups at
    -t then stay exact mirrors, preserving the antisymmetry of the train.

    `grid_phase` offsets the whole laser grid; the only offset compatible
    with an antisymmetric train besides zero is half a period, which is a
    free discrete choice the optimiser may exploit.
    """
    period = 1.0 / repetition_rate
    base = time - grid_phase
    if abs(size) % 2 == 1:
        snapped = round(base * repetition_rate) * period
    else:
        snapped = (math.floor(base * repetition_rate) + 0.5) * period
    return snapped + grid_phase


def _burst_times(center: float, size: int, period: float) -> list:
    """Kick times of one burst: |size| kicks spaced by the period, centred."""
    count = abs(size)
    return [center + (k - 0.5 * (count - 1)) * period for k in range(count)]


def expand_groups(
    sequence: PulseGroupSequence, repetition_rate: float, grid_phase: float = 0.0
) -> KickTrain:
    """Expand an antisymmetric group sequence into individual SDKs on the grid.

    Each group j becomes |z_j| kicks of sign sgn(z_j) separated by exactly one
    repetition period and centred on the group time (snapped to the grid slot
    of matching parity, on the grid offset by `grid_phase`).  The
    negative-time half is generated by mirroring so the expanded train is
    exactly antisymmetric.

    Raises `BurstOverlap` when neighbouring bursts collide and
    `GridResolutionError` when snapping reorders the groups.
    """
    if not repetition_rate > 0.0:
        raise ValueError("repetition_rate must be positive")
    period = 1.0 / repetition_rate
    half = [(z, t) for z, t in zip(sequence.half_sizes, sequence.half_times) if z != 0]

    pos_times, pos_signs = [], []
    previous_center = None
    for z, t in half:
        center = snap_group_time(t, z, repetition_rate, grid_phase)
        if previous_center is not None and center <= previous_center:
            raise GridResolutionError(
                f"repetition rate {repetition_rate:.3g} Hz cannot resolve group times "
                f"{previous_center:.3e} and {center:.3e}"
            )
        previous_center = center
        burst = _burst_times(center, z, period)
        if pos_times and burst[0] - pos_times[-1] < period * (1.0 - 1e-9):
            raise BurstOverlap("adjacent bursts overlap; increase spacing or reduce |z|")
        pos_times.extend(burst)
        pos_signs.extend([1 if z > 0 else -1] * abs(z))

    if pos_times and 2.0 * pos_times[0] < period * (1.0 - 1e-9):
        raise BurstOverlap("innermost bursts overlap across the gate midpoint")

    times = [-tv for tv in reversed(pos_times)] + pos_times
    signs = [-sv for sv in reversed(pos_signs)] + pos_signs
    return KickTrain(tuple(times), tuple(signs), sequence.target_ions, repetition_rate)
