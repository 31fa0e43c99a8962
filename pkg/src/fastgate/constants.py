"""Physical constants (CODATA 2018) and default species parameters.

All values are SI; angular frequencies are rad/s throughout the package.
User-facing units (MHz, nm, amu, us) are converted at the CLI boundary only.
"""

from dataclasses import dataclass


@dataclass(frozen=True)
class PhysicalConstants:
    """Fundamental constants used by the chain and fidelity models."""

    hbar: float = 1.054571817e-34           # J s
    boltzmann: float = 1.380649e-23         # J / K
    elementary_charge: float = 1.602176634e-19  # C
    vacuum_permittivity: float = 8.8541878128e-12  # F / m
    atomic_mass_unit: float = 1.66053906660e-27    # kg

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0.0:
                raise ValueError(f"constant {name} must be strictly positive")

    @property
    def coulomb_coefficient(self) -> float:
        """q^2 / (4 pi eps0), J m."""
        import math

        return self.elementary_charge**2 / (4.0 * math.pi * self.vacuum_permittivity)


CONSTANTS = PhysicalConstants()

# Default species: 40Ca+ driven on the 393 nm S1/2 -> P3/2 transition.
CA40_ION_MASS = 39.9626 * CONSTANTS.atomic_mass_unit  # kg
SDK_WAVELENGTH = 393.37e-9  # m
