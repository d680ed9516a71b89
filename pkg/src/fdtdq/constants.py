"""Physical constants and unit conversion helpers.

All internal arithmetic is carried out in SI units with 64-bit floats.
Configuration files may tag numbers with units (nm, fs, eV, ...), which are
converted on input with the fixed constants below.
"""

from dataclasses import dataclass

HBAR = 1.054571817e-34          # reduced Planck constant, J*s
ELECTRON_MASS = 9.1093837015e-31  # kg
DALTON = 1.66053906660e-27        # kg
EV = 1.602176634e-19              # J
BOLTZMANN = 1.380649e-23          # J/K

# Multiplicative factors to SI, keyed by unit name as it appears in configs.
UNIT_FACTORS = {
    # length
    "m": 1.0,
    "nm": 1e-9,
    "angstrom": 1e-10,
    "A": 1e-10,
    # time
    "s": 1.0,
    "ps": 1e-12,
    "fs": 1e-15,
    "as": 1e-18,
    # energy
    "J": 1.0,
    "eV": EV,
    "meV": 1e-3 * EV,
    # mass
    "kg": 1.0,
    "dalton": DALTON,
    "Da": DALTON,
    "m_e": ELECTRON_MASS,
    # dimensionless / counts
    "1": 1.0,
    "K": 1.0,
}


def to_si(value, unit="1"):
    """Convert a (value, unit) pair to SI.  Unknown units raise ValueError."""
    try:
        factor = UNIT_FACTORS[unit]
    except KeyError:
        raise ValueError(f"unknown unit {unit!r}") from None
    return float(value) * factor


@dataclass(frozen=True)
class PhysicalConstants:
    """Particle-specific constants used by the discretization."""

    mass: float
    hbar: float = HBAR

    def __post_init__(self):
        if not (self.mass > 0.0 and self.hbar > 0.0):
            raise ValueError("mass and hbar must be strictly positive")

    @property
    def kinetic_factor(self):
        """hbar^2 / (2 m), the coefficient of the kinetic term."""
        return self.hbar**2 / (2.0 * self.mass)


ELECTRON = PhysicalConstants(mass=ELECTRON_MASS)
PROTON_1DA = PhysicalConstants(mass=DALTON)
