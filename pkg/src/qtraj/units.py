"""Internal unit system: lengths in nanometers, times in picoseconds, masses in electron masses."""

from dataclasses import dataclass

# CODATA 2018: hbar = 1.054571817e-34 J s (from the exact 2019 SI value of h),
# m_e = 9.1093837015(28)e-31 kg.  In nm/ps/m_e units hbar/m_e comes out near
# 115.768, which keeps every double-slit quantity at order 1-100.
_HBAR_SI = 1.054571817e-34
_ELECTRON_MASS_SI = 9.1093837015e-31

#: hbar in internal units (electron masses * nm^2 / ps).
HBAR_NM2_ME_PS = _HBAR_SI / _ELECTRON_MASS_SI * 1e6


@dataclass(frozen=True)
class UnitSystem:
    """Action and mass scales shared by all wave-field formulas.

    ``hbar`` is an action (mass * length^2 / time) and ``mass`` the particle
    mass, both as plain numbers in the internal convention.
    """

    hbar: float = HBAR_NM2_ME_PS
    mass: float = 1.0

    def __post_init__(self) -> None:
        if not self.hbar > 0:
            raise ValueError(f"hbar must be positive, got {self.hbar!r}")
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass!r}")


def electron_units(mass_me: float = 1.0) -> UnitSystem:
    """Unit system for a particle of ``mass_me`` electron masses."""
    return UnitSystem(hbar=HBAR_NM2_ME_PS, mass=mass_me)
