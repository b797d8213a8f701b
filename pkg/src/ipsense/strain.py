"""Mechanical and photoelastic strain relations for a bare fiber."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidArgument

STANDARD_GRAVITY = 9.81
MAX_STRAIN = 1e-2
QPSK = "QPSK"


@dataclass(frozen=True)
class FiberGeometry:
    bare_diameter_um: float = 250.0
    youngs_modulus_pa: float = 7.0e10

    def __post_init__(self):
        if not (self.bare_diameter_um > 0 and self.youngs_modulus_pa > 0):
            raise InvalidArgument("fiber diameter and Young's modulus must be > 0")

    @property
    def area_m2(self) -> float:
        radius = self.bare_diameter_um * 1e-6 / 2.0
        return math.pi * radius * radius


@dataclass(frozen=True)
class PhotoelasticConstant:
    """Strain-to-phase constant in nanostrain * meter per radian."""

    value: float = 100.0

    def __post_init__(self):
        if not self.value > 0:
            raise InvalidArgument("photoelastic constant must be > 0")


def _check_strain(strain: float) -> float:
    strain = float(strain)
    if not math.isfinite(strain) or abs(strain) >= MAX_STRAIN:
        raise InvalidArgument(f"strain {strain} outside |strain| < {MAX_STRAIN}")
    return strain


def strain_from_load(mass_g, geom: FiberGeometry = FiberGeometry(),
                     g: float = STANDARD_GRAVITY) -> float:
    """Axial strain (F/A)/E of a fiber hanging ``mass_g`` grams."""
    mass_g = float(mass_g)
    if not math.isfinite(mass_g) or mass_g < 0:
        raise InvalidArgument(f"mass must be >= 0, got {mass_g}")
    force = mass_g * 1e-3 * g
    return _check_strain(force / geom.area_m2 / geom.youngs_modulus_pa)


def _check_length(gauge_length: float) -> float:
    gauge_length = float(gauge_length)
    if not math.isfinite(gauge_length) or gauge_length <= 0:
        raise InvalidArgument(f"gauge length must be > 0, got {gauge_length}")
    return gauge_length


def phase_change(strain, gauge_length,
                 k: PhotoelasticConstant = PhotoelasticConstant()) -> float:
    """Optical phase change in radians for ``strain`` over ``gauge_length`` m."""
    strain = _check_strain(strain)
    gauge_length = _check_length(gauge_length)
    return strain * 1e9 * gauge_length / k.value


def strain_from_phase(delta_phi, gauge_length,
                      k: PhotoelasticConstant = PhotoelasticConstant()) -> float:
    gauge_length = _check_length(gauge_length)
    delta_phi = float(delta_phi)
    if not math.isfinite(delta_phi):
        raise InvalidArgument("phase change must be finite")
    return _check_strain(k.value * delta_phi / gauge_length * 1e-9)


def critical_phase(modulation: str = QPSK) -> float:
    if modulation != QPSK:
        raise NotImplementedError(f"no critical phase for {modulation!r}")
    return math.pi / 4.0


def exceeds_critical_phase(delta_phi, modulation: str = QPSK) -> bool:
    delta_phi = float(delta_phi)
    if not math.isfinite(delta_phi):
        raise InvalidArgument("phase change must be finite")
    return abs(delta_phi) >= critical_phase(modulation)
