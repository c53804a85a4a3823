"""Array manifolds: element layouts, element patterns, steering vectors and
their analytic angle derivatives.

Steering convention: element phase is exp(+j * 2*pi/lambda * k . r_i) with k the
unit vector pointing from the array toward the source at (azimuth, elevation),
scaled by the element amplitude gain. Dual-polarized arrays stack the two
polarization port blocks: ports 0..N-1 are polarization 0, ports N..2N-1
polarization 1, with identical magnitude patterns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import angles_to_direction

SPEED_OF_LIGHT = 299_792_458.0


class DegenerateDirectionError(ValueError):
    """All element gains vanish toward the requested direction."""


@dataclass(frozen=True)
class Pattern:
    """Element amplitude pattern.

    kind "isotropic": unit gain everywhere (dipole-like stand-in).
    kind "patch": cos^exponent of the angle off the element boresight, floored
    at the front-to-back ratio; attenuates strongly toward the array poles.
    """

    kind: str = "isotropic"
    exponent: float = 1.0
    front_to_back_db: float = 25.0

    @property
    def floor(self) -> float:
        return 10.0 ** (-self.front_to_back_db / 20.0)


@dataclass(frozen=True)
class ArrayGeometry:
    """Element positions (array frame, metres) plus pattern and polarization."""

    element_positions: np.ndarray
    pattern: Pattern = field(default_factory=Pattern)
    polarization_count: int = 1
    element_boresights: np.ndarray | None = None  # unit vectors, one per element

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.element_positions, dtype=float))
        if pos.shape[0] < 1 or not np.all(np.isfinite(pos)):
            raise ValueError("need at least one finite element position")
        object.__setattr__(self, "element_positions", pos)
        if self.polarization_count not in (1, 2):
            raise ValueError("polarization_count must be 1 or 2")
        if self.element_boresights is not None:
            b = np.atleast_2d(np.asarray(self.element_boresights, dtype=float))
            if b.shape != pos.shape:
                raise ValueError("boresights must match element positions")
            object.__setattr__(self, "element_boresights", b)

    @property
    def n_elements(self) -> int:
        return self.element_positions.shape[0]

    @property
    def n_ports(self) -> int:
        return self.n_elements * self.polarization_count


def uca(n_elements: int, radius: float, pattern: Pattern | None = None,
        polarization_count: int = 1, radial_boresight: bool = False,
        boresight_downtilt: float = 0.0) -> ArrayGeometry:
    """Uniform circular array in the x-y plane of the array frame.

    With ``radial_boresight`` each element faces outward; ``boresight_downtilt``
    (radians) additionally tips the element boresights below the array plane,
    as for street-level coverage from a lamp-post mount.
    """
    psi = 2.0 * np.pi * np.arange(n_elements) / n_elements
    pos = radius * np.stack([np.cos(psi), np.sin(psi), np.zeros_like(psi)], axis=-1)
    boresights = None
    if radial_boresight:
        c, s = np.cos(boresight_downtilt), np.sin(boresight_downtilt)
        boresights = np.stack([c * np.cos(psi), c * np.sin(psi),
                               -s * np.ones_like(psi)], axis=-1)
    return ArrayGeometry(pos, pattern or Pattern(), polarization_count, boresights)


def uca_radius(n_elements: int, frequency: float) -> float:
    """Default circle radius: half-wavelength spacing between adjacent elements.

    Denser spacing keeps the manifold of small rings (4 elements) free of
    grating ambiguities.
    """
    lam = SPEED_OF_LIGHT / frequency
    return lam / (4.0 * np.sin(np.pi / n_elements))


def an_array(frequency: float, n_elements: int = 20,
             downtilt: float = 0.0) -> ArrayGeometry:
    """Access-node array: dual-polarized outward-facing patch elements on a circle."""
    return uca(n_elements, uca_radius(n_elements, frequency),
               Pattern(kind="patch"), polarization_count=2, radial_boresight=True,
               boresight_downtilt=downtilt)


def ue_array(frequency: float, n_elements: int = 4) -> ArrayGeometry:
    """Device array: dual-polarized cross-dipole elements on a circle."""
    return uca(n_elements, uca_radius(n_elements, frequency),
               Pattern(kind="isotropic"), polarization_count=2)


def element_gains(array: ArrayGeometry, azimuth: float, elevation: float):
    """Per-element amplitude gains and their (d/daz, d/del) derivatives."""
    n = array.n_elements
    pat = array.pattern
    if pat.kind == "isotropic":
        g = np.ones(n)
        return g, np.zeros(n), np.zeros(n)
    if pat.kind != "patch":
        raise ValueError(f"unknown pattern kind {pat.kind!r}")

    k = angles_to_direction(azimuth, elevation)
    dk_daz = np.array([-np.sin(elevation) * np.sin(azimuth),
                       np.sin(elevation) * np.cos(azimuth), 0.0])
    dk_del = np.array([np.cos(elevation) * np.cos(azimuth),
                       np.cos(elevation) * np.sin(azimuth), -np.sin(elevation)])
    if array.element_boresights is not None:
        c = array.element_boresights @ k  # cosine off each boresight
        dc_daz = array.element_boresights @ dk_daz
        dc_del = array.element_boresights @ dk_del
    else:
        # boresight is the whole horizon ring: off-boresight cosine = sin(el)
        c = np.full(n, np.sin(elevation))
        dc_daz = np.zeros(n)
        dc_del = np.full(n, np.cos(elevation))
    q = pat.exponent
    active = c > pat.floor
    cc = np.where(active, c, pat.floor)
    g = cc ** q
    dg = np.where(active, q * cc ** (q - 1.0), 0.0)
    return g, dg * dc_daz, dg * dc_del


def steering_vector(array: ArrayGeometry, azimuth: float, elevation: float,
                    frequency: float) -> np.ndarray:
    """Complex array response toward (azimuth, elevation), length n_ports."""
    if frequency <= 0:
        raise ValueError("frequency must be positive")
    if not (np.isfinite(azimuth) and np.isfinite(elevation)):
        raise ValueError("angles must be finite")
    g, _, _ = element_gains(array, azimuth, elevation)
    if not np.any(g > 0):
        raise DegenerateDirectionError("all element gains are zero toward this direction")
    k = angles_to_direction(azimuth, elevation)
    wavenumber = 2.0 * np.pi * frequency / SPEED_OF_LIGHT
    phase = wavenumber * (array.element_positions @ k)
    a = g * np.exp(1j * phase)
    return np.tile(a, array.polarization_count)


def steering_jacobian(array: ArrayGeometry, azimuth: float, elevation: float,
                      frequency: float):
    """Analytic (d a/d azimuth, d a/d elevation) of :func:`steering_vector`."""
    g, dg_daz, dg_del = element_gains(array, azimuth, elevation)
    if not np.any(g > 0):
        raise DegenerateDirectionError("all element gains are zero toward this direction")
    k = angles_to_direction(azimuth, elevation)
    dk_daz = np.array([-np.sin(elevation) * np.sin(azimuth),
                       np.sin(elevation) * np.cos(azimuth), 0.0])
    dk_del = np.array([np.cos(elevation) * np.cos(azimuth),
                       np.cos(elevation) * np.sin(azimuth), -np.sin(elevation)])
    wavenumber = 2.0 * np.pi * frequency / SPEED_OF_LIGHT
    phase = wavenumber * (array.element_positions @ k)
    e = np.exp(1j * phase)
    dphase_daz = wavenumber * (array.element_positions @ dk_daz)
    dphase_del = wavenumber * (array.element_positions @ dk_del)
    da_daz = (dg_daz + 1j * g * dphase_daz) * e
    da_del = (dg_del + 1j * g * dphase_del) * e
    p = array.polarization_count
    return np.tile(da_daz, p), np.tile(da_del, p)


def polarization_mixing(cross_polar_db: float = -20.0) -> np.ndarray:
    """2x2 co/cross polarization amplitude coupling between port blocks."""
    eps = 10.0 ** (cross_polar_db / 20.0)
    return np.array([[1.0, eps], [eps, 1.0]])
