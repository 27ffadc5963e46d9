"""Gamma function via the Lanczos approximation (g = 7, nine coefficients)."""

from __future__ import annotations

import math

_LANCZOS_G = 7.0
_LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)


def _lanczos(z: float) -> float:
    # valid for z >= 0.5; returns Gamma(z)
    z -= 1.0
    acc = _LANCZOS_COEF[0]
    for k in range(1, len(_LANCZOS_COEF)):
        acc += _LANCZOS_COEF[k] / (z + k)
    t = z + _LANCZOS_G + 0.5
    # split the power to keep t**(z+0.5) finite up to z ~ 170
    half = t ** (0.5 * (z + 0.5))
    return math.sqrt(2.0 * math.pi) * half * math.exp(-t) * half * acc


def gamma(z: float) -> float:
    """Return Gamma(z) for real ``z > 0``.

    Positive integers up to 171 are returned as exact factorials; other
    arguments go through the Lanczos series, with the reflection formula
    for ``z < 0.5``.

    Raises
    ------
    ValueError
        If ``z`` is not a finite positive number.
    """
    z = float(z)
    if not math.isfinite(z) or z <= 0.0:
        raise ValueError(f"gamma is only defined here for z > 0, got {z!r}")
    if z == int(z) and z <= 171:
        return float(math.factorial(int(z) - 1))
    if z < 0.5:
        return math.pi / (math.sin(math.pi * z) * _lanczos(1.0 - z))
    return _lanczos(z)
