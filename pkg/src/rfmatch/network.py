"""Two-port network algebra: ABCD matrices, S-parameters, reflection coefficients.

All operations are pure functions on immutable values and accept either
complex scalars or broadcastable numpy arrays of complex128, so the same
code path serves single evaluations and vectorized sweeps.  The reference
impedance is a single real value shared by both ports (50 ohms unless
overridden).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import SingularNetworkError, UnrecoverableLoadError

DEFAULT_Z0 = 50.0


def _finite(x) -> bool:
    return bool(np.all(np.isfinite(x)))


@dataclass(frozen=True)
class AbcdMatrix:
    """Transmission matrix [[a, b], [c, d]]; b in ohms, c in siemens."""

    a: complex
    b: complex
    c: complex
    d: complex

    def __matmul__(self, other: "AbcdMatrix") -> "AbcdMatrix":
        return AbcdMatrix(
            a=self.a * other.a + self.b * other.c,
            b=self.a * other.b + self.b * other.d,
            c=self.c * other.a + self.d * other.c,
            d=self.c * other.b + self.d * other.d,
        )

    def det(self):
        return self.a * self.d - self.b * self.c

    @staticmethod
    def identity() -> "AbcdMatrix":
        return AbcdMatrix(1.0 + 0.0j, 0.0 + 0.0j, 0.0 + 0.0j, 1.0 + 0.0j)


@dataclass(frozen=True)
class SParameters:
    """2x2 scattering matrix at a single operating state."""

    s11: complex
    s12: complex
    s21: complex
    s22: complex
    z0: float = DEFAULT_Z0

    def as_real_vector(self) -> np.ndarray:
        """Pack into (re,im) pairs ordered s11, s12, s21, s22."""
        return np.array(
            [
                np.real(self.s11), np.imag(self.s11),
                np.real(self.s12), np.imag(self.s12),
                np.real(self.s21), np.imag(self.s21),
                np.real(self.s22), np.imag(self.s22),
            ],
            dtype=float,
        )

    @staticmethod
    def from_real_vector(y: np.ndarray, z0: float = DEFAULT_Z0) -> "SParameters":
        y = np.asarray(y, dtype=float)
        if y.shape != (8,):
            raise ValueError(f"expected 8 reals, got shape {y.shape}")
        return SParameters(
            s11=complex(y[0], y[1]),
            s12=complex(y[2], y[3]),
            s21=complex(y[4], y[5]),
            s22=complex(y[6], y[7]),
            z0=z0,
        )


def series_arm_abcd(z) -> AbcdMatrix:
    """ABCD factor of a series arm with impedance z: [[1, z], [0, 1]]."""
    if not _finite(z):
        raise ValueError(f"series arm impedance must be finite, got {z!r}")
    zero = np.zeros_like(np.asarray(z)) if np.ndim(z) else 0.0 + 0.0j
    one = zero + 1.0
    return AbcdMatrix(a=one, b=z + zero, c=zero, d=one)


def shunt_arm_abcd(y) -> AbcdMatrix:
    """ABCD factor of a shunt arm with admittance y: [[1, 0], [y, 1]]."""
    if not _finite(y):
        raise ValueError(f"shunt arm admittance must be finite, got {y!r}")
    zero = np.zeros_like(np.asarray(y)) if np.ndim(y) else 0.0 + 0.0j
    one = zero + 1.0
    return AbcdMatrix(a=one, b=zero, c=y + zero, d=one)


def cascade(factors: Iterable[AbcdMatrix]) -> AbcdMatrix:
    """Left-to-right product of ABCD factors; the empty cascade is the identity."""
    acc = AbcdMatrix.identity()
    for m in factors:
        acc = acc @ m
    return acc


def abcd_to_s(m: AbcdMatrix, z0: float = DEFAULT_Z0) -> SParameters:
    """Convert an ABCD matrix to S-parameters referenced to z0 on both ports.

    Raises SingularNetworkError when the conversion denominator vanishes
    (scalar inputs only; array inputs propagate inf/nan for the caller to mask).
    """
    if z0 <= 0:
        raise ValueError(f"reference impedance must be positive, got {z0}")
    a, b, c, d = m.a, m.b, m.c, m.d
    den = a + b / z0 + c * z0 + d
    if np.ndim(den) == 0 and den == 0:
        raise SingularNetworkError("ABCD to S conversion denominator is zero")
    return SParameters(
        s11=(a + b / z0 - c * z0 - d) / den,
        s12=2.0 * (a * d - b * c) / den,
        s21=2.0 / den,
        s22=(-a + b / z0 - c * z0 + d) / den,
        z0=z0,
    )


def impedance_to_reflection(z, r: float = DEFAULT_Z0):
    """Reflection coefficient (z - r) / (z + r) of impedance z against real reference r."""
    den = z + r
    if np.ndim(den) == 0 and den == 0:
        raise SingularNetworkError(f"impedance {z!r} equals -r; reflection undefined")
    return (z - r) / den


def reflection_to_impedance(g, r: float = DEFAULT_Z0):
    """Impedance r*(1 + g)/(1 - g); inverse of impedance_to_reflection."""
    den = 1.0 - g
    if np.ndim(den) == 0 and den == 0:
        raise SingularNetworkError("reflection coefficient 1 is an open circuit")
    return r * (1.0 + g) / den


def input_reflection(s: SParameters, gl):
    """Input reflection of a two-port terminated in load reflection gl.

    gamma_in = s12*s21*gl / (1 - gl*s22) + s11
    """
    den = 1.0 - gl * s.s22
    if np.ndim(den) == 0 and den == 0:
        raise SingularNetworkError("1 - gl*s22 is zero; input reflection undefined")
    return s.s12 * s.s21 * gl / den + s.s11


def load_reflection_from_input(s: SParameters, gin):
    """Recover the load reflection that produces input reflection gin.

    gamma_L = (gin - s11) / (s12*s21 + (gin - s11)*s22); inverse of input_reflection.
    """
    den = s.s12 * s.s21 + (gin - s.s11) * s.s22
    if np.ndim(den) == 0 and den == 0:
        raise UnrecoverableLoadError("degenerate S-parameters; load reflection unrecoverable")
    return (gin - s.s11) / den


def objective_psi(s: SParameters, gl) -> float:
    """Magnitude of the input reflection coefficient; the quantity all matchers minimize."""
    return np.abs(input_reflection(s, gl))


def write_touchstone(
    dest: str | TextIO,
    freqs_hz: Sequence[float],
    sweep: Sequence[SParameters],
    z0: float = DEFAULT_Z0,
) -> None:
    """Export an S-parameter sweep as Touchstone-style text (.s2p).

    Header `# GHZ S RI R <z0>`, one row per frequency:
    f_ghz s11re s11im s21re s21im s12re s12im s22re s22im.
    """
    if len(freqs_hz) != len(sweep):
        raise ValueError("frequency and S-parameter lists must have equal length")
    own = isinstance(dest, str)
    fh = open(dest, "w") if own else dest
    try:
        fh.write(f"# GHZ S RI R {z0:g}\n")
        for f, s in zip(freqs_hz, sweep):
            row = (
                f / 1e9,
                s.s11.real, s.s11.imag,
                s.s21.real, s.s21.imag,
                s.s12.real, s.s12.imag,
                s.s22.real, s.s22.imag,
            )
            fh.write(" ".join(f"{v:.12g}" for v in row) + "\n")
    finally:
        if own:
            fh.close()
