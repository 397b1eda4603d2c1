"""Scalar quaternion algebra.

A quaternion ``q = q0 + q1 i + q2 j + q3 k`` is stored as four floats.
All operations are pure functions; ``Quaternion`` values are immutable.
"""

from __future__ import annotations

import math
from typing import NamedTuple

from .errors import DomainError

__all__ = [
    "Quaternion",
    "hamilton_product",
    "conjugate",
    "norm",
    "inverse",
    "polar_form",
    "involution",
    "pure_product",
    "I",
    "J",
    "K",
    "ONE",
    "DEFAULT_AXIS",
]


class Quaternion(NamedTuple):
    """Immutable quaternion with scalar part ``q0`` and vector part ``(q1, q2, q3)``."""

    q0: float
    q1: float
    q2: float
    q3: float

    def __repr__(self):
        return f"Quaternion({self.q0:g}, {self.q1:g}, {self.q2:g}, {self.q3:g})"

    @property
    def vector(self) -> tuple[float, float, float]:
        return (self.q1, self.q2, self.q3)

    def is_pure(self) -> bool:
        return self.q0 == 0.0

    def scale(self, s: float) -> "Quaternion":
        return Quaternion(s * self.q0, s * self.q1, s * self.q2, s * self.q3)

    def add(self, other: "Quaternion") -> "Quaternion":
        return Quaternion(
            self.q0 + other.q0,
            self.q1 + other.q1,
            self.q2 + other.q2,
            self.q3 + other.q3,
        )


ONE = Quaternion(1.0, 0.0, 0.0, 0.0)
I = Quaternion(0.0, 1.0, 0.0, 0.0)
J = Quaternion(0.0, 0.0, 1.0, 0.0)
K = Quaternion(0.0, 0.0, 0.0, 1.0)

# Axis reported for the polar form of a pure-real quaternion, whose vector
# part is zero; reconstruction is exact regardless since sin(theta) = 0.
DEFAULT_AXIS = I


def hamilton_product(q: Quaternion, p: Quaternion) -> Quaternion:
    """Quaternion product q*p (non-commutative)."""
    return Quaternion(
        q.q0 * p.q0 - q.q1 * p.q1 - q.q2 * p.q2 - q.q3 * p.q3,
        q.q0 * p.q1 + q.q1 * p.q0 + q.q2 * p.q3 - q.q3 * p.q2,
        q.q0 * p.q2 - q.q1 * p.q3 + q.q2 * p.q0 + q.q3 * p.q1,
        q.q0 * p.q3 + q.q1 * p.q2 - q.q2 * p.q1 + q.q3 * p.q0,
    )


def conjugate(q: Quaternion) -> Quaternion:
    """Flip the sign of the vector part."""
    return Quaternion(q.q0, -q.q1, -q.q2, -q.q3)


def norm(q: Quaternion) -> float:
    """Euclidean norm in R^4; multiplicative under the Hamilton product."""
    return math.sqrt(q.q0 * q.q0 + q.q1 * q.q1 + q.q2 * q.q2 + q.q3 * q.q3)


def inverse(q: Quaternion) -> Quaternion:
    """Multiplicative inverse conj(q)/|q|^2; the zero quaternion is non-invertible."""
    n2 = q.q0 * q.q0 + q.q1 * q.q1 + q.q2 * q.q2 + q.q3 * q.q3
    if n2 == 0.0:
        raise DomainError("zero quaternion is non-invertible")
    return conjugate(q).scale(1.0 / n2)


def polar_form(q: Quaternion) -> tuple[float, float, Quaternion]:
    """Decompose q as |q| (cos(theta) + v sin(theta)).

    Returns ``(magnitude, theta, axis)`` with ``theta`` in [0, pi] and ``axis``
    a pure unit quaternion. For a pure-real quaternion the axis is undefined
    and :data:`DEFAULT_AXIS` is returned (theta is then 0 or pi).
    """
    mag = norm(q)
    if mag == 0.0:
        raise DomainError("polar form of the zero quaternion is undefined")
    vec_norm = math.sqrt(q.q1 * q.q1 + q.q2 * q.q2 + q.q3 * q.q3)
    theta = math.atan2(vec_norm, q.q0)
    if vec_norm == 0.0:
        return mag, theta, DEFAULT_AXIS
    axis = Quaternion(0.0, q.q1 / vec_norm, q.q2 / vec_norm, q.q3 / vec_norm)
    return mag, theta, axis


def involution(q: Quaternion, axis: Quaternion, tol: float = 1e-10) -> Quaternion:
    """Self-inverse map -v q v about a pure unit axis v.

    With axis i, j or k this reproduces the three perpendicular involutions
    (two vector components flipped, e.g. axis i maps (a,b,c,d) to (a,b,-c,-d)).
    """
    if abs(axis.q0) > tol:
        raise DomainError(f"involution axis must be pure, got scalar part {axis.q0!r}")
    if abs(norm(axis) - 1.0) > tol:
        raise DomainError(f"involution axis must be a unit quaternion, got norm {norm(axis)!r}")
    return hamilton_product(hamilton_product(axis, q), axis).scale(-1.0)


def pure_product(a: Quaternion, b: Quaternion) -> Quaternion:
    """Product of two pure quaternions: -(a . b) + a x b."""
    if a.q0 != 0.0 or b.q0 != 0.0:
        raise DomainError(
            f"pure_product requires zero scalar parts, got {a.q0!r} and {b.q0!r}"
        )
    dot = a.q1 * b.q1 + a.q2 * b.q2 + a.q3 * b.q3
    return Quaternion(
        -dot,
        a.q2 * b.q3 - a.q3 * b.q2,
        a.q3 * b.q1 - a.q1 * b.q3,
        a.q1 * b.q2 - a.q2 * b.q1,
    )
