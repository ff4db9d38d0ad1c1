"""Exact integer algebra of 2x2x2 cubes and binary quadratic forms.

Everything in this module runs on Python integers (arbitrary precision),
so discriminants and composition congruences are computed without any
rounding. It serves as the ground-truth oracle for the real-valued
regularizer in :mod:`bcmem.quad_reg`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class FormError(ValueError):
    """Raised when a form violates a precondition (definiteness, primitivity, ...)."""


@dataclass(frozen=True)
class BinaryQuadraticForm:
    """The form a*x^2 + b*x*y + c*y^2 with integer coefficients."""

    a: int
    b: int
    c: int

    def __post_init__(self):
        for v in (self.a, self.b, self.c):
            if not isinstance(v, int):
                raise FormError(f"coefficients must be int, got {type(v).__name__}")

    def discriminant(self) -> int:
        return self.b * self.b - 4 * self.a * self.c

    def is_primitive(self) -> bool:
        return math.gcd(self.a, self.b, self.c) == 1

    def is_positive_definite(self) -> bool:
        return self.a > 0 and self.discriminant() < 0

    def inverse(self) -> "BinaryQuadraticForm":
        """Class-group inverse (the opposite form)."""
        return BinaryQuadraticForm(self.a, -self.b, self.c)

    def __call__(self, x: int, y: int) -> int:
        return self.a * x * x + self.b * x * y + self.c * y * y


@dataclass(frozen=True)
class Cube:
    """2x2x2 integer array; ``entries[4*i + 2*j + k]`` holds c_ijk.

    The flat order (c000, c001, c010, c011, c100, c101, c110, c111)
    matches the vertex labels a..h of the usual cube picture.
    """

    entries: tuple[int, int, int, int, int, int, int, int]

    def __post_init__(self):
        if len(self.entries) != 8:
            raise ValueError(f"cube needs exactly 8 entries, got {len(self.entries)}")
        for v in self.entries:
            if not isinstance(v, int):
                raise ValueError(f"cube entries must be int, got {type(v).__name__}")

    def __getitem__(self, ijk: tuple[int, int, int]) -> int:
        i, j, k = ijk
        return self.entries[4 * i + 2 * j + k]


def _det2(m00: int, m01: int, m10: int, m11: int) -> int:
    return m00 * m11 - m01 * m10


def slice_forms(cube: Cube) -> tuple[BinaryQuadraticForm, BinaryQuadraticForm, BinaryQuadraticForm]:
    """The three quadratic forms cut out by the cube's opposite-face pairs.

    Slicing direction i pairs the faces (M_i, N_i); the form is
    Q_i(x, y) = -det(M_i x + N_i y). Under this sign convention the three
    forms share one discriminant for every integer cube.
    """
    c000, c001, c010, c011, c100, c101, c110, c111 = cube.entries
    slices = (
        ((c000, c001, c010, c011), (c100, c101, c110, c111)),
        ((c000, c010, c100, c110), (c001, c011, c101, c111)),
        ((c000, c100, c001, c101), (c010, c110, c011, c111)),
    )
    forms = []
    for m, n in slices:
        a = -_det2(*m)
        c = -_det2(*n)
        det_sum = _det2(m[0] + n[0], m[1] + n[1], m[2] + n[2], m[3] + n[3])
        b = -(det_sum - _det2(*m) - _det2(*n))
        forms.append(BinaryQuadraticForm(a, b, c))
    return forms[0], forms[1], forms[2]


def discriminant(f: BinaryQuadraticForm) -> int:
    return f.discriminant()


def _require_reducible(f: BinaryQuadraticForm) -> None:
    if not f.is_positive_definite():
        raise FormError(f"form {f} is not positive definite")
    if not f.is_primitive():
        raise FormError(f"form {f} is not primitive")


def _normalize(a: int, b: int, c: int) -> tuple[int, int, int]:
    # shift b into (-a, a]
    r = (a - b) // (2 * a)
    return a, b + 2 * r * a, a * r * r + b * r + c


def reduce(f: BinaryQuadraticForm) -> BinaryQuadraticForm:
    """Canonical reduced representative of a primitive positive-definite form.

    The result satisfies |b| <= a <= c with b >= 0 at either tie, is unique
    within the equivalence class, and has the same discriminant.
    """
    _require_reducible(f)
    a, b, c = _normalize(f.a, f.b, f.c)
    while a > c or (a == c and b < 0):
        a, b, c = _normalize(c, -b, a)
    return BinaryQuadraticForm(a, b, c)


def _egcd(a: int, b: int) -> tuple[int, int, int]:
    """(g, u, v) with u*a + v*b = g = gcd(a, b)."""
    old_r, r = a, b
    old_s, s = 1, 0
    old_t, t = 0, 1
    while r:
        q = old_r // r
        old_r, r = r, old_r - q * r
        old_s, s = s, old_s - q * s
        old_t, t = t, old_t - q * t
    if old_r < 0:
        old_r, old_s, old_t = -old_r, -old_s, -old_t
    return old_r, old_s, old_t


def _solve_linmod(a: int, b: int, m: int) -> tuple[int, int]:
    """Solutions of a*x = b (mod m) as x0 + n*period; m > 0, must be solvable."""
    g, u, _ = _egcd(a % m, m)
    if b % g:
        raise ArithmeticError(f"{a}*x = {b} (mod {m}) has no solution")
    period = m // g
    return (b // g) * u % period, period


def compose_forms(f: BinaryQuadraticForm, g: BinaryQuadraticForm) -> BinaryQuadraticForm:
    """Gauss composition of two primitive positive-definite forms, reduced.

    Dirichlet's construction. With s = (b_f + b_g)/2, h = (b_g - b_f)/2,
    e = gcd(a_f, a_g, s) and u = s/e, the composite has leading coefficient
    A = (a_f/e)(a_g/e), and its remaining coefficients come from the
    solution class k of the resolvent congruences

        (a_g/e) * u * k = h*u + (a_f/e)*c_f   (mod (a_f/e)(a_g/e))
        (a_g/e) * k     = h                   (mod a_f/e)

    via B = s - (a_g/e)k - (a_f/e)l with l = ((a_g/e)k - h)/(a_f/e). The
    divisions below are exact by the congruences; the result is reduced
    before returning.
    """
    _require_reducible(f)
    _require_reducible(g)
    d_f, d_g = f.discriminant(), g.discriminant()
    if d_f != d_g:
        raise FormError(f"discriminants differ: {d_f} != {d_g}")

    s_half = (f.b + g.b) // 2
    h_half = (g.b - f.b) // 2
    e = math.gcd(f.a, g.a, s_half)
    af = f.a // e
    ag = g.a // e
    u = s_half // e

    mu, period = _solve_linmod(ag * u, h_half * u + af * f.c, af * ag)
    lam, _ = _solve_linmod(ag * period, h_half - ag * mu, af)
    k = mu + period * lam
    ell = (k * ag - h_half) // af
    m = (ag * u * k - h_half * u - f.c * af) // (af * ag)

    big_a = af * ag
    big_b = s_half - (k * ag + ell * af)
    big_c = k * ell - e * m
    return reduce(BinaryQuadraticForm(big_a, big_b, big_c))


def principal_form(disc: int) -> BinaryQuadraticForm:
    """Identity class of discriminant ``disc`` (< 0, = 0 or 1 mod 4)."""
    if disc >= 0 or disc % 4 not in (0, 1):
        raise FormError(f"{disc} is not a negative quadratic-form discriminant")
    k = disc % 2
    return BinaryQuadraticForm(1, k, (k * k - disc) // 4)


def reduced_forms(disc: int) -> list[BinaryQuadraticForm]:
    """All primitive reduced forms of negative discriminant, sorted.

    Enumerates |b| <= a <= sqrt(|disc|/3) directly; the length of the
    returned list is the class number h(disc).
    """
    if disc >= 0 or disc % 4 not in (0, 1):
        raise FormError(f"{disc} is not a negative quadratic-form discriminant")
    out = []
    for a in range(1, math.isqrt(abs(disc) // 3) + 1):
        for b in range(-a, a + 1):
            num = b * b - disc
            if num % (4 * a):
                continue
            c = num // (4 * a)
            if c < a:
                continue
            if b < 0 and (b == -a or a == c):
                continue
            if math.gcd(a, b, c) == 1:
                out.append(BinaryQuadraticForm(a, b, c))
    return sorted(out, key=lambda q: (q.a, q.b, q.c))


def check_eq1_relation(
    f: BinaryQuadraticForm, g: BinaryQuadraticForm, h: BinaryQuadraticForm
) -> tuple[int, int]:
    """Both sides of the cube discriminant relation, evaluated exactly.

    Returns (disc(f o g), disc(f) * disc(g) * disc(h)^2). Classical Gauss
    composition preserves the discriminant, so for equal-discriminant
    triples the left side equals the common discriminant while the right
    side is its fourth power; this function reports both numbers instead
    of asserting a relation between them.
    """
    lhs = compose_forms(f, g).discriminant()
    rhs = f.discriminant() * g.discriminant() * h.discriminant() ** 2
    return lhs, rhs
