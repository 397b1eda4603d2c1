import math

import numpy as np
import pytest

from quatgan.errors import DomainError
from quatgan.quaternion import (
    DEFAULT_AXIS,
    I,
    J,
    K,
    ONE,
    Quaternion,
    conjugate,
    hamilton_product,
    inverse,
    involution,
    norm,
    polar_form,
    pure_product,
)

from conftest import concise_product, random_quaternion


def assert_close(a: Quaternion, b: Quaternion, tol=1e-12):
    for x, y in zip(a, b):
        assert abs(x - y) <= tol * max(1.0, abs(x), abs(y)), (a, b)


class TestHamiltonProduct:
    def test_unit_relations(self):
        # i^2 = j^2 = k^2 = -1, exactly
        minus_one = Quaternion(-1, 0, 0, 0)
        for u in (I, J, K):
            assert hamilton_product(u, u) == minus_one
        # ij = k, jk = i, ki = j
        assert hamilton_product(I, J) == K
        assert hamilton_product(J, K) == I
        assert hamilton_product(K, I) == J

    def test_anticommutation(self):
        for a, b in ((I, J), (J, K), (K, I)):
            ab = hamilton_product(a, b)
            ba = hamilton_product(b, a)
            assert ab == Quaternion(-ba.q0, -ba.q1, -ba.q2, -ba.q3)

    def test_identity_element(self, rng):
        for _ in range(20):
            q = random_quaternion(rng)
            assert hamilton_product(q, ONE) == q
            assert hamilton_product(ONE, q) == q

    def test_expanded_example(self):
        # (1,2,3,4)(5,6,7,8): expanded by hand from the component formula
        got = hamilton_product(Quaternion(1, 2, 3, 4), Quaternion(5, 6, 7, 8))
        assert got == Quaternion(-60, 12, 30, 24)
        # cross-check against the concise scalar/vector form
        assert_close(got, concise_product(Quaternion(1, 2, 3, 4), Quaternion(5, 6, 7, 8)))

    def test_concise_form_randomized(self, rng):
        for _ in range(1000):
            q, p = random_quaternion(rng), random_quaternion(rng)
            assert_close(hamilton_product(q, p), concise_product(q, p))

    def test_associativity(self, rng):
        for _ in range(1000):
            q, p, r = (random_quaternion(rng) for _ in range(3))
            left = hamilton_product(hamilton_product(q, p), r)
            right = hamilton_product(q, hamilton_product(p, r))
            assert_close(left, right)

    def test_noncommutative_in_general(self, rng):
        q, p = Quaternion(1, 2, 3, 4), Quaternion(5, 6, 7, 8)
        assert hamilton_product(q, p) != hamilton_product(p, q)


class TestConjugateNorm:
    def test_conjugate_basic(self):
        assert conjugate(Quaternion(1, 1, 0, 0)) == Quaternion(1, -1, 0, 0)
        pure = Quaternion(0, 2.0, -3.0, 4.0)
        assert conjugate(pure) == Quaternion(0, -2.0, 3.0, -4.0)

    def test_conjugate_involutive(self, rng):
        for _ in range(20):
            q = random_quaternion(rng)
            assert conjugate(conjugate(q)) == q

    def test_q_times_conjugate_is_norm_squared(self):
        got = hamilton_product(Quaternion(1, 2, 3, 4), conjugate(Quaternion(1, 2, 3, 4)))
        assert_close(got, Quaternion(30, 0, 0, 0))

    def test_norm_values(self):
        assert norm(Quaternion(1, 1, 1, 1)) == 2.0
        assert norm(Quaternion(0, 0, 0, 0)) == 0.0

    def test_norm_multiplicative(self, rng):
        q, p = Quaternion(1, 2, 3, 4), Quaternion(5, 6, 7, 8)
        assert math.isclose(norm(hamilton_product(q, p)), math.sqrt(5220), rel_tol=1e-12)
        assert math.isclose(math.sqrt(5220), math.sqrt(30) * math.sqrt(174), rel_tol=1e-12)
        for _ in range(1000):
            q, p = random_quaternion(rng), random_quaternion(rng)
            assert math.isclose(
                norm(hamilton_product(q, p)), norm(q) * norm(p), rel_tol=1e-12
            )

    def test_norm_squared_is_scalar_part_of_qq_conj(self, rng):
        for _ in range(1000):
            q = random_quaternion(rng)
            prod = hamilton_product(q, conjugate(q))
            assert math.isclose(prod.q0, norm(q) ** 2, rel_tol=1e-12)
            assert max(abs(prod.q1), abs(prod.q2), abs(prod.q3)) < 1e-12 * max(1.0, prod.q0)


class TestInverse:
    def test_unit_quaternion_inverse_is_conjugate(self, rng):
        for _ in range(20):
            q = random_quaternion(rng)
            n = norm(q)
            u = Quaternion(*(c / n for c in q))
            assert_close(inverse(u), conjugate(u), tol=1e-12)

    def test_real_scalar(self):
        assert inverse(Quaternion(2, 0, 0, 0)) == Quaternion(0.5, 0, 0, 0)

    def test_round_trip(self, rng):
        for _ in range(50):
            q = random_quaternion(rng)
            got = hamilton_product(q, inverse(q))
            assert_close(got, ONE, tol=1e-10)

    def test_zero_not_invertible(self):
        with pytest.raises(DomainError):
            inverse(Quaternion(0, 0, 0, 0))


class TestPolarForm:
    def test_identity(self):
        mag, theta, axis = polar_form(ONE)
        assert mag == 1.0 and theta == 0.0 and axis == DEFAULT_AXIS

    def test_pure_i(self):
        mag, theta, axis = polar_form(Quaternion(0, 1, 0, 0))
        assert mag == 1.0
        assert math.isclose(theta, math.pi / 2, rel_tol=1e-15)
        assert axis == I

    def test_pure_quaternions_have_theta_half_pi(self, rng):
        for _ in range(20):
            v = rng.standard_normal(3)
            q = Quaternion(0.0, *v)
            if norm(q) == 0:
                continue
            _, theta, _ = polar_form(q)
            assert math.isclose(theta, math.pi / 2, rel_tol=1e-15)

    def test_round_trip(self, rng):
        for _ in range(1000):
            q = random_quaternion(rng)
            if norm(q) == 0:
                continue
            mag, theta, axis = polar_form(q)
            rebuilt = Quaternion(
                mag * math.cos(theta),
                mag * math.sin(theta) * axis.q1,
                mag * math.sin(theta) * axis.q2,
                mag * math.sin(theta) * axis.q3,
            )
            assert_close(rebuilt, q, tol=1e-10)

    def test_negative_real(self):
        mag, theta, axis = polar_form(Quaternion(-3, 0, 0, 0))
        assert mag == 3.0 and math.isclose(theta, math.pi) and axis == DEFAULT_AXIS

    def test_zero_rejected(self):
        with pytest.raises(DomainError):
            polar_form(Quaternion(0, 0, 0, 0))


class TestInvolution:
    def test_perpendicular_involutions_match_componentwise_form(self, rng):
        # axis i flips (q2, q3); axis j flips (q1, q3); axis k flips (q1, q2)
        flips = {I: (1, 1, -1, -1), J: (1, -1, 1, -1), K: (1, -1, -1, 1)}
        for _ in range(50):
            q = random_quaternion(rng)
            for axis, signs in flips.items():
                got = involution(q, axis)
                want = Quaternion(*(s * c for s, c in zip(signs, q)))
                assert_close(got, want, tol=1e-12)

    def test_example(self):
        assert_close(involution(Quaternion(1, 2, 3, 4), J), Quaternion(1, -2, 3, -4))

    def test_self_inverse(self, rng):
        for _ in range(50):
            q = random_quaternion(rng)
            v = rng.standard_normal(3)
            v /= np.linalg.norm(v)
            axis = Quaternion(0.0, *v)
            assert_close(involution(involution(q, axis), axis), q, tol=1e-12)

    def test_axis_validation(self):
        with pytest.raises(DomainError):
            involution(ONE, Quaternion(0.5, 1, 0, 0))
        with pytest.raises(DomainError):
            involution(ONE, Quaternion(0, 2, 0, 0))


class TestPureProduct:
    def test_i_squared(self):
        assert pure_product(I, I) == Quaternion(-1, 0, 0, 0)

    def test_orthogonal_units(self):
        assert pure_product(I, J) == K

    def test_matches_general_product(self, rng):
        for _ in range(1000):
            a = Quaternion(0.0, *rng.standard_normal(3))
            b = Quaternion(0.0, *rng.standard_normal(3))
            assert_close(pure_product(a, b), hamilton_product(a, b), tol=1e-12)

    def test_rejects_non_pure(self):
        with pytest.raises(DomainError):
            pure_product(ONE, I)
