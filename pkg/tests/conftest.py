import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_quaternion(rng, scale=2.0):
    from quatgan.quaternion import Quaternion

    return Quaternion(*(scale * rng.standard_normal(4)))


def concise_product(q, p):
    """Independent oracle for the quaternion product: scalar part
    q0*p0 - q.p, vector part q0*p + p0*q + q x p."""
    from quatgan.quaternion import Quaternion

    qv = np.array([q.q1, q.q2, q.q3])
    pv = np.array([p.q1, p.q2, p.q3])
    scalar = q.q0 * p.q0 - qv @ pv
    vec = q.q0 * pv + p.q0 * qv + np.cross(qv, pv)
    return Quaternion(scalar, *vec)
