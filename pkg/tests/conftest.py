import numpy as np
import pytest

from rangeloc.geometry import Point3, RigidTransform, Rotation


def random_rotation(rng: np.random.Generator) -> Rotation:
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return Rotation(
        np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )
    )


def random_transform(rng: np.random.Generator, t_scale: float = 10.0) -> RigidTransform:
    return RigidTransform(
        random_rotation(rng),
        Point3.from_array(t_scale * rng.standard_normal(3)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
