import pytest

from qcsurf import make_example


@pytest.fixture(scope="session")
def euclid():
    return make_example("euclidean")


@pytest.fixture(scope="session")
def expw():
    return make_example("exp-weight")


@pytest.fixture(scope="session")
def grushin():
    return make_example("grushin-glued", beta=0.25)


@pytest.fixture(scope="session")
def cones():
    return make_example("spikes-cones")


@pytest.fixture(scope="session")
def cylinders():
    return make_example("spikes-cylinders")
