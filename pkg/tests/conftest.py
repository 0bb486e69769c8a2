import numpy as np
import pytest

from critsense.hilbert import SpaceDescriptor
from critsense.models import build_lmg, build_opo, build_qrm_effective


@pytest.fixture
def boson_space():
    return SpaceDescriptor.boson(24)


@pytest.fixture
def composite_space():
    return SpaceDescriptor.composite(6)


@pytest.fixture
def effective_model():
    return build_qrm_effective(1.0, 0.8, 96)


@pytest.fixture(
    params=[
        ("qrm_effective", lambda c: build_qrm_effective(1.0, 0.6, c)),
        ("opo", lambda c: build_opo(1.0, 0.2, c)),
        ("lmg", lambda c: build_lmg(0.0, 1.4, c)),
    ],
    ids=lambda p: p[0],
)
def quadratic_model(request):
    return request.param[1](96)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
