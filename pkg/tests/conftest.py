import pytest

from anyprop.kernels import warm_up


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # compile (or load the disk cache of) every numba kernel up front so
    # timed tests measure computation, not JIT
    warm_up()
