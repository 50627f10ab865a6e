"""Shared fixtures: the three standard operator instances and their kernels."""

import numpy as np
import pytest

from kolmolab.kernel import kernel_context
from kolmolab.lie_group import BlockSpec, validate_structure


@pytest.fixture(scope="session")
def kinetic():
    """One diffusive direction feeding one transported direction (N=2, Q=4)."""
    return validate_structure(BlockSpec(m0=1, blocks=(np.array([[1.0]]),)))


@pytest.fixture(scope="session")
def chain3():
    """Diffusive direction feeding a two-link transport chain (N=3, Q=9)."""
    return validate_structure(
        BlockSpec(m0=1, blocks=(np.array([[1.0]]), np.array([[1.0]])))
    )


@pytest.fixture(scope="session")
def parabolic2():
    """No transport blocks at all: plain heat structure in two variables."""
    return validate_structure(BlockSpec(m0=2, blocks=()))


@pytest.fixture(scope="session")
def kinetic_ctx(kinetic):
    return kernel_context(kinetic)


@pytest.fixture(scope="session")
def chain3_ctx(chain3):
    return kernel_context(chain3)


@pytest.fixture(scope="session")
def parabolic2_ctx(parabolic2):
    return kernel_context(parabolic2)
