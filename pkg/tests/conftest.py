import numpy as np
import pytest

from clinewave.model import ConstantKernel, ModelParams, TabulatedGrowth, quadratic_model


def constant_model(r0: float, B: float = 0.0, k0: float = 1.0, half: float = 10.0) -> ModelParams:
    """r = r0 on [-half, half]; outside the confinement class, used for closed-form checks."""
    z = np.linspace(-half, half, 9)
    return ModelParams(TabulatedGrowth(tuple(z), tuple([r0] * 9), 0.5), ConstantKernel(k0), B)


@pytest.fixture
def benchmark():
    return quadratic_model(0.25, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
