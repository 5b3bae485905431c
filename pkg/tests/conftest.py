import numpy as np
import pytest

from dimcam import autograd


@pytest.fixture
def f64():
    """Run a test with float64 tensor storage, restoring float32 after."""
    autograd.set_default_dtype(np.float64)
    yield
    autograd.set_default_dtype(np.float32)
