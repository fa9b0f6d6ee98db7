import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gkgnet.numerics import set_default_dtype


@pytest.fixture(autouse=True)
def _float64_default():
    """Numeric tests assume float64 unless they opt into f32 themselves."""
    set_default_dtype("f64")
    yield
    set_default_dtype("f64")
