"""Shared pytest fixtures."""

import numpy as np
import pytest

from src.config import FIXTURES_DIR
from src.geometry import PixelSet
from src.io_formats import load_schema
from src.observer import read_window_bundle
from src.specfun import RadiusLaw

EXAMPLE_PATH = FIXTURES_DIR / "example_3x3.json"


@pytest.fixture
def law():
    return RadiusLaw(1.0, 2.0)


@pytest.fixture
def grid3():
    return PixelSet.grid(3, 3)


@pytest.fixture
def example_path():
    return EXAMPLE_PATH


@pytest.fixture
def example():
    """The 3x3 worked example: values, law, Gaussian model and generating partition."""
    return read_window_bundle(EXAMPLE_PATH)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def validate():
    """validate(instance, schema_name) against data/schemas."""
    jsonschema = pytest.importorskip("jsonschema")

    def _validate(instance, name):
        jsonschema.validate(instance, load_schema(name))

    return _validate
