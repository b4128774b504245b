from collections.abc import Callable
from pathlib import Path
import logging
import textwrap

import pytest


# Suppress the ConjunctiveGraph deprecation warning from rocrate_validator
class ConjunctiveGraphFilter(logging.Filter):
    def filter(self, record):
        message = record.getMessage()
        return not (
            "ConjunctiveGraph is deprecated" in message
            or "Consider reporting this as a bug" in message
        )


@pytest.fixture(scope="session", autouse=True)
def suppress_rocrate_warnings():
    logger = logging.getLogger("rocrate_validator.models")
    logger.addFilter(ConjunctiveGraphFilter())


@pytest.fixture
def write_config(tmp_path: Path) -> Callable[..., Path]:
    """Write an INI run configuration into tmp_path and return its path."""

    def write(body: str, name: str = "run.ini") -> Path:
        path = tmp_path / name
        path.write_text(textwrap.dedent(body).lstrip(), encoding="utf-8")
        return path

    return write


@pytest.fixture
def simulate_config(write_config: Callable[..., Path]) -> Path:
    """Noiseless anticrossing simulation writing into out/ next to the config."""
    return write_config(SIMULATE_INI, "simulate.ini")


SIMULATE_INI = """
    [run]
    command = simulate
    dataset_license = CC-BY-4.0

    [parameters]
    omega_c = 9800
    kappa_c = 0.5
    gamma_s = 0.5
    g_c = 5.9
    resonance_field = 3470.9

    [grid]
    field_min = 3466.9
    field_max = 3474.9
    field_points = 21
    frequency_min = 9785
    frequency_max = 9815
    frequency_points = 601

    [io]
    output_dir = out
    plot = no
"""
