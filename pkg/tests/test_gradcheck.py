"""Wiring test for the finite-difference audit surfaces."""

import pytest

from roft.gradcheck import CHECKS, run_all


def test_every_surface_below_tolerance():
    results = run_all(configs_per_check=3)
    assert set(results) == set(CHECKS)
    for name, err in results.items():
        assert 0.0 <= err < 1e-4, f"{name}: {err}"
