"""Session fixtures: the expensive primary-scenario solves, computed once."""

from __future__ import annotations

import numpy as np
import pytest

from mazt import (
    TorusGrid,
    build_psi_family,
    calibrate_grid_slack,
    envelope_divisor,
    legendre_ray,
    make_background,
    make_divisor_from_points,
    make_volume,
    run_family,
    solve_beta_divisor,
    subgeodesic,
    sweep_beta,
)
from mazt.geodesic import with_subgeodesic
from mazt.hele_shaw import default_lambda_grid

from oracles import envelope_oracle_1d, oscillatory_profile

OSC_RECIPE = "1 + 2*cos(2*pi*x)"
POS_RECIPE = "1 + 0.5*cos(2*pi*x)"
FULL_BETAS = (8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0, 1024.0)


@pytest.fixture(scope="session")
def grid64() -> TorusGrid:
    return TorusGrid(64)


@pytest.fixture(scope="session")
def grid256() -> TorusGrid:
    return TorusGrid(256)


@pytest.fixture(scope="session")
def osc_theta64(grid64):
    return make_background(grid64, OSC_RECIPE)


@pytest.fixture(scope="session")
def g64(grid64):
    return make_volume(grid64, 1.0)


@pytest.fixture(scope="session")
def osc_theta256(grid256):
    return make_background(grid256, OSC_RECIPE)


@pytest.fixture(scope="session")
def g256(grid256):
    return make_volume(grid256, 1.0)


@pytest.fixture(scope="session")
def sweep256(osc_theta256, g256):
    """Full-range sweep of the oscillatory scenario at the stated resolution."""
    return sweep_beta(osc_theta256, g256, FULL_BETAS)


@pytest.fixture(scope="session")
def env256(sweep256):
    """The envelope of the oscillatory scenario (reused from the sweep)."""
    return sweep256.envelope


@pytest.fixture(scope="session")
def pos_sweep256(grid256, g256):
    """Sweep of the strictly positive background (no contact set)."""
    return sweep_beta(make_background(grid256, POS_RECIPE), g256, FULL_BETAS)


@pytest.fixture(scope="session")
def env_oracle8192():
    """Certified high-resolution 1-D reference for the oscillatory envelope."""
    u, kkt = envelope_oracle_1d(oscillatory_profile, n=8192)
    assert kkt <= 1e-8, f"oracle failed its own certification: kkt={kkt:.3e}"
    return u


@pytest.fixture(scope="session")
def slack_calibration():
    """Refinement study of the upper-bound violation for the oscillatory sweep."""
    return calibrate_grid_slack(OSC_RECIPE, 1.0, FULL_BETAS, ns=(64, 128, 256))


@pytest.fixture(scope="session")
def disc128():
    """Uniform background with a unit-mass point divisor at the center."""
    grid = TorusGrid(128)
    omega = make_background(grid, 1.0)
    divisor = make_divisor_from_points(grid, [(0.5, 0.5, 1.0)])
    g = make_volume(grid, 1.0)
    return omega, divisor, g


@pytest.fixture(scope="session")
def hs_family256():
    """Weighted-domain family of the disc scenario at the stated resolution.

    Eight weights keep the family within the per-suite time budget while
    still spanning the full range up to 90% of the positivity threshold.
    """
    grid = TorusGrid(256)
    omega = make_background(grid, 1.0)
    divisor = make_divisor_from_points(grid, [(0.5, 0.5, 1.0)])
    lambdas = default_lambda_grid(omega, divisor, count=8)
    return run_family(omega, divisor, lambdas)


@pytest.fixture(scope="session")
def geo_family128(disc128):
    """Assembled geodesic ray with three attached approximants."""
    omega, divisor, g = disc128
    family = build_psi_family(omega, divisor, 0.5)
    family = legendre_ray(family)
    for beta in (64.0, 128.0, 256.0):
        result = subgeodesic(omega, divisor, 0.5, beta, family.lambdas, family.ts, g)
        family = with_subgeodesic(family, result)
    return family


@pytest.fixture(scope="session")
def div_uniformity128(disc128):
    """Per-(beta, lambda) solver-vs-envelope errors for the disc scenario."""
    omega, divisor, g = disc128
    lambdas = (0.0, 0.1, 0.2, 0.3, 0.4)
    betas = (64.0, 128.0, 256.0, 512.0)
    errors = np.empty((len(betas), len(lambdas)))
    env_warm = None
    for j, lam in enumerate(lambdas):
        envelope = envelope_divisor(omega, divisor, lam, u0=env_warm)
        env_warm = envelope.u
        beta_warm = None
        for i, beta in enumerate(betas):
            solution = solve_beta_divisor(omega, divisor, lam, beta, g, u0=beta_warm)
            beta_warm = solution.u
            errors[i, j] = float(np.abs(solution.u - envelope.u).max())
    return betas, lambdas, errors
