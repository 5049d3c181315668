"""Variational layer: energy, free-energy pieces, and relative entropy.

The quadratic energy

    E(u) = integrate(u * f_theta) + (KAPPA/2) * integrate(u * laplacian(u))

has the curvature density as its derivative, so centered differences of E
reproduce the pairing with the density exactly up to round-off.  The
log-partition term ``L_beta`` is always evaluated in log-sum-exp form, and
the shift-invariant combination ``G_beta = E/V - L_beta`` is maximized by
the solutions of the exponential curvature equation.
"""

from __future__ import annotations

import dataclasses
from typing import Iterable, Sequence

import numpy as np

from .constants import KAPPA
from .errors import ValidationError
from .forms import BackgroundForm, VolumeDensity
from .grid import integrate, laplacian, validate_field

__all__ = [
    "EnergyReport",
    "ProbeResult",
    "StationarityReport",
    "energy",
    "l_beta",
    "g_beta",
    "g_beta_stationarity",
    "relative_entropy",
    "energy_report",
]


def energy(u: np.ndarray, theta: BackgroundForm) -> float:
    """Monge-Ampère energy of a potential, normalized so that E(0) = 0."""
    grid = theta.grid
    u = validate_field(grid, u, "u")
    return integrate(grid, u * theta.f_theta) + 0.5 * KAPPA * integrate(
        grid, u * laplacian(grid, u)
    )


def l_beta(u: np.ndarray, mu0: VolumeDensity, beta: float) -> float:
    """Log-partition term ``log(integrate(exp(beta*u) * g)) / beta``.

    Evaluated in log-sum-exp form so arbitrarily large ``beta`` cannot
    overflow; increases monotonically to ``max(u)`` as ``beta`` grows.
    """
    if beta <= 0.0:
        raise ValidationError("beta must be positive")
    grid = mu0.grid
    u = validate_field(grid, u, "u")
    peak = float(u.max())
    return peak + np.log(integrate(grid, np.exp(beta * (u - peak)) * mu0.g)) / beta


def g_beta(u: np.ndarray, theta: BackgroundForm, mu0: VolumeDensity, beta: float) -> float:
    """Shift-invariant free energy ``E(u)/V - L_beta(u)``."""
    return energy(u, theta) / theta.volume - l_beta(u, mu0, beta)


@dataclasses.dataclass(frozen=True)
class ProbeResult:
    """Centered first and second differences of the free energy along a probe."""

    derivative: float
    second_difference: float


@dataclasses.dataclass(frozen=True)
class StationarityReport:
    """Stationarity and concavity evidence for a converged solution.

    ``second_difference`` entries estimate the second derivative along each
    probe line (nonpositive for a concave functional); ``stationary`` and
    ``concave`` summarize all probes against the given tolerances.
    """

    probes: tuple[ProbeResult, ...]
    max_abs_derivative: float
    max_second_difference: float
    stationary: bool
    concave: bool
    step: float
    stat_tol: float
    curvature_tol: float


def g_beta_stationarity(
    solution,
    mu0: VolumeDensity,
    theta: BackgroundForm,
    probes: Sequence[np.ndarray] | Iterable[np.ndarray],
    step: float = 1e-4,
    stat_tol: float = 1e-6,
    curvature_tol: float = 1e-9,
) -> StationarityReport:
    """Probe the free energy around the peak-normalized solution.

    For each probe direction ``v`` the centered difference of
    ``G_beta(U + t*v)`` at ``t = 0`` must vanish within ``stat_tol`` and the
    second difference must be nonpositive within ``curvature_tol``; the
    report only records the evidence, it never raises.
    """
    grid = theta.grid
    base = solution.u - float(solution.u.max())
    beta = solution.beta
    center = g_beta(base, theta, mu0, beta)
    results = []
    for probe in probes:
        v = validate_field(grid, probe, "probe")
        plus = g_beta(base + step * v, theta, mu0, beta)
        minus = g_beta(base - step * v, theta, mu0, beta)
        results.append(
            ProbeResult(
                derivative=(plus - minus) / (2.0 * step),
                second_difference=(plus - 2.0 * center + minus) / step**2,
            )
        )
    if not results:
        raise ValidationError("at least one probe direction is required")
    max_d1 = max(abs(r.derivative) for r in results)
    max_d2 = max(r.second_difference for r in results)
    return StationarityReport(
        probes=tuple(results),
        max_abs_derivative=max_d1,
        max_second_difference=max_d2,
        stationary=max_d1 <= stat_tol,
        concave=max_d2 <= curvature_tol,
        step=step,
        stat_tol=stat_tol,
        curvature_tol=curvature_tol,
    )


def relative_entropy(mu: np.ndarray, mu0: VolumeDensity) -> float:
    """Relative entropy ``integrate(log(mu/g) * mu)`` of a mass density.

    Nodes where ``mu`` vanishes contribute zero; tiny negative round-off
    entries are clipped, but substantially negative densities are rejected.
    """
    grid = mu0.grid
    mu = validate_field(grid, mu, "density")
    floor = -1e-9 * max(1.0, float(np.abs(mu).max()))
    if float(mu.min()) < floor:
        raise ValidationError(
            f"density has negative entries down to {float(mu.min()):.3e}"
        )
    mu = np.maximum(mu, 0.0)
    if integrate(grid, mu) <= 0.0:
        raise ValidationError("density must carry positive mass")
    positive = mu > 0.0
    terms = np.zeros_like(mu)
    terms[positive] = np.log(mu[positive] / mu0.g[positive]) * mu[positive]
    return integrate(grid, terms)


@dataclasses.dataclass(frozen=True)
class EnergyReport:
    """Bundle of the variational quantities of one field."""

    E: float
    L_beta: float
    G_beta: float
    entropy: float | None = None


def energy_report(
    u: np.ndarray,
    theta: BackgroundForm,
    mu0: VolumeDensity,
    beta: float,
    mu_density: np.ndarray | None = None,
) -> EnergyReport:
    """Assemble energy, log-partition, free energy, and optional entropy."""
    e_val = energy(u, theta)
    l_val = l_beta(u, mu0, beta)
    return EnergyReport(
        E=e_val,
        L_beta=l_val,
        G_beta=e_val / theta.volume - l_val,
        entropy=None if mu_density is None else relative_entropy(mu_density, mu0),
    )
