"""Weight-sweep of divisor envelopes: growing domains and the area law.

As the vanishing weight ``lam`` grows, the non-contact set of the divisor
envelope grows from the divisor nodes outward; the curvature mass swallowed
by the domain equals ``lam`` times the divisor mass (the area law).  This
module runs the sweep with warm starts, extracts domains and their free
boundaries, and checks nesting, the area law, the contact-set mass identity,
and — when the class volume equals the divisor mass — exhaustion of the
whole torus.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .envelope import (
    EnvelopeSolution,
    FreeBoundary,
    LcpOptions,
    envelope_divisor,
    free_boundary,
)
from .errors import (
    EmptyBoundary,
    NoConvergence,
    NonKahler,
    SeshadriViolation,
    ValidationError,
    WrongRegime,
)
from .forms import BackgroundForm, DivisorData, ma_density, twist
from .grid import integrate

__all__ = [
    "HeleShawFamily",
    "NestingReport",
    "ExhaustionVerdict",
    "default_lambda_grid",
    "run_family",
    "nesting_report",
    "exhaustion_check",
    "write_family_csv",
]


def default_lambda_grid(
    omega: BackgroundForm, divisor: DivisorData, count: int = 16, max_frac: float = 0.9
) -> np.ndarray:
    """Uniform weights from 0 to ``max_frac`` of the positivity threshold."""
    if count < 2:
        raise ValidationError("lambda grid needs at least two points")
    if not 0.0 < max_frac < 1.0:
        raise ValidationError("max_frac must lie strictly between 0 and 1")
    return np.linspace(0.0, max_frac * omega.volume / divisor.total_mass, count)


@dataclasses.dataclass(frozen=True)
class HeleShawFamily:
    """Envelope sweep over increasing vanishing weights.

    Attributes:
        omega, divisor: the swept problem data.
        lambdas: increasing weights below the positivity threshold.
        solutions: envelope solution per weight.
        domains: non-contact masks per weight (the growing domains).
        areas: curvature mass ``integrate(f_omega)`` over each domain.
        boundaries: free-boundary polylines per weight (empty at trivial
            contact sets, e.g. the zero weight).
        contact_mass_defects: deviation of the contact-set twisted mass from
            the twisted volume per weight.
    """

    omega: BackgroundForm
    divisor: DivisorData
    lambdas: np.ndarray
    solutions: tuple[EnvelopeSolution, ...]
    domains: tuple[np.ndarray, ...]
    areas: np.ndarray
    boundaries: tuple[FreeBoundary, ...]
    contact_mass_defects: np.ndarray


def run_family(
    omega: BackgroundForm,
    divisor: DivisorData,
    lambdas=None,
    opts: LcpOptions | None = None,
) -> HeleShawFamily:
    """Solve the divisor envelope for each weight and extract the domains.

    Weights are solved in increasing order with warm starts (the domains grow
    monotonically, so the previous solution is an excellent initializer).

    Raises:
        NonKahler: if the background density is not strictly positive.
        SeshadriViolation: if the largest weight reaches the threshold.
    """
    if float(omega.f_theta.min()) <= 0.0:
        raise NonKahler("the sweep needs a strictly positive background density")
    if lambdas is None:
        lambdas = default_lambda_grid(omega, divisor)
    lambdas = np.asarray([float(lam) for lam in lambdas])
    if lambdas.size == 0:
        raise ValidationError("lambda grid must be nonempty")
    if float(lambdas.min()) < 0.0:
        raise ValidationError("weights must be nonnegative")
    if np.any(np.diff(lambdas) <= 0.0):
        raise ValidationError("lambda grid must be strictly increasing")
    threshold = omega.volume / divisor.total_mass
    if float(lambdas.max()) >= threshold:
        raise SeshadriViolation(
            f"largest weight {float(lambdas.max()):g} reaches the positivity "
            f"threshold {threshold:.6g}"
        )

    solutions: list[EnvelopeSolution] = []
    domains: list[np.ndarray] = []
    boundaries: list[FreeBoundary] = []
    areas = np.empty(lambdas.size)
    defects = np.empty(lambdas.size)
    grid = omega.grid
    warm: np.ndarray | None = None
    for k, lam in enumerate(lambdas):
        try:
            sol = envelope_divisor(omega, divisor, lam, opts, u0=warm)
        except NoConvergence as exc:
            raise NoConvergence(f"lambda={lam:g}: {exc}", history=exc.history) from exc
        solutions.append(sol)
        warm = sol.u
        domain = ~sol.contact_mask
        domains.append(domain)
        areas[k] = integrate(grid, np.where(domain, omega.f_theta, 0.0))
        density = ma_density(twist(omega, divisor, lam), sol.u)
        contact_mass = integrate(grid, np.where(sol.contact_mask, density, 0.0))
        defects[k] = abs(contact_mass - (omega.volume - lam * divisor.total_mass))
        try:
            boundaries.append(free_boundary(sol))
        except EmptyBoundary:
            boundaries.append(FreeBoundary((), 0.0, 0))
    return HeleShawFamily(
        omega=omega,
        divisor=divisor,
        lambdas=lambdas,
        solutions=tuple(solutions),
        domains=tuple(domains),
        areas=areas,
        boundaries=tuple(boundaries),
        contact_mass_defects=defects,
    )


@dataclasses.dataclass(frozen=True)
class NestingReport:
    """Monotonicity of the domains along the weight grid.

    ``escaped`` counts nodes that leave the domain between consecutive
    weights (zero for perfectly nested families); ``fractions`` scales each
    count by the boundary size of the larger domain.
    """

    escaped: np.ndarray
    fractions: np.ndarray
    max_escaped: int
    max_fraction: float


def _boundary_node_count(mask: np.ndarray) -> int:
    edge = np.zeros_like(mask)
    for axis in (0, 1):
        for step in (1, -1):
            edge |= mask != np.roll(mask, step, axis=axis)
    return int(np.count_nonzero(edge & mask))


def nesting_report(family: HeleShawFamily) -> NestingReport:
    """Count domain nodes lost between consecutive weights."""
    pairs = len(family.domains) - 1
    escaped = np.zeros(max(pairs, 0), dtype=int)
    fractions = np.zeros(max(pairs, 0))
    for k in range(pairs):
        smaller, larger = family.domains[k], family.domains[k + 1]
        escaped[k] = int(np.count_nonzero(smaller & ~larger))
        boundary = _boundary_node_count(larger)
        fractions[k] = escaped[k] / boundary if boundary else float(escaped[k] > 0)
    return NestingReport(
        escaped=escaped,
        fractions=fractions,
        max_escaped=int(escaped.max()) if pairs else 0,
        max_fraction=float(fractions.max()) if pairs else 0.0,
    )


@dataclasses.dataclass(frozen=True)
class ExhaustionVerdict:
    """Area-law trace for the volume-matching regime.

    ``trace`` rows are ``(lambda, area, lambda*m)``; the verdict holds when
    every area matches its target within ``area_tol``, which forces the
    domains to fill the torus as the weight approaches the threshold.
    """

    holds: bool
    area_tol: float
    max_defect: float
    final_fill: float
    trace: tuple[tuple[float, float, float], ...]


def exhaustion_check(family: HeleShawFamily, area_tol: float = 0.02) -> ExhaustionVerdict:
    """Verify the domains exhaust the torus when volume equals divisor mass.

    Raises:
        WrongRegime: if the class volume differs from the divisor mass (the
            domains then saturate strictly below full area).
    """
    volume = family.omega.volume
    mass = family.divisor.total_mass
    if abs(volume - mass) > 1e-9 * max(abs(volume), abs(mass)):
        raise WrongRegime(
            f"exhaustion needs volume = divisor mass, got V = {volume:.6g}, "
            f"m = {mass:.6g}"
        )
    targets = family.lambdas * mass
    defects = np.abs(family.areas - targets)
    trace = tuple(
        (float(lam), float(area), float(target))
        for lam, area, target in zip(family.lambdas, family.areas, targets)
    )
    return ExhaustionVerdict(
        holds=bool(np.all(defects <= area_tol)),
        area_tol=area_tol,
        max_defect=float(defects.max()),
        final_fill=float(family.areas[-1] / volume),
        trace=trace,
    )


def write_family_csv(path, family: HeleShawFamily) -> None:
    """Write the per-weight summary (area, boundary length, components)."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("lambda,area,boundary_length,n_components\n")
        for lam, area, boundary in zip(family.lambdas, family.areas, family.boundaries):
            handle.write(
                f"{lam:.17g},{area:.17g},{boundary.total_length:.17g},"
                f"{boundary.n_components}\n"
            )
