"""Geodesic rays from divisor envelopes via the Legendre transform.

The shifted envelope fields ``psi_mu = u_lam + lam*h`` (with ``mu = lam - c``)
form a concave family in ``mu``; their Legendre transform in ``mu``,

    ray(t, x) = max_mu (psi_mu(x) + mu*t),    t >= 0,

is a ray of potentials that is convex and piecewise affine in ``t`` at every
node, with affine energy.  The finite-``beta`` approximants integrate the
exponentially tilted solver fields over the weight interval in log-sum-exp
form and converge uniformly to the ray as ``beta`` grows.  This module
builds the family, checks its concavity, assembles the ray and the
approximants, and verifies the Fenchel biconjugation identity, convexity,
and the affine energy slope.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .envelope import EnvelopeSolution, LcpOptions, envelope_divisor
from .errors import (
    ConcavityViolation,
    NoConvergence,
    SeshadriViolation,
    ValidationError,
)
from .forms import BackgroundForm, DivisorData, VolumeDensity, ma_density
from .functionals import energy
from .ma_solver import BetaSolution, SolveOptions, solve_beta_divisor

__all__ = [
    "RayFamily",
    "RayReport",
    "SubgeodesicResult",
    "default_t_grid",
    "build_psi_family",
    "legendre_ray",
    "subgeodesic",
    "with_subgeodesic",
    "double_legendre_gap",
    "convexity_defect",
    "ray_psh_defect",
    "energy_slope_check",
    "write_ray_csv",
    "write_convergence_csv",
]


def default_t_grid(t_max: float = 64.0) -> np.ndarray:
    """Linear steps through the bend, then doublings out to ``t_max``.

    The ray is piecewise affine with its interesting breaks at small ``t``;
    a few geometric points certify the flat large-``t`` tail.
    """
    if t_max <= 0.0:
        raise ValidationError("t_max must be positive")
    ts = [0.25 * k for k in range(9) if 0.25 * k <= t_max]
    point = 4.0
    while point <= t_max * (1.0 + 1e-12):
        ts.append(point)
        point *= 2.0
    return np.asarray(ts)


@dataclasses.dataclass(frozen=True)
class RayFamily:
    """Envelope family, assembled ray, and finite-``beta`` approximants.

    Attributes:
        omega, divisor: problem data shared by every member.
        c: weight offset; ``mu = lambda - c`` runs over ``[-c, 0]``.
        lambdas, mus: the weight grid and its shift.
        psi: family fields, shape ``(K, n, n)``.
        solutions: envelope solutions per weight.
        concavity_defect: worst chord violation of ``mu -> psi_mu(x)``.
        ts: ray parameter grid (set by :func:`legendre_ray`).
        ray: ray fields, shape ``(T, n, n)``.
        argmax: per-node maximizing weight index, shape ``(T, n, n)``.
        sub: ``(beta, fields)`` pairs of attached approximants.
    """

    omega: BackgroundForm
    divisor: DivisorData
    c: float
    lambdas: np.ndarray
    mus: np.ndarray
    psi: np.ndarray
    solutions: tuple[EnvelopeSolution, ...]
    concavity_defect: float
    ts: np.ndarray | None = None
    ray: np.ndarray | None = None
    argmax: np.ndarray | None = None
    sub: tuple[tuple[float, np.ndarray], ...] = ()


def build_psi_family(
    omega: BackgroundForm,
    divisor: DivisorData,
    c: float,
    lambdas=None,
    opts: LcpOptions | None = None,
    conc_tol: float = 1e-6,
) -> RayFamily:
    """Solve the divisor envelopes over the weight grid and shift them.

    Asserts that every field is nonpositive and that the family is concave
    along the weight direction at every node (chord test).

    Raises:
        SeshadriViolation: if ``c`` reaches the positivity threshold.
        ConcavityViolation: if the chord test fails beyond ``conc_tol``
            (the weight grid is too coarse for the data).
    """
    opts = opts or LcpOptions()
    if c <= 0.0:
        raise ValidationError("offset c must be positive")
    threshold = omega.volume / divisor.total_mass
    if c >= threshold:
        raise SeshadriViolation(
            f"offset {c:g} reaches the positivity threshold {threshold:.6g}"
        )
    if lambdas is None:
        lambdas = np.linspace(0.0, c, 33)
    lambdas = np.asarray([float(lam) for lam in lambdas])
    if lambdas.size == 0:
        raise ValidationError("weight grid must be nonempty")
    if float(lambdas.min()) < 0.0 or float(lambdas.max()) > c * (1.0 + 1e-12):
        raise ValidationError("weight grid must lie within [0, c]")
    if np.any(np.diff(lambdas) <= 0.0):
        raise ValidationError("weight grid must be strictly increasing")

    grid = omega.grid
    psi = np.empty((lambdas.size, grid.n, grid.n))
    solutions: list[EnvelopeSolution] = []
    warm: np.ndarray | None = None
    for k, lam in enumerate(lambdas):
        try:
            sol = envelope_divisor(omega, divisor, lam, opts, u0=warm)
        except NoConvergence as exc:
            raise NoConvergence(f"lambda={lam:g}: {exc}", history=exc.history) from exc
        solutions.append(sol)
        warm = sol.u
        psi[k] = sol.u + lam * divisor.green_potential
    peak = float(psi.max())
    if peak > 10.0 * opts.lcp_tol:
        raise NoConvergence(
            f"family fields must be nonpositive, got max {peak:.3e}"
        )

    defect = 0.0
    if lambdas.size >= 3:
        span = lambdas[2:] - lambdas[:-2]
        weight = (lambdas[1:-1] - lambdas[:-2]) / span
        chord = (
            weight[:, None, None] * psi[2:]
            + (1.0 - weight)[:, None, None] * psi[:-2]
            - psi[1:-1]
        )
        defect = float(chord.max())
        if defect > conc_tol:
            raise ConcavityViolation(
                f"chord test fails by {defect:.3e} (tolerance {conc_tol:.1e}); "
                "the weight grid is too coarse"
            )
    return RayFamily(
        omega=omega,
        divisor=divisor,
        c=float(c),
        lambdas=lambdas,
        mus=lambdas - float(c),
        psi=psi,
        solutions=tuple(solutions),
        concavity_defect=defect,
    )


def legendre_ray(family: RayFamily, ts=None) -> RayFamily:
    """Assemble the ray ``max_mu(psi_mu + mu*t)`` over the ``t`` grid.

    Records the per-node maximizing index, which is non-decreasing in ``t``
    for concave families (ties go to the smallest index).
    """
    if ts is None:
        ts = default_t_grid()
    ts = np.asarray([float(t) for t in ts])
    if ts.size == 0:
        raise ValidationError("t grid must be nonempty")
    if float(ts.min()) < 0.0:
        raise ValidationError("ray parameters must be nonnegative")
    if np.any(np.diff(ts) <= 0.0):
        raise ValidationError("t grid must be strictly increasing")
    n = family.omega.grid.n
    ray = np.empty((ts.size, n, n))
    argmax = np.empty((ts.size, n, n), dtype=np.int64)
    tilt = family.mus[:, None, None]
    for i, t in enumerate(ts):
        stack = family.psi + tilt * t
        ray[i] = stack.max(axis=0)
        argmax[i] = stack.argmax(axis=0)
    return dataclasses.replace(family, ts=ts, ray=ray, argmax=argmax)


@dataclasses.dataclass(frozen=True)
class SubgeodesicResult:
    """Finite-``beta`` approximant fields and the solves behind them."""

    beta: float
    lambdas: np.ndarray
    ts: np.ndarray
    fields: np.ndarray
    solutions: tuple[BetaSolution, ...]


def _trapezoid_weights(lambdas: np.ndarray, c: float) -> np.ndarray:
    if lambdas.size == 1:
        return np.array([c])
    weights = np.empty(lambdas.size)
    weights[0] = 0.5 * (lambdas[1] - lambdas[0])
    weights[-1] = 0.5 * (lambdas[-1] - lambdas[-2])
    if lambdas.size > 2:
        weights[1:-1] = 0.5 * (lambdas[2:] - lambdas[:-2])
    return weights


def subgeodesic(
    omega: BackgroundForm,
    divisor: DivisorData,
    c: float,
    beta: float,
    lambdas,
    ts,
    g: VolumeDensity,
    opts: SolveOptions | None = None,
) -> SubgeodesicResult:
    """Tilted log-sum-exp quadrature of the solver fields over the weights.

    Solves the divisor equation at every weight (with continuation), shifts
    each field by ``lam*h``, and integrates

        fields[t] = log( sum_k w_k exp(beta*(mu_k*t + shifted_k)) ) / beta

    with trapezoid weights ``w_k`` (a single weight integrates the whole
    interval).  Everything stays in log space, so large ``beta`` is safe.
    """
    if beta <= 1.0:
        raise ValidationError("beta must exceed 1")
    if c <= 0.0:
        raise ValidationError("offset c must be positive")
    lambdas = np.asarray([float(lam) for lam in lambdas])
    if lambdas.size == 0:
        raise ValidationError("weight grid must be nonempty")
    if float(lambdas.min()) < 0.0 or float(lambdas.max()) > c * (1.0 + 1e-12):
        raise ValidationError("weight grid must lie within [0, c]")
    if np.any(np.diff(lambdas) <= 0.0):
        raise ValidationError("weight grid must be strictly increasing")
    ts = np.asarray([float(t) for t in ts])
    mus = lambdas - c

    shifted = np.empty((lambdas.size, omega.grid.n, omega.grid.n))
    solutions: list[BetaSolution] = []
    warm: np.ndarray | None = None
    for k, lam in enumerate(lambdas):
        try:
            sol = solve_beta_divisor(omega, divisor, lam, beta, g, opts, u0=warm)
        except NoConvergence as exc:
            raise NoConvergence(
                f"beta={beta:g}, lambda={lam:g}: {exc}", history=exc.history
            ) from exc
        solutions.append(sol)
        warm = sol.u
        shifted[k] = sol.u + lam * divisor.green_potential

    log_weights = np.log(_trapezoid_weights(lambdas, c))
    fields = np.empty((ts.size, omega.grid.n, omega.grid.n))
    for i, t in enumerate(ts):
        exponents = beta * (mus[:, None, None] * t + shifted) + log_weights[:, None, None]
        peak = exponents.max(axis=0)
        fields[i] = (peak + np.log(np.exp(exponents - peak).sum(axis=0))) / beta
    return SubgeodesicResult(
        beta=float(beta),
        lambdas=lambdas,
        ts=ts,
        fields=fields,
        solutions=tuple(solutions),
    )


def with_subgeodesic(family: RayFamily, result: SubgeodesicResult) -> RayFamily:
    """Attach an approximant to the family (its ``t`` grid must match)."""
    if family.ts is None:
        raise ValidationError("build the ray before attaching approximants")
    if result.ts.shape != family.ts.shape or not np.array_equal(result.ts, family.ts):
        raise ValidationError("approximant t grid does not match the ray")
    return dataclasses.replace(family, sub=family.sub + ((result.beta, result.fields),))


def _upper_hull(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Indices of the upper concave hull vertices of points sorted by x."""
    stack: list[int] = []
    for k in range(x.size):
        while len(stack) >= 2:
            i, j = stack[-2], stack[-1]
            cross = (x[j] - x[i]) * (y[k] - y[i]) - (y[j] - y[i]) * (x[k] - x[i])
            if cross >= 0.0:
                stack.pop()
            else:
                break
        stack.append(k)
    return np.asarray(stack)


def double_legendre_gap(family: RayFamily) -> float:
    """Worst Fenchel biconjugation defect over all nodes.

    For each node the family values are transformed forward at the hull's
    breakpoint slopes and pulled back; the result must equal the upper
    concave hull (computed independently by monotone chain) to round-off.
    """
    mus = family.mus
    flat = family.psi.reshape(mus.size, -1)
    worst = 0.0
    for idx in range(flat.shape[1]):
        values = flat[:, idx]
        hull_idx = _upper_hull(mus, values)
        hull_vals = np.interp(mus, mus[hull_idx], values[hull_idx])
        if hull_idx.size >= 2:
            slopes = np.diff(values[hull_idx]) / np.diff(mus[hull_idx])
            candidates = -slopes
        else:
            candidates = np.zeros(1)
        lines = values[:, None] + mus[:, None] * candidates[None, :]
        transform = lines.max(axis=0)
        recovered = (transform[None, :] - mus[:, None] * candidates[None, :]).min(axis=1)
        worst = max(worst, float(np.abs(recovered - hull_vals).max()))
    return worst


def convexity_defect(family: RayFamily) -> float:
    """Smallest consecutive slope increment of ``t -> ray(t, x)``.

    Nonnegative (up to round-off) because the ray is a max of affine
    functions of ``t`` at every node.
    """
    if family.ray is None or family.ts is None or family.ts.size < 3:
        raise ValidationError("ray with at least three t values required")
    dt = np.diff(family.ts)
    slopes = np.diff(family.ray, axis=0) / dt[:, None, None]
    return float(np.diff(slopes, axis=0).min())


def ray_psh_defect(family: RayFamily) -> float:
    """Worst negative curvature density over the ray fields.

    The max operation kinks the ray, so a small positive defect that shrinks
    under weight-grid refinement is expected; the value is reported, not
    asserted.
    """
    if family.ray is None:
        raise ValidationError("ray not built")
    worst = 0.0
    for field in family.ray:
        worst = max(worst, -float(ma_density(family.omega, field).min()))
    return max(worst, 0.0)


@dataclasses.dataclass(frozen=True)
class RayReport:
    """Uniform-convergence and energy evidence for an assembled family.

    ``sup_dev`` and ``tail_spread`` are per attached ``beta`` (sorted
    ascending): the sup over all nodes and ray times of the approximant
    deviation, and the max-min spread of the per-time deviation over the
    tail ``t >= tail_from``.  The energy slope is fitted over
    ``t <= fit_t_max``, before the discrete family saturates.
    """

    betas: tuple[float, ...]
    sup_dev: np.ndarray
    tail_spread: np.ndarray
    tail_from: float
    energies: np.ndarray
    fit_t_max: float
    energy_slope_measured: float
    energy_slope_paper: float
    slope_rtol: float
    slope_ok: bool
    affine_deviation: float
    affine_tol: float
    affine_ok: bool


def _quadrature_slope(volume: float, mass: float, c: float, points: int = 2049) -> float:
    lams = np.linspace(0.0, c, points)
    integrand = (lams - c) * (volume - lams * mass)
    step = c / (points - 1)
    return float(step * (0.5 * (integrand[0] + integrand[-1]) + integrand[1:-1].sum()))


def energy_slope_check(
    family: RayFamily,
    fit_t_max: float = 4.0,
    affine_tol: float | None = None,
    slope_rtol: float = 0.02,
    tail_from: float = 8.0,
) -> RayReport:
    """Fit the ray energy in ``t`` and compare against the weight quadrature.

    The reference slope is the quadrature of ``(lam - c) * (V - lam*m)`` over
    ``[0, c]``; affineness is judged on the fit window against
    ``affine_tol``, which defaults to ``1e-4 * |slope| * max(ts)`` — the
    discrete transform introduces a kink error that grows with ``t``, so the
    allowance scales with the largest ray time, not the fit window.
    """
    if family.ray is None or family.ts is None:
        raise ValidationError("ray not built")
    window = family.ts <= fit_t_max * (1.0 + 1e-12)
    if int(window.sum()) < 3:
        raise ValidationError("need at least three t values inside the fit window")
    energies = np.array([energy(field, family.omega) for field in family.ray])
    fit_ts = family.ts[window]
    fit_es = energies[window]
    slope, intercept = np.polyfit(fit_ts, fit_es, 1)
    affine_dev = float(np.abs(fit_es - (intercept + slope * fit_ts)).max())
    slope_paper = _quadrature_slope(
        family.omega.volume, family.divisor.total_mass, family.c
    )
    if affine_tol is None:
        affine_tol = 1e-4 * abs(slope_paper) * float(family.ts.max())

    entries = sorted(family.sub, key=lambda item: item[0])
    betas = tuple(beta for beta, _ in entries)
    sup_dev = np.empty(len(entries))
    tail_spread = np.full(len(entries), np.nan)
    tail = family.ts >= tail_from
    for k, (_, fields) in enumerate(entries):
        profile = np.abs(fields - family.ray).max(axis=(1, 2))
        sup_dev[k] = float(profile.max())
        if tail.any():
            tail_spread[k] = float(profile[tail].max() - profile[tail].min())
    slope_ok = abs(float(slope) - slope_paper) <= slope_rtol * abs(slope_paper)
    return RayReport(
        betas=betas,
        sup_dev=sup_dev,
        tail_spread=tail_spread,
        tail_from=tail_from,
        energies=energies,
        fit_t_max=fit_t_max,
        energy_slope_measured=float(slope),
        energy_slope_paper=slope_paper,
        slope_rtol=slope_rtol,
        slope_ok=bool(slope_ok),
        affine_deviation=affine_dev,
        affine_tol=float(affine_tol),
        affine_ok=bool(affine_dev <= affine_tol),
    )


def write_ray_csv(path, family: RayFamily, report: RayReport) -> None:
    """Write the per-``t`` ray summary (energy and argmax histogram)."""
    if family.ray is None or family.argmax is None or family.ts is None:
        raise ValidationError("ray not built")
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("t,E,argmax_histogram\n")
        for i, t in enumerate(family.ts):
            counts = np.bincount(family.argmax[i].ravel(), minlength=family.mus.size)
            histogram = ";".join(
                f"{k}:{int(count)}" for k, count in enumerate(counts) if count
            )
            handle.write(f"{t:.17g},{report.energies[i]:.17g},{histogram}\n")


def write_convergence_csv(path, family: RayFamily, report: RayReport) -> None:
    """Write the per-``beta`` uniform deviation and the measured slope."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("beta,sup_dev,slope_measured\n")
        for beta, dev in zip(report.betas, report.sup_dev):
            handle.write(
                f"{beta:.17g},{dev:.17g},{report.energy_slope_measured:.17g}\n"
            )
