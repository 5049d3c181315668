"""Sweep harness for the large-``beta`` limit toward the envelope.

Runs the exponential curvature solver over an increasing ``beta`` grid with
continuation, measures sup/gradient/energy distances to the obstacle-problem
envelope, fits the decay rate, and evaluates the sharper diagnostics: the
``C/beta`` upper bound with its contact-set constant, exponential decay of
the curvature mass off the contact set, and the positive-background
expansion.  A refinement study calibrates the grid slack that separates
discretization error from genuine bound violations.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .envelope import EnvelopeSolution, LcpOptions, envelope_theta
from .errors import EmptyRegion, NoConvergence, ValidationError
from .forms import BackgroundForm, VolumeDensity, ma_density, make_background, make_volume
from .functionals import energy, g_beta, l_beta, relative_entropy
from .grid import TorusGrid, grad_sup_norm, integrate
from .ma_solver import BetaSolution, SolveOptions, solve_beta

__all__ = [
    "SweepReport",
    "RefinedBoundVerdict",
    "DecayVerdict",
    "SlackCalibration",
    "default_beta_grid",
    "sweep_beta",
    "refined_bound_check",
    "ma_decay_check",
    "positive_expansion_defect",
    "calibrate_grid_slack",
    "write_sweep_csv",
]


def default_beta_grid(low: float = 8.0, high: float = 1024.0) -> tuple[float, ...]:
    """Geometric powers-of-two grid, suited to log-log rate fitting."""
    betas = []
    b = low
    while b <= high * (1.0 + 1e-12):
        betas.append(float(b))
        b *= 2.0
    return tuple(betas)


@dataclasses.dataclass(frozen=True)
class SweepReport:
    """Error series of a ``beta`` sweep against the envelope.

    Attributes:
        theta, mu0: the swept problem data.
        betas: strictly increasing inverse temperatures.
        envelope: the obstacle-problem limit solution.
        solutions: converged solution per ``beta``.
        sup_err: ``max|u_beta - u_env|`` per ``beta``.
        grad_err: sup-norm of the gradient of the difference per ``beta``.
        energy_gap: ``|E(u_beta) - E(u_env)|`` per ``beta``.
        fitted_rate: ``(C_fit, p_fit)`` from ``sup_err ~ C * beta^(-p)`` fitted
            on the last half of the series (NaNs when the series hits zero).
        refined_c: contact-set constant ``max_D log(f_theta / (V*g))``
            (``-inf`` when the contact set is empty).
        e_values, l_values, g_values: energy, log-partition, and free-energy
            traces per ``beta``.
        entropy_gap: relative-entropy distance of the curvature mass from the
            envelope's, per ``beta``.
    """

    theta: BackgroundForm
    mu0: VolumeDensity
    betas: tuple[float, ...]
    envelope: EnvelopeSolution
    solutions: tuple[BetaSolution, ...]
    sup_err: np.ndarray
    grad_err: np.ndarray
    energy_gap: np.ndarray
    fitted_rate: tuple[float, float]
    refined_c: float
    e_values: np.ndarray
    l_values: np.ndarray
    g_values: np.ndarray
    entropy_gap: np.ndarray


def _refined_constant(theta: BackgroundForm, mu0: VolumeDensity, contact: np.ndarray) -> float:
    if not contact.any():
        return float("-inf")
    ratio = theta.f_theta[contact] / (theta.volume * mu0.g[contact])
    positive = ratio[ratio > 0.0]
    if positive.size == 0:
        return float("-inf")
    return float(np.log(positive).max())


def sweep_beta(
    theta: BackgroundForm,
    g: VolumeDensity,
    betas,
    solve_opts: SolveOptions | None = None,
    lcp_opts: LcpOptions | None = None,
    continuation: bool = True,
) -> SweepReport:
    """Run the solver over an increasing ``beta`` grid and measure errors.

    The envelope is computed once; each solve warm-starts from the previous
    ``beta`` unless ``continuation`` is disabled (cold starts reproduce the
    same limits and are used to cross-check the continuation).

    Raises:
        ValidationError: if the ``beta`` grid is not strictly increasing with
            every entry above 1.
        NoConvergence: re-raised from the solver with the offending ``beta``
            attached.
    """
    betas = tuple(float(b) for b in betas)
    if len(betas) == 0:
        raise ValidationError("beta grid must be nonempty")
    if any(b <= 1.0 for b in betas):
        raise ValidationError("beta must exceed 1")
    if any(b2 <= b1 for b1, b2 in zip(betas, betas[1:])):
        raise ValidationError("beta grid must be strictly increasing")
    solve_opts = solve_opts or SolveOptions()

    env = envelope_theta(theta, lcp_opts)
    env_energy = energy(env.u, theta)
    env_density = np.maximum(ma_density(theta, env.u), 0.0)
    env_entropy = relative_entropy(env_density, g)

    solutions: list[BetaSolution] = []
    sup_err = np.empty(len(betas))
    grad_err = np.empty(len(betas))
    energy_gap = np.empty(len(betas))
    e_values = np.empty(len(betas))
    l_values = np.empty(len(betas))
    g_values = np.empty(len(betas))
    entropy_gap = np.empty(len(betas))
    warm: np.ndarray | None = None
    for k, beta in enumerate(betas):
        try:
            sol = solve_beta(theta, g, beta, solve_opts, u0=warm)
        except NoConvergence as exc:
            raise NoConvergence(f"beta={beta:g}: {exc}", history=exc.history) from exc
        solutions.append(sol)
        if continuation:
            warm = sol.u
        diff = sol.u - env.u
        sup_err[k] = float(np.abs(diff).max())
        grad_err[k] = grad_sup_norm(theta.grid, diff)
        e_values[k] = energy(sol.u, theta)
        energy_gap[k] = abs(e_values[k] - env_energy)
        l_values[k] = l_beta(sol.u, g, beta)
        g_values[k] = e_values[k] / theta.volume - l_values[k]
        entropy_gap[k] = relative_entropy(ma_density(theta, sol.u), g) - env_entropy

    half = len(betas) // 2
    window_b = np.asarray(betas[half:])
    window_e = sup_err[half:]
    if np.all(window_e > 0.0) and len(window_b) >= 2:
        slope, intercept = np.polyfit(np.log(window_b), np.log(window_e), 1)
        fitted_rate = (float(np.exp(intercept)), float(-slope))
    else:
        fitted_rate = (float("nan"), float("nan"))

    return SweepReport(
        theta=theta,
        mu0=g,
        betas=betas,
        envelope=env,
        solutions=tuple(solutions),
        sup_err=sup_err,
        grad_err=grad_err,
        energy_gap=energy_gap,
        fitted_rate=fitted_rate,
        refined_c=_refined_constant(theta, g, env.contact_mask),
        e_values=e_values,
        l_values=l_values,
        g_values=g_values,
        entropy_gap=entropy_gap,
    )


@dataclasses.dataclass(frozen=True)
class RefinedBoundVerdict:
    """Margins of the ``C/beta + grid_slack`` upper bound per ``beta``."""

    holds: bool
    c_paper: float
    grid_slack: float
    margins: np.ndarray
    worst_margin: float


def refined_bound_check(
    report: SweepReport,
    envelope_solution: EnvelopeSolution | None = None,
    grid_slack: float = 0.0,
) -> RefinedBoundVerdict:
    """Check ``max(u_beta - u_env) <= C/beta + grid_slack`` for every ``beta``.

    ``C`` is the contact-set constant recorded in the report; ``grid_slack``
    comes from a refinement calibration (see :func:`calibrate_grid_slack`).

    Raises:
        EmptyRegion: if the contact set is empty (the constant is undefined).
    """
    env = envelope_solution or report.envelope
    if not env.contact_mask.any():
        raise EmptyRegion("contact set is empty; the bound constant is undefined")
    c_paper = _refined_constant(report.theta, report.mu0, env.contact_mask)
    margins = np.empty(len(report.betas))
    for k, (beta, sol) in enumerate(zip(report.betas, report.solutions)):
        signed_max = float((sol.u - env.u).max())
        margins[k] = c_paper / beta + grid_slack - signed_max
    worst = float(margins.min())
    return RefinedBoundVerdict(
        holds=worst >= 0.0,
        c_paper=c_paper,
        grid_slack=grid_slack,
        margins=margins,
        worst_margin=worst,
    )


@dataclasses.dataclass(frozen=True)
class DecayVerdict:
    """Exponential decay of the curvature mass off the contact set.

    ``sups`` holds the measured maxima of ``exp(beta*u)*g`` over the region
    ``{u_env <= -delta}`` per ``beta``; ``bounds`` the predicted
    ``max(g) * exp(C) * exp(-beta*delta)``; ``rate_measured`` the fitted
    exponential rate of the measured series.
    """

    holds: bool
    delta: float
    region_nodes: int
    sups: np.ndarray
    bounds: np.ndarray
    rate_measured: float
    rate_ok: bool
    rate_rtol: float


def ma_decay_check(report: SweepReport, delta: float, rate_rtol: float = 0.15) -> DecayVerdict:
    """Measure the curvature-mass decay on ``{u_env <= -delta}``.

    Raises:
        EmptyRegion: if the level region is empty (e.g. on fully contacting
            envelopes or for ``delta`` beyond the envelope depth).
    """
    if delta <= 0.0:
        raise ValidationError("delta must be positive")
    region = report.envelope.u <= -delta
    if not region.any():
        raise EmptyRegion(
            f"region {{u_env <= -{delta:g}}} is empty (envelope depth "
            f"{float(report.envelope.u.min()):.6g})"
        )
    g_vals = report.mu0.g
    sups = np.empty(len(report.betas))
    for k, (beta, sol) in enumerate(zip(report.betas, report.solutions)):
        sups[k] = float((np.exp(beta * sol.u[region]) * g_vals[region]).max())
    c_paper = report.refined_c
    betas = np.asarray(report.betas)
    bounds = float(g_vals.max()) * np.exp(c_paper) * np.exp(-betas * delta)
    if np.all(sups > 0.0):
        slope = np.polyfit(betas, np.log(sups), 1)[0]
        rate = float(-slope)
    else:
        rate = float("nan")
    rate_ok = bool(np.isfinite(rate) and abs(rate - delta) <= rate_rtol * delta)
    return DecayVerdict(
        holds=bool(np.all(sups <= bounds)),
        delta=delta,
        region_nodes=int(np.count_nonzero(region)),
        sups=sups,
        bounds=bounds,
        rate_measured=rate,
        rate_ok=rate_ok,
        rate_rtol=rate_rtol,
    )


def positive_expansion_defect(report: SweepReport) -> np.ndarray:
    """Per-``beta`` sup of ``|beta*u_beta - log(f_theta/g)|``.

    Valid only for strictly positive background densities, where the
    envelope is zero and the solution expands as the scaled log-ratio.
    """
    f = report.theta.f_theta
    if float(f.min()) <= 0.0:
        raise ValidationError("positive-background expansion needs f_theta > 0")
    target = np.log(f / report.mu0.g)
    defects = np.empty(len(report.betas))
    for k, (beta, sol) in enumerate(zip(report.betas, report.solutions)):
        defects[k] = float(np.abs(beta * sol.u - target).max())
    return defects


@dataclasses.dataclass(frozen=True)
class SlackCalibration:
    """Refinement study of the bound violation against mesh size.

    Fits ``violation(h) ~ extrapolated + c1*h``; the calibrated slack at mesh
    size ``h`` is ``max(c1, 0)*h``, and a nonpositive extrapolated violation
    certifies that any measured violation is pure discretization error.
    """

    ns: tuple[int, ...]
    hs: np.ndarray
    violations: np.ndarray
    c1: float
    extrapolated_violation: float

    def slack_for(self, grid: TorusGrid) -> float:
        return max(self.c1, 0.0) * grid.h


def calibrate_grid_slack(
    background,
    volume,
    betas,
    ns=(64, 128, 256),
    solve_opts: SolveOptions | None = None,
    lcp_opts: LcpOptions | None = None,
) -> SlackCalibration:
    """Run the sweep at several resolutions and fit the bound violation.

    ``background`` and ``volume`` are density recipes (string, callable,
    scalar) evaluated on each grid, so the same scenario is solved at every
    resolution.
    """
    ns = tuple(int(n) for n in ns)
    if len(ns) < 2:
        raise ValidationError("calibration needs at least two grid sizes")
    violations = np.empty(len(ns))
    hs = np.empty(len(ns))
    for k, n in enumerate(ns):
        grid = TorusGrid(n)
        theta = make_background(grid, background)
        g = make_volume(grid, volume)
        report = sweep_beta(theta, g, betas, solve_opts, lcp_opts)
        verdict_margins = refined_bound_check(report, grid_slack=0.0).margins
        violations[k] = float((-verdict_margins).max())
        hs[k] = grid.h
    c1, intercept = np.polyfit(hs, violations, 1)
    return SlackCalibration(
        ns=ns,
        hs=hs,
        violations=violations,
        c1=float(c1),
        extrapolated_violation=float(intercept),
    )


def write_sweep_csv(
    path,
    report: SweepReport,
    refined: RefinedBoundVerdict | None = None,
    decay: DecayVerdict | None = None,
) -> None:
    """Write the sweep series (with energy traces) as a CSV file."""
    margins = refined.margins if refined is not None else np.full(len(report.betas), np.nan)
    sups = decay.sups if decay is not None else np.full(len(report.betas), np.nan)
    columns = (
        "beta",
        "sup_err",
        "grad_err",
        "energy_gap",
        "refined_margin",
        "decay_sup",
        "E",
        "L_beta",
        "G_beta",
        "entropy_gap",
    )
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(",".join(columns) + "\n")
        for k, beta in enumerate(report.betas):
            row = (
                beta,
                report.sup_err[k],
                report.grad_err[k],
                report.energy_gap[k],
                margins[k],
                sups[k],
                report.e_values[k],
                report.l_values[k],
                report.g_values[k],
                report.entropy_gap[k],
            )
            handle.write(",".join(f"{value:.17g}" for value in row) + "\n")
