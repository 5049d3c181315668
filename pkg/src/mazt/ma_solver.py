"""Damped-Newton solver for the exponential curvature equation family.

For a background density ``f_theta`` and a positive unit-mass density ``g``
the solver finds the unique field ``u`` with

    f_theta + KAPPA * laplacian(u) = exp(beta * u) * g,

and, in the divisor-degenerate variant, the extra vanishing weight
``exp(lam * beta * green_potential)`` fused into the exponent.  Newton steps
solve the symmetric positive definite linearization matrix-free by conjugate
gradients, preconditioned with the spectral shifted-Poisson solve; a
backtracking line search on the sup-norm residual keeps large-``beta`` steps
inside the basin.  Comparison-principle and trace-bound diagnostics for
converged solutions live here as well.
"""

from __future__ import annotations

import dataclasses
import json
import warnings

import numpy as np

from .constants import EXP_MAX, EXP_MIN, KAPPA, VOLUME_FLOOR
from .errors import (
    BadReference,
    NoConvergence,
    NonKahler,
    NotClassifiable,
    SeshadriViolation,
    ValidationError,
)
from .forms import BackgroundForm, DivisorData, VolumeDensity, ma_density, twist
from .grid import TorusGrid, helmholtz_solve, laplacian, poisson_solve, validate_field

__all__ = [
    "SolveOptions",
    "BetaSolution",
    "ComparisonVerdict",
    "LaplacianBoundReport",
    "solve_beta",
    "solve_beta_divisor",
    "check_comparison",
    "laplacian_bound_report",
    "telemetry_jsonl",
]


@dataclasses.dataclass(frozen=True)
class SolveOptions:
    """Newton iteration budgets and tolerances.

    ``newton_tol`` targets the sup-norm of the equation residual.  Inner
    conjugate-gradient solves stop at relative 2-norm ``linear_tol``; the
    line search halves the step until the residual decreases, down to
    ``min_step``.
    """

    newton_tol: float = 1e-9
    max_iters: int = 50
    linear_tol: float = 1e-8
    max_linear_iters: int = 20_000
    min_step: float = 2.0**-30

    def __post_init__(self) -> None:
        if self.newton_tol <= 0.0:
            raise ValidationError("newton_tol must be positive")
        if self.max_iters < 1:
            raise ValidationError("max_iters must be at least 1")


@dataclasses.dataclass(frozen=True)
class BetaSolution:
    """Converged solution of one exponential curvature equation.

    Attributes:
        grid: carrier lattice.
        u: the solution field.
        beta: inverse-temperature parameter of the equation.
        residual_sup: final sup-norm residual (at most ``newton_tol``).
        iters: accepted Newton steps.
        exp_clips: nodes whose exponent hit the overflow clamp at the final
            iterate (nonzero values are flagged with a warning).
        zero_weights: nodes whose exponent underflowed the floor and were
            mapped to an exactly zero weight (diagnostic counter).
        telemetry: per-iteration records (iteration, residual_sup, step,
            cg_iters) suitable for JSON-lines export.
    """

    grid: TorusGrid
    u: np.ndarray
    beta: float
    residual_sup: float
    iters: int
    exp_clips: int = 0
    zero_weights: int = 0
    telemetry: tuple[dict, ...] = ()


def _weight(beta: float, u: np.ndarray, g: np.ndarray, log_shift) -> tuple[np.ndarray, int, int]:
    """Clamped evaluation of ``exp(beta*u + log_shift) * g``.

    Exponents above ``EXP_MAX`` are clipped (counted as clips); exponents
    below ``EXP_MIN`` give an exactly zero weight (counted separately) so the
    Jacobian keeps a clean scale instead of denormal noise.
    """
    exponent = beta * u + log_shift
    clips = int(np.count_nonzero(exponent > EXP_MAX))
    floored = exponent < EXP_MIN
    zeros = int(np.count_nonzero(floored))
    weight = np.exp(np.clip(exponent, EXP_MIN, EXP_MAX)) * g
    if zeros:
        weight[floored] = 0.0
    return weight, clips, zeros


def _pcg(
    grid: TorusGrid, diag: np.ndarray, b: np.ndarray, opts: SolveOptions
) -> tuple[np.ndarray, int]:
    """Solve ``(-KAPPA*laplacian + diag) x = b`` by preconditioned CG.

    The preconditioner is the spectral solve of ``mean(diag) - KAPPA*laplacian``,
    which captures the stiff Laplacian part exactly.
    """
    shift = max(float(diag.mean()), 1e-30)
    x = np.zeros_like(b)
    r = b.copy()
    target = opts.linear_tol * float(np.linalg.norm(r))
    if target == 0.0:
        return x, 0
    z = helmholtz_solve(grid, r, shift)
    p = z.copy()
    rz = float(np.vdot(r, z))
    iters = 0
    while iters < opts.max_linear_iters:
        ap = -KAPPA * laplacian(grid, p) + diag * p
        pap = float(np.vdot(p, ap))
        if pap <= 0.0:
            break
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        iters += 1
        if float(np.linalg.norm(r)) <= target:
            break
        z = helmholtz_solve(grid, r, shift)
        rz_next = float(np.vdot(r, z))
        p = z + (rz_next / rz) * p
        rz = rz_next
    return x, iters


def _newton(
    grid: TorusGrid,
    f_theta: np.ndarray,
    g: np.ndarray,
    beta: float,
    log_shift,
    opts: SolveOptions,
    u0: np.ndarray,
) -> tuple[np.ndarray, float, int, list[dict], int, int]:
    """Damped Newton iteration; returns the iterate and its diagnostics."""
    u = u0.copy()
    weight, clips, zeros = _weight(beta, u, g, log_shift)
    residual = f_theta + KAPPA * laplacian(grid, u) - weight
    res_sup = float(np.abs(residual).max())
    history = [res_sup]
    telemetry = [{"iteration": 0, "residual_sup": res_sup, "step": 0.0, "cg_iters": 0}]
    iters = 0
    while res_sup > opts.newton_tol:
        if iters >= opts.max_iters:
            raise NoConvergence(
                f"Newton budget exhausted after {iters} steps: residual "
                f"{res_sup:.3e} above target {opts.newton_tol:.1e}",
                history=tuple(history),
            )
        diag = beta * weight
        if float(diag.max()) <= 0.0:
            raise NoConvergence(
                "Jacobian degenerate: the exponential weight vanished everywhere",
                history=tuple(history),
            )
        delta, cg_iters = _pcg(grid, diag, residual, opts)
        step = 1.0
        while True:
            candidate = u + step * delta
            cand_weight, cand_clips, cand_zeros = _weight(beta, candidate, g, log_shift)
            cand_residual = f_theta + KAPPA * laplacian(grid, candidate) - cand_weight
            cand_sup = float(np.abs(cand_residual).max())
            if cand_sup < res_sup or step <= opts.min_step:
                break
            step *= 0.5
        if cand_sup >= res_sup:
            raise NoConvergence(
                f"line search stalled at step {step:.2e} with residual "
                f"{res_sup:.3e} (target {opts.newton_tol:.1e})",
                history=tuple(history),
            )
        u, weight, residual, res_sup = candidate, cand_weight, cand_residual, cand_sup
        clips, zeros = cand_clips, cand_zeros
        iters += 1
        history.append(res_sup)
        telemetry.append(
            {"iteration": iters, "residual_sup": res_sup, "step": step, "cg_iters": cg_iters}
        )
    return u, res_sup, iters, telemetry, clips, zeros


def _finish(
    grid: TorusGrid,
    beta: float,
    newton: tuple[np.ndarray, float, int, list[dict], int, int],
) -> BetaSolution:
    u, res_sup, iters, telemetry, clips, zeros = newton
    if clips:
        warnings.warn(
            f"{clips} node(s) hit the +{EXP_MAX:g} exponent clamp at beta={beta:g}",
            RuntimeWarning,
            stacklevel=3,
        )
    return BetaSolution(
        grid=grid,
        u=u,
        beta=beta,
        residual_sup=res_sup,
        iters=iters,
        exp_clips=clips,
        zero_weights=zeros,
        telemetry=tuple(telemetry),
    )


def solve_beta(
    theta: BackgroundForm,
    g: VolumeDensity,
    beta: float,
    opts: SolveOptions | None = None,
    u0: np.ndarray | None = None,
) -> BetaSolution:
    """Solve ``f_theta + KAPPA*laplacian(u) = exp(beta*u)*g``.

    The default initial guess is the constant ``log(max(V, floor))/beta``,
    which solves the equation exactly for constant data; passing ``u0``
    warm-starts a continuation sweep.

    Raises:
        NonKahler: if the class volume is not positive.
        NoConvergence: if the Newton budget or the line search is exhausted;
            the exception carries the residual history.
    """
    opts = opts or SolveOptions()
    if theta.volume <= 0.0:
        raise NonKahler(f"class volume {theta.volume:.6g} is not positive")
    if beta <= 0.0:
        raise ValidationError("beta must be positive")
    grid = theta.grid
    if g.grid.n != grid.n:
        raise ValidationError("volume density lives on a different grid")
    if u0 is None:
        u0 = np.full((grid.n, grid.n), np.log(max(theta.volume, VOLUME_FLOOR)) / beta)
    else:
        u0 = validate_field(grid, u0, "initial guess")
    newton = _newton(grid, theta.f_theta, g.g, beta, 0.0, opts, u0)
    return _finish(grid, beta, newton)


def solve_beta_divisor(
    omega: BackgroundForm,
    divisor: DivisorData,
    lam: float,
    beta: float,
    g: VolumeDensity,
    opts: SolveOptions | None = None,
    u0: np.ndarray | None = None,
) -> BetaSolution:
    """Solve the divisor-degenerate equation with vanishing weight ``lam``.

    The equation is, with the twisted background ``theta_lam``,

        f_theta_lam + KAPPA*laplacian(u) = exp(beta*u + lam*beta*h) * g,

    where ``h`` is the divisor Green potential; the two exponents are fused
    in log space so the degenerate factor cannot underflow the Jacobian.
    ``lam = 0`` reduces exactly to :func:`solve_beta`.

    Raises:
        SeshadriViolation: if the twisted volume ``V - lam*m`` is not positive.
    """
    opts = opts or SolveOptions()
    if lam < 0.0:
        raise ValidationError("divisor weight lam must be nonnegative")
    if beta <= 0.0:
        raise ValidationError("beta must be positive")
    volume = omega.volume - lam * divisor.total_mass
    if volume <= 0.0:
        raise SeshadriViolation(
            f"weight {lam:g} reaches the positivity threshold "
            f"{omega.volume / divisor.total_mass:.6g}"
        )
    twisted = twist(omega, divisor, lam)
    grid = twisted.grid
    if u0 is None:
        u0 = np.full((grid.n, grid.n), np.log(max(volume, VOLUME_FLOOR)) / beta)
    else:
        u0 = validate_field(grid, u0, "initial guess")
    log_shift = lam * beta * divisor.green_potential
    newton = _newton(grid, twisted.f_theta, g.g, beta, log_shift, opts, u0)
    return _finish(grid, beta, newton)


@dataclasses.dataclass(frozen=True)
class ComparisonVerdict:
    """Outcome of the sub/supersolution comparison check.

    ``worst_gap`` is the signed maximum of ``v - u`` (nonpositive when the
    comparison holds exactly); ``violation_count`` counts nodes exceeding the
    comparison tolerance.
    """

    holds: bool
    violation_count: int
    worst_gap: float
    v_residual_min: float
    u_residual_max: float


def check_comparison(
    theta: BackgroundForm,
    g: VolumeDensity,
    beta: float,
    u: np.ndarray,
    v: np.ndarray,
    class_tol: float = 1e-8,
    comparison_tol: float = 1e-8,
) -> ComparisonVerdict:
    """Classify ``v``/``u`` by residual sign and assert ``v <= u``.

    ``v`` must satisfy ``f_theta + KAPPA*laplacian(v) >= exp(beta*v)*g`` up to
    ``class_tol`` everywhere, and ``u`` the reverse inequality; the maximum
    principle for the strictly monotone exponential then forces ``v <= u``.

    Raises:
        NotClassifiable: if either field has residual signs mixed beyond
            ``class_tol``.
    """
    grid = theta.grid
    u = validate_field(grid, u, "u")
    v = validate_field(grid, v, "v")
    weight_v, _, _ = _weight(beta, v, g.g, 0.0)
    weight_u, _, _ = _weight(beta, u, g.g, 0.0)
    residual_v = ma_density(theta, v) - weight_v
    residual_u = ma_density(theta, u) - weight_u
    v_min = float(residual_v.min())
    u_max = float(residual_u.max())
    if v_min < -class_tol or u_max > class_tol:
        raise NotClassifiable(
            "residual signs are mixed beyond tolerance: "
            f"min residual(v) = {v_min:.3e}, max residual(u) = {u_max:.3e} "
            f"(class_tol {class_tol:.1e})"
        )
    gap = v - u
    worst = float(gap.max())
    violations = int(np.count_nonzero(gap > comparison_tol))
    return ComparisonVerdict(
        holds=worst <= comparison_tol,
        violation_count=violations,
        worst_gap=worst,
        v_residual_min=v_min,
        u_residual_max=u_max,
    )


@dataclasses.dataclass(frozen=True)
class LaplacianBoundReport:
    """Pointwise trace-ratio bound diagnostics for a converged solution.

    The bound compares the trace ratio ``(f_theta + KAPPA*lap(u)) / f_ref``
    against ``(1 - 1/beta)^{-1} e^{B w} (B/beta + S e^{-min(B w)})`` where
    ``w = u - v`` is the gap to the reference potential and ``S`` the largest
    background-to-reference density ratio.  ``slack`` is the worst pointwise
    margin (nonnegative iff the bound holds).
    """

    beta: float
    b_constant: float
    trace_ratio_max: float
    bound_sup: float
    bound_min: float
    slack: float
    holds: bool
    sup_trace_theta: float
    prefactor: float
    potential_osc: float


def laplacian_bound_report(
    theta: BackgroundForm,
    solution: BetaSolution,
    omega_ref: BackgroundForm,
    b_constant: float = 0.0,
) -> LaplacianBoundReport:
    """Trace-ratio bound of a solution against a positive reference form.

    The flat torus reference has zero curvature, so the default curvature
    constant is ``B = 0`` and the bound reduces to the constant
    ``(1 - 1/beta)^{-1} * max(f_theta / f_ref)``.

    Raises:
        BadReference: if the reference density is not strictly positive or
            lives in a different class volume (the gap potential would not
            exist).
        ValidationError: if ``beta <= 1`` (the prefactor degenerates).
    """
    beta = solution.beta
    if beta <= 1.0:
        raise ValidationError("beta must exceed 1 for the trace bound")
    grid = theta.grid
    f_ref = omega_ref.f_theta
    if float(f_ref.min()) <= 0.0:
        raise BadReference("reference density must be strictly positive")
    if abs(omega_ref.volume - theta.volume) > 1e-9 * max(1.0, abs(theta.volume)):
        raise BadReference(
            f"reference volume {omega_ref.volume:.6g} does not match the class "
            f"volume {theta.volume:.6g}"
        )
    ref_potential = poisson_solve(grid, (f_ref - theta.f_theta) / KAPPA, mean_tol=1e-6)
    w = solution.u - ref_potential
    trace_ratio = ma_density(theta, solution.u) / f_ref
    sup_trace_theta = float((theta.f_theta / f_ref).max())
    prefactor = 1.0 / (1.0 - 1.0 / beta)
    bound = prefactor * np.exp(b_constant * w) * (
        b_constant / beta + sup_trace_theta * np.exp(-float((b_constant * w).min()))
    )
    slack = float((bound - trace_ratio).min())
    return LaplacianBoundReport(
        beta=beta,
        b_constant=b_constant,
        trace_ratio_max=float(trace_ratio.max()),
        bound_sup=float(bound.max()),
        bound_min=float(bound.min()),
        slack=slack,
        holds=slack >= 0.0,
        sup_trace_theta=sup_trace_theta,
        prefactor=prefactor,
        potential_osc=float(w.max() - w.min()),
    )


def telemetry_jsonl(solution: BetaSolution) -> str:
    """Render the solve telemetry as JSON lines (one record per iteration)."""
    return "".join(json.dumps(entry, sort_keys=True) + "\n" for entry in solution.telemetry)
