"""Obstacle-problem (linear complementarity) solver and free boundaries.

Computes the largest field ``u`` below an obstacle whose curvature density
``f_theta + KAPPA * laplacian(u)`` stays nonnegative — the discrete linear
complementarity problem

    u <= phi0,    f_theta + KAPPA * laplacian(u) >= 0,
    (phi0 - u) * (f_theta + KAPPA * laplacian(u)) = 0.

The workhorse is a red-black projected Gauss-Seidel iteration with
over-relaxation; a primal-dual active-set pass (direct sparse solves on the
inactive set) then sharpens the iterate to the target complementarity
residual.  Contact sets, their interior curvature densities, and
marching-squares free boundaries are extracted from the solution.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .constants import KAPPA
from .errors import EmptyBoundary, InfeasibleClass, NoConvergence, SeshadriViolation
from .forms import BackgroundForm, DivisorData, twist
from .grid import TorusGrid, laplacian, validate_field

__all__ = [
    "Obstacle",
    "LcpOptions",
    "EnvelopeSolution",
    "FreeBoundary",
    "zero_obstacle",
    "project",
    "envelope_theta",
    "envelope_divisor",
    "free_boundary",
    "lcp_residual",
    "write_mask_pbm",
    "write_boundary_csv",
]


@dataclasses.dataclass(frozen=True)
class Obstacle:
    """Upper obstacle with optional unconstrained (no-ceiling) nodes.

    Attributes:
        values: obstacle heights; entries under an ``unconstrained`` flag are
            ignored (conceptually ``+inf``) and must not be relied upon.
        unconstrained: optional boolean mask marking nodes with no constraint.
    """

    values: np.ndarray
    unconstrained: np.ndarray | None = None

    def constrained_mask(self, grid: TorusGrid) -> np.ndarray:
        if self.unconstrained is None:
            return np.ones((grid.n, grid.n), dtype=bool)
        mask = np.asarray(self.unconstrained, dtype=bool)
        if mask.shape != (grid.n, grid.n):
            raise ValueError("unconstrained mask shape does not match the grid")
        return ~mask

    def ceiling(self, grid: TorusGrid) -> np.ndarray:
        """Obstacle values with unconstrained nodes mapped to ``+inf``."""
        constrained = self.constrained_mask(grid)
        values = np.asarray(self.values, dtype=float)
        if values.shape != (grid.n, grid.n):
            raise ValueError("obstacle shape does not match the grid")
        if not np.all(np.isfinite(values[constrained])):
            raise ValueError("obstacle has non-finite entries at constrained nodes")
        if not constrained.any():
            raise ValueError("obstacle must constrain at least one node")
        return np.where(constrained, values, np.inf)


def zero_obstacle(grid: TorusGrid) -> Obstacle:
    """The all-zero obstacle."""
    return Obstacle(np.zeros((grid.n, grid.n)))


@dataclasses.dataclass(frozen=True)
class LcpOptions:
    """Tolerances and budgets of the complementarity solver.

    ``lcp_tol`` is the target for the worst pointwise violation of the three
    complementarity conditions; ``contact_tol`` classifies contact nodes by
    their obstacle gap.  The projected-SOR stage runs with relaxation factor
    ``omega_relax`` until the residual reaches ``handoff_tol`` (or the sweep
    budget), after which the active-set stage finishes the job.
    """

    lcp_tol: float = 1e-10
    contact_tol: float = 1e-7
    omega_relax: float = 1.5
    max_sweeps: int = 200_000
    handoff_tol: float = 1e-6
    max_active_set_iters: int = 60
    check_every: int = 25


@dataclasses.dataclass(frozen=True)
class EnvelopeSolution:
    """Converged obstacle-problem solution and its contact structure.

    Attributes:
        grid: carrier lattice.
        u: the envelope field.
        contact_mask: nodes with obstacle gap at most ``contact_tol``.
        comp_residual: worst pointwise complementarity violation.
        gap: obstacle gap ``phi0 - u`` (``+inf`` at unconstrained nodes).
        sweeps: projected-SOR sweeps used.
        active_set_iters: active-set refinement passes used.
        min_density_on_contact: measured minimum of the curvature density on
            the contact set (``+inf`` when the contact set is empty); recorded
            so that nonnegativity of the density on contact is observed, not
            assumed.
        lam: divisor weight for divisor envelopes, else None.
        phi: shifted potential ``u + lam * green_potential`` for divisor
            envelopes (nonpositive up to ``lcp_tol``), else None.
    """

    grid: TorusGrid
    u: np.ndarray
    contact_mask: np.ndarray
    comp_residual: float
    gap: np.ndarray
    sweeps: int
    active_set_iters: int
    min_density_on_contact: float
    lam: float | None = None
    phi: np.ndarray | None = None


def lcp_residual(
    grid: TorusGrid,
    f_theta: np.ndarray,
    ceiling: np.ndarray,
    u: np.ndarray,
) -> float:
    """Worst pointwise violation of the three complementarity conditions."""
    density = f_theta + KAPPA * laplacian(grid, u)
    gap = ceiling - u
    negative_density = max(0.0, float(-density.min()))
    overshoot = max(0.0, float(-(gap.min())))
    product = float(
        np.minimum(np.maximum(density, 0.0), np.maximum(gap, 0.0)).max()
    )
    return max(negative_density, overshoot, product)


# ---------------------------------------------------------------------------
# Projected SOR stage
# ---------------------------------------------------------------------------


def _psor(
    grid: TorusGrid,
    f_theta: np.ndarray,
    ceiling: np.ndarray,
    u0: np.ndarray,
    opts: LcpOptions,
    target: float,
) -> tuple[np.ndarray, int, float]:
    """Red-black projected SOR until the residual reaches ``target``."""
    red = grid.checkerboard
    black = ~red
    local_source = grid.h**2 * f_theta / (4.0 * KAPPA)
    omega = opts.omega_relax
    u = u0.copy()
    residual = lcp_residual(grid, f_theta, ceiling, u)
    sweeps = 0
    while residual > target and sweeps < opts.max_sweeps:
        for parity in (red, black):
            neighbours = (
                np.roll(u, 1, axis=0)
                + np.roll(u, -1, axis=0)
                + np.roll(u, 1, axis=1)
                + np.roll(u, -1, axis=1)
            )
            local = 0.25 * neighbours + local_source
            relaxed = u + omega * (local - u)
            u[parity] = np.minimum(relaxed, ceiling)[parity]
        sweeps += 1
        if sweeps % opts.check_every == 0 or sweeps == opts.max_sweeps:
            residual = lcp_residual(grid, f_theta, ceiling, u)
    if residual > target:
        residual = lcp_residual(grid, f_theta, ceiling, u)
    return u, sweeps, residual


# ---------------------------------------------------------------------------
# Active-set refinement stage
# ---------------------------------------------------------------------------

_OPERATOR_CACHE: dict[int, sp.csr_matrix] = {}


def _negative_curvature_operator(grid: TorusGrid) -> sp.csr_matrix:
    """Sparse matrix of ``-KAPPA * laplacian`` on the flattened grid."""
    matrix = _OPERATOR_CACHE.get(grid.n)
    if matrix is None:
        n = grid.n
        ring = sp.diags([np.ones(n - 1), np.ones(n - 1)], [1, -1], (n, n), format="lil")
        ring[0, n - 1] = 1.0
        ring[n - 1, 0] = 1.0
        ring = ring - 2.0 * sp.eye(n)
        eye = sp.eye(n)
        lap = (sp.kron(ring, eye) + sp.kron(eye, ring)) / grid.h**2
        matrix = (-KAPPA * lap).tocsr()
        _OPERATOR_CACHE[grid.n] = matrix
    return matrix


def _active_set_refine(
    grid: TorusGrid,
    f_theta: np.ndarray,
    ceiling: np.ndarray,
    constrained: np.ndarray,
    u0: np.ndarray,
    opts: LcpOptions,
) -> tuple[np.ndarray, int]:
    """Primal-dual active-set passes from a warm start.

    The active set is predicted by the sign of the penalized residual
    ``density + (KAPPA/h^2) * (u - phi0)``; the equality system is then
    solved exactly on the inactive set with the active nodes pinned to the
    obstacle.  Warm-started from the SOR iterate this settles in a few
    passes.
    """
    operator = _negative_curvature_operator(grid)
    shape = (grid.n, grid.n)
    b = f_theta.ravel()
    penalty = KAPPA / grid.h**2

    u = u0.copy()
    density = f_theta + KAPPA * laplacian(grid, u)
    active = ((density + penalty * (u - ceiling)) > 0.0) & constrained
    passes = 0
    for _ in range(opts.max_active_set_iters):
        if not active.any():
            # An empty ceiling-contact set leaves the equality system with a
            # one-dimensional kernel; keep the warm iterate instead.
            break
        passes += 1
        if active.all():
            u = ceiling.copy()
        else:
            act = active.ravel()
            inact = ~act
            reduced = operator[inact][:, inact].tocsc()
            coupling = operator[inact][:, act]
            rhs = b[inact] - coupling @ ceiling.ravel()[act]
            flat = np.empty(grid.n * grid.n)
            flat[act] = ceiling.ravel()[act]
            flat[inact] = spla.splu(reduced).solve(rhs)
            u = flat.reshape(shape)
        density = f_theta + KAPPA * laplacian(grid, u)
        new_active = ((density + penalty * (u - ceiling)) > 0.0) & constrained
        if np.array_equal(new_active, active):
            break
        active = new_active
    return u, passes


# ---------------------------------------------------------------------------
# Public solver entry points
# ---------------------------------------------------------------------------


def project(
    theta: BackgroundForm,
    obstacle: Obstacle,
    opts: LcpOptions | None = None,
    u0: np.ndarray | None = None,
) -> EnvelopeSolution:
    """Largest curvature-admissible field below the obstacle.

    Solves the complementarity system stated in the module docstring by
    projected SOR plus an active-set refinement, and classifies the contact
    set by the obstacle gap.  Unconstrained obstacle nodes never enter the
    contact set.

    Raises:
        InfeasibleClass: if the class volume is not positive.
        NoConvergence: if the residual target cannot be reached; the message
            reports the worst complementarity residual.
    """
    opts = opts or LcpOptions()
    grid = theta.grid
    if theta.volume <= 0.0:
        raise InfeasibleClass(
            f"class volume {theta.volume:.6g} is not positive; the constraint set "
            "is empty in the limit"
        )
    f_theta = theta.f_theta
    constrained = obstacle.constrained_mask(grid)
    ceiling = obstacle.ceiling(grid)

    if u0 is None:
        start_level = float(obstacle.values[constrained].max())
        u = np.where(constrained, np.asarray(obstacle.values, dtype=float), start_level)
    else:
        u = np.minimum(validate_field(grid, u0, "initial guess"), ceiling)

    u, sweeps, residual = _psor(grid, f_theta, ceiling, u, opts, opts.handoff_tol)
    passes = 0
    if residual > opts.lcp_tol:
        refined, passes = _active_set_refine(grid, f_theta, ceiling, constrained, u, opts)
        refined_residual = lcp_residual(grid, f_theta, ceiling, refined)
        if refined_residual < residual:
            u, residual = refined, refined_residual
    if residual > opts.lcp_tol:
        # Fall back to grinding SOR down to the full tolerance.
        u, extra_sweeps, residual = _psor(grid, f_theta, ceiling, u, opts, opts.lcp_tol)
        sweeps += extra_sweeps
    if residual > opts.lcp_tol:
        raise NoConvergence(
            f"complementarity solver stalled: worst residual {residual:.3e} "
            f"after {sweeps} sweeps and {passes} active-set passes "
            f"(target {opts.lcp_tol:.1e})"
        )

    gap = ceiling - u
    contact = (gap <= opts.contact_tol) & constrained
    density = f_theta + KAPPA * laplacian(grid, u)
    min_density = float(density[contact].min()) if contact.any() else np.inf
    return EnvelopeSolution(
        grid=grid,
        u=u,
        contact_mask=contact,
        comp_residual=residual,
        gap=gap,
        sweeps=sweeps,
        active_set_iters=passes,
        min_density_on_contact=min_density,
    )


def envelope_theta(theta: BackgroundForm, opts: LcpOptions | None = None) -> EnvelopeSolution:
    """Envelope below the zero obstacle.

    In addition to :func:`project`, checks that the solution peaks at zero
    whenever the contact set is nonempty.
    """
    opts = opts or LcpOptions()
    solution = project(theta, zero_obstacle(theta.grid), opts)
    if solution.contact_mask.any() and abs(float(solution.u.max())) > opts.contact_tol:
        raise NoConvergence(
            f"zero-obstacle envelope must peak at zero, got sup u = "
            f"{float(solution.u.max()):.3e}"
        )
    return solution


def envelope_divisor(
    omega: BackgroundForm,
    divisor: DivisorData,
    lam: float,
    opts: LcpOptions | None = None,
    u0: np.ndarray | None = None,
) -> EnvelopeSolution:
    """Envelope with prescribed vanishing weight ``lam`` along the divisor.

    Solves the obstacle problem for the twisted form with obstacle
    ``-lam * green_potential`` (finite on the grid, so divisor nodes are
    ordinary constrained nodes) and returns the solution together with the
    shifted potential ``phi = u + lam * green_potential``, which is
    nonpositive up to the solver tolerance.

    Raises:
        SeshadriViolation: if the twisted volume ``V - lam*m`` is not positive.
    """
    opts = opts or LcpOptions()
    if omega.volume - lam * divisor.total_mass <= 0.0:
        raise SeshadriViolation(
            f"weight {lam:g} reaches the positivity threshold "
            f"{omega.volume / divisor.total_mass:.6g}"
        )
    twisted = twist(omega, divisor, lam)
    obstacle = Obstacle(-lam * divisor.green_potential)
    solution = project(twisted, obstacle, opts, u0=u0)
    phi = solution.u + lam * divisor.green_potential
    return dataclasses.replace(solution, lam=lam, phi=phi)


# ---------------------------------------------------------------------------
# Free-boundary extraction
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class FreeBoundary:
    """Closed contour polylines of the contact interface.

    Attributes:
        polylines: tuple of ``(k, 2)`` vertex arrays in torus coordinates;
            each polyline is closed (last vertex connects to the first) and
            may wrap around the periodic seams.
        total_length: summed length with minimum-image segment distances.
        n_components: number of closed polylines.
    """

    polylines: tuple[np.ndarray, ...]
    total_length: float
    n_components: int


# Local edge names of a lattice cell spanned by nodes (i,j), (i+1,j),
# (i,j+1), (i+1,j+1): S(outh) and N(orth) run along x, W(est) and E(ast)
# along y.  Cases are indexed by the "inside" bitmask of corners
# A=(i,j) -> 1, B=(i+1,j) -> 2, C=(i+1,j+1) -> 4, D=(i,j+1) -> 8.
_CASE_SEGMENTS: dict[int, tuple[tuple[str, str], ...]] = {
    1: (("W", "S"),),
    2: (("S", "E"),),
    4: (("E", "N"),),
    8: (("N", "W"),),
    3: (("W", "E"),),
    12: (("W", "E"),),
    6: (("S", "N"),),
    9: (("S", "N"),),
    7: (("N", "W"),),
    14: (("W", "S"),),
    13: (("S", "E"),),
    11: (("E", "N"),),
}


def _cell_edges(n: int, i: int, j: int) -> dict[str, tuple[str, int, int]]:
    return {
        "S": ("x", i, j),
        "N": ("x", i, (j + 1) % n),
        "W": ("y", i, j),
        "E": ("y", (i + 1) % n, j),
    }


def _edge_crossing(grid: TorusGrid, s: np.ndarray, key: tuple[str, int, int]):
    axis, i, j = key
    n, h = grid.n, grid.h
    sa = s[i, j]
    sb = s[(i + 1) % n, j] if axis == "x" else s[i, (j + 1) % n]
    t = sa / (sa - sb)
    if axis == "x":
        return ((i + t) * h) % 1.0, j * h
    return i * h, ((j + t) * h) % 1.0


def _min_image_distance(p: np.ndarray, q: np.ndarray) -> float:
    d = (p - q + 0.5) % 1.0 - 0.5
    return float(np.hypot(d[0], d[1]))


def free_boundary(
    solution: EnvelopeSolution, contact_tol: float | None = None
) -> FreeBoundary:
    """Marching-squares contour of the obstacle-gap level ``contact_tol``.

    Returns the closed polylines separating contact from non-contact, with
    their total minimum-image length.  The gap field (not the equation
    residual) classifies the interface because it is monotone across it.

    Raises:
        EmptyBoundary: if the contact mask is trivial (all or no nodes).
    """
    grid = solution.grid
    tol = LcpOptions().contact_tol if contact_tol is None else contact_tol
    gap = solution.gap
    finite_max = gap[np.isfinite(gap)].max() if np.isfinite(gap).any() else 1.0
    s = np.where(np.isfinite(gap), gap, finite_max + 1.0) - tol
    inside = s < 0.0  # contact side

    if inside.all() or not inside.any():
        raise EmptyBoundary(
            "contact mask is trivial "
            f"({'all' if inside.all() else 'no'} nodes); nothing to contour"
        )

    n = grid.n
    in00 = inside
    in10 = np.roll(inside, -1, axis=0)
    in01 = np.roll(inside, -1, axis=1)
    in11 = np.roll(in10, -1, axis=1)
    code = (
        in00.astype(np.int8)
        + 2 * in10.astype(np.int8)
        + 4 * in11.astype(np.int8)
        + 8 * in01.astype(np.int8)
    )
    center = (
        s + np.roll(s, -1, axis=0) + np.roll(s, -1, axis=1) + np.roll(np.roll(s, -1, 0), -1, 1)
    )

    crossings: dict[tuple[str, int, int], tuple[float, float]] = {}
    adjacency: dict[tuple[str, int, int], list[tuple[str, int, int]]] = {}
    for i, j in np.argwhere((code > 0) & (code < 15)):
        c = int(code[i, j])
        if c == 5:
            segments = (("S", "E"), ("N", "W")) if center[i, j] < 0 else (("W", "S"), ("E", "N"))
        elif c == 10:
            segments = (("W", "S"), ("E", "N")) if center[i, j] < 0 else (("S", "E"), ("N", "W"))
        else:
            segments = _CASE_SEGMENTS[c]
        edges = _cell_edges(n, int(i), int(j))
        for a, b in segments:
            ka, kb = edges[a], edges[b]
            for key in (ka, kb):
                if key not in crossings:
                    crossings[key] = _edge_crossing(grid, s, key)
            adjacency.setdefault(ka, []).append(kb)
            adjacency.setdefault(kb, []).append(ka)

    if not crossings:
        raise EmptyBoundary("no gap-level crossings found; contact interface is trivial")

    polylines: list[np.ndarray] = []
    total = 0.0
    visited: set[tuple[str, int, int]] = set()
    for start in sorted(adjacency):
        if start in visited:
            continue
        loop = [start]
        visited.add(start)
        prev, cur = None, start
        while True:
            nbrs = adjacency[cur]
            nxt = nbrs[0] if nbrs[0] != prev else nbrs[1]
            if nxt == start:
                break
            loop.append(nxt)
            visited.add(nxt)
            prev, cur = cur, nxt
        points = np.array([crossings[k] for k in loop])
        polylines.append(points)
        for a in range(len(points)):
            total += _min_image_distance(points[a], points[(a + 1) % len(points)])

    return FreeBoundary(tuple(polylines), total, len(polylines))


def write_mask_pbm(path, mask: np.ndarray) -> None:
    """Write a boolean field as a plain-text PBM bitmap.

    Row ``r`` of the image holds the nodes with ``y = (n-1-r)*h`` (north up)
    and column ``c`` the nodes with ``x = c*h``; set nodes render black (1).
    """
    mask = np.asarray(mask, dtype=bool)
    height, width = mask.shape[1], mask.shape[0]
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(f"P1\n{width} {height}\n")
        for r in range(height):
            row = mask[:, height - 1 - r]
            handle.write(" ".join("1" if v else "0" for v in row) + "\n")


def write_boundary_csv(path, boundary: FreeBoundary) -> None:
    """Write free-boundary vertices as CSV rows of (polyline, vertex, x, y)."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("polyline,vertex,x,y\n")
        for p, points in enumerate(boundary.polylines):
            for v, (x, y) in enumerate(points):
                handle.write(f"{p},{v},{x:.17g},{y:.17g}\n")
