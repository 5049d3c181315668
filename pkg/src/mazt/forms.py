"""Background forms, volume densities, and divisor data on the torus.

A background form is represented by its density ``f_theta`` with respect to
the area element, together with the class volume ``V = integrate(f_theta)``;
the density may be negative pointwise while the class stays positive.  A
divisor is a set of marked nodes with multiplicities; its data bundle carries
a curvature density ``f_l`` of total mass ``m`` and the discrete Green
potential (the lattice analogue of ``log ||s||^2``), normalized to peak at
zero and finite everywhere, including at the marked nodes.
"""

from __future__ import annotations

import dataclasses
import warnings
from typing import Callable, Iterable, Sequence

import numpy as np

from .constants import KAPPA
from .errors import BadMass, NonKahler
from .grid import TorusGrid, integrate, laplacian, poisson_solve, validate_field
from .recipes import compile_recipe

__all__ = [
    "BackgroundForm",
    "VolumeDensity",
    "DivisorData",
    "SeshadriBound",
    "make_background",
    "make_volume",
    "make_divisor",
    "make_divisor_from_points",
    "snap_node",
    "twist",
    "ma_density",
    "seshadri_bound",
    "divisor_green_residual",
]

DensityLike = "np.ndarray | float | str | Callable[[np.ndarray, np.ndarray], np.ndarray]"


def _sample_density(grid: TorusGrid, density, name: str) -> np.ndarray:
    """Realize a density given as an array, scalar, recipe string, or callable."""
    if isinstance(density, str):
        density = compile_recipe(density)
    if callable(density):
        values = grid.sample(density)
    elif np.isscalar(density):
        values = np.full((grid.n, grid.n), float(density))
    else:
        values = np.array(density, dtype=float)
    return validate_field(grid, values, name)


def _frozen(values: np.ndarray) -> np.ndarray:
    out = np.array(values, dtype=float)
    out.setflags(write=False)
    return out


@dataclasses.dataclass(frozen=True)
class BackgroundForm:
    """Density of a closed background form and its class volume.

    Attributes:
        grid: the carrier lattice.
        f_theta: density with respect to the area element (may be negative).
        volume: class volume ``V = integrate(f_theta)``.
    """

    grid: TorusGrid
    f_theta: np.ndarray
    volume: float


@dataclasses.dataclass(frozen=True)
class VolumeDensity:
    """Strictly positive density ``g`` normalized to unit total mass."""

    grid: TorusGrid
    g: np.ndarray


@dataclasses.dataclass(frozen=True)
class DivisorData:
    """Marked nodes with multiplicities, curvature density, and Green potential.

    Attributes:
        grid: the carrier lattice.
        nodes: tuple of ``(i, j, multiplicity)`` triples.
        total_mass: sum of multiplicities ``m``.
        f_l: curvature density with ``integrate(f_l) = m``.
        green_potential: field ``h_s`` with
            ``KAPPA * laplacian(h_s) = (point masses) - f_l`` and
            ``max(h_s) = 0``; finite everywhere (the point masses are
            resolution-dependent single-cell densities ``m_i / h^2``).
    """

    grid: TorusGrid
    nodes: tuple[tuple[int, int, float], ...]
    total_mass: float
    f_l: np.ndarray
    green_potential: np.ndarray


@dataclasses.dataclass(frozen=True)
class SeshadriBound:
    """Positivity threshold ``V/m`` for twisting by a divisor.

    ``exact`` is True when the curvature density is constant, in which case
    the threshold is sharp; otherwise the value is an upper bound only.
    """

    value: float
    exact: bool


def make_background(grid: TorusGrid, density, require_kahler: bool = True) -> BackgroundForm:
    """Sample a background density at the nodes and record its volume.

    Raises:
        NonKahler: if ``require_kahler`` and the class volume is not positive.
    """
    f_theta = _sample_density(grid, density, "background density")
    volume = integrate(grid, f_theta)
    if require_kahler and volume <= 0.0:
        raise NonKahler(f"class volume must be positive, got {volume:.6g}")
    return BackgroundForm(grid, _frozen(f_theta), volume)


def make_volume(grid: TorusGrid, density=1.0) -> VolumeDensity:
    """Sample a strictly positive density and normalize it to unit mass."""
    g = _sample_density(grid, density, "volume density")
    low = float(g.min())
    if low <= 0.0:
        raise ValueError(f"volume density must be strictly positive, min is {low:.6g}")
    g = g / integrate(grid, g)
    return VolumeDensity(grid, _frozen(g))


def make_divisor(
    grid: TorusGrid,
    nodes: Iterable[tuple[int, int, float]],
    f_l=None,
    mass_tol: float = 1e-10,
) -> DivisorData:
    """Build divisor data from node indices and multiplicities.

    The Green potential solves ``KAPPA * laplacian(h_s) = dirac - f_l`` where
    each marked node carries the single-cell density ``m_i / h^2``; it is
    shifted so that ``max(h_s) = 0``.  The default curvature density is the
    constant ``m``.

    Raises:
        BadMass: if ``integrate(f_l)`` differs from the total multiplicity.
    """
    node_list: list[tuple[int, int, float]] = []
    for i, j, mult in nodes:
        mult = float(mult)
        if mult <= 0.0:
            raise ValueError(f"multiplicity must be positive, got {mult!r}")
        node_list.append((int(i) % grid.n, int(j) % grid.n, mult))
    if not node_list:
        raise ValueError("divisor needs at least one marked node")
    total = float(sum(m for _, _, m in node_list))

    if f_l is None:
        f_l_values = np.full((grid.n, grid.n), total)
    else:
        f_l_values = _sample_density(grid, f_l, "divisor curvature density")
    f_l_mass = integrate(grid, f_l_values)
    if abs(f_l_mass - total) > mass_tol * max(1.0, abs(total)):
        raise BadMass(
            f"divisor curvature density integrates to {f_l_mass:.12g}, "
            f"expected total multiplicity {total:.12g}"
        )

    dirac = np.zeros((grid.n, grid.n))
    for i, j, mult in node_list:
        dirac[i, j] += mult / grid.cell_area
    green = poisson_solve(grid, (dirac - f_l_values) / KAPPA, mean_tol=1e-6)
    green = green - green.max()
    return DivisorData(grid, tuple(node_list), total, _frozen(f_l_values), _frozen(green))


def snap_node(grid: TorusGrid, x: float, y: float) -> tuple[int, int, float]:
    """Snap a point to the nearest grid node, returning ``(i, j, distance)``.

    The distance is measured with the periodic minimum-image convention.
    """
    i = int(round(x / grid.h)) % grid.n
    j = int(round(y / grid.h)) % grid.n
    dx = (x - i * grid.h + 0.5) % 1.0 - 0.5
    dy = (y - j * grid.h + 0.5) % 1.0 - 0.5
    return i, j, float(np.hypot(dx, dy))


def make_divisor_from_points(
    grid: TorusGrid,
    points: Sequence[tuple[float, float, float]],
    f_l=None,
) -> DivisorData:
    """Build divisor data from ``(x, y, multiplicity)`` points.

    Points are snapped to the nearest node; a warning records each nonzero
    snap distance.
    """
    nodes = []
    for x, y, mult in points:
        i, j, dist = snap_node(grid, float(x), float(y))
        if dist > 1e-12:
            warnings.warn(
                f"divisor point ({x:g}, {y:g}) snapped to node ({i}, {j}), "
                f"distance {dist:.3e}",
                stacklevel=2,
            )
        nodes.append((i, j, mult))
    return make_divisor(grid, nodes, f_l=f_l)


def twist(
    theta: BackgroundForm,
    divisor: DivisorData,
    lam: float,
    require_kahler: bool = False,
) -> BackgroundForm:
    """Twist a background form by ``lam`` times the divisor curvature.

    The density becomes ``f_theta - lam * f_l`` and the volume
    ``V - lam * m`` exactly in arithmetic.

    Raises:
        NonKahler: if ``require_kahler`` and the twisted volume is not positive.
    """
    if lam < 0.0:
        raise ValueError(f"twist weight must be nonnegative, got {lam!r}")
    volume = theta.volume - lam * divisor.total_mass
    if require_kahler and volume <= 0.0:
        raise NonKahler(
            f"twisted volume {volume:.6g} is not positive (weight {lam:g} reaches "
            f"the positivity threshold {theta.volume / divisor.total_mass:.6g})"
        )
    density = theta.f_theta - lam * divisor.f_l
    return BackgroundForm(theta.grid, _frozen(density), volume)


def ma_density(theta: BackgroundForm, u: np.ndarray) -> np.ndarray:
    """Curvature density ``f_theta + KAPPA * laplacian(u)`` of a potential."""
    return theta.f_theta + KAPPA * laplacian(theta.grid, u)


def seshadri_bound(theta: BackgroundForm, divisor: DivisorData) -> SeshadriBound:
    """Largest twist weight keeping the class positive, as ``V/m``.

    For a constant curvature density the value is exact; otherwise it is
    flagged as an upper bound only.
    """
    f_l = divisor.f_l
    exact = bool(np.allclose(f_l, f_l.flat[0], rtol=0.0, atol=1e-12))
    return SeshadriBound(theta.volume / divisor.total_mass, exact)


def divisor_green_residual(divisor: DivisorData) -> float:
    """Sup-norm defect of the Green potential against its defining equation.

    Returns ``max |KAPPA * laplacian(h_s) - (dirac - f_l)|``, which is a pure
    round-off quantity (relative to the ``m/h^2`` scale of the point masses).
    """
    grid = divisor.grid
    dirac = np.zeros((grid.n, grid.n))
    for i, j, mult in divisor.nodes:
        dirac[i, j] += mult / grid.cell_area
    residual = KAPPA * laplacian(grid, divisor.green_potential) - (dirac - divisor.f_l)
    return float(np.abs(residual).max())
