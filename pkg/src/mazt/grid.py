"""Discrete calculus on the unit-area flat 2-torus.

The torus is sampled on an ``N``-by-``N`` periodic lattice with spacing
``h = 1/N``, so the total area is exactly one and every node has four
periodic neighbours.  Scalar fields are plain ``float64`` arrays of shape
``(N, N)``; index ``(i, j)`` holds the value at the point
``(x, y) = (i*h, j*h)``.

Provided operations: the periodic 5-point Laplacian, the exact cell-rule
integral, spectral (FFT) Poisson and Helmholtz solves, centered-difference
gradient norms, and binary/CSV serialization of fields.  All operations are
pure functions of their inputs and safe to call concurrently on shared
read-only data.
"""

from __future__ import annotations

import dataclasses
import functools
import struct
from pathlib import Path
from typing import Callable

import numpy as np

from .constants import KAPPA
from .errors import NonZeroMean

__all__ = [
    "TorusGrid",
    "laplacian",
    "integrate",
    "poisson_solve",
    "helmholtz_solve",
    "grad_sup_norm",
    "validate_field",
    "dump_field",
    "load_field",
    "write_field_csv",
    "FIELD_MAGIC",
]

#: Magic bytes of the binary field-dump format.
FIELD_MAGIC = b"MAZT"

_HEADER = struct.Struct("<4sI")


@dataclasses.dataclass(frozen=True)
class TorusGrid:
    """Periodic ``n`` x ``n`` discretization of the unit-area flat torus.

    Attributes:
        n: node count per axis (at least 8).
    """

    n: int

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 8:
            raise ValueError(f"grid needs an integer node count >= 8, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))

    @property
    def h(self) -> float:
        """Lattice spacing; ``h * n == 1`` in the working precision."""
        return 1.0 / self.n

    @property
    def cell_area(self) -> float:
        """Area of one lattice cell, ``h**2``; the total area is one."""
        return self.h * self.h

    @functools.cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinate arrays ``(X, Y)``, each of shape ``(n, n)``."""
        axis = np.arange(self.n, dtype=float) * self.h
        x, y = np.meshgrid(axis, axis, indexing="ij")
        x.setflags(write=False)
        y.setflags(write=False)
        return x, y

    @functools.cached_property
    def laplacian_symbol(self) -> np.ndarray:
        """Fourier multiplier of the 5-point stencil on the half-spectrum.

        Entry ``(k, l)`` equals ``-(4/h^2)*(sin^2(pi*k/n) + sin^2(pi*l/n))``,
        laid out for ``numpy.fft.rfft2``.
        """
        n = self.n
        k = np.fft.fftfreq(n) * n
        l = np.fft.rfftfreq(n) * n
        sk = np.sin(np.pi * k / n) ** 2
        sl = np.sin(np.pi * l / n) ** 2
        sym = -(4.0 / self.h**2) * (sk[:, None] + sl[None, :])
        sym.setflags(write=False)
        return sym

    @functools.cached_property
    def _poisson_divisor(self) -> np.ndarray:
        """Laplacian symbol with the zero mode replaced by ``inf``.

        Dividing a spectrum by this array zeroes the mean mode exactly.
        """
        div = self.laplacian_symbol.copy()
        div[0, 0] = np.inf
        div.setflags(write=False)
        return div

    @functools.cached_property
    def checkerboard(self) -> np.ndarray:
        """Boolean parity mask: ``True`` where ``(i + j)`` is even."""
        i, j = np.indices((self.n, self.n))
        mask = (i + j) % 2 == 0
        mask.setflags(write=False)
        return mask

    def sample(self, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
        """Sample ``fn(x, y)`` at every node, returning an ``(n, n)`` array."""
        x, y = self.coords
        values = np.asarray(fn(x, y), dtype=float)
        return np.broadcast_to(values, (self.n, self.n)).copy()


def validate_field(grid: TorusGrid, f: np.ndarray, name: str = "field") -> np.ndarray:
    """Check that ``f`` is a finite ``(n, n)`` float array for ``grid``."""
    f = np.asarray(f, dtype=float)
    if f.shape != (grid.n, grid.n):
        raise ValueError(f"{name} has shape {f.shape}, expected {(grid.n, grid.n)}")
    if not np.all(np.isfinite(f)):
        raise ValueError(f"{name} contains non-finite entries")
    return f


def laplacian(grid: TorusGrid, f: np.ndarray) -> np.ndarray:
    """Periodic 5-point Laplacian ``(f_E + f_W + f_N + f_S - 4 f_C) / h^2``.

    The output has zero mean up to round-off.
    """
    return (
        np.roll(f, 1, axis=0)
        + np.roll(f, -1, axis=0)
        + np.roll(f, 1, axis=1)
        + np.roll(f, -1, axis=1)
        - 4.0 * f
    ) / grid.h**2


def integrate(grid: TorusGrid, f: np.ndarray) -> float:
    """Cell-rule integral ``cell_area * sum(f)`` (exact for grid functions)."""
    return float(grid.cell_area * f.sum())


def poisson_solve(grid: TorusGrid, rhs: np.ndarray, mean_tol: float = 1e-8) -> np.ndarray:
    """Invert the Laplacian on mean-zero data by Fourier diagonalization.

    Returns the unique zero-mean field ``u`` with
    ``laplacian(u) = rhs - mean(rhs)``.

    Raises:
        NonZeroMean: if ``|integrate(rhs)| > mean_tol``.
    """
    mass = integrate(grid, rhs)
    if abs(mass) > mean_tol:
        raise NonZeroMean(
            f"poisson data has mean {mass:.3e}, beyond tolerance {mean_tol:.3e}"
        )
    spectrum = np.fft.rfft2(rhs) / grid._poisson_divisor
    return np.fft.irfft2(spectrum, s=(grid.n, grid.n))


def helmholtz_solve(grid: TorusGrid, rhs: np.ndarray, shift: float) -> np.ndarray:
    """Solve ``(shift - KAPPA * laplacian) u = rhs`` spectrally.

    Requires ``shift > 0`` (the operator is then symmetric positive
    definite).  Used as the preconditioner of the semilinear solvers.
    """
    if shift <= 0.0:
        raise ValueError(f"helmholtz shift must be positive, got {shift!r}")
    denom = shift - KAPPA * grid.laplacian_symbol
    spectrum = np.fft.rfft2(rhs) / denom
    return np.fft.irfft2(spectrum, s=(grid.n, grid.n))


def grad_sup_norm(grid: TorusGrid, f: np.ndarray) -> float:
    """Max over nodes of the Euclidean norm of the centered-difference gradient."""
    gx = (np.roll(f, -1, axis=0) - np.roll(f, 1, axis=0)) / (2.0 * grid.h)
    gy = (np.roll(f, -1, axis=1) - np.roll(f, 1, axis=1)) / (2.0 * grid.h)
    return float(np.sqrt(gx * gx + gy * gy).max())


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def dump_field(path: str | Path, grid: TorusGrid, f: np.ndarray) -> None:
    """Write a field in the binary dump format.

    Layout: little-endian, header = magic ``MAZT`` + ``u32 n``, followed by
    ``n*n`` ``float64`` values in row-major order.
    """
    f = validate_field(grid, f)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FIELD_MAGIC, grid.n))
        fh.write(np.ascontiguousarray(f, dtype="<f8").tobytes())


def load_field(path: str | Path) -> tuple[TorusGrid, np.ndarray]:
    """Read a binary field dump, returning its grid and values."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated field dump")
    magic, n = _HEADER.unpack_from(raw)
    if magic != FIELD_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    body = raw[_HEADER.size :]
    expected = n * n * 8
    if len(body) != expected:
        raise ValueError(f"{path}: expected {expected} payload bytes, got {len(body)}")
    values = np.frombuffer(body, dtype="<f8").astype(float).reshape(n, n)
    return TorusGrid(n), values


def write_field_csv(path: str | Path, grid: TorusGrid, f: np.ndarray) -> None:
    """Write a field as CSV with columns ``i,j,x,y,value``.

    Floats are printed with ``%.17g`` so repeated runs are byte-identical.
    """
    f = validate_field(grid, f)
    h = grid.h
    with open(path, "w", newline="\n") as fh:
        fh.write("i,j,x,y,value\n")
        for i in range(grid.n):
            x = i * h
            row = f[i]
            for j in range(grid.n):
                fh.write(f"{i},{j},{x:.17g},{j * h:.17g},{row[j]:.17g}\n")
