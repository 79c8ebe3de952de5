"""Uniform cell-centred 3-D grids and the discrete calculus used by the solvers.

Conventions
-----------
* Cell ``(i, j, k)`` has centre ``origin + (i + 1/2, j + 1/2, k + 1/2) * h``.
* Arrays are indexed ``[i, j, k]`` (x, y, z).  Text dumps are written in
  x-fastest order, i.e. ``values.ravel(order="F")``.
* Potentials carry a zero ghost layer (homogeneous Dirichlet data); phase
  fields carry a ghost layer fixed to 1 (solvent surrounds the box).
* Gradients live on faces.  Along x there are ``nx + 1`` faces; face ``i``
  separates cells ``i - 1`` and ``i`` and faces ``0`` / ``nx`` touch the ghost
  layer.  The forward difference of cell ``i`` is face ``i + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels

__all__ = [
    "Grid3D",
    "ScalarField",
    "PhaseField",
    "VectorField",
    "gradient",
    "divergence",
    "cell_gradient_sq",
    "tv_anisotropic",
    "coarea_tv",
    "integrate",
    "integrate_masked",
    "write_structured_grid",
    "read_structured_grid",
]


@dataclass(frozen=True)
class Grid3D:
    origin: tuple[float, float, float]
    spacing: float
    dims: tuple[int, int, int]

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError(f"grid spacing must be positive, got {self.spacing}")
        if len(self.dims) != 3 or any(int(n) < 2 for n in self.dims):
            raise ValueError(f"grid needs at least 2 cells per axis, got {self.dims}")
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        object.__setattr__(self, "spacing", float(self.spacing))

    @classmethod
    def cube(cls, side: float, n: int, center=(0.0, 0.0, 0.0)) -> "Grid3D":
        """``n**3`` cells filling a cube of the given side centred at ``center``."""
        h = side / n
        origin = tuple(c - side / 2 for c in center)
        return cls(origin, h, (n, n, n))

    @property
    def h(self) -> float:
        return self.spacing

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.dims

    @property
    def size(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    @property
    def extents(self) -> np.ndarray:
        return np.asarray(self.dims, dtype=float) * self.spacing

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.origin) + self.extents

    @property
    def cell_volume(self) -> float:
        return self.spacing ** 3

    def axis_centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.dims[axis]) + 0.5) * self.spacing

    def centers(self) -> np.ndarray:
        """Cell centres as an array of shape ``dims + (3,)``."""
        xs = [self.axis_centers(a) for a in range(3)]
        return np.stack(np.meshgrid(*xs, indexing="ij"), axis=-1)

    def cell_index(self, point) -> tuple[int, int, int]:
        rel = (np.asarray(point, dtype=float) - np.asarray(self.origin)) / self.spacing
        return tuple(int(np.floor(v)) for v in rel)

    def contains(self, point) -> bool:
        p = np.asarray(point, dtype=float)
        return bool(np.all(p > np.asarray(self.origin)) and np.all(p < self.upper))

    def zeros(self) -> np.ndarray:
        return np.zeros(self.dims)


@dataclass
class ScalarField:
    grid: Grid3D
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.dims:
            raise ValueError(
                f"field shape {self.values.shape} does not match grid {self.grid.dims}")

    @classmethod
    def zeros(cls, grid: Grid3D) -> "ScalarField":
        return cls(grid, np.zeros(grid.dims))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def __add__(self, other: "ScalarField") -> "ScalarField":
        _same_grid(self.grid, other.grid)
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        _same_grid(self.grid, other.grid)
        return ScalarField(self.grid, self.values - other.values)

    def __mul__(self, s: float) -> "ScalarField":
        return ScalarField(self.grid, self.values * s)

    __rmul__ = __mul__

    def positive_part(self) -> "ScalarField":
        return ScalarField(self.grid, np.maximum(self.values, 0.0))


@dataclass
class PhaseField:
    """Binary solvent indicator: 1 = solvent, 0 = solute cavity."""

    grid: Grid3D
    values: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.values is None:
            self.values = np.ones(self.grid.dims, dtype=np.uint8)
        v = np.asarray(self.values)
        if v.shape != self.grid.dims:
            raise ValueError(
                f"phase field shape {v.shape} does not match grid {self.grid.dims}")
        if not np.all((v == 0) | (v == 1)):
            raise ValueError("phase field must be binary")
        self.values = v.astype(np.uint8)

    @classmethod
    def solvent(cls, grid: Grid3D) -> "PhaseField":
        return cls(grid, np.ones(grid.dims, dtype=np.uint8))

    @property
    def excluded_volume(self) -> float:
        return float(np.count_nonzero(self.values == 0)) * self.grid.cell_volume

    def __eq__(self, other) -> bool:
        return (isinstance(other, PhaseField) and self.grid == other.grid
                and np.array_equal(self.values, other.values))


@dataclass
class VectorField:
    """Face-staggered vector field: component ``a`` has ``dims[a] + 1`` faces."""

    grid: Grid3D
    components: tuple[np.ndarray, np.ndarray, np.ndarray]

    @classmethod
    def zeros(cls, grid: Grid3D) -> "VectorField":
        return cls(grid, tuple(np.zeros(face_shape(grid.dims, a)) for a in range(3)))


def face_shape(dims, axis: int) -> tuple[int, int, int]:
    s = list(dims)
    s[axis] += 1
    return tuple(s)


def _same_grid(a: Grid3D, b: Grid3D):
    if a != b:
        raise ValueError("fields live on different grids")


def _padded(values: np.ndarray, ghost: float) -> np.ndarray:
    return np.pad(values, 1, mode="constant", constant_values=ghost)


def gradient(f: ScalarField) -> VectorField:
    """Face differences ``(f_c - f_{c - e_a}) / h`` with zero ghost values."""
    p = _padded(f.values, 0.0)
    h = f.grid.spacing
    gx = (p[1:, 1:-1, 1:-1] - p[:-1, 1:-1, 1:-1]) / h
    gy = (p[1:-1, 1:, 1:-1] - p[1:-1, :-1, 1:-1]) / h
    gz = (p[1:-1, 1:-1, 1:] - p[1:-1, 1:-1, :-1]) / h
    return VectorField(f.grid, (gx, gy, gz))


def divergence(g: VectorField) -> ScalarField:
    """Negative adjoint of :func:`gradient` (cell value = net outflow / h)."""
    h = g.grid.spacing
    gx, gy, gz = g.components
    div = (gx[1:] - gx[:-1]) / h
    div += (gy[:, 1:] - gy[:, :-1]) / h
    div += (gz[:, :, 1:] - gz[:, :, :-1]) / h
    return ScalarField(g.grid, div)


def inner(a: VectorField, b: VectorField) -> float:
    """Discrete L2 pairing of face fields (weight h^3 per face)."""
    w = a.grid.cell_volume
    return w * sum(float(np.sum(x * y)) for x, y in zip(a.components, b.components))


def cell_gradient_sq(f: ScalarField) -> ScalarField:
    """Per-cell |grad f|^2: half the sum of the six squared face slopes."""
    return ScalarField(f.grid, _kernels.cell_gradient_sq(
        np.ascontiguousarray(f.values), f.grid.spacing))


def face_jumps(u: PhaseField) -> int:
    """Number of faces across which ``u`` changes, ghost layer fixed to 1."""
    p = _padded(u.values.astype(np.int8), 1)
    n = np.count_nonzero(p[1:, 1:-1, 1:-1] != p[:-1, 1:-1, 1:-1])
    n += np.count_nonzero(p[1:-1, 1:, 1:-1] != p[1:-1, :-1, 1:-1])
    n += np.count_nonzero(p[1:-1, 1:-1, 1:] != p[1:-1, 1:-1, :-1])
    return int(n)


def tv_anisotropic(u) -> float:
    """l1 perimeter ``h^2 * sum_faces |u_c - u_nb|`` with ghost u = 1.

    Accepts a :class:`PhaseField` or a relaxed ``ScalarField`` with values in
    [0, 1].
    """
    h2 = u.grid.spacing ** 2
    if isinstance(u, PhaseField):
        return h2 * face_jumps(u)
    p = _padded(np.asarray(u.values, dtype=float), 1.0)
    s = np.abs(np.diff(p[:, 1:-1, 1:-1], axis=0)).sum()
    s += np.abs(np.diff(p[1:-1, :, 1:-1], axis=1)).sum()
    s += np.abs(np.diff(p[1:-1, 1:-1, :], axis=2)).sum()
    return float(h2 * s)


def coarea_tv(u: ScalarField) -> float:
    """``int_0^1 TV(1_{u > t}) dt`` evaluated exactly on the level breakpoints."""
    v = np.clip(np.asarray(u.values, dtype=float), 0.0, 1.0)
    levels = np.unique(np.concatenate(([0.0, 1.0], v.ravel())))
    total = 0.0
    for lo, hi in zip(levels[:-1], levels[1:]):
        t = 0.5 * (lo + hi)
        total += (hi - lo) * tv_anisotropic(PhaseField(u.grid, (v > t).astype(np.uint8)))
    return total


def integrate(f: ScalarField) -> float:
    return float(np.sum(f.values)) * f.grid.cell_volume


def integrate_masked(f: ScalarField, u: PhaseField, complement: bool = False) -> float:
    """Integral of ``f`` over solvent cells, or over cavity cells if ``complement``."""
    _same_grid(f.grid, u.grid)
    mask = (u.values == 0) if complement else (u.values == 1)
    return float(np.sum(f.values[mask])) * f.grid.cell_volume


# -- structured-grid text format ------------------------------------------

_SG_MAGIC = "# sharpsolv structured-grid v1"


def write_structured_grid(path, f, name: str = "field") -> Path:
    """Write a scalar or phase field as plain text (header + x-fastest body)."""
    path = Path(path)
    g = f.grid
    kind = "phase" if isinstance(f, PhaseField) else "scalar"
    lines = [
        _SG_MAGIC,
        f"name {name}",
        f"kind {kind}",
        "dims {} {} {}".format(*g.dims),
        "origin {!r} {!r} {!r}".format(*g.origin),
        f"spacing {g.spacing!r}",
        "end_header",
    ]
    body = np.asarray(f.values, dtype=float).ravel(order="F")
    with path.open("w") as fh:
        fh.write("\n".join(lines) + "\n")
        np.savetxt(fh, body, fmt="%.17g")
    return path


def read_structured_grid(path):
    """Inverse of :func:`write_structured_grid`."""
    path = Path(path)
    header = {}
    with path.open() as fh:
        first = fh.readline().rstrip("\n")
        if first != _SG_MAGIC:
            raise ValueError(f"{path}: not a structured-grid file")
        for line in fh:
            line = line.strip()
            if line == "end_header":
                break
            key, _, rest = line.partition(" ")
            header[key] = rest
        body = np.loadtxt(fh, ndmin=1)
    dims = tuple(int(x) for x in header["dims"].split())
    grid = Grid3D(tuple(float(x) for x in header["origin"].split()),
                  float(header["spacing"]), dims)
    values = body.reshape(dims, order="F")
    if header.get("kind") == "phase":
        return PhaseField(grid, values.astype(np.uint8))
    return ScalarField(grid, values)
