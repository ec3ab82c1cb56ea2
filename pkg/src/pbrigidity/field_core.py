"""Discrete calculus on 2D symplectic grids.

The symplectic form is the constant area form ``dx ^ dy``.  Fields are sampled
on grid nodes; integrals use the cells between nodes, each cell carrying the
mean of its four corner values.

Sign convention: ``{F, G} = F_y G_x - F_x G_y``.  This is the convention that
makes ``{F, G} = dF(X_G)`` with ``omega(X_H, .) = -dH`` and
``dF ^ dG = -{F, G} dx ^ dy`` hold simultaneously.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Topology",
    "Grid2D",
    "ScalarField",
    "VectorField2D",
    "FieldError",
    "make_grid",
    "partial_derivatives",
    "hamiltonian_vector_field",
    "poisson_bracket",
    "cell_means",
    "cell_corner_stack",
    "lp_norm",
    "c0_norm",
    "mask_area",
    "write_field",
    "read_field",
    "format_real",
]

MIN_NODES = 5


class FieldError(ValueError):
    """Invalid grid or field data."""


class Topology(str, enum.Enum):
    PLANE = "plane"
    TORUS = "torus"


@dataclass(frozen=True)
class Grid2D:
    """Uniform rectangular (plane) or doubly periodic (torus) grid.

    In torus topology the node ``nx`` is identified with node ``0``, so the
    spacing is ``(x_max - x_min) / nx`` and there are ``nx * ny`` cells.
    """

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    nx: int
    ny: int
    topology: Topology = Topology.PLANE

    def __post_init__(self):
        bounds = (self.x_min, self.x_max, self.y_min, self.y_max)
        if not all(math.isfinite(b) for b in bounds):
            raise FieldError(f"grid bounds must be finite, got {bounds}")
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise FieldError(f"degenerate grid extent {bounds}")
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise FieldError("node counts must be integers")
        if self.nx < MIN_NODES or self.ny < MIN_NODES:
            raise FieldError(
                f"need at least {MIN_NODES} nodes per axis, got {self.nx}x{self.ny}"
            )
        object.__setattr__(self, "topology", Topology(self.topology))

    @property
    def periodic(self) -> bool:
        return self.topology is Topology.TORUS

    @property
    def hx(self) -> float:
        n = self.nx if self.periodic else self.nx - 1
        return (self.x_max - self.x_min) / n

    @property
    def hy(self) -> float:
        n = self.ny if self.periodic else self.ny - 1
        return (self.y_max - self.y_min) / n

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def cell_shape(self) -> tuple[int, int]:
        if self.periodic:
            return (self.nx, self.ny)
        return (self.nx - 1, self.ny - 1)

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def x_nodes(self) -> np.ndarray:
        if self.periodic:
            return self.x_min + self.hx * np.arange(self.nx)
        return np.linspace(self.x_min, self.x_max, self.nx)

    def y_nodes(self) -> np.ndarray:
        if self.periodic:
            return self.y_min + self.hy * np.arange(self.ny)
        return np.linspace(self.y_min, self.y_max, self.ny)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates as two ``(nx, ny)`` arrays (``ij`` indexing)."""
        return np.meshgrid(self.x_nodes(), self.y_nodes(), indexing="ij")

    def spec(self) -> str:
        return (
            f"{format_real(self.x_min)},{format_real(self.x_max)},"
            f"{format_real(self.y_min)},{format_real(self.y_max)},"
            f"{self.nx},{self.ny},{self.topology.value}"
        )


def make_grid(x_min, x_max, y_min, y_max, nx, ny, topology="plane") -> Grid2D:
    return Grid2D(
        float(x_min), float(x_max), float(y_min), float(y_max), int(nx), int(ny),
        Topology(topology),
    )


def parse_grid_spec(text: str) -> Grid2D:
    """``xmin,xmax,ymin,ymax,nx,ny[,topology]``; the inverse of ``Grid2D.spec``."""
    parts = [t.strip() for t in text.split(",")]
    if len(parts) not in (6, 7):
        raise FieldError(f"grid spec needs 6 or 7 comma-separated fields, got {len(parts)}")
    try:
        bounds = [float(t) for t in parts[:4]]
        nx, ny = int(parts[4]), int(parts[5])
        topo = Topology(parts[6] if len(parts) == 7 else "plane")
    except ValueError as exc:
        raise FieldError(f"bad grid spec {text!r}: {exc}") from None
    return make_grid(*bounds, nx, ny, topo)


def _outer_layers_zero(values: np.ndarray, m: int) -> bool:
    if m <= 0:
        return True
    nx, ny = values.shape
    m = min(m, (max(nx, ny) + 1) // 2)
    return not (
        values[:m].any() or values[nx - m:].any()
        or values[:, :m].any() or values[:, ny - m:].any()
    )


def _zero_layers(values: np.ndarray) -> int:
    """Number of outer node layers that are identically zero."""
    nx, ny = values.shape
    m = 0
    while 2 * (m + 1) <= min(nx, ny) and _outer_layers_zero(values, m + 1):
        m += 1
    return m


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Node samples of a function on a grid.

    ``support_margin = m`` guarantees the ``m`` outermost node layers hold
    exactly zero (plane topology only); it is the discrete stand-in for
    compact support.
    """

    grid: Grid2D
    values: np.ndarray
    support_margin: int = 0

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.shape != self.grid.shape:
            raise FieldError(
                f"values have shape {vals.shape}, grid expects {self.grid.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise FieldError("field values must be finite")
        m = int(self.support_margin)
        if m < 0:
            raise FieldError("support_margin must be >= 0")
        if self.grid.periodic:
            m = 0
        elif not _outer_layers_zero(vals, m):
            raise FieldError(f"support margin {m} violated: outer layers are not zero")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "support_margin", m)

    @classmethod
    def from_function(cls, grid: Grid2D, func, margin: int = 0) -> "ScalarField":
        """Sample ``func(X, Y)`` at the nodes and zero ``margin`` outer layers."""
        X, Y = grid.mesh()
        vals = np.broadcast_to(np.asarray(func(X, Y), dtype=float), grid.shape).copy()
        return cls.with_margin(grid, vals, margin)

    @classmethod
    def with_margin(cls, grid: Grid2D, values, margin: int) -> "ScalarField":
        vals = np.array(values, dtype=float, copy=True)
        if margin > 0 and not grid.periodic:
            vals[:margin] = 0.0
            vals[-margin:] = 0.0
            vals[:, :margin] = 0.0
            vals[:, -margin:] = 0.0
        return cls(grid, vals, margin if not grid.periodic else 0)

    def replace(self, values, support_margin: int | None = None) -> "ScalarField":
        m = self.support_margin if support_margin is None else support_margin
        return ScalarField(self.grid, values, m)

    def __neg__(self):
        return self.replace(-self.values)


@dataclass(frozen=True, eq=False)
class VectorField2D:
    grid: Grid2D
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        for name in ("u", "v"):
            arr = np.array(getattr(self, name), dtype=float, copy=True)
            if arr.shape != self.grid.shape or not np.all(np.isfinite(arr)):
                raise FieldError(f"component {name} must be finite with shape {self.grid.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def _diff(a: np.ndarray, h: float, axis: int, periodic: bool) -> np.ndarray:
    if periodic:
        return (np.roll(a, -1, axis) - np.roll(a, 1, axis)) / (2.0 * h)
    a = np.moveaxis(a, axis, 0)
    out = np.empty_like(a)
    out[1:-1] = (a[2:] - a[:-2]) / (2.0 * h)
    # second-order one-sided stencils, written in differences so constants give exactly 0
    out[0] = (4.0 * (a[1] - a[0]) - (a[2] - a[0])) / (2.0 * h)
    out[-1] = (4.0 * (a[-1] - a[-2]) - (a[-1] - a[-3])) / (2.0 * h)
    return np.moveaxis(out, 0, axis)


def _derivative_margin(m: int) -> int:
    # one-sided boundary stencils reach two layers inward
    return m - 1 if m >= 3 else 0


def partial_derivatives(H: ScalarField) -> tuple[ScalarField, ScalarField]:
    """Second-order central differences; one-sided second-order on plane edges."""
    g = H.grid
    hx = _diff(H.values, g.hx, 0, g.periodic)
    hy = _diff(H.values, g.hy, 1, g.periodic)
    m = _derivative_margin(H.support_margin)
    return ScalarField(g, hx, m), ScalarField(g, hy, m)


def hamiltonian_vector_field(H: ScalarField) -> VectorField2D:
    """``X_H = (-H_y, H_x)``, the solution of ``omega(X_H, .) = -dH``."""
    hx, hy = partial_derivatives(H)
    return VectorField2D(H.grid, -hy.values, hx.values)


def poisson_bracket(F: ScalarField, G: ScalarField) -> ScalarField:
    """Nodewise ``{F, G} = dF(X_G) = F_y G_x - F_x G_y``."""
    if F.grid != G.grid:
        raise FieldError("poisson_bracket: fields live on different grids")
    fx, fy = partial_derivatives(F)
    xg = hamiltonian_vector_field(G)
    # evaluated as dF(X_G) so the two routes agree bitwise
    vals = fx.values * xg.u + fy.values * xg.v
    m = max(min(F.support_margin, G.support_margin) - 1, 0)
    return ScalarField(F.grid, vals, m)


def cell_corner_stack(values: np.ndarray, periodic: bool) -> np.ndarray:
    """Corner values of every cell, shape ``(4, ncx, ncy)``.

    Corner order is counterclockwise in the domain: (i,j), (i+1,j), (i+1,j+1),
    (i,j+1).
    """
    if periodic:
        a = values
        b = np.roll(values, -1, 0)
        c = np.roll(b, -1, 1)
        d = np.roll(values, -1, 1)
        return np.stack([a, b, c, d])
    return np.stack([values[:-1, :-1], values[1:, :-1], values[1:, 1:], values[:-1, 1:]])


def cell_means(H: ScalarField) -> np.ndarray:
    c = cell_corner_stack(H.values, H.grid.periodic)
    return (c[0] + c[1] + c[2] + c[3]) / 4.0


def _check_mask(grid: Grid2D, mask) -> np.ndarray | None:
    if mask is None:
        return None
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != grid.cell_shape:
        raise FieldError(f"cell mask has shape {mask.shape}, expected {grid.cell_shape}")
    return mask


def mask_area(grid: Grid2D, mask=None) -> float:
    mask = _check_mask(grid, mask)
    ncells = np.prod(grid.cell_shape) if mask is None else int(mask.sum())
    return float(ncells) * grid.cell_area


def lp_norm(H: ScalarField, p: float, mask=None) -> float:
    """``(sum_cells |mean corner value|^p * hx * hy)^(1/p)`` over the masked cells."""
    if not math.isfinite(p):
        raise FieldError("lp_norm: p must be finite; use c0_norm for the sup norm")
    if p < 1:
        raise FieldError(f"lp_norm: need p >= 1, got {p}")
    mask = _check_mask(H.grid, mask)
    a = np.abs(cell_means(H))
    if mask is not None:
        a = a[mask]
    s = float(np.sum(a**p)) * H.grid.cell_area
    return s ** (1.0 / p)


def c0_norm(H: ScalarField, mask=None) -> float:
    """Max of ``|H|`` over nodes; with a cell mask, over the corners of masked cells."""
    mask = _check_mask(H.grid, mask)
    if mask is None:
        return float(np.max(np.abs(H.values)))
    if not mask.any():
        return 0.0
    c = cell_corner_stack(np.abs(H.values), H.grid.periodic)
    return float(c[:, mask].max())


# -- text serialization -------------------------------------------------------

def format_real(v: float) -> str:
    """17 significant digits, the fixed output rule for all numeric files."""
    return format(float(v), ".17g")


def write_field(path, H: ScalarField) -> None:
    g = H.grid
    header = " ".join(
        ["pbfield", "v1", str(g.nx), str(g.ny)]
        + [format_real(b) for b in (g.x_min, g.x_max, g.y_min, g.y_max)]
        + [g.topology.value]
    )
    lines = [header]
    for j in range(g.ny):
        lines.append(" ".join(format_real(v) for v in H.values[:, j]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_field(path) -> ScalarField:
    """Read a ``pbfield v1`` file; the support margin is inferred from zero layers."""
    text = Path(path).read_text().split("\n")
    head = text[0].split()
    if len(head) != 9 or head[0] != "pbfield" or head[1] != "v1":
        raise FieldError(f"{path}: not a pbfield v1 file")
    nx, ny = int(head[2]), int(head[3])
    grid = make_grid(*(float(t) for t in head[4:8]), nx, ny, head[8])
    rows = [line.split() for line in text[1:] if line.strip()]
    if len(rows) != ny or any(len(r) != nx for r in rows):
        raise FieldError(f"{path}: expected {ny} rows of {nx} values")
    vals = np.array([[float(t) for t in r] for r in rows]).T
    margin = 0 if grid.periodic else _zero_layers(vals)
    return ScalarField(grid, vals, margin)
