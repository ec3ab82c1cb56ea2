"""Exactly commuting approximants: C0-close F~, L^q-close G~ with {F~, G~} = 0.

The support region C is tiled by grid-aligned rectangles of small diameter.
Inside each tile, F is frozen to its value at the center node, and G is
switched off near the tile edges. The frozen zone of F~ contains every node
where G~ can vary, so no difference stencil ever sees both at once, and the
discrete bracket vanishes bitwise.

Node layers
-----------
The layer of a node inside a tile is its Chebyshev distance, in grid steps,
to the tile edge. A nesting is four layer indices ``l1 < l2 <= l3 < l4``:

* ``phi == 1`` on layers ``<= l1`` and ``phi == 0`` on layers ``>= l2``;
* ``psi == 0`` on layers ``<= l3`` and ``psi == 1`` on layers ``>= l4``.

The nested rectangles ``Q1 > Q2 > Q3`` are the tile shrunk by ``l1 + 1/3``,
``l2 - 1/3`` and ``l4 - 1/3`` grid steps, so a node lies outside Q1 exactly
when ``phi == 1``, inside Q2 exactly when ``phi == 0``, and inside Q3 exactly
when ``psi == 1``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .field_core import (
    FieldError,
    Grid2D,
    ScalarField,
    c0_norm,
    lp_norm,
    poisson_bracket,
)

MINIMAL_LAYERS = (0, 1, 1, 2)
# two grid steps between consecutive rectangles, with one frozen layer for psi
WIDE_LAYERS = (1, 3, 4, 6)


class FlexibilityError(ValueError):
    """The construction cannot be carried out at this resolution."""


@dataclass(frozen=True)
class NodeBox:
    """Closed node-index rectangle ``[i0, i1] x [j0, j1]``."""

    i0: int
    i1: int
    j0: int
    j1: int

    @property
    def span(self) -> tuple[int, int]:
        return self.i1 - self.i0, self.j1 - self.j0

    def diameter(self, grid: Grid2D) -> float:
        sx, sy = self.span
        return math.hypot(sx * grid.hx, sy * grid.hy)

    def area(self, grid: Grid2D) -> float:
        sx, sy = self.span
        return sx * grid.hx * sy * grid.hy

    def center(self) -> tuple[int, int]:
        return (self.i0 + self.i1) // 2, (self.j0 + self.j1) // 2


@dataclass(frozen=True)
class MeshCell:
    box: NodeBox
    anchor: tuple[int, int] | None = None
    layers: tuple[int, int, int, int] | None = None
    shrinks: tuple[float, float, float] | None = None  # Q1, Q2, Q3 in grid steps

    @property
    def nested(self) -> bool:
        return self.layers is not None

    def rectangle(self, grid: Grid2D, which: int = 0) -> tuple[float, float, float, float]:
        """Physical bounds of Q (``which=0``) or of Q1, Q2, Q3."""
        s = 0.0 if which == 0 else self.shrinks[which - 1]
        b = self.box
        x0 = grid.x_min + b.i0 * grid.hx + s * grid.hx
        x1 = grid.x_min + b.i1 * grid.hx - s * grid.hx
        y0 = grid.y_min + b.j0 * grid.hy + s * grid.hy
        y1 = grid.y_min + b.j1 * grid.hy - s * grid.hy
        return x0, x1, y0, y1

    def area_outside_q3(self, grid: Grid2D) -> float:
        x0, x1, y0, y1 = self.rectangle(grid, 3)
        return self.box.area(grid) - (x1 - x0) * (y1 - y0)


@dataclass(frozen=True)
class CommutingCertificate:
    eps: float
    q: float
    c0_error: float
    lq_error_q: float
    bracket_max: float
    support_ok: bool
    mesh_cells: int = 0
    delta_mesh: float = 0.0
    max_cell_osc: float = 0.0
    lq_bound: float = 0.0

    @property
    def passes(self) -> bool:
        return (self.c0_error < self.eps and self.lq_error_q < self.eps
                and self.bracket_max == 0.0 and self.support_ok)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["passes"] = self.passes
        return d


# -- mesh ----------------------------------------------------------------------

def _split(lo: int, hi: int, m: int) -> np.ndarray:
    return np.round(np.linspace(lo, hi, m + 1)).astype(int)


def _tiles(region: NodeBox, mx: int, my: int) -> tuple[np.ndarray, np.ndarray]:
    return _split(region.i0, region.i1, mx), _split(region.j0, region.j1, my)


def _max_diam(ex, ey, grid):
    return math.hypot(np.diff(ex).max() * grid.hx, np.diff(ey).max() * grid.hy)


def _mesh_counts(region: NodeBox, delta_mesh: float, grid: Grid2D) -> tuple[int, int]:
    sx, sy = region.span
    lx, ly = sx * grid.hx, sy * grid.hy
    mx = max(1, math.ceil(lx * math.sqrt(2) / delta_mesh))
    my = max(1, math.ceil(ly * math.sqrt(2) / delta_mesh))
    if math.hypot(lx, ly) < delta_mesh:
        return 1, 1
    while True:
        ex, ey = _tiles(region, mx, my)
        if min(np.diff(ex).min(), np.diff(ey).min()) < 1:
            raise FlexibilityError("delta_mesh too small for the grid")
        if _max_diam(ex, ey, grid) < delta_mesh:
            return mx, my
        # grow the direction with the longer tiles
        if np.diff(ex).max() * grid.hx >= np.diff(ey).max() * grid.hy:
            mx += 1
        else:
            my += 1


def full_region(grid: Grid2D) -> NodeBox:
    return NodeBox(0, grid.nx - 1, 0, grid.ny - 1)


def support_region(grid: Grid2D, *fields: ScalarField, pad: int = 4) -> NodeBox:
    """Bounding node box of the joint support, grown by ``pad`` nodes and clipped to the grid."""
    nz = np.zeros(grid.shape, dtype=bool)
    for H in fields:
        nz |= H.values != 0
    if not nz.any():
        return full_region(grid)
    ii = np.flatnonzero(nz.any(1))
    jj = np.flatnonzero(nz.any(0))
    return NodeBox(max(ii[0] - pad, 0), min(ii[-1] + pad, grid.nx - 1),
                   max(jj[0] - pad, 0), min(jj[-1] + pad, grid.ny - 1))


def _check_region(grid: Grid2D, region: NodeBox, fields) -> None:
    if grid.periodic:
        raise FieldError("the flexibility construction needs a plane grid")
    if not (0 <= region.i0 < region.i1 < grid.nx and 0 <= region.j0 < region.j1 < grid.ny):
        raise FlexibilityError(f"region {region} does not fit the grid")
    inside = np.zeros(grid.shape, dtype=bool)
    inside[region.i0 + 1:region.i1, region.j0 + 1:region.j1] = True
    for H in fields:
        if np.any(H.values[~inside] != 0):
            raise FlexibilityError("region C does not contain the supports in its interior")


def build_mesh(C: NodeBox, delta_mesh: float, grid: Grid2D) -> list[MeshCell]:
    """Tile ``C`` by grid-aligned rectangles of diameter ``< delta_mesh``."""
    if grid.periodic:
        raise FieldError("the flexibility construction needs a plane grid")
    if delta_mesh <= 4 * max(grid.hx, grid.hy) * math.sqrt(2):
        raise FlexibilityError(
            f"delta_mesh={delta_mesh:g} must exceed 4*sqrt(2)*max(hx, hy)="
            f"{4 * math.sqrt(2) * max(grid.hx, grid.hy):g}")
    mx, my = _mesh_counts(C, delta_mesh, grid)
    ex, ey = _tiles(C, mx, my)
    return [MeshCell(NodeBox(int(ex[a]), int(ex[a + 1]), int(ey[b]), int(ey[b + 1])))
            for a in range(mx) for b in range(my)]


# -- nesting and cutoffs -------------------------------------------------------

def _check_layers(layers):
    l1, l2, l3, l4 = layers
    if not (0 <= l1 < l2 <= l3 < l4):
        raise ValueError(f"layers must satisfy 0 <= l1 < l2 <= l3 < l4, got {layers}")


def choose_nested(cell: MeshCell, eps: float, q: float, g_c0: float, area_C: float,
                  grid: Grid2D, layers=MINIMAL_LAYERS, check_volume: bool = True) -> MeshCell:
    """Nest ``Q3 < Q2 < Q1 < Q`` as tightly as the layer rule allows.

    With ``check_volume`` the per-tile condition
    ``area(Q \\ Q3) < eps * area(Q) / (g_c0^q * area_C)`` is enforced; it is
    vacuous when ``g_c0 == 0``.
    """
    if eps <= 0 or q < 1 or g_c0 < 0 or area_C <= 0:
        raise ValueError("need eps > 0, q >= 1, g_c0 >= 0, area_C > 0")
    _check_layers(layers)
    l1, l2, l3, l4 = layers
    sx, sy = cell.box.span
    if min(sx, sy) < 2 * l4 + 1:
        raise FlexibilityError(
            f"tile spans {sx}x{sy} steps, needs at least {2 * l4 + 1} for layers {layers}")
    nested = MeshCell(cell.box, cell.box.center(), tuple(layers),
                      (l1 + 1 / 3, l2 - 1 / 3, l4 - 1 / 3))
    if check_volume:
        ratio = volume_ratio(nested, eps, q, g_c0, area_C, grid)
        if not ratio < 1.0:
            raise FlexibilityError(_volume_message(ratio, grid))
    return nested


def volume_ratio(cell: MeshCell, eps: float, q: float, g_c0: float, area_C: float,
                 grid: Grid2D) -> float:
    """``area(Q \\ Q3)`` over its allowance; the tile condition holds iff this is < 1."""
    if g_c0 == 0:
        return 0.0
    allowed = eps * cell.box.area(grid) / (g_c0**q * area_C)
    return cell.area_outside_q3(grid) / allowed


def _volume_message(ratio: float, grid: Grid2D) -> str:
    # area(Q \ Q3) scales with the grid step at fixed layer counts
    return (f"volume condition fails: area(Q\\Q3) is {ratio:.3g} times its allowance; "
            f"refine the grid to about nx={math.ceil((grid.nx - 1) * ratio * 1.05) + 1}, "
            f"ny={math.ceil((grid.ny - 1) * ratio * 1.05) + 1}")


def transition(t):
    """C-infinity step ``exp(-1/t) / (exp(-1/t) + exp(-1/(1-t)))``, 0 for t <= 0, 1 for t >= 1."""
    t = np.asarray(t, dtype=float)
    out = np.where(t >= 1.0, 1.0, 0.0)
    mid = (t > 0.0) & (t < 1.0)
    tm = t[mid]
    a = np.exp(-1.0 / tm)
    b = np.exp(-1.0 / (1.0 - tm))
    out[mid] = a / (a + b)
    return out


def _ramp(d, lo, hi):
    """0 on layers <= lo, 1 on layers >= hi, smooth in between."""
    return transition((np.asarray(d, dtype=float) - lo) / (hi - lo))


def _cutoffs_1d(d, layers):
    l1, l2, l3, l4 = layers
    return _ramp(d, l1, l2), _ramp(d, l3, l4)


def cutoff_pair(cell: MeshCell, grid: Grid2D) -> tuple[ScalarField, ScalarField]:
    """``phi`` (1 off Q1, 0 on Q2) and ``psi`` (1 on Q3, 0 off Q2) on the whole grid."""
    if not cell.nested:
        raise ValueError("cell has no nesting; call choose_nested first")
    _check_layers(cell.layers)
    b = cell.box
    if min(b.span) < 2 * cell.layers[3] + 1:
        raise FlexibilityError("tile too small for its layers")
    phi = np.ones(grid.shape)
    psi = np.zeros(grid.shape)
    di = np.minimum(np.arange(b.i0, b.i1 + 1) - b.i0, b.i1 - np.arange(b.i0, b.i1 + 1))
    dj = np.minimum(np.arange(b.j0, b.j1 + 1) - b.j0, b.j1 - np.arange(b.j0, b.j1 + 1))
    ax, cx = _cutoffs_1d(di, cell.layers)
    ay, cy = _cutoffs_1d(dj, cell.layers)
    phi[b.i0:b.i1 + 1, b.j0:b.j1 + 1] = 1.0 - np.outer(ax, ay)
    psi[b.i0:b.i1 + 1, b.j0:b.j1 + 1] = np.outer(cx, cy)
    return ScalarField(grid, phi), ScalarField(grid, psi)


# -- the construction ------------------------------------------------------------

def _box_osc(values: np.ndarray, b: NodeBox) -> float:
    blk = values[b.i0:b.i1 + 1, b.j0:b.j1 + 1]
    return float(blk.max() - blk.min())


def adaptive_mesh(F: ScalarField, region: NodeBox, eps: float, min_span: int) -> list[MeshCell]:
    """Bisect the region until ``osc F < eps`` on every closed tile.

    Tiles are halved across their physically longer side. This realizes the
    uniform-continuity step tile by tile, so flat parts of F get large tiles.
    """
    grid = F.grid
    out = []
    stack = [region]
    while stack:
        b = stack.pop()
        if _box_osc(F.values, b) < eps:
            out.append(MeshCell(b))
            continue
        sx, sy = b.span
        if sx * grid.hx >= sy * grid.hy:
            mid = (b.i0 + b.i1) // 2
            kids = [NodeBox(b.i0, mid, b.j0, b.j1), NodeBox(mid, b.i1, b.j0, b.j1)]
        else:
            mid = (b.j0 + b.j1) // 2
            kids = [NodeBox(b.i0, b.i1, b.j0, mid), NodeBox(b.i0, b.i1, mid, b.j1)]
        if min(min(k.span) for k in kids) < min_span:
            raise FlexibilityError(
                f"F varies too fast for this grid: tiles with osc < {eps:g} would be "
                f"thinner than {min_span} steps; try nx >= {math.ceil(grid.nx * 2.1)}")
        stack.extend(reversed(kids))
    out.sort(key=lambda c: (c.box.i0, c.box.j0))
    return out


def auto_delta_mesh(F: ScalarField, region: NodeBox, eps: float, min_span: int) -> float:
    """Largest tile diameter of :func:`adaptive_mesh`."""
    cells = adaptive_mesh(F, region, eps, min_span)
    return max(c.box.diameter(F.grid) for c in cells) * (1 + 1e-9)


def _tile_layers(b: NodeBox):
    ii = np.arange(b.i0, b.i1 + 1)
    jj = np.arange(b.j0, b.j1 + 1)
    return np.minimum(ii - b.i0, b.i1 - ii), np.minimum(jj - b.j0, b.j1 - jj)


def commuting_pair(F: ScalarField, G: ScalarField, eps: float, q: float,
                   delta_mesh: float | None = None, region: NodeBox | None = None,
                   layers=MINIMAL_LAYERS, volume_rule: str = "global",
                   mesh: list[MeshCell] | None = None) -> tuple[ScalarField, ScalarField, CommutingCertificate]:
    r"""Build ``(F~, G~)`` with ``{F~, G~} == 0`` exactly.

    Without ``delta_mesh`` the mesh comes from :func:`adaptive_mesh`; with it,
    from :func:`build_mesh`. An explicit ``mesh`` (e.g. from :func:`refine_mesh`)
    overrides both.

    ``volume_rule="tile"`` enforces the per-tile volume condition with the
    global ``||G||_C0``. The default ``"global"`` replaces that global sup by
    the sup of ``|G|^q`` over each ``Q \ Q3`` and asks the sum over tiles of
    ``sup * area(Q \ Q3)`` to stay below ``eps``; this is attainable on
    desk-size grids. The certificate measures the actual L^q error.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if not (1 <= q < math.inf):
        raise ValueError("q must lie in [1, inf)")
    if F.grid != G.grid:
        raise FieldError("F and G live on different grids")
    if volume_rule not in ("global", "tile"):
        raise ValueError("volume_rule must be 'global' or 'tile'")
    _check_layers(layers)
    grid = F.grid
    region = support_region(grid, F, G) if region is None else region
    _check_region(grid, region, (F, G))
    g_c0 = c0_norm(G)
    area_C = region.area(grid)

    if g_c0 == 0.0:
        # G vanishes: the pair already commutes
        cert = CommutingCertificate(eps, q, 0.0, 0.0, c0_norm(poisson_bracket(F, G)),
                                    True, 0, 0.0, 0.0, 0.0)
        return F, G, cert

    l4 = layers[3]
    if mesh is not None:
        cells = list(mesh)
        _check_tiling(cells, region)
        delta_mesh = max(c.box.diameter(grid) for c in cells) * (1 + 1e-9)
    elif delta_mesh is None:
        cells = adaptive_mesh(F, region, eps, 2 * l4 + 1)
        delta_mesh = max(c.box.diameter(grid) for c in cells) * (1 + 1e-9)
    else:
        cells = build_mesh(region, delta_mesh, grid)
    nested = [choose_nested(c, eps, q, g_c0, area_C, grid, layers, check_volume=False)
              for c in cells]
    if volume_rule == "tile":
        worst = max(volume_ratio(c, eps, q, g_c0, area_C, grid) for c in nested)
        if not worst < 1.0:
            raise FlexibilityError(_volume_message(worst, grid))

    # per-tile cutoffs; shared edge nodes get phi = 1, psi = 0 from every tile
    Fv, Gv = F.values, G.values
    phi = np.ones(grid.shape)
    psi = np.zeros(grid.shape)
    F0 = np.zeros(grid.shape)
    absgq = np.abs(Gv) ** q
    max_osc = 0.0
    lq_bound = 0.0
    for c in nested:
        b = c.box
        sl = (slice(b.i0, b.i1 + 1), slice(b.j0, b.j1 + 1))
        di, dj = _tile_layers(b)
        ax, cx = _cutoffs_1d(di, layers)
        ay, cy = _cutoffs_1d(dj, layers)
        phi[sl] = np.minimum(phi[sl], 1.0 - np.outer(ax, ay))
        psi[sl] = np.maximum(psi[sl], np.outer(cx, cy))
        inner = (slice(b.i0 + 1, b.i1), slice(b.j0 + 1, b.j1))
        F0[inner] = Fv[c.anchor]
        max_osc = max(max_osc, _box_osc(Fv, b))
        # sup of |G|^q outside Q3 times area(Q \ Q3)
        band = np.minimum.outer(di, dj) < l4
        lq_bound += float(absgq[sl][band].max()) * c.area_outside_q3(grid)
    if volume_rule == "global" and not lq_bound < eps:
        raise FlexibilityError(
            f"summed volume bound {lq_bound:.4g} >= eps={eps:g}; refine the grid "
            f"(about nx={math.ceil(grid.nx * lq_bound / eps * 1.05)})")

    # exact F where phi == 1, exact F(x0) where phi == 0
    Ft = np.where(phi == 1.0, Fv, F0 + phi * (Fv - F0))
    Gt = np.where(psi == 1.0, Gv, psi * Gv)
    gap = _edge_gap(region, grid)
    Ftf = ScalarField(grid, Ft, gap)
    Gtf = ScalarField(grid, Gt, gap)

    outside = np.ones(grid.shape, dtype=bool)
    outside[region.i0 + 1:region.i1, region.j0 + 1:region.j1] = False
    support_ok = bool(np.all(Ftf.values[outside] == 0) and np.all(Gtf.values[outside] == 0))
    cert = CommutingCertificate(
        eps=float(eps), q=float(q),
        c0_error=c0_norm(ScalarField(grid, Ftf.values - Fv)),
        lq_error_q=lp_norm(ScalarField(grid, Gtf.values - Gv), q) ** q,
        bracket_max=c0_norm(poisson_bracket(Ftf, Gtf)),
        support_ok=support_ok,
        mesh_cells=len(nested), delta_mesh=float(delta_mesh),
        max_cell_osc=max_osc, lq_bound=float(lq_bound),
    )
    return Ftf, Gtf, cert


def refine_mesh(cells: list[MeshCell], factor: int) -> list[MeshCell]:
    """The same tiles on a grid with ``factor`` times as many steps per axis."""
    return [MeshCell(NodeBox(c.box.i0 * factor, c.box.i1 * factor,
                             c.box.j0 * factor, c.box.j1 * factor)) for c in cells]


def mesh_of(F: ScalarField, G: ScalarField, eps: float, layers=MINIMAL_LAYERS,
            region: NodeBox | None = None) -> list[MeshCell]:
    """The mesh :func:`commuting_pair` builds by default."""
    region = support_region(F.grid, F, G) if region is None else region
    return adaptive_mesh(F, region, eps, 2 * layers[3] + 1)


def _check_tiling(cells: list[MeshCell], region: NodeBox) -> None:
    area = sum(c.box.span[0] * c.box.span[1] for c in cells)
    inside = all(region.i0 <= c.box.i0 < c.box.i1 <= region.i1
                 and region.j0 <= c.box.j0 < c.box.j1 <= region.j1 for c in cells)
    if not inside or area != region.span[0] * region.span[1]:
        raise FlexibilityError("mesh does not tile the region")


def _edge_gap(region: NodeBox, grid: Grid2D) -> int:
    """Node layers between the grid edge and the interior of the region."""
    return min(region.i0 + 1, region.j0 + 1, grid.nx - region.i1, grid.ny - region.j1)
