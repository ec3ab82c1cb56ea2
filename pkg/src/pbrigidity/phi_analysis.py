"""The map Phi = (F, G) and the objects built from it.

Regular-value covers K_n, their 1/(kn) subdivisions, preimage sheets,
oscillation statistics, preimage counting, the area formula, the local
surjectivity check for perturbed maps, the main lower estimate and the
K_n exhaustion sequence.

Rasterization conventions
-------------------------
* The image of a grid cell is the straight-edged quadrilateral through its
  four corner values; its axis-aligned bounding box is used for the cover
  tests.
* A cell belongs to the value square that contains its center value (the
  mean of its corner values), so the preimages of distinct squares are
  disjoint sets of cells.
* On a plane grid the outermost node layer is never a regular point: the
  domain edge is not part of the open surface, so values near the image of
  the edge are excluded from the cover.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .field_core import (
    FieldError,
    ScalarField,
    c0_norm,
    cell_corner_stack,
    cell_means,
    poisson_bracket,
)

SHEET_COUNT_RANGE = (0.8, 1.2)
_TOL = 1e-9
_MAX_RASTER = 40_000_000


@dataclass(frozen=True, order=True)
class ValueSquare:
    """``[i/level, (i+1)/level] x [j/level, (j+1)/level]`` in the value plane."""

    level: int
    i: int
    j: int

    def __post_init__(self):
        if self.level < 1:
            raise ValueError("ValueSquare level must be >= 1")

    @property
    def side(self) -> float:
        return 1.0 / self.level

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        L = self.level
        return (self.i / L, (self.i + 1) / L, self.j / L, (self.j + 1) / L)

    @property
    def area(self) -> float:
        return self.side**2

    def shrunk(self, delta: float) -> tuple[float, float, float, float]:
        u0, u1, v0, v1 = self.bounds
        return (u0 + delta, u1 - delta, v0 + delta, v1 - delta)

    def children(self, k: int) -> list["ValueSquare"]:
        L = self.level * k
        return [
            ValueSquare(L, self.i * k + a, self.j * k + b)
            for a in range(k)
            for b in range(k)
        ]

    def contains(self, other: "ValueSquare") -> bool:
        a0, a1, b0, b1 = self.bounds
        c0, c1, d0, d1 = other.bounds
        return a0 <= c0 + _TOL and c1 <= a1 + _TOL and b0 <= d0 + _TOL and d1 <= b1 + _TOL


@dataclass(frozen=True)
class ValueCover:
    n: int
    tau: float
    squares: tuple[ValueSquare, ...]

    def __len__(self):
        return len(self.squares)

    @property
    def area(self) -> float:
        return len(self.squares) / self.n**2


@dataclass(frozen=True, eq=False)
class PreimageComponent:
    """One connected sheet of cells over a value square."""

    square: ValueSquare
    cells: np.ndarray  # (m, 2) cell indices, C-order sorted
    bracket_sign: int
    min_abs_bracket: float
    max_abs_bracket: float
    sheet_count_estimate: float
    valid: bool
    reason: str = ""
    component_id: int = -1

    @property
    def size(self) -> int:
        return len(self.cells)


@dataclass(frozen=True)
class CellBoxes:
    """Per-cell bounding boxes of the corner values of (F, G)."""

    f_lo: np.ndarray
    f_hi: np.ndarray
    g_lo: np.ndarray
    g_hi: np.ndarray


@dataclass(frozen=True)
class AreaFormulaReport:
    lhs: float
    rhs: float
    rel_err: float


@dataclass(frozen=True)
class MainEstimateReport:
    n: int
    k: int
    delta: float
    epsilon: float
    p: float
    factor: float
    covered_norm_p: float
    support_area: float
    bound: float
    sheetwise_bound: float = 0.0


@dataclass(frozen=True, eq=False)
class PreimageCount:
    counts: np.ndarray
    bounds: tuple[float, float, float, float]
    du: float
    dv: float
    degenerate: int

    @property
    def sample_area(self) -> float:
        return self.du * self.dv

    def integral(self) -> float:
        return float(self.counts.sum()) * self.sample_area

    def at(self, u: float, v: float) -> int:
        a = int(math.floor((u - self.bounds[0]) / self.du))
        b = int(math.floor((v - self.bounds[2]) / self.dv))
        if 0 <= a < self.counts.shape[0] and 0 <= b < self.counts.shape[1]:
            return int(self.counts[a, b])
        return 0


@dataclass(frozen=True)
class SurjectivityReport:
    covered_fraction: float
    n_samples: int
    delta: float
    square: ValueSquare


@dataclass(frozen=True)
class KnSequence:
    n_list: tuple[int, ...]
    values: tuple[float, ...]
    full_norm_p: float


# -- cell geometry -------------------------------------------------------------

def _same_grid(F: ScalarField, G: ScalarField):
    if F.grid != G.grid:
        raise FieldError("F and G live on different grids")


def _corners(F: ScalarField, G: ScalarField):
    _same_grid(F, G)
    periodic = F.grid.periodic
    return cell_corner_stack(F.values, periodic), cell_corner_stack(G.values, periodic)


def phi_image_cells(F: ScalarField, G: ScalarField) -> CellBoxes:
    fc, gc = _corners(F, G)
    return CellBoxes(fc.min(0), fc.max(0), gc.min(0), gc.max(0))


def cell_centers(F: ScalarField, G: ScalarField) -> tuple[np.ndarray, np.ndarray]:
    """Image of each cell center (corner means)."""
    _same_grid(F, G)
    return cell_means(F), cell_means(G)


def regularity_field(F: ScalarField, G: ScalarField, bracket: ScalarField | None = None):
    """``|{F,G}|`` at nodes, zero on the edge layer of a plane grid."""
    b = poisson_bracket(F, G) if bracket is None else bracket
    r = np.abs(b.values)
    if not F.grid.periodic:
        r = r.copy()
        r[0] = r[-1] = 0.0
        r[:, 0] = r[:, -1] = 0.0
    return r


def default_tau(bracket: ScalarField) -> float:
    return max(1e-8, 0.01 * c0_norm(bracket))


def _as_mask(grid, restrict) -> np.ndarray:
    """Cell mask from ``None`` (all), a boolean mask, or an ``(m, 2)`` index array."""
    if restrict is None:
        return np.ones(grid.cell_shape, dtype=bool)
    arr = np.asarray(restrict)
    if arr.dtype == bool:
        if arr.shape != grid.cell_shape:
            raise FieldError(f"cell mask shape {arr.shape} != {grid.cell_shape}")
        return arr
    mask = np.zeros(grid.cell_shape, dtype=bool)
    arr = arr.reshape(-1, 2)
    mask[arr[:, 0], arr[:, 1]] = True
    return mask


# -- cover K_n -----------------------------------------------------------------

def _square_range(lo, hi, n):
    return int(math.floor(lo * n)), int(math.ceil(hi * n)) - 1


def regular_value_cover(F: ScalarField, G: ScalarField, n: int, tau: float | None = None,
                        subsamples: int = 8) -> ValueCover:
    """Level-n value squares lying in the regular image of Phi.

    A square is kept when (a) every point of a ``subsamples``-per-side raster
    of the closed square lies in some cell bounding box, and (b) every cell
    whose closed bounding box meets the closed square has all four corner
    values of ``|{F,G}|`` at least ``tau``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    bracket = poisson_bracket(F, G)
    if tau is None:
        tau = default_tau(bracket)
    if tau <= 0:
        raise ValueError("tau must be > 0")
    boxes = phi_image_cells(F, G)
    reg = regularity_field(F, G, bracket)
    cell_reg = cell_corner_stack(reg, F.grid.periodic).min(0)
    if not np.any(cell_reg >= tau):
        return ValueCover(n, float(tau), ())

    i0, i1 = _square_range(boxes.f_lo.min(), boxes.f_hi.max(), n)
    j0, j1 = _square_range(boxes.g_lo.min(), boxes.g_hi.max(), n)
    ni, nj = i1 - i0 + 1, j1 - j0 + 1
    if ni <= 0 or nj <= 0:
        return ValueCover(n, float(tau), ())

    # (a) raster coverage of each square by the union of cell boxes
    sub = max(1, int(subsamples))
    while sub > 1 and (ni * sub + 1) * (nj * sub + 1) > _MAX_RASTER:
        sub //= 2
    s = n * sub
    A0, B0 = i0 * sub, j0 * sub
    NA, NB = ni * sub + 1, nj * sub + 1
    a_lo = np.ceil(boxes.f_lo * s - _TOL).astype(np.int64) - A0
    a_hi = np.floor(boxes.f_hi * s + _TOL).astype(np.int64) - A0
    b_lo = np.ceil(boxes.g_lo * s - _TOL).astype(np.int64) - B0
    b_hi = np.floor(boxes.g_hi * s + _TOL).astype(np.int64) - B0
    a_lo, b_lo = np.maximum(a_lo, 0), np.maximum(b_lo, 0)
    a_hi, b_hi = np.minimum(a_hi, NA - 1), np.minimum(b_hi, NB - 1)
    ok = (a_lo <= a_hi) & (b_lo <= b_hi)
    cov = _paint(NA, NB, a_lo[ok], a_hi[ok], b_lo[ok], b_hi[ok])
    holes = np.zeros((NA + 1, NB + 1), dtype=np.int64)
    holes[1:, 1:] = np.cumsum(np.cumsum(cov == 0, axis=0), axis=1)
    si = np.arange(ni)[:, None] * sub
    sj = np.arange(nj)[None, :] * sub
    e = sub + 1
    uncovered = holes[si + e, sj + e] - holes[si, sj + e] - holes[si + e, sj] + holes[si, sj]
    covered = uncovered == 0

    # (b) no cell meeting the square may be (nearly) critical
    bad = cell_reg < tau
    r_lo = np.ceil(boxes.f_lo[bad] * n - _TOL).astype(np.int64) - 1 - i0
    r_hi = np.floor(boxes.f_hi[bad] * n + _TOL).astype(np.int64) - i0
    c_lo = np.ceil(boxes.g_lo[bad] * n - _TOL).astype(np.int64) - 1 - j0
    c_hi = np.floor(boxes.g_hi[bad] * n + _TOL).astype(np.int64) - j0
    r_lo, c_lo = np.maximum(r_lo, 0), np.maximum(c_lo, 0)
    r_hi, c_hi = np.minimum(r_hi, ni - 1), np.minimum(c_hi, nj - 1)
    ok = (r_lo <= r_hi) & (c_lo <= c_hi)
    tainted = _paint(ni, nj, r_lo[ok], r_hi[ok], c_lo[ok], c_hi[ok]) > 0

    keep = np.argwhere(covered & ~tainted)
    squares = tuple(ValueSquare(n, int(a) + i0, int(b) + j0) for a, b in keep)
    return ValueCover(n, float(tau), squares)


def _paint(NA, NB, a_lo, a_hi, b_lo, b_hi) -> np.ndarray:
    """Number of closed index rectangles covering each raster point."""
    d = np.zeros((NA + 1, NB + 1), dtype=np.int64)
    np.add.at(d, (a_lo, b_lo), 1)
    np.add.at(d, (a_hi + 1, b_lo), -1)
    np.add.at(d, (a_lo, b_hi + 1), -1)
    np.add.at(d, (a_hi + 1, b_hi + 1), 1)
    return np.cumsum(np.cumsum(d, axis=0), axis=1)[:NA, :NB]


def subdivide_cover(cover: ValueCover, k: int) -> list[ValueSquare]:
    if k < 1:
        raise ValueError("k must be >= 1")
    return [c for sq in cover.squares for c in sq.children(k)]


# -- preimage sheets -----------------------------------------------------------

@dataclass(eq=False)
class PhiDecomposition:
    """K_n, its 1/(kn) subdivision and all preimage sheets over it."""

    cover: ValueCover
    k: int
    components: list[PreimageComponent]
    labels: np.ndarray  # component id per cell, -1 outside Phi^-1(K_n)
    bracket: ScalarField = field(repr=False)

    @property
    def n(self) -> int:
        return self.cover.n

    @property
    def level(self) -> int:
        return self.cover.n * self.k

    @property
    def valid_components(self) -> list[PreimageComponent]:
        return [c for c in self.components if c.valid]

    def kn_mask(self) -> np.ndarray:
        return self.labels >= 0

    def valid_mask(self) -> np.ndarray:
        ids = np.array([c.component_id for c in self.components if c.valid], dtype=np.int64)
        return np.isin(self.labels, ids)


def _square_keys(fc, gc, level, member):
    """Integer key of the level square holding each cell center; -1 outside ``member``."""
    i = np.floor(fc * level).astype(np.int64)
    j = np.floor(gc * level).astype(np.int64)
    keys = np.full(fc.shape, -1, dtype=np.int64)
    if not member.any():
        return keys, i, j, 0, 0, 1
    imin, jmin = i[member].min(), j[member].min()
    width = int(j[member].max() - jmin + 1)
    keys[member] = (i[member] - imin) * width + (j[member] - jmin)
    return keys, i, j, imin, jmin, width


def _build_components(F, G, labels, nlab, i_idx, j_idx, level, tau, bracket):
    grid = F.grid
    if nlab == 0:
        return []
    corners = cell_corner_stack(bracket.values, grid.periodic)
    cmin = corners.min(0)
    cmax = corners.max(0)
    amin = np.abs(corners).min(0)
    amax = np.abs(corners).max(0)
    weight = np.abs(cell_means(bracket)) * grid.cell_area

    flat = labels.ravel()
    live = np.flatnonzero(flat >= 0)
    order = live[np.argsort(flat[live], kind="stable")]
    lab_sorted = flat[order]
    starts = np.flatnonzero(np.r_[True, lab_sorted[1:] != lab_sorted[:-1]])
    ny = labels.shape[1]

    def red(arr, fn):
        return fn.reduceat(arr.ravel()[order], starts)

    comp_cmin = red(cmin, np.minimum)
    comp_cmax = red(cmax, np.maximum)
    comp_amin = red(amin, np.minimum)
    comp_amax = red(amax, np.maximum)
    comp_w = np.add.reduceat(weight.ravel()[order], starts)
    ends = np.r_[starts[1:], len(order)]
    area_q = 1.0 / level**2
    out = []
    for c in range(len(starts)):
        idx = order[starts[c]:ends[c]]
        first = idx[0]
        sq = ValueSquare(level, int(i_idx.ravel()[first]), int(j_idx.ravel()[first]))
        cells = np.column_stack([idx // ny, idx % ny])
        if comp_cmin[c] > 0:
            sign = 1
        elif comp_cmax[c] < 0:
            sign = -1
        else:
            sign = 0
        sheets = comp_w[c] / area_q
        reasons = []
        if sign == 0:
            reasons.append("bracket sign not constant")
        if not (SHEET_COUNT_RANGE[0] <= sheets <= SHEET_COUNT_RANGE[1]):
            reasons.append(f"sheet count {sheets:.3f} outside {SHEET_COUNT_RANGE}")
        if tau is not None and comp_amin[c] < tau:
            reasons.append("bracket below tau")
        out.append(PreimageComponent(
            square=sq,
            cells=cells,
            bracket_sign=sign,
            min_abs_bracket=float(comp_amin[c]),
            max_abs_bracket=float(comp_amax[c]),
            sheet_count_estimate=float(sheets),
            valid=not reasons,
            reason="; ".join(reasons),
            component_id=int(flat[first]),
        ))
    return out


def decompose(F: ScalarField, G: ScalarField, n: int, k: int, tau: float | None = None,
              cover: ValueCover | None = None) -> PhiDecomposition:
    """All sheets of Phi over the 1/(kn) subdivision of K_n."""
    if k < 1:
        raise ValueError("k must be >= 1")
    bracket = poisson_bracket(F, G)
    if tau is None:
        tau = default_tau(bracket)
    if cover is None:
        cover = regular_value_cover(F, G, n, tau)
    level = n * k
    fc, gc = cell_centers(F, G)
    i = np.floor(fc * level).astype(np.int64)
    j = np.floor(gc * level).astype(np.int64)
    parent = {(s.i, s.j) for s in cover.squares}
    if parent:
        pi, pj = i // k, j // k
        pairs = np.array(sorted(parent), dtype=np.int64)
        # membership of (pi, pj) in the cover via a dense lookup table
        oi, oj = pairs[:, 0].min(), pairs[:, 1].min()
        table = np.zeros((pairs[:, 0].max() - oi + 1, pairs[:, 1].max() - oj + 1), dtype=bool)
        table[pairs[:, 0] - oi, pairs[:, 1] - oj] = True
        ri, rj = pi - oi, pj - oj
        inside = (ri >= 0) & (ri < table.shape[0]) & (rj >= 0) & (rj < table.shape[1])
        member = np.zeros(fc.shape, dtype=bool)
        member[inside] = table[ri[inside], rj[inside]]
    else:
        member = np.zeros(fc.shape, dtype=bool)
    keys, i, j, _, _, _ = _square_keys(fc, gc, level, member)
    labels, nlab = _kernels.label_equal_keys(keys, F.grid.periodic, F.grid.periodic)
    comps = _build_components(F, G, labels, nlab, i, j, level, tau, bracket)
    return PhiDecomposition(cover, k, comps, labels, bracket)


def preimage_components(F: ScalarField, G: ScalarField, Q: ValueSquare,
                        tau: float | None = None) -> list[PreimageComponent]:
    """Connected sheets of cells whose center value lies in ``Q`` (half-open)."""
    bracket = poisson_bracket(F, G)
    fc, gc = cell_centers(F, G)
    i = np.floor(fc * Q.level).astype(np.int64)
    j = np.floor(gc * Q.level).astype(np.int64)
    member = (i == Q.i) & (j == Q.j)
    keys = np.where(member, 0, -1).astype(np.int64)
    labels, nlab = _kernels.label_equal_keys(keys, F.grid.periodic, F.grid.periodic)
    return _build_components(F, G, labels, nlab, i, j, Q.level, tau, bracket)


def oscillation_stats(F: ScalarField, G: ScalarField, p: float,
                      components: Sequence[PreimageComponent],
                      bracket: ScalarField | None = None) -> tuple[float, list[float]]:
    """Per-sheet ``max - min`` of ``|{F,G}|^p`` over the corner nodes of its cells."""
    if p < 1:
        raise ValueError("p must be >= 1")
    if not components:
        return 0.0, []
    b = poisson_bracket(F, G) if bracket is None else bracket
    corners = np.abs(cell_corner_stack(b.values, F.grid.periodic)) ** p
    lo = corners.min(0)
    hi = corners.max(0)
    per = []
    for comp in components:
        ci, cj = comp.cells[:, 0], comp.cells[:, 1]
        per.append(float(hi[ci, cj].max() - lo[ci, cj].min()))
    return max(per), per


# -- counting and the area formula --------------------------------------------

def preimage_count_field(Fb: ScalarField, Gb: ScalarField, restrict=None, value_grid=256,
                         bounds: tuple[float, float, float, float] | None = None,
                         offset: float = 0.5) -> PreimageCount:
    """Number of restricted cell quads whose winding number about each value sample is nonzero.

    ``value_grid`` is the number of samples per axis (int or pair); samples sit
    at the midpoints of a uniform raster of ``bounds`` (default: the bounding
    box of the restricted cell images).
    """
    mask = _as_mask(Fb.grid, restrict)
    fc, gc = _corners(Fb, Gb)
    fq = fc[:, mask].T
    gq = gc[:, mask].T
    if isinstance(value_grid, (tuple, list)):
        nu, nv = int(value_grid[0]), int(value_grid[1])
    else:
        nu = nv = int(value_grid)
    if len(fq) == 0:
        raise ValueError("restrict selects no cells")
    if bounds is None:
        bounds = (float(fq.min()), float(fq.max()), float(gq.min()), float(gq.max()))
    u0, u1, v0, v1 = bounds
    if u1 <= u0 or v1 <= v0:
        # the image is a segment or a point: no area, nothing to count
        return PreimageCount(np.zeros((nu, nv), dtype=np.int32), bounds, 0.0, 0.0, len(fq))
    du, dv = (u1 - u0) / nu, (v1 - v0) / nv
    counts, degenerate = _kernels.count_preimages(fq, gq, u0, du, nu, v0, dv, nv, offset)
    return PreimageCount(counts, bounds, du, dv, degenerate)


def area_formula_check(F: ScalarField, G: ScalarField, restrict=None,
                       value_grid=512) -> AreaFormulaReport:
    """Compare the integral of ``|dF ^ dG|`` with the integral of the preimage count."""
    mask = _as_mask(F.grid, restrict)
    b = poisson_bracket(F, G)
    lhs = float(np.abs(cell_means(b))[mask].sum()) * F.grid.cell_area
    rhs = preimage_count_field(F, G, mask, value_grid).integral()
    rel = abs(lhs - rhs) / max(lhs, rhs, 1e-300)
    if lhs == 0.0 and rhs == 0.0:
        rel = 0.0
    return AreaFormulaReport(lhs, rhs, rel)


# -- local surjectivity --------------------------------------------------------

def surjectivity_region(F: ScalarField, G: ScalarField, comp: PreimageComponent,
                        delta: float) -> np.ndarray:
    """Cell mask of the sheet ``comp`` thickened until its edge maps outside ``Q``.

    The region is the connected set of cells, containing ``comp.cells``, whose
    bounding boxes meet ``Q`` grown by ``delta`` plus the largest cell-image
    extent.  Every region edge then maps far enough from ``Q`` that moving the
    corner values by at most ``delta`` keeps the edge image off ``Q_delta``.
    """
    boxes = phi_image_cells(F, G)
    ci, cj = comp.cells[:, 0], comp.cells[:, 1]
    ext = max(float((boxes.f_hi - boxes.f_lo)[ci, cj].max()),
              float((boxes.g_hi - boxes.g_lo)[ci, cj].max()))
    pad = delta + ext
    u0, u1, v0, v1 = comp.square.bounds
    near = ((boxes.f_lo <= u1 + pad) & (boxes.f_hi >= u0 - pad)
            & (boxes.g_lo <= v1 + pad) & (boxes.g_hi >= v0 - pad))
    labels, _ = _kernels.label_equal_keys(np.where(near, 0, -1), F.grid.periodic, F.grid.periodic)
    ids = np.unique(labels[ci, cj])
    return np.isin(labels, ids[ids >= 0])


def local_surjectivity_check(F: ScalarField, G: ScalarField, Fb: ScalarField,
                             Gb: ScalarField, comp: PreimageComponent, delta: float,
                             samples: int = 24, region: np.ndarray | None = None
                             ) -> SurjectivityReport:
    """Fraction of a lattice on ``Q_delta`` hit by the perturbed images of the sheet."""
    level = comp.square.level
    if not (0.0 < delta < 1.0 / (2 * level)):
        raise ValueError(f"delta must lie in (0, 1/(2*{level})), got {delta}")
    slack = delta * (1 + 1e-12)
    if c0_norm(ScalarField(F.grid, Fb.values - F.values)) > slack or \
            c0_norm(ScalarField(G.grid, Gb.values - G.values)) > slack:
        raise ValueError("perturbation exceeds delta in the C0 norm")
    if region is None:
        region = surjectivity_region(F, G, comp, delta)
    u0, u1, v0, v1 = comp.square.shrunk(delta)
    m = max(2, int(samples))
    du, dv = (u1 - u0) / (m - 1), (v1 - v0) / (m - 1)
    fc, gc = _corners(Fb, Gb)
    counts, _ = _kernels.count_preimages(fc[:, region].T, gc[:, region].T,
                                         u0, du, m, v0, dv, m, 0.0)
    frac = float(np.count_nonzero(counts >= 1)) / counts.size
    return SurjectivityReport(frac, counts.size, float(delta), comp.square)


# -- main estimate and exhaustion -----------------------------------------------

def bracket_support_area(bracket: ScalarField) -> float:
    """Area of the cells with a nonzero bracket value at some corner."""
    corners = cell_corner_stack(bracket.values, bracket.grid.periodic)
    return float(np.count_nonzero((corners != 0).any(0))) * bracket.grid.cell_area


def main_estimate(F: ScalarField, G: ScalarField, p: float, n: int, k: int, delta: float,
                  epsilon: float, tau: float | None = None,
                  decomposition: PhiDecomposition | None = None) -> MainEstimateReport:
    """Lower bound on ``||{Fb,Gb}||_p^p`` for every pair C0-delta-close to (F, G).

    ``bound = (1 - 2 k n delta)^(2p) * max(0, N - epsilon * area supp{F,G})``
    with ``N`` the p-th power norm of the bracket over the valid sheets.
    ``sheetwise_bound`` sums the per-sheet inequality instead, using each
    sheet's own oscillation and area in place of ``epsilon`` and the support.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if not (0.0 < delta < 1.0 / (2 * k * n)):
        raise ValueError(f"delta must lie in (0, 1/(2kn)) = (0, {1 / (2 * k * n)}), got {delta}")
    dec = decomposition or decompose(F, G, n, k, tau)
    if dec.n != n or dec.k != k:
        raise ValueError("decomposition was built for different (n, k)")
    b = dec.bracket
    valid = dec.valid_components
    osc, per = oscillation_stats(F, G, p, valid, b)
    if epsilon < osc:
        warnings.warn(
            f"epsilon={epsilon:g} is below the measured sheet oscillation {osc:g}; "
            "the bound is not guaranteed", RuntimeWarning, stacklevel=2)
    vals = np.abs(cell_means(b)) ** p
    covered = float(vals[dec.valid_mask()].sum()) * F.grid.cell_area
    supp = bracket_support_area(b)
    factor = (1.0 - 2.0 * k * n * delta) ** (2 * p)
    bound = factor * max(covered - epsilon * supp, 0.0)
    # the same chain applied per sheet, each with its own oscillation and area
    A = F.grid.cell_area
    terms = [float(vals[c.cells[:, 0], c.cells[:, 1]].sum()) * A - o * c.size * A
             for c, o in zip(valid, per)]
    sheetwise = factor * sum(max(t, 0.0) for t in terms)
    return MainEstimateReport(int(n), int(k), float(delta), float(epsilon), float(p),
                              float(factor), covered, supp, float(bound), float(sheetwise))


def kn_norm_sequence(F: ScalarField, G: ScalarField, p: float, tau: float | None,
                     n_list: Iterable[int]) -> KnSequence:
    """``||{F,G}||_p^p`` over the cells of Phi^-1(K_n), for each n."""
    n_list = tuple(int(n) for n in n_list)
    if list(n_list) != sorted(n_list):
        raise ValueError("n_list must be ascending")
    b = poisson_bracket(F, G)
    if tau is None:
        tau = default_tau(b)
    vals = np.abs(cell_means(b)) ** p
    fc, gc = cell_centers(F, G)
    out = []
    for n in n_list:
        cover = regular_value_cover(F, G, n, tau)
        if not cover.squares:
            out.append(0.0)
            continue
        keyset = {(s.i, s.j) for s in cover.squares}
        i = np.floor(fc * n).astype(np.int64)
        j = np.floor(gc * n).astype(np.int64)
        sq = np.array(sorted(keyset), dtype=np.int64)
        member = np.isin(i * (1 << 32) + j, sq[:, 0] * (1 << 32) + sq[:, 1])
        out.append(float(vals[member].sum()) * F.grid.cell_area)
    full = float(vals.sum()) * F.grid.cell_area
    return KnSequence(n_list, tuple(out), full)


# -- exports -------------------------------------------------------------------

def report_dict(report) -> dict:
    return asdict(report)


def write_components_csv(path, components: Sequence[PreimageComponent]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["square_i", "square_j", "level", "component_id", "cell_i", "cell_j"])
        for comp in components:
            sq = comp.square
            for ci, cj in comp.cells:
                w.writerow([sq.i, sq.j, sq.level, comp.component_id, int(ci), int(cj)])
