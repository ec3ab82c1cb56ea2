"""Empirical probes of C0 rigidity of the L^p norm of the bracket.

Perturbations stay inside the sup-norm ball of radius delta around (F, G);
a projected descent searches that ball for small ``||{F~, G~}||_p``. The
smallest value observed is an upper bound on the infimum over the ball, and
the main estimate gives a certified lower bound, so a sweep over delta
brackets the modulus of lower semicontinuity.
"""
from __future__ import annotations

import csv
import enum
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

from . import phi_analysis
from .field_core import ScalarField, cell_means, format_real, lp_norm, poisson_bracket


class Family(str, enum.Enum):
    SMOOTH_NOISE = "smooth_noise"
    MOLLIFY = "mollify"
    CLIP_ADVERSARIAL = "clip_adversarial"


ALL_FAMILIES = tuple(Family)


@dataclass(frozen=True)
class PerturbationSpec:
    family: Family
    delta: float
    seed: int = 0
    smoothing: float = 4.0  # correlation length of the noise, in grid steps
    max_radius: int = 8  # largest mollifier radius, in grid steps

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if not (self.delta >= 0 and math.isfinite(self.delta)):
            raise ValueError(f"delta must be finite and >= 0, got {self.delta}")
        if self.smoothing <= 0 or self.max_radius < 1:
            raise ValueError("smoothing must be > 0 and max_radius >= 1")


class BallViolation(AssertionError):
    """A perturbation left its sup-norm ball."""


# -- the delta ball --------------------------------------------------------------

def _zero_margin(values: np.ndarray, m: int) -> np.ndarray:
    if m > 0:
        values[:m] = 0.0
        values[-m:] = 0.0
        values[:, :m] = 0.0
        values[:, -m:] = 0.0
    return values


def _pull_in(out: np.ndarray, H: np.ndarray, delta: float) -> np.ndarray:
    # clipping against H +- delta can still land an ulp outside after rounding
    for _ in range(4):
        over = np.abs(out - H) > delta
        if not over.any():
            break
        out[over] = np.nextafter(out[over], H[over])
    return out


def project(Hbar: np.ndarray, H: ScalarField, delta: float) -> np.ndarray:
    """Nearest point of the ball around H (nodewise clip), margin re-zeroed."""
    out = np.clip(Hbar, H.values - delta, H.values + delta)
    return _zero_margin(_pull_in(out, H.values, delta), H.support_margin)


def _finish(H: ScalarField, values: np.ndarray, delta: float) -> ScalarField:
    dist = float(np.max(np.abs(values - H.values))) if values.size else 0.0
    if dist > delta:
        raise BallViolation(f"perturbation left the ball: {dist!r} > {delta!r}")
    return H.replace(values)


def _scaled_increment(H: ScalarField, inc: np.ndarray, delta: float) -> np.ndarray:
    """``H + inc`` with ``inc`` rescaled so the sup distance is delta, to the last ulp."""
    top = float(np.max(np.abs(inc)))
    if top == 0.0 or delta == 0.0:
        return H.values.copy()
    inc = inc * (delta / top)
    return _pull_in(H.values + inc, H.values, delta)


def _noise(H: ScalarField, rng: np.random.Generator, smoothing: float) -> np.ndarray:
    mode = "wrap" if H.grid.periodic else "reflect"
    w = ndimage.gaussian_filter(rng.standard_normal(H.grid.shape), smoothing, mode=mode)
    return _zero_margin(w, H.support_margin)


def bump_kernel(radius: int) -> np.ndarray:
    """Normalized discrete bump ``exp(1 - 1/(1 - s))`` with ``s = |z|^2 / radius^2``."""
    r = int(radius)
    i = np.arange(-r, r + 1)
    s = (i[:, None] ** 2 + i[None, :] ** 2) / float(r * r)
    k = np.zeros_like(s)
    inside = s < 1
    k[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside]))
    return k / k.sum()


def perturb(H: ScalarField, spec: PerturbationSpec) -> ScalarField:
    """A member of the sup-norm ball of radius ``spec.delta`` around H."""
    if spec.delta == 0.0:
        return H.replace(H.values.copy())
    rng = np.random.default_rng(spec.seed)
    fam = spec.family
    if fam is Family.SMOOTH_NOISE:
        out = _scaled_increment(H, _noise(H, rng, spec.smoothing), spec.delta)
    elif fam is Family.MOLLIFY:
        mode = "wrap" if H.grid.periodic else "constant"
        radius = int(rng.integers(1, spec.max_radius + 1))
        out = H.values.copy()
        while radius >= 1:
            trial = _zero_margin(ndimage.convolve(H.values, bump_kernel(radius), mode=mode),
                                 H.support_margin)
            if np.max(np.abs(trial - H.values)) <= spec.delta:
                out = trial
                break
            radius -= 1
    elif fam is Family.CLIP_ADVERSARIAL:
        inc = _noise(H, rng, spec.smoothing)
        top = float(np.max(np.abs(inc)))
        if top > 0:
            inc *= 2.0 * spec.delta / top
        out = project(H.values + inc, H, spec.delta)
    else:  # pragma: no cover
        raise ValueError(f"unknown family {fam}")
    return _finish(H, out, spec.delta)


# -- objective and its adjoint ------------------------------------------------------

def _diff_matrix(n: int, h: float, periodic: bool) -> sp.csr_matrix:
    """1D difference matrix with the stencils used for partial derivatives."""
    if periodic:
        D = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [-1, 1], shape=(n, n), format="lil")
        D[0, n - 1] = -1.0
        D[n - 1, 0] = 1.0
        return (D.tocsr() / (2.0 * h))
    D = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [-1, 1], shape=(n, n), format="lil")
    D[0, :3] = [-3.0, 4.0, -1.0]
    D[n - 1, n - 3:] = [1.0, -4.0, 3.0]
    return D.tocsr() / (2.0 * h)


@dataclass(eq=False)
class BracketObjective:
    """``J(F, G) = ||{F, G}||_p^p`` on a fixed grid, with its adjoint gradient."""

    grid: object
    p: float
    Dx: sp.csr_matrix = field(init=False, repr=False)
    Dy: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be >= 1")
        g = self.grid
        self.Dx = sp.kron(_diff_matrix(g.nx, g.hx, g.periodic), sp.identity(g.ny), format="csr")
        self.Dy = sp.kron(sp.identity(g.nx), _diff_matrix(g.ny, g.hy, g.periodic), format="csr")

    def _means_adjoint(self, w_cell: np.ndarray) -> np.ndarray:
        g = self.grid
        w = w_cell / 4.0
        if g.periodic:
            out = w.copy()
            out += np.roll(w, 1, 0)
            out += np.roll(w, 1, 1)
            out += np.roll(np.roll(w, 1, 0), 1, 1)
            return out
        out = np.zeros(g.shape)
        out[:-1, :-1] += w
        out[1:, :-1] += w
        out[1:, 1:] += w
        out[:-1, 1:] += w
        return out

    def cell_terms(self, F: np.ndarray, G: np.ndarray) -> np.ndarray:
        """Per-cell contributions ``|mean b|^p * cell_area``; they sum to J."""
        b = self._bracket(F.ravel(), G.ravel())[0].reshape(self.grid.shape)
        m = cell_means(ScalarField(self.grid, b))
        return np.abs(m) ** self.p * self.grid.cell_area

    def value(self, F: np.ndarray, G: np.ndarray) -> float:
        return float(np.sum(self.cell_terms(F, G)))

    def _bracket(self, f, g):
        fx, fy = self.Dx @ f, self.Dy @ f
        gx, gy = self.Dx @ g, self.Dy @ g
        return fx * (-gy) + fy * gx, (fx, fy, gx, gy)

    def value_and_grad(self, F: np.ndarray, G: np.ndarray):
        shape = self.grid.shape
        b, (fx, fy, gx, gy) = self._bracket(F.ravel(), G.ravel())
        m = cell_means(ScalarField(self.grid, b.reshape(shape)))
        J = float(np.sum(np.abs(m) ** self.p)) * self.grid.cell_area
        dm = self.p * np.abs(m) ** (self.p - 1) * np.sign(m) * self.grid.cell_area
        w = self._means_adjoint(dm).ravel()
        gF = self.Dx.T @ (w * -gy) + self.Dy.T @ (w * gx)
        gG = self.Dx.T @ (w * fy) - self.Dy.T @ (w * fx)
        return J, gF.reshape(shape), gG.reshape(shape)


def bracket_lp(F: ScalarField, G: ScalarField, p: float) -> float:
    return lp_norm(poisson_bracket(F, G), p)


# -- adversarial search --------------------------------------------------------------

@dataclass(eq=False)
class AdversarialResult:
    Fb: ScalarField
    Gb: ScalarField
    achieved_lp: float
    history: list[float]


def adversarial_search(F: ScalarField, G: ScalarField, delta: float, p: float,
                       budget: int = 40, seed: int = 0,
                       warm: tuple[ScalarField, ScalarField] | None = None,
                       step: float = 0.5) -> AdversarialResult:
    """Projected descent on ``||{F~, G~}||_p^p`` inside the sup-norm delta ball.

    Steps move every node by at most ``step * delta`` (gradient normalized in
    the sup norm); a step that does not improve halves ``step``. The start is
    the best of (F, G), the warm start, and the pairs with F or G pulled
    toward zero as far as the ball allows. The best iterate is returned.
    """
    if not delta > 0:
        raise ValueError("delta must be > 0")
    if p < 1:
        raise ValueError("p must be >= 1")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    obj = BracketObjective(F.grid, p)
    rng = np.random.default_rng(seed)
    starts = [(F.values.copy(), G.values.copy()),
              (project(np.zeros(F.grid.shape), F, delta), G.values.copy()),
              (F.values.copy(), project(np.zeros(G.grid.shape), G, delta))]
    if warm is not None:
        starts.append((project(warm[0].values, F, delta), project(warm[1].values, G, delta)))
    # a small random kick breaks symmetric stalls at zero-gradient points
    kick = rng.uniform(-1, 1, size=(2,) + F.grid.shape) * (0.05 * delta)
    starts.append((project(F.values + kick[0], F, delta), project(G.values + kick[1], G, delta)))
    scored = [(obj.value(a, b), i) for i, (a, b) in enumerate(starts)]
    best_J, idx = min(scored)
    x, y = starts[idx]
    best = (x, y)
    history = [best_J ** (1.0 / p)]
    J = best_J
    for _ in range(budget):
        if J == 0.0:
            break
        _, gF, gG = obj.value_and_grad(x, y)
        top = max(float(np.max(np.abs(gF))), float(np.max(np.abs(gG))))
        if top == 0.0:
            break
        nx_ = project(x - step * delta * gF / top, F, delta)
        ny_ = project(y - step * delta * gG / top, G, delta)
        Jn = obj.value(nx_, ny_)
        if Jn < J:
            x, y, J = nx_, ny_, Jn
            if J < best_J:
                best_J, best = J, (x, y)
        else:
            step *= 0.5
            if step < 1e-6:
                break
        history.append(best_J ** (1.0 / p))
    Fb = _finish(F, best[0], delta)
    Gb = _finish(G, best[1], delta)
    return AdversarialResult(Fb, Gb, bracket_lp(Fb, Gb, p), history)


@dataclass(frozen=True)
class GradientCheck:
    max_rel_err: float
    checked: int
    skipped: int


def gradient_check(F: ScalarField, G: ScalarField, p: float, nodes: int = 100,
                   step: float = 1e-5, seed: int = 0) -> GradientCheck:
    """Adjoint gradient against central differences at random nodes of F and G.

    For ``p < 2`` nodes whose neighborhood touches a cell with a near-zero
    bracket are skipped (the objective has a kink there).
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    obj = BracketObjective(F.grid, p)
    x, y = F.values.copy(), G.values.copy()
    _, gF, gG = obj.value_and_grad(x, y)
    m = np.abs(cell_means(poisson_bracket(F, G)))
    kink = m < 1e-3 * max(float(m.max()), 1e-300)
    near_kink = ndimage.maximum_filter(kink.astype(np.uint8), size=7, mode="nearest") > 0
    rng = np.random.default_rng(seed)
    nx, ny = F.grid.shape
    lo = max(F.support_margin, G.support_margin)
    candidates = [(f, i, j) for f in (0, 1)
                  for i in range(lo, nx - lo) for j in range(lo, ny - lo)]
    order = rng.permutation(len(candidates))
    worst, checked, skipped = 0.0, 0, 0
    for c in order:
        if checked >= nodes:
            break
        f, i, j = candidates[c]
        if p < 2:
            ci, cj = min(i, m.shape[0] - 1), min(j, m.shape[1] - 1)
            if near_kink[ci, cj]:
                skipped += 1
                continue
        arr = x if f == 0 else y
        keep = arr[i, j]
        # differencing per cell first keeps the untouched cells exactly cancelled
        arr[i, j] = keep + step
        tp = obj.cell_terms(x, y)
        arr[i, j] = keep - step
        tm = obj.cell_terms(x, y)
        arr[i, j] = keep
        fd = float(np.sum(tp - tm)) / (2 * step)
        ad = (gF if f == 0 else gG)[i, j]
        scale = max(abs(fd), abs(ad))
        err = 0.0 if scale < 1e-12 else abs(fd - ad) / scale
        worst = max(worst, err)
        checked += 1
    return GradientCheck(worst, checked, skipped)


# -- sweep -------------------------------------------------------------------------

@dataclass(frozen=True)
class EstimateParams:
    """Main-estimate parameters; ``epsilon=None`` means the measured max oscillation."""

    n: int
    k: int
    epsilon: float | None = None
    tau: float | None = None


@dataclass
class RigiditySweepReport:
    p: float
    full_lp: float
    deltas: list[float]
    per_delta: list[dict]
    kappa_fit: dict | None
    violations: int
    rows: list[dict] = field(repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("rows")
        return d

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["delta", "family", "trial", "achieved_lp"])
            for r in self.rows:
                w.writerow([format_real(r["delta"]), r["family"], r["trial"],
                            format_real(r["achieved_lp"])])


def fit_kappa(deltas: Sequence[float], deficits: Sequence[float]) -> dict | None:
    """Least-squares fit ``log deficit = log c + kappa log delta`` over positive deficits."""
    pts = [(d, e) for d, e in zip(deltas, deficits) if d > 0 and e > 0]
    if len(pts) < 2:
        return None
    lx = np.log([d for d, _ in pts])
    ly = np.log([e for _, e in pts])
    kappa, logc = np.polyfit(lx, ly, 1)
    return {"c": float(math.exp(logc)), "kappa": float(kappa), "points": len(pts)}


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("PB_THREADS", "1")))
    except ValueError:
        return 1


def _estimate_bounds(F, G, p, params: Sequence[EstimateParams]):
    """Prepared decompositions; bounds are evaluated per delta later."""
    prepared = []
    for prm in params:
        dec = phi_analysis.decompose(F, G, prm.n, prm.k, prm.tau)
        eps = prm.epsilon
        if eps is None:
            eps, _ = phi_analysis.oscillation_stats(F, G, p, dec.valid_components, dec.bracket)
        prepared.append((prm, dec, float(eps)))
    return prepared


def rigidity_sweep(F: ScalarField, G: ScalarField, p: float, deltas: Sequence[float],
                   trials: int = 5, families: Sequence = ALL_FAMILIES,
                   estimate_params: EstimateParams | Sequence[EstimateParams] | None = None,
                   seed: int = 0, budget: int = 40) -> RigiditySweepReport:
    """Smallest observed ``||{F~, G~}||_p`` over nested delta balls, with certified bounds.

    Deltas are visited in ascending order; each ball also tries the winner of
    the previous (smaller) ball, so ``min_observed_lp`` is nonincreasing in
    delta. With several ``estimate_params`` the largest admissible bound is
    reported (each one is a valid lower bound on its own).
    """
    deltas = [float(d) for d in deltas]
    if any(d < 0 for d in deltas) or deltas != sorted(deltas):
        raise ValueError("deltas must be nonnegative and ascending")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    fams = [Family(f) for f in families]
    if isinstance(estimate_params, EstimateParams):
        estimate_params = [estimate_params]
    prepared = _estimate_bounds(F, G, p, estimate_params or [])
    full = bracket_lp(F, G, p)

    rows: list[dict] = []
    per_delta = []
    winner = (F, G)
    winner_lp = full
    violations = 0
    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        for di, delta in enumerate(deltas):
            jobs = []
            for fi, fam in enumerate(fams):
                for t in range(trials):
                    ss = np.random.SeedSequence([seed, di, fi, t])
                    sF, sG = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
                    jobs.append((fam, t, sF, sG))

            def run(job, delta=delta):
                fam, t, sF, sG = job
                Fb = perturb(F, PerturbationSpec(fam, delta, sF))
                Gb = perturb(G, PerturbationSpec(fam, delta, sG))
                return fam.value, t, bracket_lp(Fb, Gb, p)

            results = list(pool.map(run, jobs))
            if delta > 0:
                adv = adversarial_search(F, G, delta, p, budget, seed + di, warm=winner)
                results.append(("adversarial", 0, adv.achieved_lp))
                if adv.achieved_lp < winner_lp:
                    winner, winner_lp = (adv.Fb, adv.Gb), adv.achieved_lp
            # the previous winner lies in this larger ball too
            results.append(("carried", 0, winner_lp))
            for fam, t, val in results:
                rows.append({"delta": delta, "family": fam, "trial": t, "achieved_lp": val})
            min_obs = min(v for _, _, v in results)

            bound = sheetwise = None
            for prm, dec, eps in prepared:
                if 0 < delta < 1.0 / (2 * prm.k * prm.n):
                    rep = phi_analysis.main_estimate(F, G, p, prm.n, prm.k, delta, eps,
                                                     prm.tau, decomposition=dec)
                    bound = rep.bound if bound is None else max(bound, rep.bound)
                    sheetwise = (rep.sheetwise_bound if sheetwise is None
                                 else max(sheetwise, rep.sheetwise_bound))
            certified = max(b for b in (bound, sheetwise, 0.0) if b is not None)
            bad = sum(1 for _, _, v in results if v ** p < certified)
            violations += bad
            per_delta.append({
                "delta": delta,
                "min_observed_lp": min_obs,
                "trials": len(results),
                "bound_from_main_estimate": bound,
                "sheetwise_bound": sheetwise,
                "deficit": full - min_obs,
                "violations": bad,
            })
    kappa = fit_kappa(deltas, [r["deficit"] for r in per_delta])
    return RigiditySweepReport(float(p), full, deltas, per_delta, kappa, violations, rows)
