"""Charts, metric fields, tensor fields, Christoffel symbols and curvature.

Everything lives on a coordinate chart with a declared sample box; all
"is zero / is Einstein / has signature" questions are answered by exact
symbolic differentiation of the component expressions followed by numeric
evaluation at sampled points.  Symbolic Christoffels and curvature tensors
are available for small charts; the numeric kernel (gamma_at, ricci_at,
...) assembles the same quantities from compiled component derivatives and
scales to the ten-dimensional product metrics in the catalog.

Conventions (pinned so the round unit sphere has positive scalar
curvature): Gamma^k_ij = 1/2 g^{kl}(d_i g_jl + d_j g_il - d_l g_ij),
R^l_ijk = d_i Gamma^l_jk - d_j Gamma^l_ik + Gamma^l_im Gamma^m_jk
- Gamma^l_jm Gamma^m_ik, Ric_jk = R^i_ijk, Scal = g^{jk} Ric_jk.
Signatures are reported as unordered (plus, minus) eigenvalue counts.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import symexpr as sx
from .symexpr import Expr, EvaluationError, normalize

__all__ = [
    "Chart", "Point", "MetricField", "TensorField", "CurvatureSet",
    "GeometryError", "DegenerateMetricError", "NodeBudgetError",
    "christoffels", "curvature", "signature", "is_einstein",
    "is_constant_curvature", "covariant_derivative", "lie_derivative_metric",
    "musical", "riemann_at", "ricci_at", "scal_at",
    "EinsteinReport", "ConstantCurvatureReport",
]

NUMZERO_TOL = 1e-9
NODE_BUDGET = 10 ** 6


class GeometryError(Exception):
    pass


class DegenerateMetricError(GeometryError):
    pass


class NodeBudgetError(GeometryError):
    pass


def _node_count(e: Expr) -> int:
    n = 1
    for a in e.args:
        n += _node_count(a)
    return n


# ---------------------------------------------------------------------------
# charts and points

@dataclass(frozen=True, eq=False)
class Chart:
    """A named coordinate chart with a sample box used for numeric trials.

    `excluded` lists expressions whose zero loci are off limits (r = 0 on a
    cone, sin(x3) = 0, ...); the declared box must stay clear of them.
    """

    name: str
    coords: tuple[str, ...]
    box: tuple[tuple[float, float], ...]
    excluded: tuple[Expr, ...] = ()
    constants: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.coords)) != len(self.coords):
            raise GeometryError("coordinate names must be distinct")
        if len(self.box) != len(self.coords):
            raise GeometryError("sample box must give one interval per coordinate")
        for nm in self.coords:
            if not nm.isidentifier():
                raise GeometryError(f"coordinate name {nm!r} is not an identifier")
        for lo, hi in self.box:
            if not (lo < hi) or not (math.isfinite(lo) and math.isfinite(hi)):
                raise GeometryError("sample box intervals must be finite and nonempty")
        if self.excluded:
            rng = random.Random(1234)
            for _ in range(64):
                pt = self._draw(rng, margin=0.0)
                for ex in self.excluded:
                    if abs(sx.evaluate(ex, pt, self.constants)) < 1e-6:
                        raise GeometryError(
                            f"sample box of chart {self.name!r} touches excluded locus {ex}")

    @property
    def dim(self) -> int:
        return len(self.coords)

    def _draw(self, rng: random.Random, margin: float = 0.05) -> dict[str, float]:
        pt = {}
        for nm, (lo, hi) in zip(self.coords, self.box):
            pad = margin * (hi - lo)
            pt[nm] = rng.uniform(lo + pad, hi - pad)
        return pt

    def point(self, values: Sequence[float]) -> "Point":
        return Point(self, tuple(float(v) for v in values))

    def center(self) -> "Point":
        return self.point([0.5 * (lo + hi) for lo, hi in self.box])

    def sample_points(self, count: int, seed: int = 0, margin: float = 0.05) -> list["Point"]:
        rng = random.Random(seed)
        out = []
        tries = 0
        while len(out) < count:
            tries += 1
            if tries > 100 * count + 100:
                raise GeometryError(f"could not sample {count} admissible points on {self.name!r}")
            pt = self._draw(rng, margin)
            ok = True
            for ex in self.excluded:
                try:
                    if abs(sx.evaluate(ex, pt, self.constants)) < 1e-3:
                        ok = False
                        break
                except EvaluationError:
                    ok = False
                    break
            if ok:
                out.append(self.point([pt[nm] for nm in self.coords]))
        return out


@dataclass(frozen=True, eq=False)
class Point:
    chart: Chart
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != self.chart.dim:
            raise GeometryError("coordinate count does not match chart dimension")
        for v, (lo, hi) in zip(self.values, self.chart.box):
            if not math.isfinite(v):
                raise GeometryError("point coordinates must be finite")
            slack = 0.02 * (hi - lo)
            if v < lo - slack or v > hi + slack:
                raise GeometryError(
                    f"point lies outside the declared sample box of {self.chart.name!r}")

    def bindings(self) -> dict[str, float]:
        env = dict(zip(self.chart.coords, self.values))
        env.update(self.chart.constants)
        return env

    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)

    def shifted(self, i: int, h: float) -> "Point":
        vals = list(self.values)
        vals[i] += h
        return Point(self.chart, tuple(vals))


def _as_values(p) -> np.ndarray:
    if isinstance(p, Point):
        return p.array()
    return np.asarray(p, dtype=float)


# ---------------------------------------------------------------------------
# symbolic matrix helpers

def _sym_inverse_and_det(mat: list[list[Expr]], budget: int = NODE_BUDGET) -> tuple[list[list[Expr]], Expr]:
    """Fraction-free-ish Gauss-Jordan inverse with structural pivoting.

    Entries are normalized after every elimination step; raises
    NodeBudgetError when intermediate expressions outgrow the budget.
    """
    n = len(mat)
    a = [[normalize(mat[i][j]) for j in range(n)] for i in range(n)]
    inv = [[sx.ONE if i == j else sx.ZERO for j in range(n)] for i in range(n)]
    det: Expr = sx.ONE
    for c in range(n):
        piv = None
        for r in range(c, n):
            if a[r][c] != sx.ZERO:
                # prefer constant pivots, they keep quotients small
                if piv is None or (a[r][c].kind == "const" and a[piv][c].kind != "const"):
                    piv = r
        if piv is None:
            raise DegenerateMetricError("structurally singular matrix")
        if piv != c:
            a[c], a[piv] = a[piv], a[c]
            inv[c], inv[piv] = inv[piv], inv[c]
            det = normalize(sx.mul(sx.const(-1), det))
        pivot = a[c][c]
        det = normalize(sx.mul(det, pivot))
        pinv = normalize(sx.power(pivot, -1))
        a[c] = [normalize(sx.mul(x, pinv)) for x in a[c]]
        inv[c] = [normalize(sx.mul(x, pinv)) for x in inv[c]]
        for r in range(n):
            if r == c or a[r][c] == sx.ZERO:
                continue
            f = a[r][c]
            a[r] = [normalize(sx.add(x, sx.neg(sx.mul(f, y)))) for x, y in zip(a[r], a[c])]
            inv[r] = [normalize(sx.add(x, sx.neg(sx.mul(f, y)))) for x, y in zip(inv[r], inv[c])]
        total = sum(_node_count(x) for row in inv for x in row)
        if total > budget:
            raise NodeBudgetError("symbolic inversion exceeded the node budget")
    return inv, det


# ---------------------------------------------------------------------------
# tensor fields

@dataclass(frozen=True, eq=False)
class TensorField:
    """Tensor field with `r` contravariant then `s` covariant index slots."""

    chart: Chart
    r: int
    s: int
    comps: np.ndarray  # object ndarray of Expr, shape (n,)*(r+s)
    symmetric: bool = False

    def __post_init__(self):
        n = self.chart.dim
        want = (n,) * (self.r + self.s)
        arr = np.asarray(self.comps, dtype=object)
        if arr.shape != want:
            raise GeometryError(f"component array must have shape {want}")
        norm = np.empty(want, dtype=object)
        for idx in np.ndindex(*want):
            norm[idx] = normalize(arr[idx])
        object.__setattr__(self, "comps", norm)
        if self.symmetric:
            if (self.r, self.s) != (0, 2):
                raise GeometryError("symmetric flag is for (0,2) tensors")
            for i in range(n):
                for j in range(i, n):
                    if norm[i, j] != norm[j, i]:
                        raise GeometryError("symmetric flag set but components are not")

    @property
    def valence(self) -> tuple[int, int]:
        return (self.r, self.s)

    def at(self, p) -> np.ndarray:
        flat = self._compiled()(_as_values(p))
        return np.asarray(flat, dtype=float).reshape(self.comps.shape)

    def _compiled(self):
        exprs = [self.comps[idx] for idx in np.ndindex(*self.comps.shape)]
        return sx.compile_exprs(exprs, self.chart.coords, self.chart.constants)

    def d1_at(self, p) -> np.ndarray:
        """Coordinate derivatives: result[k, *idx] = d_k T[idx]."""
        n = self.chart.dim
        shape = (n,) + self.comps.shape
        exprs = []
        for k in range(n):
            for idx in np.ndindex(*self.comps.shape):
                exprs.append(sx.differentiate(self.comps[idx], self.chart.coords[k]))
        vals = sx.compile_exprs(exprs, self.chart.coords, self.chart.constants)(_as_values(p))
        return np.asarray(vals, dtype=float).reshape(shape)


def vector_field(chart: Chart, comps: Sequence[Expr]) -> TensorField:
    arr = np.array([normalize(c) for c in comps], dtype=object)
    return TensorField(chart, 1, 0, arr)


def oneform_field(chart: Chart, comps: Sequence[Expr]) -> TensorField:
    arr = np.array([normalize(c) for c in comps], dtype=object)
    return TensorField(chart, 0, 1, arr)


def sym2_field(chart: Chart, comps) -> TensorField:
    arr = np.array([[normalize(e) for e in row] for row in comps], dtype=object)
    return TensorField(chart, 0, 2, arr, symmetric=True)


# ---------------------------------------------------------------------------
# metric fields

class MetricField:
    """Symmetric nondegenerate (0,2) tensor with cached inverse/determinant.

    Immutable after construction.  The symbolic inverse is computed on
    first use (and may raise NodeBudgetError for monstrous charts); the
    numeric kernel never needs it.
    """

    def __init__(self, chart: Chart, comps, attached: Mapping[str, TensorField] | None = None,
                 check: bool = True):
        self.chart = chart
        n = chart.dim
        arr = np.empty((n, n), dtype=object)
        for i in range(n):
            for j in range(n):
                arr[i, j] = normalize(np.asarray(comps, dtype=object)[i, j])
        for i in range(n):
            for j in range(i + 1, n):
                if arr[i, j] != arr[j, i]:
                    raise GeometryError("metric components must be structurally symmetric")
        self.comps = arr
        self.attached = dict(attached or {})
        self._inv = None
        self._det = None
        self._gamma = None
        self._fns: dict = {}
        if check:
            self._check_nondegenerate()

    # -- basic accessors ----------------------------------------------------

    @property
    def dim(self) -> int:
        return self.chart.dim

    def tensor(self) -> TensorField:
        return TensorField(self.chart, 0, 2, self.comps, symmetric=True)

    def _check_nondegenerate(self, trials: int = 8):
        for p in self.chart.sample_points(trials, seed=7):
            m = self.at(p)
            ev = np.abs(np.linalg.eigvalsh(m))
            if ev.min() < 1e-10 * max(ev.max(), 1.0):
                raise DegenerateMetricError(
                    f"metric on {self.chart.name!r} is degenerate near {p.values}")

    @property
    def det(self) -> Expr:
        if self._det is None:
            self._compute_inverse()
        return self._det

    @property
    def inverse(self) -> np.ndarray:
        if self._inv is None:
            self._compute_inverse()
        return self._inv

    def _compute_inverse(self):
        mat = [[self.comps[i, j] for j in range(self.dim)] for i in range(self.dim)]
        inv, det = _sym_inverse_and_det(mat)
        self._inv = np.array(inv, dtype=object)
        self._det = det

    # -- compiled numeric kernel --------------------------------------------

    def _fn(self, key, exprs):
        got = self._fns.get(key)
        if got is None:
            got = sx.compile_exprs(exprs, self.chart.coords, self.chart.constants)
            self._fns[key] = got
        return got

    def at(self, p) -> np.ndarray:
        n = self.dim
        f = self._fn("g", [self.comps[i, j] for i in range(n) for j in range(n)])
        return np.asarray(f(_as_values(p)), dtype=float).reshape(n, n)

    def inv_at(self, p) -> np.ndarray:
        return np.linalg.inv(self.at(p))

    def d1_at(self, p) -> np.ndarray:
        """result[k, i, j] = d_k g_ij (exact, from symbolic derivatives)."""
        n = self.dim
        key = "dg"
        if key not in self._fns:
            exprs = [sx.differentiate(self.comps[i, j], self.chart.coords[k])
                     for k in range(n) for i in range(n) for j in range(n)]
            self._fns[key] = sx.compile_exprs(exprs, self.chart.coords, self.chart.constants)
        return np.asarray(self._fns[key](_as_values(p)), dtype=float).reshape(n, n, n)

    def d2_at(self, p) -> np.ndarray:
        n = self.dim
        key = "d2g"
        if key not in self._fns:
            exprs = []
            for m in range(n):
                for k in range(n):
                    for i in range(n):
                        for j in range(n):
                            exprs.append(sx.differentiate(
                                sx.differentiate(self.comps[i, j], self.chart.coords[k]),
                                self.chart.coords[m]))
            self._fns[key] = sx.compile_exprs(exprs, self.chart.coords, self.chart.constants)
        return np.asarray(self._fns[key](_as_values(p)), dtype=float).reshape(n, n, n, n)

    def d3_at(self, p) -> np.ndarray:
        n = self.dim
        key = "d3g"
        if key not in self._fns:
            exprs = []
            cs = self.chart.coords
            for q in range(n):
                for m in range(n):
                    for k in range(n):
                        for i in range(n):
                            for j in range(n):
                                e = sx.differentiate(self.comps[i, j], cs[k])
                                e = sx.differentiate(e, cs[m])
                                exprs.append(sx.differentiate(e, cs[q]))
            self._fns[key] = sx.compile_exprs(exprs, self.chart.coords, self.chart.constants)
        return np.asarray(self._fns[key](_as_values(p)), dtype=float).reshape(n, n, n, n, n)

    def gamma_at(self, p) -> np.ndarray:
        """Gamma[k, i, j] at p."""
        gi = self.inv_at(p)
        dg = self.d1_at(p)
        # T_lij = d_i g_jl + d_j g_il - d_l g_ij
        Tl = np.einsum('ijl->lij', dg) + np.einsum('jil->lij', dg) - dg
        return 0.5 * np.einsum('kl,lij->kij', gi, Tl)

    def dgamma_at(self, p) -> np.ndarray:
        """result[m, k, i, j] = d_m Gamma^k_ij (exact)."""
        n = self.dim
        gi = self.inv_at(p)
        dg = self.d1_at(p)
        d2g = self.d2_at(p)
        Tl = np.empty((n, n, n))
        dTl = np.empty((n, n, n, n))
        for l in range(n):
            for i in range(n):
                for j in range(n):
                    Tl[l, i, j] = dg[i, j, l] + dg[j, i, l] - dg[l, i, j]
                    for m in range(n):
                        dTl[m, l, i, j] = d2g[m, i, j, l] + d2g[m, j, i, l] - d2g[m, l, i, j]
        dgi = -np.einsum('ka,mab,bl->mkl', gi, dg, gi)
        return 0.5 * (np.einsum('mkl,lij->mkij', dgi, Tl) + np.einsum('kl,mlij->mkij', gi, dTl))

    def d2gamma_at(self, p) -> np.ndarray:
        """result[q, m, k, i, j] = d_q d_m Gamma^k_ij (exact)."""
        n = self.dim
        gi = self.inv_at(p)
        dg = self.d1_at(p)
        d2g = self.d2_at(p)
        d3g = self.d3_at(p)
        Tl = np.empty((n, n, n))
        dTl = np.empty((n, n, n, n))
        d2Tl = np.empty((n, n, n, n, n))
        for l in range(n):
            for i in range(n):
                for j in range(n):
                    Tl[l, i, j] = dg[i, j, l] + dg[j, i, l] - dg[l, i, j]
                    for m in range(n):
                        dTl[m, l, i, j] = d2g[m, i, j, l] + d2g[m, j, i, l] - d2g[m, l, i, j]
                        for q in range(n):
                            d2Tl[q, m, l, i, j] = (d3g[q, m, i, j, l] + d3g[q, m, j, i, l]
                                                   - d3g[q, m, l, i, j])
        dgi = -np.einsum('ka,mab,bl->mkl', gi, dg, gi)
        d2gi = -(np.einsum('qka,mab,bl->qmkl', dgi, dg, gi)
                 + np.einsum('ka,qmab,bl->qmkl', gi, d2g, gi)
                 + np.einsum('ka,mab,qbl->qmkl', gi, dg, dgi))
        return 0.5 * (np.einsum('qmkl,lij->qmkij', d2gi, Tl)
                      + np.einsum('mkl,qlij->qmkij', dgi, dTl)
                      + np.einsum('qkl,mlij->qmkij', dgi, dTl)
                      + np.einsum('kl,qmlij->qmkij', gi, d2Tl))


# ---------------------------------------------------------------------------
# curvature

@dataclass(eq=False)
class CurvatureSet:
    """Symbolic curvature data; riemann/ricci/scal are None until curvature()."""

    metric: MetricField
    gamma: np.ndarray                 # Gamma[k][i][j]
    riemann: np.ndarray | None = None  # R^l_ijk stored as [l][i][j][k]
    ricci: np.ndarray | None = None
    scal: Expr | None = None
    einstein_constant: float | None = None  # B = -Scal/(n(n-1)) when Einstein


def christoffels(g: MetricField) -> CurvatureSet:
    """Symbolic Christoffel symbols Gamma^k_ij of the Levi-Civita connection."""
    if g._gamma is None:
        n = g.dim
        gi = g.inverse
        cs = g.chart.coords
        dg = [[[sx.differentiate(g.comps[i, j], cs[k]) for j in range(n)] for i in range(n)]
              for k in range(n)]
        gamma = np.empty((n, n, n), dtype=object)
        half = sx.const(Fraction(1, 2))
        for k in range(n):
            for i in range(n):
                for j in range(i, n):
                    terms = []
                    for l in range(n):
                        if gi[k, l] == sx.ZERO:
                            continue
                        t = sx.add(dg[i][j][l], dg[j][i][l], sx.neg(dg[l][i][j]))
                        terms.append(sx.mul(gi[k, l], t))
                    val = normalize(sx.mul(half, sx.add(*terms))) if terms else sx.ZERO
                    gamma[k, i, j] = val
                    gamma[k, j, i] = val
        g._gamma = gamma
    return CurvatureSet(metric=g, gamma=g._gamma)


def curvature(g: MetricField) -> CurvatureSet:
    """Full symbolic curvature: Riemann, Ricci, scalar."""
    cs = christoffels(g)
    n = g.dim
    gamma = cs.gamma
    coords = g.chart.coords
    dgamma = np.empty((n, n, n, n), dtype=object)  # [m][k][i][j] = d_m Gamma^k_ij
    for m in range(n):
        for k in range(n):
            for i in range(n):
                for j in range(i, n):
                    d = sx.differentiate(gamma[k, i, j], coords[m])
                    dgamma[m, k, i, j] = d
                    dgamma[m, k, j, i] = d
    R = np.empty((n, n, n, n), dtype=object)
    for l in range(n):
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    terms = [dgamma[i, l, j, k], sx.neg(dgamma[j, l, i, k])]
                    for m in range(n):
                        if gamma[l, i, m] != sx.ZERO and gamma[m, j, k] != sx.ZERO:
                            terms.append(sx.mul(gamma[l, i, m], gamma[m, j, k]))
                        if gamma[l, j, m] != sx.ZERO and gamma[m, i, k] != sx.ZERO:
                            terms.append(sx.neg(sx.mul(gamma[l, j, m], gamma[m, i, k])))
                    R[l, i, j, k] = normalize(sx.add(*terms))
    ric = np.empty((n, n), dtype=object)
    for j in range(n):
        for k in range(n):
            ric[j, k] = normalize(sx.add(*[R[i, i, j, k] for i in range(n)]))
    gi = g.inverse
    scal_terms = []
    for i in range(n):
        for j in range(n):
            if gi[i, j] != sx.ZERO and ric[i, j] != sx.ZERO:
                scal_terms.append(sx.mul(gi[i, j], ric[i, j]))
    scal = normalize(sx.add(*scal_terms)) if scal_terms else sx.ZERO
    cs.riemann = R
    cs.ricci = ric
    cs.scal = scal
    ein = is_einstein(g)
    cs.einstein_constant = ein.B if ein.verdict else None
    return cs


def riemann_at(g: MetricField, p) -> np.ndarray:
    """R^l_ijk at p, assembled exactly from compiled derivatives."""
    G = g.gamma_at(p)
    dG = g.dgamma_at(p)
    return (np.einsum('iljk->lijk', dG) - np.einsum('jlik->lijk', dG)
            + np.einsum('lim,mjk->lijk', G, G) - np.einsum('ljm,mik->lijk', G, G))


def ricci_at(g: MetricField, p) -> np.ndarray:
    return np.einsum('lljk->jk', riemann_at(g, p))


def scal_at(g: MetricField, p) -> float:
    return float(np.einsum('jk,jk->', g.inv_at(p), ricci_at(g, p)))


# ---------------------------------------------------------------------------
# pointwise verdicts

def signature(g: MetricField, p: Point | None = None, trials: int = 10,
              seed: int = 3) -> tuple[int, int]:
    """(plus, minus) eigenvalue counts; constant across the box or an error."""

    def counts(q) -> tuple[int, int]:
        m = g.at(q)
        ev = np.linalg.eigvalsh(m)
        scale = max(np.abs(ev).max(), 1e-30)
        if np.abs(ev).min() < 1e-10 * scale:
            raise DegenerateMetricError(f"near-zero metric eigenvalue at {q}")
        return int(np.sum(ev > 0)), int(np.sum(ev < 0))

    if p is not None:
        return counts(p)
    pts = g.chart.sample_points(trials, seed=seed)
    sig = counts(pts[0])
    for q in pts[1:]:
        if counts(q) != sig:
            raise GeometryError(f"signature varies across the sample box of {g.chart.name!r}")
    return sig


@dataclass(frozen=True)
class EinsteinReport:
    verdict: bool
    B: float          # -Scal/(n(n-1)); meaningful when verdict is True
    scal: float
    max_residual: float
    witness: Point | None = None

    def __bool__(self):
        return self.verdict


def is_einstein(g: MetricField, trials: int = 10, tol: float = 1e-7, seed: int = 5) -> EinsteinReport:
    """Ric = (Scal/n) g with Scal constant, tested numerically over the box."""
    n = g.dim
    pts = g.chart.sample_points(trials, seed=seed)
    scals = []
    worst = 0.0
    witness = None
    for p in pts:
        gm = g.at(p)
        ric = ricci_at(g, p)
        s = float(np.einsum('jk,jk->', np.linalg.inv(gm), ric))
        scals.append(s)
        resid = ric - (s / n) * gm
        scale = 1.0 + max(np.abs(ric).max(), np.abs(gm).max())
        rel = np.abs(resid).max() / scale
        if rel > worst:
            worst = rel
            witness = p
    scal = float(np.mean(scals))
    spread = max(scals) - min(scals)
    ok = worst < tol and spread < tol * (1.0 + abs(scal))
    B = -scal / (n * (n - 1))
    return EinsteinReport(ok, B if ok else B, scal, worst, None if ok else witness)


@dataclass(frozen=True)
class ConstantCurvatureReport:
    verdict: bool
    c: float
    max_residual: float

    def __bool__(self):
        return self.verdict


def is_constant_curvature(g: MetricField, trials: int = 10, tol: float = 1e-7,
                          seed: int = 11) -> ConstantCurvatureReport:
    """R^l_ijk = c (g_jk delta^l_i - g_ik delta^l_j) with c = Scal/(n(n-1))."""
    n = g.dim
    pts = g.chart.sample_points(trials, seed=seed)
    worst = 0.0
    cs = []
    for p in pts:
        gm = g.at(p)
        R = riemann_at(g, p)
        s = float(np.einsum('jk,jk->', np.linalg.inv(gm), np.einsum('lljk->jk', R)))
        c = s / (n * (n - 1))
        cs.append(c)
        model = c * (np.einsum('jk,li->lijk', gm, np.eye(n)) - np.einsum('ik,lj->lijk', gm, np.eye(n)))
        scale = 1.0 + max(np.abs(R).max(), abs(c) * np.abs(gm).max())
        worst = max(worst, np.abs(R - model).max() / scale)
    cbar = float(np.mean(cs))
    ok = worst < tol and (max(cs) - min(cs)) < tol * (1.0 + abs(cbar))
    return ConstantCurvatureReport(ok, cbar, worst)


# ---------------------------------------------------------------------------
# derivatives of tensor fields

def covariant_derivative(T: TensorField, g: MetricField) -> TensorField:
    """Levi-Civita covariant derivative; the new covariant slot is appended last."""
    if T.chart is not g.chart:
        raise GeometryError("tensor and metric live on different charts")
    n = g.dim
    gamma = christoffels(g).gamma
    coords = g.chart.coords
    r, s = T.r, T.s
    shape = (n,) * (r + s + 1)
    out = np.empty(shape, dtype=object)
    for idx in np.ndindex(*(n,) * (r + s)):
        for k in range(n):
            terms = [sx.differentiate(T.comps[idx], coords[k])]
            # contravariant slots gain +Gamma^a_{k m} T^{..m..}
            for slot in range(r):
                a = idx[slot]
                for m in range(n):
                    if gamma[a, k, m] == sx.ZERO:
                        continue
                    jdx = idx[:slot] + (m,) + idx[slot + 1:]
                    if T.comps[jdx] != sx.ZERO:
                        terms.append(sx.mul(gamma[a, k, m], T.comps[jdx]))
            # covariant slots gain -Gamma^m_{k b} T_{..m..}
            for slot in range(r, r + s):
                b = idx[slot]
                for m in range(n):
                    if gamma[m, k, b] == sx.ZERO:
                        continue
                    jdx = idx[:slot] + (m,) + idx[slot + 1:]
                    if T.comps[jdx] != sx.ZERO:
                        terms.append(sx.neg(sx.mul(gamma[m, k, b], T.comps[jdx])))
            out[idx + (k,)] = normalize(sx.add(*terms))
    return TensorField(g.chart, r, s + 1, out)


def cov_deriv_at(T: TensorField, g: MetricField, p) -> np.ndarray:
    """Numeric covariant derivative at p: result[*idx, k] = (nabla T)[idx; k]."""
    n = g.dim
    G = g.gamma_at(p)
    vals = T.at(p)
    dvals = T.d1_at(p)  # [k, *idx]
    r, s = T.r, T.s
    out = np.moveaxis(dvals, 0, -1).copy()
    for slot in range(r):
        # + Gamma^a_{k m} T^{... m ...}
        tmp = np.tensordot(G, np.moveaxis(vals, slot, 0), axes=([2], [0]))  # (a,k, rest)
        out += np.moveaxis(np.moveaxis(tmp, 1, -1), 0, slot)
    for slot in range(r, r + s):
        tmp = np.tensordot(G, np.moveaxis(vals, slot, 0), axes=([0], [0]))  # (k,b, rest)
        out -= np.moveaxis(np.moveaxis(tmp, 0, -1), 0, slot)
    return out


def lie_derivative_metric(v: TensorField, g: MetricField) -> TensorField:
    """(L_v g)_ij = v^k d_k g_ij + g_kj d_i v^k + g_ik d_j v^k."""
    if v.valence != (1, 0):
        raise GeometryError("lie_derivative_metric expects a vector field")
    if v.chart is not g.chart:
        raise GeometryError("vector and metric live on different charts")
    n = g.dim
    coords = g.chart.coords
    out = np.empty((n, n), dtype=object)
    for i in range(n):
        for j in range(i, n):
            terms = []
            for k in range(n):
                if v.comps[k] != sx.ZERO:
                    terms.append(sx.mul(v.comps[k], sx.differentiate(g.comps[i, j], coords[k])))
                dvi = sx.differentiate(v.comps[k], coords[i])
                if g.comps[k, j] != sx.ZERO and dvi != sx.ZERO:
                    terms.append(sx.mul(g.comps[k, j], dvi))
                dvj = sx.differentiate(v.comps[k], coords[j])
                if g.comps[i, k] != sx.ZERO and dvj != sx.ZERO:
                    terms.append(sx.mul(g.comps[i, k], dvj))
            val = normalize(sx.add(*terms)) if terms else sx.ZERO
            out[i, j] = val
            out[j, i] = val
    return TensorField(g.chart, 0, 2, out, symmetric=True)


def musical(g: MetricField, T: TensorField, slot: int) -> TensorField:
    """Raise or lower one index slot with g (direction inferred from variance)."""
    r, s = T.r, T.s
    if not (0 <= slot < r + s):
        raise GeometryError("slot out of range")
    n = g.dim
    lower = slot < r  # contravariant slot -> lower it
    mat = g.comps if lower else g.inverse
    out_shape = T.comps.shape
    out = np.empty(out_shape, dtype=object)
    for idx in np.ndindex(*out_shape):
        terms = []
        for m in range(n):
            coef = mat[idx[slot], m]
            jdx = idx[:slot] + (m,) + idx[slot + 1:]
            if coef != sx.ZERO and T.comps[jdx] != sx.ZERO:
                terms.append(sx.mul(coef, T.comps[jdx]))
        out[idx] = normalize(sx.add(*terms)) if terms else sx.ZERO
    if lower:
        # lowered index becomes the first covariant slot
        new_r, new_s = r - 1, s + 1
        perm = [i for i in range(r) if i != slot] + [slot] + list(range(r, r + s))
    else:
        # raised index becomes the first contravariant slot
        new_r, new_s = r + 1, s - 1
        perm = [slot] + list(range(r)) + [i for i in range(r, r + s) if i != slot]
    out = np.transpose(out, axes=perm)
    return TensorField(g.chart, new_r, new_s, out)


def trace_with_metric(g: MetricField, T: TensorField) -> Expr:
    """g^{ij} T_ij for a (0,2) tensor (the trace of T-sharp)."""
    if T.valence != (0, 2):
        raise GeometryError("trace_with_metric expects a (0,2) tensor")
    n = g.dim
    gi = g.inverse
    terms = []
    for i in range(n):
        for j in range(n):
            if gi[i, j] != sx.ZERO and T.comps[i, j] != sx.ZERO:
                terms.append(sx.mul(gi[i, j], T.comps[i, j]))
    return normalize(sx.add(*terms)) if terms else sx.ZERO


def gradient(g: MetricField, f: Expr) -> TensorField:
    """(df)^sharp."""
    n = g.dim
    df = [sx.differentiate(f, c) for c in g.chart.coords]
    gi = g.inverse
    comps = []
    for a in range(n):
        terms = [sx.mul(gi[a, b], df[b]) for b in range(n)
                 if gi[a, b] != sx.ZERO and df[b] != sx.ZERO]
        comps.append(normalize(sx.add(*terms)) if terms else sx.ZERO)
    return vector_field(g.chart, comps)


def tensor_is_zero(T: TensorField, trials: int = 12, tol: float = NUMZERO_TOL,
                   seed: int = 0) -> sx.ZeroResult:
    """Componentwise zero test over the tensor's chart box."""
    box = dict(zip(T.chart.coords, T.chart.box))
    worst = sx.ZeroResult("proven-zero")
    for idx in np.ndindex(*T.comps.shape):
        res = sx.is_zero(T.comps[idx], box, trials=trials, constants=T.chart.constants,
                         seed=seed, tol=tol)
        if res.status == "nonzero":
            return res
        if res.status == "numerically-zero" and worst.status == "proven-zero":
            worst = res
        elif res.max_residual > worst.max_residual:
            worst = res
    return worst
