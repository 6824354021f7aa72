"""Convex bodies, finite action sets, widths, best-action regions, and
convex decompositions used by the linear-bandit experiments.

All operations are pure functions of their inputs and safe to call
concurrently.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import InfeasibleGeometryError, InvalidInputError

LP_TOL = 1e-9
UNIT_NORM_TOL = 1e-12


def _as_vector(v, d: int | None = None) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or not np.all(np.isfinite(v)):
        raise InvalidInputError(f"expected a finite 1-d vector, got shape {v.shape}")
    if d is not None and v.shape[0] != d:
        raise InvalidInputError(f"expected dimension {d}, got {v.shape[0]}")
    return v


@dataclass(frozen=True, eq=False)
class ConvexBody:
    """A compact convex body K with declared regularity B_r(0) <= K <= B_1(0).

    Three shapes are supported:
      * ``ball``: a centered ball of radius ``radius``;
      * ``box``: a product of finite intervals ``lo[i] <= x_i <= hi[i]``;
      * ``halfspace``: the intersection ``rows @ x <= offsets``.
    """

    kind: str
    dim: int
    regularity: float
    radius: float = 0.0
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    rows: np.ndarray | None = None
    offsets: np.ndarray | None = None

    def __post_init__(self):
        if not (0.0 < self.regularity <= 1.0):
            raise InvalidInputError("regularity r must lie in (0, 1]")
        if self.kind == "ball":
            if not (self.regularity <= self.radius <= 1.0 + 1e-12):
                raise InvalidInputError("ball radius must lie in [r, 1]")
        elif self.kind == "box":
            lo, hi = self.lo, self.hi
            if lo is None or hi is None or lo.shape != (self.dim,) or hi.shape != (self.dim,):
                raise InvalidInputError("box needs finite per-axis bounds of the right shape")
            if np.any(~np.isfinite(lo)) or np.any(~np.isfinite(hi)) or np.any(lo >= hi):
                raise InvalidInputError("box intervals must be finite and nonempty")
            r = self.regularity
            if np.any(lo > -r + 1e-12) or np.any(hi < r - 1e-12):
                raise InvalidInputError("box does not contain the ball B_r(0)")
            # Containment in the unit ball is not enforced here: widths and
            # samplers accept any finite box, and validate_regularity checks
            # the full two-sided inclusion where a result needs it.
        elif self.kind == "halfspace":
            rows, off = self.rows, self.offsets
            if rows is None or off is None or rows.ndim != 2 or rows.shape[1] != self.dim:
                raise InvalidInputError("halfspace form needs rows (m, d) and offsets (m,)")
        else:
            raise InvalidInputError(f"unknown body kind {self.kind!r}")

    # -- constructors -------------------------------------------------

    @staticmethod
    def ball(dim: int, radius: float = 1.0, regularity: float | None = None) -> "ConvexBody":
        r = radius if regularity is None else regularity
        return ConvexBody(kind="ball", dim=dim, regularity=r, radius=float(radius))

    @staticmethod
    def box(lo, hi, regularity: float | None = None) -> "ConvexBody":
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        if regularity is None:
            regularity = float(min(np.min(-lo), np.min(hi), 1.0))
        return ConvexBody(kind="box", dim=lo.shape[0], regularity=regularity, lo=lo, hi=hi)

    @staticmethod
    def halfspaces(rows, offsets, regularity: float) -> "ConvexBody":
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        offsets = np.asarray(offsets, dtype=float)
        return ConvexBody(
            kind="halfspace", dim=rows.shape[1], regularity=regularity, rows=rows, offsets=offsets
        )

    def scaled(self, s: float) -> "ConvexBody":
        """The body s*K with regularity scaled accordingly (requires 0 < s <= 1)."""
        if not (0.0 < s <= 1.0):
            raise InvalidInputError("scale must lie in (0, 1] to preserve K <= B_1")
        r = self.regularity * s
        if self.kind == "ball":
            return ConvexBody.ball(self.dim, self.radius * s, r)
        if self.kind == "box":
            return ConvexBody.box(self.lo * s, self.hi * s, r)
        return ConvexBody.halfspaces(self.rows, self.offsets * s, r)

    # -- queries -------------------------------------------------------

    def support(self, v) -> float:
        """max_{x in K} <v, x>."""
        v = _as_vector(v, self.dim)
        if self.kind == "ball":
            return self.radius * float(np.linalg.norm(v))
        if self.kind == "box":
            return float(np.sum(np.where(v >= 0, v * self.hi, v * self.lo)))
        res = linprog(-v, A_ub=self.rows, b_ub=self.offsets, bounds=(None, None), method="highs")
        if res.status == 3:
            raise InfeasibleGeometryError("half-space body is unbounded in this direction")
        if not res.success:
            raise InfeasibleGeometryError(f"support LP failed: {res.message}")
        return float(-res.fun)

    def contains(self, x, tol: float = LP_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        if self.kind == "ball":
            return float(np.linalg.norm(x)) <= self.radius + tol
        if self.kind == "box":
            return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))
        return bool(np.all(self.rows @ x <= self.offsets + tol))

    def contains_many(self, xs: np.ndarray, tol: float = LP_TOL) -> np.ndarray:
        """Vectorized membership test, xs of shape (n, d)."""
        if self.kind == "ball":
            return np.linalg.norm(xs, axis=1) <= self.radius + tol
        if self.kind == "box":
            return np.all((xs >= self.lo - tol) & (xs <= self.hi + tol), axis=1)
        return np.all(xs @ self.rows.T <= self.offsets + tol, axis=1)

    def line_interval(self, point, direction) -> tuple[float, float]:
        """The parameter interval {t : point + t*direction in K}.

        Requires the line to meet the body; raises otherwise.
        """
        p = _as_vector(point, self.dim)
        u = _as_vector(direction, self.dim)
        if self.kind == "ball":
            a = float(u @ u)
            b = 2.0 * float(p @ u)
            c = float(p @ p) - self.radius**2
            disc = b * b - 4 * a * c
            if disc < 0 or a == 0.0:
                raise InfeasibleGeometryError("line misses the ball")
            s = math.sqrt(disc)
            return ((-b - s) / (2 * a), (-b + s) / (2 * a))
        if self.kind == "box":
            rows = np.vstack([np.eye(self.dim), -np.eye(self.dim)])
            offs = np.concatenate([self.hi, -self.lo])
        else:
            rows, offs = self.rows, self.offsets
        num = offs - rows @ p
        den = rows @ u
        lo, hi = -math.inf, math.inf
        for nk, dk in zip(num, den):
            if abs(dk) <= 1e-14:
                if nk < -LP_TOL:
                    raise InfeasibleGeometryError("line misses the body")
                continue
            t = nk / dk
            if dk > 0:
                hi = min(hi, t)
            else:
                lo = max(lo, t)
        if lo > hi + LP_TOL or not (math.isfinite(lo) and math.isfinite(hi)):
            raise InfeasibleGeometryError("line misses the body or body is unbounded")
        return (lo, hi)

    def validate_regularity(self, rng: np.random.Generator, n_directions: int = 256) -> bool:
        """Sampled check that B_r(0) <= K <= B_1(0) for the declared r.

        Every sampled support value must be at least r and every sampled
        boundary point must have norm at most 1.
        """
        if self.kind == "ball":
            return self.regularity <= self.radius <= 1.0 + 1e-12
        dirs = rng.standard_normal((n_directions, self.dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        for u in dirs:
            if self.support(u) < self.regularity - 1e-9:
                return False
            if self.kind == "halfspace":
                res = linprog(
                    -u, A_ub=self.rows, b_ub=self.offsets, bounds=(None, None), method="highs"
                )
                if not res.success or float(np.linalg.norm(res.x)) > 1.0 + 1e-9:
                    return False
        if self.kind == "box":
            vertex_norm = math.sqrt(float(np.sum(np.maximum(self.lo**2, self.hi**2))))
            if vertex_norm > 1.0 + 1e-9:
                return False
        return True

    def to_json_dict(self) -> dict:
        if self.kind == "ball":
            return {"kind": "ball", "dim": self.dim, "radius": self.radius, "r": self.regularity}
        if self.kind == "box":
            return {
                "kind": "box",
                "lo": self.lo.tolist(),
                "hi": self.hi.tolist(),
                "r": self.regularity,
            }
        return {
            "kind": "halfspace",
            "rows": self.rows.tolist(),
            "offsets": self.offsets.tolist(),
            "r": self.regularity,
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "ConvexBody":
        kind = doc["kind"]
        if kind == "ball":
            return ConvexBody.ball(int(doc["dim"]), float(doc["radius"]), float(doc["r"]))
        if kind == "box":
            return ConvexBody.box(doc["lo"], doc["hi"], float(doc["r"]))
        return ConvexBody.halfspaces(doc["rows"], doc["offsets"], float(doc["r"]))


@dataclass(eq=False)
class ActionSet:
    """An ordered finite set of action vectors.

    Index order is the tie-breaking order for ``best_action``.  Sets built
    through :meth:`unit` additionally guarantee unit Euclidean norms, which
    is what the separation-based margin results assume.
    """

    vectors: np.ndarray
    require_unit: bool = False
    _separation: float | None = field(default=None, repr=False)

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=float))
        if self.vectors.size == 0:
            raise InvalidInputError("action set must be nonempty")
        if self.require_unit:
            norms = np.linalg.norm(self.vectors, axis=1)
            if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
                raise InvalidInputError("unit action set contains a non-unit vector")

    @staticmethod
    def unit(vectors) -> "ActionSet":
        return ActionSet(vectors, require_unit=True)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def separation(self) -> float:
        if self._separation is None:
            self._separation = separation(self)
        return self._separation

    def to_json_dict(self) -> dict:
        return {
            "kind": "unit" if self.require_unit else "vertices",
            "vectors": self.vectors.tolist(),
        }

    @staticmethod
    def from_json_dict(doc: dict) -> "ActionSet":
        return ActionSet(doc["vectors"], require_unit=doc.get("kind") == "unit")


class PolytopeVertexSet(ActionSet):
    """The extreme points of a polytope, used by the simulation reduction."""

    def validate_extreme(self) -> bool:
        """LP check that no listed point is a convex combination of the others."""
        n = len(self)
        if n == 1:
            return True
        for i in range(n):
            others = np.delete(self.vectors, i, axis=0)
            a_eq = np.vstack([others.T, np.ones(n - 1)])
            b_eq = np.concatenate([self.vectors[i], [1.0]])
            res = linprog(
                np.zeros(n - 1), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs"
            )
            if res.success and float(np.max(np.abs(a_eq @ res.x - b_eq))) <= LP_TOL:
                return False
        return True


def instance_to_json(body: ConvexBody | None, actions: ActionSet | None) -> str:
    """Serialize a (body, actions) pair; floats keep full precision via repr."""
    doc = {}
    if body is not None:
        doc["body"] = body.to_json_dict()
    if actions is not None:
        doc["actions"] = actions.to_json_dict()
    return json.dumps(doc, sort_keys=True)


def instance_from_json(text: str) -> tuple[ConvexBody | None, ActionSet | None]:
    doc = json.loads(text)
    body = ConvexBody.from_json_dict(doc["body"]) if "body" in doc else None
    actions = ActionSet.from_json_dict(doc["actions"]) if "actions" in doc else None
    return body, actions


# -- operations ---------------------------------------------------------


def separation(actions: ActionSet) -> float:
    """Minimum pairwise Euclidean distance over distinct actions."""
    if len(actions) < 2:
        raise InvalidInputError("separation needs at least two actions")
    v = actions.vectors
    diff = v[:, None, :] - v[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    np.fill_diagonal(dist, np.inf)
    eps = float(np.min(dist))
    actions._separation = eps
    return eps


def width(body: ConvexBody, v) -> float:
    """max <l, v> - min <l, v> over l in the body."""
    v = _as_vector(v, body.dim)
    return body.support(v) + body.support(-v)


def best_action(actions: ActionSet, ell) -> int:
    """argmax_i <ell, A_i>, ties broken by the smallest index."""
    ell = _as_vector(ell, actions.dim)
    return int(np.argmax(actions.vectors @ ell))


def best_action_many(actions: ActionSet, ells: np.ndarray) -> np.ndarray:
    """Vectorized ``best_action`` for ells of shape (n, d)."""
    return np.argmax(ells @ actions.vectors.T, axis=1)


def optimal_region_contains(actions: ActionSet, i: int, ell) -> bool:
    """Whether ell lies in the cone S_i on which action i is optimal."""
    if not (0 <= i < len(actions)):
        raise InvalidInputError(f"action index {i} out of range")
    ell = _as_vector(ell, actions.dim)
    gaps = (actions.vectors[i] - actions.vectors) @ ell
    return bool(np.all(gaps >= 0.0))


def caratheodory_decompose(
    vertices: PolytopeVertexSet, point, anchor: int = 0
) -> list[tuple[float, int]]:
    """Convex decomposition of ``point`` over the vertex set.

    Works in the affine chart anchored at ``vertices[anchor]``: solves the
    conic program  min sum(u)  s.t.  sum_k u_k (v_k - v_a) = point - v_a,
    u >= 0.  A basic optimal solution has at most d nonzero chart weights;
    the anchor absorbs the remaining mass 1 - sum(u), so the returned
    convex combination has at most d + 1 terms overall.

    Returns nonzero (weight, vertex_index) pairs summing to 1.
    """
    v = vertices.vectors
    d = vertices.dim
    point = _as_vector(point, d)
    va = v[anchor]
    cols = np.delete(v, anchor, axis=0) - va
    idx = [k for k in range(len(vertices)) if k != anchor]
    res = linprog(
        np.ones(len(idx)),
        A_eq=cols.T,
        b_eq=point - va,
        bounds=(0, None),
        method="highs",
    )
    if not res.success:
        raise InfeasibleGeometryError("point lies outside the convex hull (LP infeasible)")
    total = float(np.sum(res.x))
    if total > 1.0 + LP_TOL:
        raise InfeasibleGeometryError("point lies outside the convex hull (mass > 1)")
    out = [(float(w), idx[k]) for k, w in enumerate(res.x) if w > LP_TOL]
    w_anchor = 1.0 - sum(w for w, _ in out)
    if w_anchor > LP_TOL:
        out.append((w_anchor, anchor))
    recon = sum(w * v[k] for w, k in out)
    if float(np.linalg.norm(recon - point)) > 1e-9:
        raise InfeasibleGeometryError("decomposition failed to reconstruct the point")
    return out


def prop2_polytope(d: int) -> tuple[ConvexBody, PolytopeVertexSet]:
    """The bipyramid {10|x_d| + 2 sqrt(d) max_{i<d} |x_i| <= 1} in both forms.

    The vertex form holds the 2^(d-1) box-type vertices in the hyperplane
    x_d = 0 plus the two apexes (0, ..., 0, +-1/10); every generated vertex
    is cross-checked against the defining inequality.
    """
    if d < 2:
        raise InvalidInputError("the construction needs d >= 2")
    s = 2.0 * math.sqrt(d)
    rows, offs = [], []
    for i in range(d - 1):
        for s1 in (1.0, -1.0):
            for s2 in (1.0, -1.0):
                row = np.zeros(d)
                row[i] = s * s1
                row[d - 1] = 10.0 * s2
                rows.append(row)
                offs.append(1.0)
    body = ConvexBody.halfspaces(np.array(rows), np.array(offs), regularity=1.0 / (10.0 + s))
    half = 1.0 / s
    verts = []
    for signs in itertools.product((half, -half), repeat=d - 1):
        verts.append(list(signs) + [0.0])
    apex = [0.0] * (d - 1) + [0.1]
    verts.append(apex)
    verts.append([0.0] * (d - 1) + [-0.1])
    verts = np.array(verts)
    lhs = 10.0 * np.abs(verts[:, -1]) + s * np.max(np.abs(verts[:, :-1]), axis=1)
    if not np.allclose(lhs, 1.0, atol=1e-12):
        raise InfeasibleGeometryError("generated vertices do not satisfy the facet equality")
    return body, PolytopeVertexSet(verts)
