"""Covariant representation and L^p-Cuntz family as explicit matrices.

Everything acts on weighted spaces ``L^p(mu)`` restricted to depth-``d``
functions.  The shift operator ``T f = f o shift`` raises depth by one and
``S`` (the transfer operator with the potential) lowers it by one, so the
operators of a representation form a ladder of rectangular sparse matrices
indexed by source depth.

Weighted composition operators (at most one nonzero per row) and their
transposed shape (at most one nonzero per column) have closed-form
``p -> p`` norms; :func:`exact_norm` uses those.  Anything else goes
through :func:`norm_bounds`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DepthError, SingularityError, UnsupportedKindError, ValidationError
from .symbolic import CylinderFunction, apply_shift_index, compose_shift, indicator, lift_depth, mul
from .transfer import CylinderMeasure, Potential, apply_transfer, fixed_point_measure

KINDS = ("multiplication", "weighted_composition", "co_composition", "general")
SPACE_TOL = 1e-12


def conjugate_exponent_inverse(p: float) -> float:
    """``1/q`` with ``1/p + 1/q = 1``; exactly 0 for ``p = 1``."""
    if p < 1:
        raise ValidationError(f"p must be >= 1, got {p}")
    if p == 1:
        return 0.0
    return 1.0 - 1.0 / p


@dataclass(frozen=True, eq=False)
class WeightedLpSpace:
    """Depth-``depth`` functions with ``||f||_p^p = sum_w |f(w)|^p mu(C_w)``."""

    n: int
    depth: int
    p: float
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.p < 1 or not math.isfinite(self.p):
            raise ValidationError(f"p must lie in [1, inf), got {self.p}")
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != self.n**self.depth:
            raise ValidationError(f"expected {self.n**self.depth} weights, got {w.shape[0]}")
        if not np.all(w > 0):
            raise ValidationError("space weights must be strictly positive")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    def norm(self, f) -> float:
        f = np.asarray(f)
        if f.ndim == 2:
            return (np.abs(f) ** self.p * self.weights[:, None]).sum(axis=0) ** (1.0 / self.p)
        return float((np.abs(f) ** self.p @ self.weights) ** (1.0 / self.p))

    def same_as(self, other: "WeightedLpSpace", tol: float = SPACE_TOL) -> bool:
        return (
            self is other
            or (self.n == other.n and self.depth == other.depth and self.p == other.p
                and float(np.max(np.abs(self.weights - other.weights))) <= tol)
        )


def lp_space(mu: CylinderMeasure, depth: int, p: float) -> WeightedLpSpace:
    return WeightedLpSpace(mu.n, depth, p, mu.at_depth(depth))


def _classify(m: sp.csr_matrix, square: bool) -> str:
    counts = np.diff(m.indptr)
    if m.nnz == 0 or counts.max() <= 1:
        if square and np.array_equal(m.indices, np.flatnonzero(counts)):
            return "multiplication"
        return "weighted_composition"
    if np.max(np.bincount(m.indices, minlength=m.shape[1])) <= 1:
        return "co_composition"
    return "general"


def _kept_kind(kind: str) -> str:
    # zeros of a diagonal factor can thin rows out, so only these kinds survive as-is
    return kind if kind in ("multiplication", "weighted_composition") else ""


def _diag(m: sp.csr_matrix) -> np.ndarray:
    out = np.zeros(m.shape[0], dtype=complex)
    out[np.repeat(np.arange(m.shape[0]), np.diff(m.indptr))] = m.data
    return out


def _gather_rows(a: sp.csr_matrix, b: sp.csr_matrix) -> sp.csr_matrix:
    """``a @ b`` when each row of ``a`` has at most one entry: scaled rows of ``b``."""
    if a.nnz == a.shape[0] and b.nnz == b.shape[0] and a.indptr[-1] == a.shape[0]:
        # one entry in every row of both factors (T_i, S_i and their products)
        if np.array_equal(a.indptr, np.arange(a.shape[0] + 1)) and np.array_equal(b.indptr, np.arange(b.shape[0] + 1)):
            return sp.csr_matrix((b.data[a.indices] * a.data, b.indices[a.indices], a.indptr.copy()),
                                 shape=(a.shape[0], b.shape[1]))
    has = np.diff(a.indptr).astype(bool)
    lengths = np.diff(b.indptr)[a.indices]
    counts = np.zeros(a.shape[0], dtype=np.int64)
    counts[has] = lengths
    indptr = np.concatenate(([0], np.cumsum(counts)))
    total = int(indptr[-1])
    src = np.arange(total) + np.repeat(b.indptr[a.indices] - indptr[:-1][has], lengths)
    data = b.data[src] * np.repeat(a.data, lengths)
    return sp.csr_matrix((data, b.indices[src], indptr), shape=(a.shape[0], b.shape[1]))


@dataclass(frozen=True, eq=False)
class RepOperator:
    """Sparse complex matrix ``target.dim x source.dim``.

    ``degree`` is the gauge degree: +1 for each factor of ``T``, -1 for each
    ``S``, 0 for multiplication operators.
    """

    source: WeightedLpSpace
    target: WeightedLpSpace
    matrix: sp.csr_matrix = field(repr=False)
    kind: str = ""
    degree: int = 0

    def __post_init__(self):
        m = self.matrix
        if not (sp.isspmatrix_csr(m) and m.dtype == complex):
            m = sp.csr_matrix(m, dtype=complex)
            m.sum_duplicates()
        m.eliminate_zeros()
        if m.shape != (self.target.dim, self.source.dim):
            raise ValidationError(f"matrix shape {m.shape} != ({self.target.dim}, {self.source.dim})")
        if self.source.p != self.target.p:
            raise ValidationError(f"source p={self.source.p} and target p={self.target.p} differ")
        object.__setattr__(self, "matrix", m)
        kind = self.kind or _classify(m, self.source is self.target or self.source.same_as(self.target))
        if kind not in KINDS:
            raise ValidationError(f"unknown operator kind {kind!r}")
        object.__setattr__(self, "kind", kind)

    @property
    def p(self) -> float:
        return self.source.p

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def __call__(self, f) -> np.ndarray:
        return self.matrix @ np.asarray(f)

    def __matmul__(self, other: "RepOperator") -> "RepOperator":
        if not other.target.same_as(self.source):
            raise ValidationError(
                f"cannot compose: inner target depth {other.target.depth} does not match outer source depth {self.source.depth}"
            )
        degree = self.degree + other.degree
        # diagonal factors only rescale entries; skip the general sparse product
        if self.kind == "multiplication":
            m = other.matrix.copy()
            m.data *= _diag(self.matrix)[np.repeat(np.arange(m.shape[0]), np.diff(m.indptr))]
            return RepOperator(other.source, self.target, m, kind=_kept_kind(other.kind), degree=degree)
        if other.kind == "multiplication":
            m = self.matrix.copy()
            m.data *= _diag(other.matrix)[m.indices]
            return RepOperator(other.source, self.target, m, kind=_kept_kind(self.kind), degree=degree)
        if self.kind == "weighted_composition":
            return RepOperator(other.source, self.target, _gather_rows(self.matrix, other.matrix), degree=degree)
        return RepOperator(other.source, self.target, self.matrix @ other.matrix, degree=degree)

    def __add__(self, other: "RepOperator") -> "RepOperator":
        self._check_same_shape(other)
        if self.degree != other.degree:
            raise ValidationError("sum of operators with different gauge degrees")
        return RepOperator(self.source, self.target, self.matrix + other.matrix, degree=self.degree)

    def __sub__(self, other: "RepOperator") -> "RepOperator":
        self._check_same_shape(other)
        return RepOperator(self.source, self.target, self.matrix - other.matrix, kind="general", degree=self.degree)

    def scaled(self, c: complex) -> "RepOperator":
        return RepOperator(self.source, self.target, self.matrix * c, kind=self.kind, degree=self.degree)

    def _check_same_shape(self, other: "RepOperator") -> None:
        if not (self.source.same_as(other.source) and self.target.same_as(other.target)):
            raise ValidationError("operators act between different spaces")


def deviation(a: RepOperator | sp.spmatrix, b: RepOperator | sp.spmatrix) -> float:
    """Max absolute entry of ``a - b``."""
    ma = a.matrix if isinstance(a, RepOperator) else a
    mb = b.matrix if isinstance(b, RepOperator) else b
    d = sp.csr_matrix(ma - mb)
    return float(np.max(np.abs(d.data))) if d.nnz else 0.0


def diagonal_deviation(a: RepOperator, values: np.ndarray) -> float:
    """``deviation(a, diag(values))`` without forming the diagonal operator."""
    m = a.matrix
    size = m.shape[0]
    if m.nnz == size and np.array_equal(m.indices, np.arange(size)):
        return float(np.max(np.abs(m.data - values))) if size else 0.0
    rows = np.repeat(np.arange(m.shape[0]), np.diff(m.indptr))
    on = m.indices == rows
    diag = np.zeros(m.shape[0], dtype=complex)
    diag[rows[on]] = m.data[on]
    off = float(np.max(np.abs(m.data[~on]))) if np.any(~on) else 0.0
    return max(off, float(np.max(np.abs(diag - values))))


def identity(space: WeightedLpSpace) -> RepOperator:
    return RepOperator(space, space, sp.identity(space.dim, dtype=complex, format="csr"), kind="multiplication")


def make_pi(a: CylinderFunction, space: WeightedLpSpace) -> RepOperator:
    """Multiplication by ``a`` on ``space``."""
    if a.n != space.n:
        raise ValidationError(f"function over n={a.n} on a space over n={space.n}")
    vals = lift_depth(a, space.depth).values.astype(complex)
    idx = np.arange(space.dim + 1)
    m = sp.csr_matrix((vals, idx[:-1], idx), shape=(space.dim, space.dim))
    return RepOperator(space, space, m, kind="multiplication")


def make_T_phi(source: WeightedLpSpace, target: WeightedLpSpace) -> RepOperator:
    """Composition with the shift, depth ``d -> d + 1``."""
    if target.depth != source.depth + 1 or target.n != source.n:
        raise DepthError(f"T maps depth d to d+1, got {source.depth} -> {target.depth}")
    if source.p != target.p:
        raise ValidationError(f"p mismatch: {source.p} vs {target.p}")
    left = target.weights.reshape(source.n, -1).sum(axis=0)
    if float(np.max(np.abs(left - source.weights))) > SPACE_TOL:
        raise ValidationError("target measure is not shift-invariant over the source measure")
    rows = np.arange(target.dim)
    cols = apply_shift_index(rows, source.n, target.depth)
    m = sp.csr_matrix((np.ones(target.dim, dtype=complex), (rows, cols)), shape=(target.dim, source.dim))
    return RepOperator(source, target, m, degree=1)


def make_S_phi(rho: Potential, source: WeightedLpSpace, target: WeightedLpSpace) -> RepOperator:
    """``(S f)(w) = sum_i rho(i w) f(i w)``, depth ``d + 1 -> d``."""
    if source.depth != target.depth + 1 or source.n != target.n:
        raise DepthError(f"S maps depth d+1 to d, got {source.depth} -> {target.depth}")
    if target.depth < rho.depth - 1:
        raise DepthError(f"S with rho of depth {rho.depth} needs target depth >= {rho.depth - 1}")
    cols = np.arange(source.dim)
    rows = apply_shift_index(cols, source.n, source.depth)
    vals = lift_depth(rho.rho, source.depth).values.astype(complex)
    m = sp.csr_matrix((vals, (rows, cols)), shape=(target.dim, source.dim))
    return RepOperator(source, target, m, degree=-1)


def exact_norm(op: RepOperator) -> float:
    """Closed-form ``p -> p`` operator norm.

    * multiplication: ``max |a|``;
    * at most one nonzero per row (``f -> h . f o Phi``): the largest
      ``(sum_{r -> v} |M_rv|^p mu_t(r) / mu_s(v))^(1/p)`` over source atoms;
    * at most one nonzero per column: Hoelder on each row's fiber gives
      ``max_w (mu_t(w) * ||b_w||_q^p)^(1/p)`` with
      ``b_w(x) = |M_wx| mu_s(x)^(-1/p)``.
    """
    m = op.matrix
    p = op.p
    if op.kind == "multiplication":
        d = np.abs(m.diagonal())
        return float(d.max()) if d.size else 0.0
    if m.nnz == 0:
        return 0.0
    ws, wt = op.source.weights, op.target.weights
    coo = m.tocoo()
    mag = np.abs(coo.data)
    if op.kind == "weighted_composition":
        acc = np.bincount(coo.col, weights=mag**p * wt[coo.row], minlength=m.shape[1])
        return float(np.max(acc / ws) ** (1.0 / p))
    if op.kind == "co_composition":
        b = mag * ws[coo.col] ** (-1.0 / p)
        if p == 1:
            per_row = np.zeros(m.shape[0])
            np.maximum.at(per_row, coo.row, b)
            return float(np.max(wt * per_row))
        q = p / (p - 1.0)
        sq = np.bincount(coo.row, weights=b**q, minlength=m.shape[0])
        return float(np.max(wt * sq ** (p - 1.0)) ** (1.0 / p))
    raise UnsupportedKindError(f"no closed-form norm for kind {op.kind!r}; use norm_bounds")


def _unweighted(op: RepOperator) -> np.ndarray:
    p = op.p
    return (op.target.weights ** (1.0 / p))[:, None] * op.dense() * (op.source.weights ** (-1.0 / p))[None, :]


def _dual(v: np.ndarray, t: float) -> np.ndarray:
    # sign(v) |v|^(t-1), the gradient direction of ||v||_t^t
    mag = np.abs(v)
    with np.errstate(divide="ignore", invalid="ignore"):
        phase = np.where(mag > 0, v / np.where(mag > 0, mag, 1), 0)
    return phase * mag ** (t - 1.0)


def matrix_pnorm_bounds(b: np.ndarray, p: float, probes: int = 64, steps: int = 50, seed: int = 0) -> tuple[float, float]:
    """Certified bracket for the unweighted ``l^p -> l^p`` norm of ``b``.

    Lower: best ratio over basis/structured/random probes refined by the
    dual power iteration.  Upper: Riesz-Thorin ``||b||_1^(1/p) ||b||_inf^(1/q)``.
    Exact for ``p = 1`` (max column sum) and ``p = 2`` (largest singular value).
    """
    col = np.abs(b).sum(axis=0).max(initial=0.0)
    row = np.abs(b).sum(axis=1).max(initial=0.0)
    if p == 1:
        return float(col), float(col)
    if p == 2:
        s = float(np.linalg.norm(b, 2)) if b.size else 0.0
        return s, s
    upper = float(col ** (1.0 / p) * row ** (1.0 - 1.0 / p))
    q = p / (p - 1.0)
    rng = np.random.default_rng(seed)
    ncols = b.shape[1]
    cands = []
    order = np.argsort(-np.abs(b).sum(axis=0), kind="stable")
    for j in order[: min(ncols, probes // 2)]:
        e = np.zeros(ncols, dtype=complex)
        e[j] = 1.0
        cands.append(e)
    cands.append(np.ones(ncols, dtype=complex))
    while len(cands) < probes:
        cands.append(rng.standard_normal(ncols) + 1j * rng.standard_normal(ncols))

    def ratio(x):
        nx = np.linalg.norm(x, p)
        return np.linalg.norm(b @ x, p) / nx if nx > 0 else 0.0

    scored = sorted(((ratio(x), k) for k, x in enumerate(cands)), key=lambda t: (-t[0], t[1]))
    lower = scored[0][0]
    for _, k in scored[:4]:
        x = cands[k] / np.linalg.norm(cands[k], p)
        for _ in range(steps):
            z = b.conj().T @ _dual(b @ x, p)
            if not np.any(z):
                break
            x_new = _dual(z, q)
            x_new /= np.linalg.norm(x_new, p)
            r = ratio(x_new)
            lower = max(lower, r)
            if np.max(np.abs(x_new - x)) < 1e-12:
                break
            x = x_new
    return float(min(lower, upper)), upper


def norm_bounds(op: RepOperator, probes: int = 64, seed: int = 0) -> tuple[float, float]:
    """Lower/upper bounds on the ``p -> p`` norm of an arbitrary operator."""
    if op.kind != "general":
        v = exact_norm(op)
        return v, v
    return matrix_pnorm_bounds(_unweighted(op), op.p, probes=probes, seed=seed)


class Representation:
    """The concrete covariant representation of ``L_rho`` on ``L^p(mu)``.

    ``mu`` is the fixed-point measure of the potential, computed once to
    ``max_depth`` and marginalized for shallower spaces.  Operators are cached
    by depth: ``T(d)`` maps depth ``d`` to ``d + 1`` and ``S(d)`` back.
    """

    def __init__(self, rho: Potential, p: float, max_depth: int, mu: CylinderMeasure | None = None):
        if p < 1:
            raise ValidationError(f"p must be >= 1, got {p}")
        self.rho = rho
        self.p = float(p)
        self.n = rho.n
        self.inv_q = conjugate_exponent_inverse(self.p)
        if mu is None:
            mu = fixed_point_measure(rho, max_depth)
        elif mu.depth < max_depth:
            raise DepthError(f"measure known to depth {mu.depth}, need {max_depth}")
        self.mu = mu
        self.max_depth = max_depth
        self._cache: dict = {}

    def _memo(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def space(self, d: int) -> WeightedLpSpace:
        if d > self.max_depth:
            raise DepthError(f"depth {d} beyond representation depth {self.max_depth}")
        return self._memo(("space", d), lambda: lp_space(self.mu, d, self.p))

    def pi(self, a: CylinderFunction, d: int) -> RepOperator:
        return make_pi(a, self.space(d))

    def identity(self, d: int) -> RepOperator:
        return self._memo(("id", d), lambda: identity(self.space(d)))

    def T(self, d: int) -> RepOperator:
        return self._memo(("T", d), lambda: make_T_phi(self.space(d), self.space(d + 1)))

    def S(self, d: int) -> RepOperator:
        return self._memo(("S", d), lambda: make_S_phi(self.rho, self.space(d + 1), self.space(d)))

    def rho_power(self, t: float) -> CylinderFunction:
        """``rho**t``; ``t = 0`` gives the constant 1 exactly."""
        if t == 0:
            return CylinderFunction.constant(self.n, 1.0)
        return CylinderFunction(self.n, self.rho.depth, self.rho.values**t)

    def T_i(self, i: int, d: int) -> RepOperator:
        """``pi(rho^(-1/p) 1_{X_i}) T`` from depth ``d`` to ``d + 1``."""
        def build():
            w = mul(self.rho_power(-1.0 / self.p), indicator((i,), self.n, 1))
            return self.pi(w, d + 1) @ self.T(d)
        return self._memo(("Ti", i, d), build)

    def S_i(self, i: int, d: int) -> RepOperator:
        """``S pi(rho^(-1/q) 1_{X_i})`` from depth ``d + 1`` to ``d``."""
        def build():
            w = mul(self.rho_power(-self.inv_q), indicator((i,), self.n, 1))
            return self.S(d) @ self.pi(w, d + 1)
        return self._memo(("Si", i, d), build)

    def family(self, d: int) -> list[tuple[RepOperator, RepOperator]]:
        return [(self.T_i(i, d), self.S_i(i, d)) for i in range(1, self.n + 1)]

    def word_projection(self, word: tuple[int, ...], d: int) -> RepOperator:
        """``T_{i_1} .. T_{i_N} S_{i_N} .. S_{i_1}`` acting on depth ``d``."""
        rows = self.word_projection_rows(word, d)
        if rows is None:
            return self._word_projection_sparse(word, d)
        cols, vals = rows
        size = cols.size
        m = sp.csr_matrix((vals, cols, np.arange(size + 1)), shape=(size, size))
        m.eliminate_zeros()
        return RepOperator(self.space(d), self.space(d), m, degree=0)

    def _word_projection_sparse(self, word, d):
        if not word:
            return self.identity(d)
        def build():
            i = word[0]
            inner = self._word_projection_sparse(word[1:], d - 1)
            return self.T_i(i, d - 1) @ inner @ self.S_i(i, d - 1)
        return self._memo(("proj", word, d), build)

    def word_projection_rows(self, word: tuple[int, ...], d: int):
        """Row form ``(cols, vals)`` of the word projection, or ``None``.

        Available when every factor has exactly one stored entry per row;
        then each product is a gather.
        """
        if not word:
            size = self.space(d).dim
            return np.arange(size), np.ones(size)
        def build():
            i = word[0]
            inner = self.word_projection_rows(word[1:], d - 1)
            t = self._memo(("Ti_rows", i, d - 1), lambda: _row_form(self.T_i(i, d - 1).matrix))
            s_ = self._memo(("Si_rows", i, d - 1), lambda: _row_form(self.S_i(i, d - 1).matrix))
            if inner is None or t is None or s_ is None:
                return None
            (tc, tv), (ic, iv), (sc, sv) = t, inner, s_
            mid = ic[tc]
            return sc[mid], tv * iv[tc] * sv[mid]
        return self._memo(("proj_rows", word, d), build)


def _row_form(m: sp.csr_matrix):
    """``(cols, vals)`` for a matrix with at most one stored entry per row.

    Empty rows get column 0 and value 0.
    """
    counts = np.diff(m.indptr)
    if m.nnz and counts.max() > 1:
        return None
    has = counts.astype(bool)
    cols = np.zeros(m.shape[0], dtype=m.indices.dtype)
    vals = np.zeros(m.shape[0], dtype=complex)
    cols[has] = m.indices
    vals[has] = m.data
    if not np.any(vals.imag):
        vals = vals.real.copy()
    return cols, vals


def row_form_diagonal_deviation(rows, values: np.ndarray) -> float:
    """``deviation`` between a row-form matrix and ``diag(values)``."""
    cols, vals = rows
    on = cols == np.arange(cols.size)
    err = float(np.max(np.abs(vals - values * on), initial=0.0))
    if not on.all():
        err = max(err, float(np.max(np.abs(values[~on]))))
    return err


def cuntz_family(rho: Potential, p: float, d: int, mu: CylinderMeasure | None = None) -> list[tuple[RepOperator, RepOperator]]:
    """``(T_i, S_i)`` for ``i = 1..n`` with ``T_i`` from depth ``d`` to ``d + 1``."""
    return Representation(rho, p, d + 1, mu).family(d)


@dataclass
class RelationReport:
    """Max absolute deviations, one per checked relation."""

    deviations: dict[str, float] = field(default_factory=dict)
    flags: dict[str, bool] = field(default_factory=dict)

    def record(self, name: str, value: float) -> None:
        self.deviations[name] = max(self.deviations.get(name, 0.0), float(value))

    @property
    def worst(self) -> float:
        return max(self.deviations.values(), default=0.0)

    def failures(self, tol: float) -> list[str]:
        bad = [k for k, v in self.deviations.items() if not v <= tol]
        return bad + [k for k, ok in self.flags.items() if not ok]

    def ok(self, tol: float) -> bool:
        return not self.failures(tol)


def max_word_length(rho: Potential, d: int, cap: int = 3) -> int:
    # lowest space in the chain has depth d + 1 - N and must carry S
    return max(0, min(cap, d, d + 2 - rho.depth))


def verify_covariance(rho: Potential, a: CylinderFunction, p: float, d: int,
                      rep: Representation | None = None, word_cap: int = 3) -> RelationReport:
    """Check every algebraic relation of the representation at source depth ``d``.

    ``a`` may have depth up to ``d``.
    """
    if a.depth > d:
        raise DepthError(f"a has depth {a.depth} > working depth {d}")
    if d < rho.depth - 1:
        raise DepthError(f"working depth {d} below rho depth - 1 = {rho.depth - 1}")
    rep = rep or Representation(rho, p, d + 1)
    n = rho.n
    rpt = RelationReport()
    T, S = rep.T(d), rep.S(d)
    id_d, id_up = rep.identity(d), rep.identity(d + 1)

    total = None
    for i, (Ti, Si) in enumerate(rep.family(d), start=1):
        rpt.record("S_i T_i = 1", deviation(Si @ Ti, id_d))
        TiSi = Ti @ Si
        proj = rep.pi(indicator((i,), n, 1), d + 1)
        rpt.record("T_i S_i = pi(1_X_i)", deviation(TiSi, proj))
        diag = TiSi.matrix.diagonal()
        rpt.flags["T_i S_i hermitian (real 0/1 diagonal)"] = rpt.flags.get(
            "T_i S_i hermitian (real 0/1 diagonal)", True
        ) and TiSi.kind == "multiplication" and bool(np.all(np.abs(diag.imag) <= 1e-12)) and bool(
            np.all(np.minimum(np.abs(diag.real), np.abs(diag.real - 1)) <= 1e-12)
        )
        total = TiSi if total is None else total + TiSi
    rpt.record("sum_i T_i S_i = 1", deviation(total, id_up))

    rpt.record("S pi(a) T = pi(L a)", deviation(S @ rep.pi(a, d + 1) @ T, rep.pi(apply_transfer(rho.rho, a), d)))
    rpt.record("T pi(a) = pi(a o phi) T", deviation(T @ rep.pi(a, d), rep.pi(compose_shift(a), d + 1) @ T))
    rpt.record("S pi(1) T = 1", deviation(S @ T, id_d))

    rho_p = rep.pi(rep.rho_power(1.0 / p), d + 1)
    rho_q = rep.pi(rep.rho_power(rep.inv_q), d + 1)
    t_sum = None
    s_sum = None
    for Ti, Si in rep.family(d):
        t_sum = rho_p @ Ti if t_sum is None else t_sum + rho_p @ Ti
        s_sum = Si @ rho_q if s_sum is None else s_sum + Si @ rho_q
    rpt.record("T = sum_i pi(rho^(1/p)) T_i", deviation(t_sum, T))
    rpt.record("S = sum_i S_i pi(rho^(1/q))", deviation(s_sum, S))

    top = max_word_length(rho, d, word_cap)
    for length in range(1, top + 1):
        for word in itertools.product(range(1, n + 1), repeat=length):
            target = indicator(word, n, d + 1).values
            rows = rep.word_projection_rows(word, d + 1)
            dev = (row_form_diagonal_deviation(rows, target) if rows is not None
                   else diagonal_deviation(rep.word_projection(word, d + 1), target))
            rpt.record(f"word projections (length {length})", dev)

    if p == 2:
        rpt.record("S = T* (p = 2)", deviation(S.matrix, weighted_adjoint(T)))
        for Ti, Si in rep.family(d):
            rpt.record("S_i = T_i* (p = 2)", deviation(Si.matrix, weighted_adjoint(Ti)))
    return rpt


def weighted_adjoint(op: RepOperator) -> sp.csr_matrix:
    """Adjoint for the ``mu``-weighted inner products (meaningful at ``p = 2``)."""
    ds = sp.diags(1.0 / op.source.weights)
    dt = sp.diags(op.target.weights)
    return sp.csr_matrix(ds @ op.matrix.conj().T @ dt)


@dataclass(frozen=True, eq=False)
class SetMonomorphism:
    """Atom map from source cylinders to disjoint sets of target cylinders."""

    n_source: int
    n_target: int
    atoms: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.atoms) != self.n_source:
            raise ValidationError("one image per source atom required")
        seen = np.zeros(self.n_target, dtype=int)
        for img in self.atoms:
            seen[img] += 1
        if np.any(seen > 1):
            raise ValidationError("images of distinct atoms overlap")

    def image(self, source_atoms) -> np.ndarray:
        """``Phi`` of a union of source atoms (additive by construction)."""
        parts = [self.atoms[int(v)] for v in source_atoms]
        return np.sort(np.concatenate(parts)) if parts else np.zeros(0, dtype=int)

    @property
    def covered(self) -> np.ndarray:
        return self.image(range(self.n_source))


@dataclass(frozen=True, eq=False)
class LampertiDecomposition:
    phi: SetMonomorphism
    h: np.ndarray
    t_phi: sp.csr_matrix = field(repr=False)

    def reconstruct(self) -> sp.csr_matrix:
        return sp.csr_matrix(sp.diags(self.h) @ self.t_phi)


def lamperti_decompose(op: RepOperator) -> LampertiDecomposition:
    """Split a weighted composition operator as ``h . T_Phi``.

    ``Phi(v)`` is the row support of column ``v`` and ``h(r)`` the single
    nonzero in row ``r``.
    """
    m = op.matrix
    if m.nnz and np.max(np.diff(m.indptr)) > 1:
        raise UnsupportedKindError("a row has two nonzeros: not a weighted composition operator")
    coo = m.tocoo()
    atoms = tuple(np.sort(coo.row[coo.col == v]) for v in range(m.shape[1]))
    empty = [v for v, img in enumerate(atoms) if img.size == 0]
    if empty:
        raise ValidationError(f"source atoms {empty[:5]} are annihilated: Phi would not preserve null sets")
    phi = SetMonomorphism(m.shape[1], m.shape[0], atoms)
    h = np.zeros(m.shape[0], dtype=complex)
    h[coo.row] = coo.data
    t_phi = sp.csr_matrix((np.ones(coo.nnz), (coo.row, coo.col)), shape=m.shape)
    return LampertiDecomposition(phi, h, t_phi)


def isometry_defect(op: RepOperator, dec: LampertiDecomposition | None = None) -> np.ndarray:
    """Per-atom relative defect of ``sum_{r in Phi(v)} |h(r)|^p mu(r) = mu(v)``.

    This is the atomic form of ``E(|h|^p) = d(mu o Phi^-1)/d mu``; all zeros
    iff ``op`` is an isometry.
    """
    dec = dec or lamperti_decompose(op)
    wt, ws = op.target.weights, op.source.weights
    lhs = np.array([np.sum(np.abs(dec.h[img]) ** op.p * wt[img]) for img in dec.phi.atoms])
    return np.abs(lhs - ws) / ws


def conditional_expectation(phi: SetMonomorphism, weights: np.ndarray) -> sp.csr_matrix:
    """``mu``-weighted average over each image atom ``Phi(v)`` (zero off ``Phi(Omega)``)."""
    rows, cols, vals = [], [], []
    for img in phi.atoms:
        w = weights[img] / weights[img].sum()
        rows.append(np.repeat(img, img.size))
        cols.append(np.tile(img, img.size))
        vals.append(np.tile(w, img.size))
    size = phi.n_target
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size))


def ando_projection(T: RepOperator) -> sp.csr_matrix:
    """``h / E(|h|^p) . E(|h|^p / h . xi)`` as a matrix, for ``T = h T_Phi``."""
    dec = lamperti_decompose(T)
    h = dec.h
    if np.any(h[dec.phi.covered] == 0):
        raise SingularityError("h vanishes on Phi(Omega): |h|^p / h undefined")
    p = T.p
    E = conditional_expectation(dec.phi, T.target.weights)
    hp = np.abs(h) ** p
    with np.errstate(divide="ignore", invalid="ignore"):
        e_hp = E @ hp
        left = np.where(e_hp > 0, h / e_hp, 0)
        right = np.where(h != 0, hp / np.where(h != 0, h, 1), 0)
    return sp.csr_matrix(sp.diags(left) @ E @ sp.diags(right))


def ando_projection_check(rho: Potential, p: float, d: int, phase: CylinderFunction | None = None,
                          rep: Representation | None = None) -> RelationReport:
    """Compare ``T S`` with the Ando conditional-expectation formula.

    ``phase`` (unimodular, depth <= d + 1) twists the pair to
    ``(pi(u) T, S pi(conj u))``, another covariant representation with a
    non-trivial weight ``h = u``.
    """
    rep = rep or Representation(rho, p, d + 1)
    T, S = rep.T(d), rep.S(d)
    if phase is not None:
        if np.max(np.abs(np.abs(phase.values) - 1.0)) > 1e-12:
            raise ValidationError("phase must be unimodular")
        T = rep.pi(phase, d + 1) @ T
        S = S @ rep.pi(CylinderFunction(phase.n, phase.depth, np.conj(phase.values)), d + 1)
    TS = T @ S
    rpt = RelationReport()
    rpt.record("T S = Ando formula", deviation(TS.matrix, ando_projection(T)))
    rpt.record("(T S)^2 = T S", deviation(TS @ TS, TS))
    rpt.record("T S T = T", deviation(TS @ T, T))
    one = np.ones(T.source.dim)
    lower = T.target.norm(TS(T(one))) / T.target.norm(T(one))
    upper = exact_norm(T) * exact_norm(S)
    rpt.record("|1 - ||T S|| lower|", abs(1.0 - lower))
    rpt.record("|1 - ||T S|| upper|", abs(1.0 - upper))
    return rpt


def radon_nikodym_check(rho: Potential, mu: CylinderMeasure | None, d: int) -> RelationReport:
    """``rho(i w) = mu(C_{i w}) / mu(C_w)`` for every letter and depth-``d`` word."""
    if mu is None:
        mu = fixed_point_measure(rho, d + 1)
    if mu.depth < d + 1:
        raise DepthError(f"need the measure to depth {d + 1}, have {mu.depth}")
    if d < rho.depth - 1:
        raise DepthError(f"depth {d} below rho depth - 1")
    up = mu.at_depth(d + 1).reshape(rho.n, -1)
    down = mu.at_depth(d)
    ratio = up / down[None, :]
    r = lift_depth(rho.rho, d + 1).values.reshape(rho.n, -1)
    rpt = RelationReport()
    rpt.record("rho(i w) = mu(i w)/mu(w) (relative)", float(np.max(np.abs(ratio - r) / r)))
    return rpt


def weighted_shift_power(a: CylinderFunction, rep: Representation, d: int, power: int) -> RepOperator:
    """``(pi(a) T)^N`` from depth ``d`` to ``d + N``."""
    op = rep.identity(d)
    for k in range(power):
        op = rep.pi(a, d + k + 1) @ rep.T(d + k) @ op
    return op
