"""Ruelle transfer operators on locally constant functions.

For a weight ``g`` of depth ``d_g`` the operator

    (L_g f)(y) = sum_i g(i y) f(i y)

maps depth-``d`` functions to depth-``d`` functions as soon as
``d >= d_g - 1``.  Its matrix has at most ``n`` nonzeros per row and is kept
sparse.  Spectral radii come from a shifted power iteration (Perron root) and
independently from the iterates ``L_g^N 1`` (Gelfand / Collatz-Wielandt).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import ConvergenceError, DepthError, ValidationError
from .symbolic import CylinderFunction, check_size, index_word, lift_depth, word_index

NORMALIZATION_TOL = 1e-12
POWER_TOL = 1e-13
POWER_MAX_ITER = 100_000
RESIDUAL_TOL = 1e-12
GELFAND_ROUNDING = 64 * np.finfo(float).eps
SQUARING_MAX_DIM = 1024


def _fiber_sums(values: np.ndarray, n: int) -> np.ndarray:
    # word i.w sits at i * n**(d-1) + idx(w)
    return values.reshape(n, -1).sum(axis=0)


def _fmt_word(idx: int, n: int, depth: int) -> str:
    w = index_word(idx, n, depth)
    return "".join(map(str, w)) if n < 10 else ",".join(map(str, w)) or "()"


@dataclass(frozen=True, eq=False)
class Potential:
    """Strictly positive weight with ``L_rho 1 = 1``.

    Fibers summing to 1 within ``NORMALIZATION_TOL`` are renormalized
    exactly; anything further off is rejected.
    """

    rho: CylinderFunction

    def __post_init__(self):
        rho = self.rho
        if rho.depth < 1:
            raise ValidationError(f"rho must have depth >= 1, got {rho.depth}")
        if not rho.is_real:
            raise ValidationError("rho must be real-valued")
        vals = np.asarray(rho.values.real, dtype=float)
        if not np.all(np.isfinite(vals)):
            raise ValidationError("rho has non-finite entries")
        if vals.min() <= 0:
            k = int(np.argmin(vals))
            raise ValidationError(
                f"rho not strictly positive at w={_fmt_word(k, rho.n, rho.depth)}, value={vals[k]:g}"
            )
        sums = _fiber_sums(vals, rho.n)
        k = int(np.argmax(np.abs(sums - 1.0)))
        if abs(sums[k] - 1.0) > NORMALIZATION_TOL:
            where = _fmt_word(k, rho.n, rho.depth - 1)
            raise ValidationError(f"rho not normalized on fiber w={where}, sum={sums[k]:.12g}")
        vals = (vals.reshape(rho.n, -1) / sums).reshape(-1)
        object.__setattr__(self, "rho", CylinderFunction(rho.n, rho.depth, vals))

    @classmethod
    def from_values(cls, n: int, depth: int, values) -> "Potential":
        return cls(CylinderFunction(n, depth, np.asarray(values, dtype=float)))

    @classmethod
    def uniform(cls, n: int) -> "Potential":
        return cls.from_values(n, 1, np.full(n, 1.0 / n))

    @property
    def n(self) -> int:
        return self.rho.n

    @property
    def depth(self) -> int:
        return self.rho.depth

    @property
    def values(self) -> np.ndarray:
        return self.rho.values


def random_potential(n: int, depth: int, rng: np.random.Generator) -> Potential:
    """Softplus of uniform samples, normalized on every fiber."""
    raw = np.log1p(np.exp(rng.uniform(-3.0, 3.0, size=n**depth)))
    vals = (raw.reshape(n, -1) / raw.reshape(n, -1).sum(axis=0)).reshape(-1)
    return Potential.from_values(n, depth, vals)


@dataclass(frozen=True, eq=False)
class CylinderMeasure:
    """Probability masses of all depth-``depth`` cylinders."""

    n: int
    depth: int
    masses: np.ndarray

    def __post_init__(self):
        size = check_size(self.n, self.depth)
        m = np.asarray(self.masses, dtype=float).reshape(-1)
        if m.shape[0] != size:
            raise ValidationError(f"expected {size} masses, got {m.shape[0]}")
        if np.any(m < 0):
            raise ValidationError("measure has negative masses")
        if abs(m.sum() - 1.0) > 1e-10:
            raise ValidationError(f"total mass {m.sum():.15g} != 1")
        m.setflags(write=False)
        object.__setattr__(self, "masses", m)

    @property
    def fully_supported(self) -> bool:
        return bool(np.all(self.masses > 0))

    def at_depth(self, depth: int) -> np.ndarray:
        """Masses of the depth-``depth`` cylinders (marginal, ``depth <= self.depth``)."""
        if depth > self.depth:
            raise DepthError(f"measure known to depth {self.depth}, requested {depth}")
        return self.masses.reshape(self.n**depth, -1).sum(axis=1)

    def mass(self, letters) -> float:
        return float(self.at_depth(len(letters))[word_index(letters, self.n)])

    def consistency_defect(self) -> float:
        """Largest violation of right (Kolmogorov) and left (shift) consistency."""
        worst = 0.0
        for d in range(self.depth):
            upper = self.at_depth(d + 1)
            lower = self.at_depth(d)
            worst = max(worst, float(np.max(np.abs(upper.reshape(-1, self.n).sum(axis=1) - lower))))
            worst = max(worst, float(np.max(np.abs(upper.reshape(self.n, -1).sum(axis=0) - lower))))
        return worst

    def integrate(self, f: CylinderFunction) -> complex | float:
        if f.depth > self.depth:
            raise DepthError(f"function depth {f.depth} exceeds measure depth {self.depth}")
        return lift_depth(f, self.depth).values @ self.masses


@dataclass(frozen=True, eq=False)
class TransferMatrix:
    """Matrix of ``L_g`` on depth-``depth`` functions (sparse CSR)."""

    weight: CylinderFunction
    depth: int
    matrix: sp.csr_matrix = field(repr=False)

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.matrix @ f


def _check_weight(g: CylinderFunction) -> None:
    if g.depth < 1:
        raise DepthError("transfer weights need depth >= 1")
    if not g.is_real or np.any(g.values.real < 0):
        raise ValidationError("transfer weight must be real and nonnegative")


def apply_transfer(g: CylinderFunction, f: CylinderFunction) -> CylinderFunction:
    """``(L_g f)(y) = sum_i g(i y) f(i y)``."""
    if g.depth < 1:
        raise DepthError("transfer weights need depth >= 1")
    out_depth = max(g.depth, f.depth, 1) - 1
    gv = lift_depth(g, out_depth + 1).values
    fv = lift_depth(f, out_depth + 1).values
    return CylinderFunction(f.n, out_depth, (gv * fv).reshape(f.n, -1).sum(axis=0))


def transfer_matrix(g: CylinderFunction, depth: int) -> TransferMatrix:
    """Sparse ``n**depth`` square matrix of ``L_g`` on depth-``depth`` functions.

    Row ``y`` has entries ``g(i y)`` in columns ``i . y[:depth-1]``.
    """
    _check_weight(g)
    if depth < g.depth - 1:
        raise DepthError(f"weight of depth {g.depth} needs working depth >= {g.depth - 1}, got {depth}")
    n = g.n
    size = check_size(n, depth)
    check_size(n, depth + 1)
    gv = lift_depth(g, depth + 1).values.real.astype(float)
    y = np.arange(size)
    head = y // n if depth >= 1 else np.zeros_like(y)
    block = n ** (depth - 1) if depth >= 1 else 0
    rows = np.tile(y, n)
    cols = np.concatenate([i * block + head for i in range(n)])
    vals = np.concatenate([gv[i * size + y] for i in range(n)])
    m = sp.csr_matrix((vals, (rows, cols)), shape=(size, size))
    m.sum_duplicates()
    m.eliminate_zeros()
    return TransferMatrix(g, depth, m)


@dataclass(frozen=True)
class PerronResult:
    value: float
    vector: np.ndarray
    lower: float
    upper: float
    iterations: int


def _perron_irreducible(b: sp.csr_matrix, tol: float, max_iter: int) -> PerronResult:
    size = b.shape[0]
    if b.nnz == 0:
        return PerronResult(0.0, np.ones(size), 0.0, 0.0, 0)
    # shift by the mean row sum: kills period-h oscillation of imprimitive blocks
    shift = float(b.sum()) / size
    x = np.ones(size)
    it = 0
    prev = math.inf
    for it in range(1, max_iter + 1):
        y = b @ x + shift * x
        y /= y.max()
        # relative per entry: small Perron components matter for mass ratios
        diff = float(np.max(np.abs(y - x) / y))
        x = y
        if diff <= 4 * np.finfo(float).eps:
            break
        # successive differences shrink geometrically; bound the remaining tail too
        rate = diff / prev if prev > 0 else 1.0
        prev = diff
        # past tol, keep going to the rounding floor: stop once the geometric
        # tail is negligible or the differences stop shrinking
        if diff <= tol and (rate >= 1.0 or diff * rate / (1.0 - rate) <= 16 * np.finfo(float).eps):
            break
    else:
        raise ConvergenceError(f"power iteration did not reach {tol:g} in {max_iter} steps (last step {diff:.3g})", x)
    bx = b @ x
    ratios = bx / x
    lo, hi = float(ratios.min()), float(ratios.max())
    return PerronResult(0.5 * (lo + hi), x, lo, hi, it)


def perron(m: sp.spmatrix, left: bool = False, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER) -> PerronResult:
    """Perron root and nonnegative eigenvector of a nonnegative matrix.

    Reducible matrices are split into strongly connected classes; the root is
    the largest class root and the vector is supported on (and normalized
    over) that class, extended by zero.
    """
    m = sp.csr_matrix(m)
    if left:
        m = sp.csr_matrix(m.T)
    size = m.shape[0]
    ncomp, labels = connected_components(m, directed=True, connection="strong")
    if ncomp == 1:
        return _perron_irreducible(m, tol, max_iter)
    best = None
    best_idx = None
    for c in range(ncomp):
        idx = np.flatnonzero(labels == c)
        block = m[idx][:, idx]
        if block.nnz == 0:
            continue
        res = _perron_irreducible(block, tol, max_iter)
        if best is None or res.value > best.value:
            best, best_idx = res, idx
    if best is None:
        return PerronResult(0.0, np.ones(size), 0.0, 0.0, 0)
    vec = np.zeros(size)
    vec[best_idx] = best.vector
    return PerronResult(best.value, vec, best.lower, best.upper, best.iterations)


def fixed_point_measure(rho: Potential, depth: int, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER) -> CylinderMeasure:
    """The probability measure with ``L_rho^* mu = mu``, on depth-``depth`` cylinders.

    Solved as a left Perron vector at the minimal depth ``d_rho - 1`` and
    extended upward by ``mu(i w) = rho(i w) mu(w)``.
    """
    n = rho.n
    base = rho.depth - 1
    if depth < base:
        return CylinderMeasure(n, depth, fixed_point_measure(rho, base, tol, max_iter).at_depth(depth))
    check_size(n, depth)
    if base == 0:
        mu = np.ones(1)
    else:
        res = perron(transfer_matrix(rho.rho, base).matrix, left=True, tol=tol, max_iter=max_iter)
        mu = res.vector / res.vector.sum()
    for m in range(base, depth):
        mu = lift_depth(rho.rho, m + 1).values.real * np.tile(mu, n)
    mu = mu / mu.sum()
    if not np.all(mu > 0):
        raise ConvergenceError("fixed-point measure is not fully supported", mu)
    if depth >= 1:
        resid = float(np.max(np.abs(transfer_matrix(rho.rho, depth).matrix.T @ mu - mu)))
        if resid > RESIDUAL_TOL:
            raise ConvergenceError(f"fixed-point residual {resid:.3g} exceeds {RESIDUAL_TOL:g}", mu)
    return CylinderMeasure(n, depth, mu)


def radius_perron(g: CylinderFunction, depth: int | None = None, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER) -> float:
    """Spectral radius of ``L_g`` (independent of the working depth)."""
    _check_weight(g)
    depth = g.depth - 1 if depth is None else depth
    return perron(transfer_matrix(g, depth).matrix, tol=tol, max_iter=max_iter).value


@dataclass(frozen=True)
class GelfandEnclosure:
    lower: float
    upper: float
    estimate: float
    iterations: int

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, r: float, slack: float = 0.0) -> bool:
        return self.lower - slack <= r <= self.upper + slack

    def root(self, p: float) -> "GelfandEnclosure":
        e = 1.0 / p
        return GelfandEnclosure(self.lower**e, self.upper**e, self.estimate**e, self.iterations)


def _collatz_wielandt(x: np.ndarray, y: np.ndarray, pad: float) -> tuple[float, float]:
    """``min y/x <= r <= max y/x`` for ``y = L x``, ``x >= 0``; upper only if ``x > 0``."""
    pos = x > 0
    ratios = y[pos] / x[pos]
    lower = float(ratios.min()) * (1.0 - pad)
    upper = float(ratios.max()) * (1.0 + pad) if pos.all() else math.inf
    return lower, upper


def radius_gelfand(g: CylinderFunction, n_max: int = 200) -> GelfandEnclosure:
    """Enclose ``r(L_g)`` from the iterates ``f_N = L_g^N 1``.

    Two certified brackets are intersected: the Gelfand bounds
    ``(min f_N)^(1/N) <= r <= (max f_N)^(1/N)`` and the Collatz-Wielandt
    bounds ``min f_{N+1}/f_N <= r <= max f_{N+1}/f_N`` (the upper one only
    while ``f_N > 0``).  Iterates are kept sup-normalized with the scale
    accumulated in log space.  Each candidate bound is widened by
    ``GELFAND_ROUNDING`` relative to absorb floating-point error, and the
    estimate is the midpoint of the final bracket.

    When the spectral gap is small the plain iteration stalls, so for
    matrices up to ``SQUARING_MAX_DIM`` half of the budget goes to repeated
    squaring: the Collatz-Wielandt bounds are then taken at ``L^(2^j) f_M``,
    which converge like ``|lambda_2 / lambda_1|^(2^j)``.  Every matrix
    product (vector or square) counts as one iteration.
    """
    _check_weight(g)
    m = transfer_matrix(g, g.depth - 1).matrix
    u = np.ones(m.shape[0])
    log_scale, carry = 0.0, 0.0  # Neumaier-compensated running sum of log(top)
    lower, upper = 0.0, math.inf
    pad = GELFAND_ROUNDING
    squaring = m.shape[0] <= SQUARING_MAX_DIM and n_max >= 4
    plain = n_max // 2 if squaring else n_max
    used = 0
    for big_n in range(1, plain + 1):
        used = big_n
        y = m @ u
        top = float(y.max())
        if top <= 0.0:
            return GelfandEnclosure(0.0, 0.0, 0.0, big_n)
        lo, hi = _collatz_wielandt(u, y, pad)
        lower, upper = max(lower, lo), min(upper, hi)
        step = math.log(top)
        total = log_scale + step
        if abs(log_scale) >= abs(step):
            carry += (log_scale - total) + step
        else:
            carry += (step - total) + log_scale
        log_scale = total
        u = y / top
        bottom = float(u.min())
        mean_log = (log_scale + carry) / big_n
        # exp amplifies the absolute error of mean_log into a relative one
        slack = GELFAND_ROUNDING * (1.0 + abs(mean_log))
        upper = min(upper, math.exp(mean_log) * (1.0 + slack))
        if bottom > 0:
            lower = max(lower, math.exp(mean_log + math.log(bottom) / big_n) * (1.0 - slack))
        if upper - lower <= 4 * pad * upper:
            return GelfandEnclosure(lower, upper, 0.5 * (lower + upper), used)
    if squaring:
        power = m.toarray()
        power /= power.max()
        for _ in range(n_max - plain):
            used += 1
            x = power @ u
            if x.max() <= 0.0:
                break
            x /= x.max()
            lo, hi = _collatz_wielandt(x, m @ x, pad)
            lower, upper = max(lower, lo), min(upper, hi)
            if upper - lower <= 4 * pad * upper:
                break
            power = power @ power
            top = power.max()
            if not top > 0.0 or not math.isfinite(top):
                break
            power /= top
    return GelfandEnclosure(lower, upper, 0.5 * (lower + upper), used)
