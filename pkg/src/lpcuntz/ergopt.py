"""Variational side of the spectral-radius formula.

The exponent maximized over shift-invariant measures is

    F(mu) = int log(|a| rho^(1/p)) dmu + h(mu) / p
          = (int log g dmu + h(mu)) / p,      g = rho |a|^p.

For a locally constant ``g`` of depth ``k + 1`` the maximum over all
ergodic measures is attained by an order-``k`` Markov measure (the Gibbs /
Parry measure of ``g``), so the search is restricted to that family.  It is
computed twice: in closed form from the Perron data of ``g``, and by direct
numerical ascent over transition matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.sparse.csgraph import connected_components

from .errors import DepthError, ValidationError
from .symbolic import CylinderFunction, Word, abs_pow, lift_depth, mul, word_index
from .transfer import CylinderMeasure, Potential, perron

STOCHASTIC_TOL = 1e-12


def _successors(n: int, k: int) -> np.ndarray:
    """``succ[u, j]``: index of the order-``k`` state ``u_2 .. u_k j``."""
    u = np.arange(n**k)
    tail = u % n ** (k - 1)
    return tail[:, None] * n + np.arange(n)[None, :]


def _stationary(P: np.ndarray) -> np.ndarray:
    size = P.shape[0]
    A = np.vstack([P.T - np.eye(size), np.ones((1, size))])
    b = np.zeros(size + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


@dataclass(frozen=True, eq=False)
class MarkovMeasure:
    """Order-``k`` stationary Markov measure on ``{1..n}^N``.

    States are depth-``k`` words; ``transition[u, j]`` is the probability of
    moving to ``u_2 .. u_k j``, so every row carries exactly ``n`` entries.
    """

    n: int
    order: int
    transition: np.ndarray
    stationary: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.order < 1:
            raise ValidationError(f"Markov order must be >= 1, got {self.order}")
        P = np.asarray(self.transition, dtype=float)
        if P.shape != (self.n**self.order, self.n):
            raise ValidationError(f"transition must have shape {(self.n**self.order, self.n)}, got {P.shape}")
        if np.any(P < 0):
            raise ValidationError("negative transition probability")
        bad = np.max(np.abs(P.sum(axis=1) - 1.0))
        if bad > STOCHASTIC_TOL:
            raise ValidationError(f"transition rows do not sum to 1 (worst defect {bad:.3g})")
        P = P / P.sum(axis=1, keepdims=True)
        pi = _stationary(self.full_matrix_of(P)) if self.stationary is None else np.asarray(self.stationary, float)
        resid = np.max(np.abs(pi @ self.full_matrix_of(P) - pi)) if pi.size else 0.0
        if resid > STOCHASTIC_TOL or abs(pi.sum() - 1.0) > STOCHASTIC_TOL:
            raise ValidationError(f"stationary vector is not invariant (residual {resid:.3g})")
        P.setflags(write=False)
        pi.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "stationary", pi)

    def full_matrix_of(self, P: np.ndarray) -> np.ndarray:
        size = self.n**self.order
        full = np.zeros((size, size))
        np.add.at(full, (np.repeat(np.arange(size), self.n), _successors(self.n, self.order).ravel()), P.ravel())
        return full

    @property
    def full_matrix(self) -> np.ndarray:
        """``n**k`` square transition matrix over states."""
        return self.full_matrix_of(self.transition)

    @classmethod
    def bernoulli(cls, probs) -> "MarkovMeasure":
        probs = np.asarray(probs, dtype=float)
        n = probs.shape[0]
        return cls(n, 1, np.tile(probs, (n, 1)))

    @classmethod
    def from_full_matrix(cls, n: int, order: int, full: np.ndarray) -> "MarkovMeasure":
        succ = _successors(n, order)
        P = np.take_along_axis(np.asarray(full, float), succ, axis=1)
        return cls(n, order, P)

    def masses(self, depth: int) -> np.ndarray:
        """Cylinder masses at ``depth`` in canonical order."""
        k, n = self.order, self.n
        if depth <= k:
            return self.stationary.reshape(n**depth, -1).sum(axis=1)
        m = self.stationary.copy()
        for d in range(k, depth):
            state = np.arange(n**d) % n**k
            m = (m[:, None] * self.transition[state]).reshape(-1)
        return m

    def cylinder_measure(self, depth: int) -> CylinderMeasure:
        return CylinderMeasure(self.n, depth, self.masses(depth))


@dataclass(frozen=True)
class PeriodicOrbitMeasure:
    """Uniform measure on the orbit of the periodic point ``w w w ...``."""

    word: Word

    @property
    def n(self) -> int:
        return self.word.n

    def masses(self, depth: int) -> np.ndarray:
        w = self.word.letters
        period = len(w)
        if period == 0:
            raise ValidationError("periodic orbit needs a non-empty word")
        out = np.zeros(self.n**depth)
        for s in range(period):
            pref = [w[(s + j) % period] for j in range(depth)]
            out[word_index(pref, self.n)] += 1.0 / period
        return out


def entropy(mu: MarkovMeasure | PeriodicOrbitMeasure) -> float:
    """Kolmogorov-Sinai entropy ``-sum_u pi(u) sum_v P(u, v) log P(u, v)``."""
    if isinstance(mu, PeriodicOrbitMeasure):
        return 0.0
    P = mu.transition
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(P > 0, P * np.log(np.where(P > 0, P, 1.0)), 0.0)
    return float(max(0.0, -(mu.stationary @ plogp.sum(axis=1))))


def integrate(f: CylinderFunction, mu: MarkovMeasure | PeriodicOrbitMeasure):
    """``int f dmu`` for a locally constant ``f``."""
    vals = f.values
    m = mu.masses(f.depth)
    if np.iscomplexobj(vals):
        return complex(vals @ m)
    return float(vals @ m)


def log_weight(a: CylinderFunction, rho: Potential, p: float) -> CylinderFunction:
    """``g = rho |a|^p`` as a depth-aligned weight."""
    return mul(rho.rho, abs_pow(a, p))


def objective(a: CylinderFunction, rho: Potential, p: float, mu: MarkovMeasure | PeriodicOrbitMeasure) -> float:
    """``int log(|a| rho^(1/p)) dmu + h(mu)/p``; ``-inf`` if ``mu`` charges a zero of ``a``."""
    g = log_weight(a, rho, p)
    m = mu.masses(g.depth)
    charged = m > 0
    if np.any(g.values.real[charged] == 0):
        return -math.inf
    integral = float(np.log(g.values.real[charged]) @ m[charged])
    return (integral + entropy(mu)) / p


@dataclass
class GibbsResult:
    measure: MarkovMeasure
    value: float
    log_radius: float
    unique: bool = True
    support: np.ndarray | None = None


def _state_weights(g: CylinderFunction, k: int) -> np.ndarray:
    """``W[u, j] = g(u j)`` over order-``k`` states."""
    if g.depth > k + 1:
        raise DepthError(f"weight of depth {g.depth} needs Markov order >= {g.depth - 1}, got {k}")
    return lift_depth(g, k + 1).values.real.reshape(g.n**k, g.n).astype(float)


def _min_order(a: CylinderFunction, rho: Potential) -> int:
    return max(1, max(a.depth, rho.depth) - 1)


def gibbs_maximizer(a: CylinderFunction, rho: Potential, p: float, order: int | None = None) -> GibbsResult:
    """Closed-form maximizer over order-``order`` Markov measures.

    With ``W(u, v)`` the weight of the move ``u -> v`` (``= g(u v_k)``),
    right Perron vector ``r`` and root ``lam``:
    ``P(u, v) = W(u, v) r(v) / (lam r(u))``.  If ``a`` vanishes somewhere the
    chain lives on the strongly connected class carrying the largest root.
    """
    k = _min_order(a, rho) if order is None else order
    g = log_weight(a, rho, p)
    W = _state_weights(g, k)
    n = g.n
    size = n**k
    succ = _successors(n, k)
    full = sp.csr_matrix((W.ravel(), (np.repeat(np.arange(size), n), succ.ravel())), shape=(size, size))
    full.eliminate_zeros()
    if full.nnz == 0:
        raise ValidationError("weight vanishes identically: no measure has finite objective")
    res = perron(full)
    lam, r = res.value, res.vector
    support = r > 0
    ncomp, labels = connected_components(full, directed=True, connection="strong")
    unique = True
    if ncomp > 1:
        roots = []
        for c in range(ncomp):
            idx = np.flatnonzero(labels == c)
            block = full[idx][:, idx]
            if block.nnz:
                roots.append(perron(block).value)
        unique = sum(1 for x in roots if abs(x - lam) <= 1e-12 * max(1.0, lam)) == 1
        # restrict to the class carrying the root: r may leak into upstream classes
        comp = labels[np.argmax(r)]
        support = labels == comp
        r = np.where(support, r, 0.0)
    P = np.zeros((size, n))
    rows = np.flatnonzero(support)
    with np.errstate(divide="ignore", invalid="ignore"):
        P[rows] = W[rows] * r[succ[rows]] / (lam * r[rows, None])
    # states off the support get any row; they carry no stationary mass
    P[~support] = 1.0 / n
    P[rows] /= P[rows].sum(axis=1, keepdims=True)
    mu = MarkovMeasure(n, k, P, _stationary_on(P, n, k, support))
    return GibbsResult(mu, objective(a, rho, p, mu), math.log(lam) / p, unique, support)


def _stationary_on(P: np.ndarray, n: int, k: int, support: np.ndarray) -> np.ndarray:
    size = n**k
    full = np.zeros((size, size))
    np.add.at(full, (np.repeat(np.arange(size), n), _successors(n, k).ravel()), P.ravel())
    idx = np.flatnonzero(support)
    sub = full[np.ix_(idx, idx)]
    pi = np.zeros(size)
    pi[idx] = _stationary(sub)
    return pi


def random_markov_measure(n: int, order: int, rng: np.random.Generator, concentration: float = 1.0) -> MarkovMeasure:
    P = rng.dirichlet(np.full(n, concentration), size=n**order)
    P = np.maximum(P, 1e-300)
    P /= P.sum(axis=1, keepdims=True)
    return MarkovMeasure(n, order, P)


@dataclass
class NumericResult:
    measure: MarkovMeasure
    value: float
    converged: bool
    restarts: int
    values: list[float] = field(default_factory=list)


def _solve_stationary(full: np.ndarray) -> np.ndarray:
    size = full.shape[0]
    A = full.T - np.eye(size)
    A[-1] = 1.0
    b = np.zeros(size)
    b[-1] = 1.0
    try:
        pi = np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        return _stationary(full)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def _edge_objective(theta: np.ndarray, c: np.ndarray, mask: np.ndarray, where: tuple):
    """Value and gradient of ``sum_u pi_u sum_j P_uj (c_uj - log P_uj)``.

    ``P`` is a masked row softmax of ``theta``.  The gradient uses the
    Poisson equation ``(I - P + 1 pi) V = phi - F`` for the stationary
    sensitivity: ``dF/dP_uv = pi_u (V_v + c_uv - log P_uv - 1)``.
    """
    size, n = c.shape
    rows, cols, succ = where
    th = np.where(mask, theta.reshape(size, n), -np.inf)
    th = th - th.max(axis=1, keepdims=True)
    e = np.exp(th)
    P = e / e.sum(axis=1, keepdims=True)
    full = np.zeros((size, size))
    full[rows, cols] = P[mask]
    pi = _solve_stationary(full)
    pos = P > 0
    logP = np.log(np.where(pos, P, 1.0))
    gain = np.where(mask, c - logP, 0.0)
    phi = np.where(pos, P * gain, 0.0).sum(axis=1)
    F = float(pi @ phi)
    Z = np.eye(size) - full + pi[None, :]
    try:
        V = np.linalg.solve(Z, phi - F)
    except np.linalg.LinAlgError:
        V = np.linalg.lstsq(Z, phi - F, rcond=None)[0]
    G = np.where(mask, pi[:, None] * (V[succ] + gain - 1.0), 0.0)
    grad = P * (G - (P * G).sum(axis=1, keepdims=True))
    return F, grad.ravel(), P


def maximize_numeric(a: CylinderFunction, rho: Potential, p: float, order: int | None = None,
                     restarts: int = 20, seed: int = 0, max_iter: int = 2000) -> NumericResult:
    """Maximize the objective over order-``order`` Markov chains by quasi-Newton ascent.

    Each row of ``P`` is a softmax of free logits, so iterates stay inside the
    simplex.  Moves with ``g = 0`` are masked out; if that disconnects the
    state graph every strongly connected class is searched separately.
    Restarts are merged by best value with the lowest index winning ties.
    """
    k = _min_order(a, rho) if order is None else order
    g = log_weight(a, rho, p)
    W = _state_weights(g, k)
    n = g.n
    size = n**k
    succ = _successors(n, k)
    allowed = W > 0
    graph = sp.csr_matrix((allowed.ravel().astype(float), (np.repeat(np.arange(size), n), succ.ravel())), shape=(size, size))
    graph.eliminate_zeros()
    ncomp, labels = connected_components(graph, directed=True, connection="strong")
    classes = []
    for comp in range(ncomp):
        idx = np.flatnonzero(labels == comp)
        inside = allowed[idx] & (labels[succ[idx]] == comp)
        if inside.any(axis=1).all():
            classes.append(idx)
    if not classes:
        raise ValidationError("no closed class with positive weight: objective is -inf everywhere")
    with np.errstate(divide="ignore"):
        c = np.where(allowed, np.log(np.where(allowed, W, 1.0)), 0.0)

    rng = np.random.default_rng(seed)
    best = None
    all_values = []
    converged_all = True
    for r in range(restarts):
        for idx in classes:
            # reindex the class as its own state space
            local = -np.ones(size, dtype=int)
            local[idx] = np.arange(idx.size)
            mask = allowed[idx] & (local[succ[idx]] >= 0)
            lsucc = np.where(mask, local[succ[idx]], 0)
            lc = c[idx]
            where = (np.nonzero(mask)[0], lsucc[mask], lsucc)
            theta0 = rng.normal(scale=2.0, size=idx.size * n)

            def fun(t):
                F, grad, _ = _edge_objective(t, lc, mask, where)
                return -F, -grad

            sol = minimize(fun, theta0, jac=True, method="L-BFGS-B",
                           options={"maxiter": max_iter, "gtol": 1e-10, "ftol": 1e-14})
            F, _, Pl = _edge_objective(sol.x, lc, mask, where)
            converged_all &= bool(sol.success) or sol.status == 2
            value = F / p
            all_values.append(value)
            if best is None or value > best[0]:
                best = (value, idx, Pl)
    value, idx, Pl = best
    P = np.full((size, n), 1.0 / n)
    P[idx] = Pl
    support = np.zeros(size, dtype=bool)
    support[idx] = True
    mu = MarkovMeasure(n, k, P, _stationary_on(P, n, k, support))
    return NumericResult(mu, objective(a, rho, p, mu), converged_all, restarts, all_values)


def periodic_orbit_bound(a: CylinderFunction, rho: Potential, p: float, word: Word | str) -> float:
    """Objective of the periodic orbit of ``word`` (entropy 0): a lower bound."""
    if not isinstance(word, Word):
        word = Word.parse(word, rho.n)
    return objective(a, rho, p, PeriodicOrbitMeasure(word))
