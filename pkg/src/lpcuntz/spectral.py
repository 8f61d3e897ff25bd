"""Spectral radius of ``pi(a) T`` and pseudospectral evidence for the disk.

The radius is obtained three ways from the weight ``g = rho |a|^p``:

* ``r_perron``      -- Perron root of the transfer matrix of ``g``, to the ``1/p``;
* ``r_gelfand``     -- certified enclosure from ``L_g^N 1``, to the ``1/p``;
* ``r_variational`` -- ``exp`` of the Gibbs value of the variational problem.

Pseudospectra are computed on finite compressions ``E_d pi(a) T`` and are
evidence only: a finite section has a finite spectrum.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DepthError, ValidationError
from .ergopt import gibbs_maximizer, log_weight
from .lp_rep import RepOperator, Representation, exact_norm, matrix_pnorm_bounds
from .symbolic import CylinderFunction
from .transfer import GelfandEnclosure, Potential, radius_gelfand, radius_perron

AGREEMENT_TOL = 1e-9
BOUNDARY_BAND = 0.05


@dataclass
class RadiusReport:
    r_perron: float
    r_gelfand: GelfandEnclosure
    r_variational: float
    p: float
    gibbs_unique: bool = True
    flags: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["r_gelfand"] = {
            "lower": self.r_gelfand.lower,
            "upper": self.r_gelfand.upper,
            "estimate": self.r_gelfand.estimate,
            "iterations": self.r_gelfand.iterations,
        }
        return out

    @property
    def agree(self) -> bool:
        return all(self.flags.values())


def radius(a: CylinderFunction, rho: Potential, p: float, depth: int | None = None,
           n_max: int = 500, tol: float = AGREEMENT_TOL) -> RadiusReport:
    """``r(pi(a) T)`` by the Perron, Gelfand and variational routes."""
    if p < 1:
        raise ValidationError(f"p must be >= 1, got {p}")
    g = log_weight(a, rho, p)
    lam = radius_perron(g, depth)
    r_perron = lam ** (1.0 / p)
    gelf = radius_gelfand(g, n_max).root(p)
    if lam == 0.0:
        r_var, unique = 0.0, True
    else:
        gibbs = gibbs_maximizer(a, rho, p)
        r_var, unique = math.exp(gibbs.value), gibbs.unique
    scale = max(1.0, r_perron)
    flags = {
        "perron_vs_variational": abs(r_perron - r_var) <= tol * scale,
        "gelfand_brackets_perron": gelf.contains(r_perron, slack=tol * scale),
    }
    return RadiusReport(r_perron, gelf, r_var, float(p), unique, flags)


def gauge_scale(op: RepOperator, z: complex) -> RepOperator:
    """Apply the circle action: multiply by ``z ** degree``."""
    if abs(abs(z) - 1.0) > 1e-12:
        raise ValidationError(f"gauge parameter must be unimodular, |z| = {abs(z)!r}")
    return RepOperator(op.source, op.target, op.matrix * complex(z) ** op.degree, kind=op.kind, degree=op.degree)


def conditional_expectation_down(rep: Representation, d: int) -> RepOperator:
    """``(E f)(w) = sum_j mu(w j) f(w j) / mu(w)``, depth ``d + 1 -> d``."""
    up = rep.space(d + 1)
    down = rep.space(d)
    n = rep.n
    cols = np.arange(up.dim)
    rows = cols // n
    vals = up.weights / down.weights[rows]
    m = sp.csr_matrix((vals, (rows, cols)), shape=(down.dim, up.dim))
    return RepOperator(up, down, m, degree=0)


def weighted_shift(a: CylinderFunction, rep: Representation, d: int) -> RepOperator:
    """``pi(a) T`` from depth ``d`` to ``d + 1``."""
    return rep.pi(a, d + 1) @ rep.T(d)


def compress(a: CylinderFunction, rho: Potential, p: float, d: int, rep: Representation | None = None) -> RepOperator:
    """Square finite section ``E_d pi(a) T`` on depth-``d`` functions.

    Exact on functions of the first ``d - 1`` letters.
    """
    if a.depth > d:
        raise DepthError(f"a has depth {a.depth} > compression depth {d}")
    if d < rho.depth - 1:
        raise DepthError(f"compression depth {d} below rho depth - 1")
    rep = rep or Representation(rho, p, d + 1)
    op = conditional_expectation_down(rep, d) @ weighted_shift(a, rep, d)
    return RepOperator(op.source, op.target, op.matrix, kind="general", degree=op.degree)


def ring_grid(radii, angles: int = 64) -> np.ndarray:
    """Points ``r e^{i theta}`` ordered by (radius, angle) index."""
    theta = 2 * np.pi * np.arange(angles) / angles
    return np.concatenate([r * np.exp(1j * theta) for r in radii]) if len(radii) else np.zeros(0, complex)


@dataclass
class PseudospectrumGrid:
    """Resolvent norms ``||(A - lambda)^-1||_p`` on a grid.

    For ``p = 2`` ``lower == upper`` (exact).  Otherwise ``lower`` is the best
    probe ratio and ``upper`` the Riesz-Thorin bound; both are certified.
    Singular points carry ``inf``.
    """

    lambdas: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    p: float
    depth: int
    angles: int = 64

    CSV_HEADER = ("re", "im", "value_lower", "value_upper", "p", "depth")

    def rows(self):
        for lam, lo, hi in zip(self.lambdas, self.lower, self.upper):
            yield (float(lam.real), float(lam.imag), float(lo), float(hi), self.p, self.depth)

    def ring(self, k: int) -> slice:
        return slice(k * self.angles, (k + 1) * self.angles)

    def angular_ratio(self, k: int, which: str = "lower") -> float:
        """max/min of the resolvent norm around ring ``k``."""
        vals = getattr(self, which)[self.ring(k)]
        if not np.all(np.isfinite(vals)):
            return math.inf
        return float(vals.max() / vals.min())


def pseudospectrum(A: RepOperator, lambdas, probes: int = 64, seed: int = 0, angles: int = 64) -> PseudospectrumGrid:
    """Resolvent norms of the square operator ``A`` at each ``lambda``."""
    if A.source.dim != A.target.dim or not A.source.same_as(A.target):
        raise ValidationError("pseudospectrum needs a square operator on one space")
    p = A.p
    w = A.source.weights
    dense = A.dense()
    # weighted l^p norm -> plain l^p via D^(1/p) . D^(-1/p)
    left = w ** (1.0 / p)
    right = w ** (-1.0 / p)
    lambdas = np.asarray(lambdas, dtype=complex)
    lo = np.empty(lambdas.size)
    hi = np.empty(lambdas.size)
    eye = np.eye(dense.shape[0])
    for k, lam in enumerate(lambdas):
        b = left[:, None] * (dense - lam * eye) * right[None, :]
        if p == 2:
            s = np.linalg.svd(b, compute_uv=False)
            v = math.inf if s[-1] == 0 or s[-1] < s[0] * 1e-15 else 1.0 / s[-1]
            lo[k] = hi[k] = v
            continue
        try:
            res = np.linalg.inv(b)
        except np.linalg.LinAlgError:
            lo[k] = hi[k] = math.inf
            continue
        lo[k], hi[k] = matrix_pnorm_bounds(res, p, probes=probes, seed=seed)
    return PseudospectrumGrid(lambdas, lo, hi, p, A.source.depth, angles)


def classify_fraction(t: float, band: float = BOUNDARY_BAND) -> str:
    if abs(t - 1.0) < band:
        return "boundary"
    return "interior" if t < 1.0 else "exterior"


def disk_report(a: CylinderFunction, rho: Potential, p: float, depth: int, fractions,
                growth_depths=(4, 6, 8), angles: int = 64, seed: int = 0) -> dict:
    """Evidence that the spectrum of ``pi(a) T`` is the disk of radius ``r``.

    For each fraction ``t``: the angular max/min ratio of the resolvent norm
    on ``|lambda| = t r`` at ``depth``, and the resolvent norm at
    ``lambda = t r`` across ``growth_depths``.  Interior points should show
    growth with depth, exterior ones a depth-independent bound
    ``1 / (t r - ||pi(a) T||)``.  Near ``t = 1`` no claim is made.
    """
    rep_depth = max([depth, *growth_depths]) + 1
    rep = Representation(rho, p, rep_depth)
    r = radius(a, rho, p).r_perron
    opnorm = exact_norm(weighted_shift(a, rep, max(a.depth, rho.depth - 1)))
    fractions = [float(t) for t in fractions]
    A = compress(a, rho, p, depth, rep)
    grid = pseudospectrum(A, ring_grid([t * r for t in fractions], angles), seed=seed, angles=angles)
    compressions = {d: compress(a, rho, p, d, rep) for d in growth_depths}
    rings = []
    for k, t in enumerate(fractions):
        cls = classify_fraction(t)
        lam = t * r
        growth = {}
        for d in growth_depths:
            g = pseudospectrum(compressions[d], [lam], seed=seed, angles=1)
            growth[str(d)] = {"lower": float(g.lower[0]), "upper": float(g.upper[0])}
        seq = [growth[str(d)]["lower"] for d in growth_depths]
        entry = {
            "t": t,
            "abs_lambda": lam,
            "region": cls,
            "angular_ratio": grid.angular_ratio(k),
            "max_resolvent_upper": float(np.max(grid.upper[grid.ring(k)])),
            "growth": growth,
            "monotone_growth": bool(all(x < y for x, y in zip(seq, seq[1:]))),
        }
        if cls == "exterior" and lam > opnorm:
            entry["depth_independent_bound"] = 1.0 / (lam - opnorm)
        if cls == "boundary":
            entry["claim"] = "none (boundary band)"
        rings.append(entry)
    return {
        "kind": "evidence",
        "radius": r,
        "operator_norm": opnorm,
        "p": float(p),
        "depth": depth,
        "growth_depths": list(growth_depths),
        "angles": angles,
        "rings": rings,
        "grid": grid,
    }
