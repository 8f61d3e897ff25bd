import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from conftest import potentials, random_function
from lpcuntz.errors import DepthError, ValidationError
from lpcuntz.lp_rep import RepOperator, Representation, exact_norm, lp_space
from lpcuntz.spectral import (
    PseudospectrumGrid,
    classify_fraction,
    compress,
    disk_report,
    gauge_scale,
    pseudospectrum,
    radius,
    ring_grid,
    weighted_shift,
)
from lpcuntz.symbolic import CylinderFunction, lift_depth
from lpcuntz.transfer import CylinderMeasure, Potential, random_potential


class TestRadius:
    def test_worked_p1(self, worked):
        a, rho = worked
        rep = radius(a, rho, 1.0)
        assert rep.r_perron == pytest.approx(1.5, abs=1e-12)
        assert rep.r_variational == pytest.approx(1.5, abs=1e-12)
        assert rep.r_gelfand.contains(1.5)
        assert rep.agree

    def test_worked_p2(self, worked):
        a, rho = worked
        rep = radius(a, rho, 2.0)
        assert rep.r_perron == pytest.approx(math.sqrt(2.5), abs=1e-12)
        assert rep.r_gelfand.lower <= math.sqrt(2.5) <= rep.r_gelfand.upper

    @pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 4.0])
    def test_unital(self, p, rng):
        rep = radius(CylinderFunction.constant(3, 1.0), random_potential(3, 2, rng), p)
        for v in (rep.r_perron, rep.r_variational, rep.r_gelfand.estimate):
            assert v == pytest.approx(1.0, abs=1e-9)

    @given(potentials(max_n=3, max_depth=2), st.sampled_from([1.0, 1.5, 2.0, 3.0]), st.integers(0, 10**6))
    @settings(max_examples=25, deadline=None)
    def test_agreement(self, rho, p, seed):
        r = np.random.default_rng(seed)
        a = random_function(rho.n, int(r.integers(0, 3)), r)
        rep = radius(a, rho, p)
        assert abs(rep.r_perron - rep.r_variational) <= 1e-9 * max(1.0, rep.r_perron)
        assert rep.r_gelfand.contains(rep.r_perron, slack=1e-9 * max(1.0, rep.r_perron))
        assert rep.agree

    def test_to_dict(self, worked):
        d = radius(*worked, 1.0).to_dict()
        assert set(d["r_gelfand"]) == {"lower", "upper", "estimate", "iterations"}
        assert d["flags"]["perron_vs_variational"]

    def test_zero(self):
        rep = radius(CylinderFunction(2, 1, [0.0, 0.0]), Potential.uniform(2), 2.0)
        assert rep.r_perron == 0.0 and rep.r_variational == 0.0

    def test_bad_p(self, worked):
        with pytest.raises(ValidationError):
            radius(*worked, 0.5)


class TestGauge:
    def test_identity(self, worked):
        a, rho = worked
        rep = Representation(rho, 2.0, 3)
        op = weighted_shift(a, rep, 2)
        assert (gauge_scale(op, 1.0).matrix != op.matrix).nnz == 0

    def test_by_i(self, worked, rng):
        a, rho = worked
        rep = Representation(rho, 1.5, 3)
        op = weighted_shift(random_function(2, 2, rng), rep, 2)
        g = gauge_scale(op, 1j)
        assert np.array_equal(g.dense(), 1j * op.dense())
        assert exact_norm(g) == exact_norm(op)

    @pytest.mark.parametrize("theta", [0.3, 1.0, 2.5])
    def test_norm_invariance_and_degrees(self, theta, rng):
        z = np.exp(1j * theta)
        rep = Representation(random_potential(2, 2, rng), 3.0, 4)
        T, S = rep.T(3), rep.S(3)
        assert np.allclose(gauge_scale(T, z).dense(), z * T.dense())
        assert np.allclose(gauge_scale(S, z).dense(), S.dense() / z)
        m = rep.pi(random_function(2, 2, rng), 3)
        assert np.array_equal(gauge_scale(m, z).dense(), m.dense())
        for op in (T, S, rep.T_i(1, 3), rep.S_i(2, 3)):
            assert exact_norm(gauge_scale(op, z)) == pytest.approx(exact_norm(op), rel=1e-15)

    def test_relations_after_gauge(self, rng):
        z = np.exp(0.7j)
        rho = random_potential(3, 1, rng)
        rep = Representation(rho, 2.5, 4)
        d = 3
        worst = 0.0
        for i in range(1, 4):
            Ti, Si = gauge_scale(rep.T_i(i, d), z), gauge_scale(rep.S_i(i, d), z)
            worst = max(worst, np.max(np.abs((Si @ Ti).dense() - np.eye(27))))
        total = sum((gauge_scale(rep.T_i(i, d), z) @ gauge_scale(rep.S_i(i, d), z)).dense() for i in range(1, 4))
        worst = max(worst, np.max(np.abs(total - np.eye(81))))
        assert worst <= 1e-12

    def test_not_unimodular(self, worked):
        rep = Representation(worked[1], 2.0, 2)
        with pytest.raises(ValidationError):
            gauge_scale(rep.T(1), 1.01)


class TestCompress:
    def test_small(self):
        A = compress(CylinderFunction.constant(2, 1.0), Potential.uniform(2), 2.0, 1)
        assert A.kind == "general"
        assert np.allclose(A.dense(), [[0.5, 0.5], [0.5, 0.5]])

    @pytest.mark.parametrize("p", [1.0, 2.0, 3.0])
    def test_exact_on_shallow(self, p, rng):
        rho = random_potential(2, 2, rng)
        a = random_function(2, 2, rng)
        d = 4
        rep = Representation(rho, p, d + 1)
        A = compress(a, rho, p, d, rep)
        full = weighted_shift(a, rep, d)
        for _ in range(5):
            f = CylinderFunction(2, d - 1, rng.normal(size=2 ** (d - 1)) + 1j * rng.normal(size=2 ** (d - 1)))
            lhs = A(lift_depth(f, d).values)
            rhs = full(lift_depth(f, d).values)
            # pi(a) T f has depth d here, so it lives on depth-d cylinders
            assert np.allclose(lift_depth(CylinderFunction(2, d, lhs), d + 1).values, rhs, atol=1e-13)

    @pytest.mark.parametrize("p", [1.0, 2.0])
    def test_contractive(self, p, rng):
        rho = random_potential(2, 1, rng)
        a = random_function(2, 2, rng)
        bound = exact_norm(weighted_shift(a, Representation(rho, p, 3), 2))
        for d in (2, 4, 6):
            A = compress(a, rho, p, d)
            w = A.source.weights ** (1 / p)
            b = w[:, None] * A.dense() / w[None, :]
            norm = np.abs(b).sum(axis=0).max() if p == 1 else np.linalg.norm(b, 2)
            assert norm <= bound + 1e-12

    def test_depth_errors(self, rng):
        with pytest.raises(DepthError):
            compress(random_function(2, 3, rng), Potential.uniform(2), 2.0, 2)
        with pytest.raises(DepthError):
            compress(CylinderFunction.constant(2, 1.0), random_potential(2, 4, rng), 2.0, 2)


class TestPseudospectrum:
    def test_zero_operator(self):
        s = lp_space(CylinderMeasure(2, 1, np.array([0.5, 0.5])), 1, 2.0)
        A = RepOperator(s, s, sp.csr_matrix((2, 2)), kind="general")
        g = pseudospectrum(A, [1.0])
        assert g.lower[0] == g.upper[0] == pytest.approx(1.0)

    def test_singular(self):
        s = lp_space(CylinderMeasure(2, 1, np.array([0.5, 0.5])), 1, 3.0)
        A = RepOperator(s, s, sp.csr_matrix((2, 2)), kind="general")
        g = pseudospectrum(A, [0.0])
        assert math.isinf(g.lower[0]) and math.isinf(g.upper[0])

    def test_jordan_block(self):
        s = lp_space(CylinderMeasure(2, 3, np.full(8, 1 / 8)), 3, 2.0)
        J = sp.csr_matrix(np.eye(8, k=-1))
        g = pseudospectrum(RepOperator(s, s, J, kind="general"), ring_grid([0.5], 64))
        assert g.lower.min() > 100
        assert g.angular_ratio(0) <= 1.01

    @pytest.mark.parametrize("p", [1.5, 3.0])
    def test_bounds_ordered(self, p, rng):
        rho = random_potential(2, 1, rng)
        A = compress(random_function(2, 1, rng), rho, p, 4)
        g = pseudospectrum(A, ring_grid([0.3, 0.9, 2.0], 16), probes=64, seed=1, angles=16)
        assert np.all(g.lower >= 0)
        assert np.all(g.lower <= g.upper * (1 + 1e-12))

    def test_p2_exact_and_finite_outside(self, worked):
        a, rho = worked
        A = compress(a, rho, 2.0, 4)
        bound = exact_norm(weighted_shift(a, Representation(rho, 2.0, 2), 1))
        g = pseudospectrum(A, ring_grid([1.1 * bound], 32), angles=32)
        assert np.array_equal(g.lower, g.upper)
        assert np.all(np.isfinite(g.lower))
        assert np.all(g.upper <= 1 / (0.1 * bound) + 1e-9)

    def test_rows(self):
        s = lp_space(CylinderMeasure(2, 1, np.array([0.5, 0.5])), 1, 2.0)
        A = RepOperator(s, s, sp.csr_matrix((2, 2)), kind="general")
        rows = list(pseudospectrum(A, ring_grid([2.0], 4), angles=4).rows())
        assert len(rows) == 4 and len(rows[0]) == len(PseudospectrumGrid.CSV_HEADER)
        assert rows[1][:2] == pytest.approx((0.0, 2.0), abs=1e-15)

    def test_ring_order(self):
        z = ring_grid([1.0, 2.0], 8)
        assert z.size == 16 and abs(z[8]) == 2.0 and z[0] == 1.0

    def test_uniformity_unital(self):
        rho = Potential.uniform(2)
        A = compress(CylinderFunction.constant(2, 1.0), rho, 2.0, 6)
        g = pseudospectrum(A, ring_grid([0.4, 0.6, 0.8], 64))
        for k in range(3):
            assert g.angular_ratio(k) <= 1.05


@pytest.fixture(scope="module")
def report():
    return disk_report(CylinderFunction.constant(2, 1.0), Potential.uniform(2), 2.0, 6, [0.5, 0.999, 1.2])

    def test_kind(self, report):
        assert report["kind"] == "evidence"
        assert report["radius"] == pytest.approx(1.0)

    def test_interior_growth(self, report):
        ring = report["rings"][0]
        assert ring["region"] == "interior" and ring["monotone_growth"]

    def test_boundary(self, report):
        ring = report["rings"][1]
        assert ring["region"] == "boundary" and "claim" in ring

    def test_exterior_bounded(self, report):
        ring = report["rings"][2]
        bound = ring["depth_independent_bound"]
        assert all(v["upper"] <= bound + 1e-9 for v in ring["growth"].values())

    def test_classify(self):
        assert classify_fraction(0.5) == "interior"
        assert classify_fraction(0.97) == "boundary"
        assert classify_fraction(1.2) == "exterior"
