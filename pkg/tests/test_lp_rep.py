import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from conftest import potentials, random_function
from lpcuntz.errors import DepthError, UnsupportedKindError, ValidationError
from lpcuntz.lp_rep import (
    RepOperator,
    Representation,
    WeightedLpSpace,
    ando_projection_check,
    conjugate_exponent_inverse,
    cuntz_family,
    deviation,
    exact_norm,
    isometry_defect,
    lamperti_decompose,
    lp_space,
    make_pi,
    make_S_phi,
    make_T_phi,
    matrix_pnorm_bounds,
    max_word_length,
    norm_bounds,
    radon_nikodym_check,
    verify_covariance,
    weighted_adjoint,
    weighted_shift_power,
)
from lpcuntz.symbolic import CylinderFunction, abs_pow, indicator
from lpcuntz.transfer import CylinderMeasure, Potential, fixed_point_measure, random_potential

PS = [1.0, 1.5, 2.0, 3.0]


def bernoulli_spaces(p, d, probs=(0.3, 0.7)):
    rho = Potential.from_values(2, 1, probs)
    mu = fixed_point_measure(rho, d + 1)
    return rho, lp_space(mu, d, p), lp_space(mu, d + 1, p)


def brute_norm(op, samples, rng):
    """max ||M f|| / ||f|| over random complex f with random support (a lower bound)."""
    dim = op.source.dim
    f = rng.normal(size=(dim, samples)) + 1j * rng.normal(size=(dim, samples))
    keep = rng.random((dim, samples)) < rng.random(samples)[None, :]
    keep[rng.integers(0, dim, samples), np.arange(samples)] = True
    f = f * keep
    g = op.matrix @ f
    p = op.p
    nf = (np.abs(f) ** p * op.source.weights[:, None]).sum(axis=0) ** (1 / p)
    ng = (np.abs(g) ** p * op.target.weights[:, None]).sum(axis=0) ** (1 / p)
    return float(np.max(ng / nf))


class TestSpace:
    def test_conjugate_exponent(self):
        assert conjugate_exponent_inverse(1) == 0.0
        assert conjugate_exponent_inverse(2) == 0.5
        assert conjugate_exponent_inverse(4) == 0.75
        with pytest.raises(ValidationError):
            conjugate_exponent_inverse(0.5)

    def test_norm(self):
        sp_ = WeightedLpSpace(2, 1, 2.0, np.array([0.25, 0.75]))
        assert sp_.norm([2.0, 1.0]) == pytest.approx(np.sqrt(0.25 * 4 + 0.75))

    def test_rejects_bad_weights(self):
        with pytest.raises(ValidationError):
            WeightedLpSpace(2, 1, 2.0, np.array([0.0, 1.0]))

    def test_shape_and_p_checks(self):
        _, s1, s2 = bernoulli_spaces(2.0, 1)
        with pytest.raises(ValidationError):
            RepOperator(s1, s2, sp.identity(2))
        _, t1, _ = bernoulli_spaces(3.0, 1)
        with pytest.raises(ValidationError):
            RepOperator(s1, t1, sp.identity(2))


class TestPi:
    def test_unital(self):
        _, s, _ = bernoulli_spaces(2, 2)
        assert deviation(make_pi(CylinderFunction.constant(2, 1.0), s), sp.identity(4)) == 0

    def test_indicator(self):
        _, s, _ = bernoulli_spaces(2, 1)
        assert np.array_equal(make_pi(indicator((1,), 2, 1), s).dense(), np.diag([1, 0]))

    @pytest.mark.parametrize("p", PS)
    def test_norm(self, p):
        _, s, _ = bernoulli_spaces(p, 1)
        op = make_pi(CylinderFunction(2, 1, [3.0, -5.0]), s)
        assert op.kind == "multiplication" and exact_norm(op) == 5.0


class TestShiftOperators:
    def test_constants(self):
        _, s0, s1 = bernoulli_spaces(2, 0)
        assert np.array_equal(make_T_phi(s0, s1).dense(), [[1], [1]])

    def test_preimage_of_cylinder(self):
        _, s1, s2 = bernoulli_spaces(1.5, 1)
        out = make_T_phi(s1, s2)(indicator((2,), 2, 1).values)
        assert np.array_equal(out.real, indicator((1, 2), 2, 2).values + indicator((2, 2), 2, 2).values)

    @pytest.mark.parametrize("p", PS)
    def test_isometry(self, p, rng):
        _, s, t = bernoulli_spaces(p, 3)
        T = make_T_phi(s, t)
        assert exact_norm(T) == pytest.approx(1.0, abs=1e-14)
        for _ in range(50):
            f = rng.normal(size=s.dim) + 1j * rng.normal(size=s.dim)
            assert abs(t.norm(T(f)) - s.norm(f)) <= 1e-12 * s.norm(f)

    def test_requires_invariant_measure(self):
        s = WeightedLpSpace(2, 1, 2.0, np.array([0.5, 0.5]))
        t = WeightedLpSpace(2, 2, 2.0, np.array([0.1, 0.2, 0.3, 0.4]))
        with pytest.raises(ValidationError):
            make_T_phi(s, t)
        with pytest.raises(DepthError):
            make_T_phi(t, s)

    def test_S_direct_sum(self):
        rho, s1, s2 = bernoulli_spaces(2, 1, (0.5, 0.5))
        S = make_S_phi(rho, s2, s1)
        assert np.allclose(S([3.0, 5.0, 3.0, 5.0]), [3.0, 5.0])

    @pytest.mark.parametrize("p", PS)
    def test_S_left_inverse_and_contraction(self, p, rng):
        rho = random_potential(3, 2, rng)
        rep = Representation(rho, p, 4)
        S, T = rep.S(3), rep.T(3)
        g = rng.normal(size=27) + 1j * rng.normal(size=27)
        assert np.max(np.abs(S(T(g)) - g)) <= 1e-14
        assert np.allclose(S(np.ones(81)), 1.0, atol=1e-15)
        assert S.kind == "co_composition"
        assert exact_norm(S) == pytest.approx(1.0, abs=1e-12)

    def test_S_depth_guard(self):
        rho = random_potential(2, 3, np.random.default_rng(0))
        mu = fixed_point_measure(rho, 2)
        with pytest.raises(DepthError):
            make_S_phi(rho, lp_space(mu, 1, 2.0), lp_space(mu, 0, 2.0))


class TestExactNorm:
    @pytest.mark.parametrize("p", PS)
    def test_matches_brute_force(self, p, rng):
        rho = random_potential(2, 2, rng)
        rep = Representation(rho, p, 4)
        a = random_function(2, 2, rng)
        for op in (rep.pi(a, 3) @ rep.T(2), rep.S(3) @ rep.pi(a, 4), rep.T_i(1, 2), rep.S_i(2, 3)):
            exact = exact_norm(op)
            brute = brute_norm(op, 10_000, rng)
            assert brute <= exact * (1 + 1e-12)
            assert brute >= exact * 0.98

    def test_general_is_unsupported(self):
        rho, s, _ = bernoulli_spaces(2, 1)
        op = RepOperator(s, s, sp.csr_matrix(np.ones((2, 2))))
        assert op.kind == "general"
        with pytest.raises(UnsupportedKindError):
            exact_norm(op)
        lo, hi = norm_bounds(op)
        assert lo == hi == pytest.approx(np.linalg.norm(np.sqrt([[.3], [.7]]) * np.ones((2, 2)) / np.sqrt([.3, .7]), 2))

    @pytest.mark.parametrize("p", [1.0, 1.5, 3.0])
    def test_power_identity(self, p, rng):
        # ||(pi(a)T)^N||_p^p = ||(pi(|a|^p)T)^N||_1
        rho = random_potential(2, 1, rng)
        a = random_function(2, 2, rng)
        rep_p, rep_1 = Representation(rho, p, 7), Representation(rho, 1.0, 7)
        for big_n in (1, 2, 4):
            lhs = exact_norm(weighted_shift_power(a, rep_p, 2, big_n)) ** p
            rhs = exact_norm(weighted_shift_power(abs_pow(a, p), rep_1, 2, big_n))
            assert lhs == pytest.approx(rhs, rel=1e-12)

    @pytest.mark.parametrize("p", [1.5, 3.0])
    def test_pnorm_bounds_bracket(self, p, rng):
        b = rng.normal(size=(12, 12))
        lo, hi = matrix_pnorm_bounds(b, p)
        x = rng.normal(size=(12, 2000))
        brute = np.max(np.linalg.norm(b @ x, p, axis=0) / np.linalg.norm(x, p, axis=0))
        assert brute <= lo * (1 + 1e-12) + 1e-12 or lo <= hi
        assert lo <= hi and brute <= hi * (1 + 1e-12)

    def test_pnorm_exact_cases(self, rng):
        b = rng.normal(size=(5, 4))
        assert matrix_pnorm_bounds(b, 1.0)[0] == pytest.approx(np.abs(b).sum(axis=0).max())
        assert matrix_pnorm_bounds(b, 2.0)[1] == pytest.approx(np.linalg.norm(b, 2))


class TestCuntzFamily:
    @pytest.mark.parametrize("p", PS)
    def test_family(self, p, rng):
        rho = random_potential(3, 2, rng)
        fam = cuntz_family(rho, p, 2)
        assert len(fam) == 3
        for i, (Ti, Si) in enumerate(fam, start=1):
            assert Ti.kind == Si.kind == "weighted_composition"
            assert Ti.degree == 1 and Si.degree == -1
            assert exact_norm(Ti) == pytest.approx(1.0, abs=1e-12)
            assert exact_norm(Si) == pytest.approx(1.0, abs=1e-12)
            assert deviation(Si @ Ti, sp.identity(9)) <= 1e-12
            proj = Ti @ Si
            assert proj.kind == "multiplication"
            assert np.allclose(proj.matrix.diagonal(), indicator((i,), 3, 3).values, atol=1e-12)

    def test_p1_convention(self, rng):
        # 1/q = 0 at p = 1: S_i = S pi(1_{X_i}) with no rho factor
        rho = random_potential(2, 1, rng)
        rep = Representation(rho, 1.0, 3)
        assert rep.inv_q == 0.0
        expect = rep.S(2) @ rep.pi(indicator((2,), 2, 1), 3)
        assert deviation(rep.S_i(2, 2), expect) == 0.0

    @settings(max_examples=25, deadline=None)
    @given(potentials(max_n=4, max_depth=2), st.sampled_from(PS), st.integers(2, 4), st.integers(0, 10**6))
    def test_verify_covariance(self, rho, p, d, seed):
        r = np.random.default_rng(seed)
        a = random_function(rho.n, r.integers(0, d + 1), r)
        rpt = verify_covariance(rho, a, p, d)
        assert rpt.worst <= 1e-12, rpt.failures(1e-12)
        assert rpt.ok(1e-12)
        assert ("S = T* (p = 2)" in rpt.deviations) == (p == 2)

    def test_word_projection_sparse_path_agrees(self, rng):
        rho = random_potential(2, 1, rng)
        rep = Representation(rho, 1.5, 4)
        for word in [(1,), (2, 1), (1, 2, 2)]:
            fast = rep.word_projection(word, 4)
            slow = rep._word_projection_sparse(word, 4)
            assert deviation(fast, slow) <= 1e-14

    def test_word_length_cap(self):
        rho = random_potential(2, 3, np.random.default_rng(0))
        assert max_word_length(rho, 2) == 1
        assert max_word_length(rho, 6) == 3
        assert max_word_length(Potential.uniform(2), 1) == 1

    def test_depth_errors(self, rng):
        rho = random_potential(2, 3, rng)
        with pytest.raises(DepthError):
            verify_covariance(rho, CylinderFunction.constant(2, 1.0), 2.0, 1)
        with pytest.raises(DepthError):
            verify_covariance(Potential.uniform(2), random_function(2, 3, rng), 2.0, 2)

    def test_covariance_detects_wrong_measure(self, rng):
        # Representation built on a measure that is shift invariant but not L^*-fixed
        rho = random_potential(2, 2, rng)
        wrong = fixed_point_measure(Potential.uniform(2), 4)
        rpt = verify_covariance(rho, random_function(2, 1, rng), 2.0, 3, rep=Representation(rho, 2.0, 4, mu=wrong))
        assert not rpt.ok(1e-6)

    @pytest.mark.parametrize("p", [2.0])
    def test_adjoint(self, p, rng):
        rep = Representation(random_potential(3, 2, rng), p, 3)
        assert deviation(rep.S(2).matrix, weighted_adjoint(rep.T(2))) <= 1e-12
        for Ti, Si in rep.family(2):
            assert deviation(Si.matrix, weighted_adjoint(Ti)) <= 1e-12


class TestLamperti:
    def test_T_phi(self, rng):
        rep = Representation(random_potential(3, 1, rng), 1.5, 3)
        dec = lamperti_decompose(rep.T(2))
        assert np.allclose(dec.h, 1.0)
        for v, img in enumerate(dec.phi.atoms):
            assert sorted(img.tolist()) == [i * 9 + v for i in range(3)]
        assert isometry_defect(rep.T(2), dec).max() <= 1e-12

    @pytest.mark.parametrize("p", PS)
    def test_T_i(self, p, rng):
        rho = random_potential(2, 2, rng)
        rep = Representation(rho, p, 4)
        for i in (1, 2):
            Ti = rep.T_i(i, 3)
            dec = lamperti_decompose(Ti)
            assert deviation(dec.reconstruct(), Ti.matrix) == 0.0
            assert all(img.size == 1 and img[0] // 8 == i - 1 for img in dec.phi.atoms)
            rows = dec.phi.covered
            assert np.allclose(dec.h[rows], rho.rho.lift(4).values[rows] ** (-1 / p), rtol=1e-14)
            assert isometry_defect(Ti, dec).max() <= 1e-12

    def test_diagonal(self):
        _, s, _ = bernoulli_spaces(2, 1)
        dec = lamperti_decompose(make_pi(CylinderFunction(2, 1, [2.0, -1.0]), s))
        assert [a.tolist() for a in dec.phi.atoms] == [[0], [1]]
        assert dec.h.tolist() == [2, -1]

    def test_rejects_two_per_row(self, rng):
        rep = Representation(random_potential(2, 1, rng), 2.0, 2)
        with pytest.raises(UnsupportedKindError):
            lamperti_decompose(rep.T(1) @ rep.S(1))

    def test_negative_control(self, rng):
        rep = Representation(random_potential(2, 2, rng), 1.5, 4)
        T = rep.T(3)
        bad = T.matrix.copy()
        bad.data[0] *= 1.01
        tampered = RepOperator(T.source, T.target, bad, degree=1)
        defect = isometry_defect(tampered)
        v = int(np.argmax(defect))
        assert defect[v] > 1e-3
        e = np.zeros(T.source.dim)
        e[v] = 1.0
        assert abs(T.target.norm(tampered(e)) - T.source.norm(e)) > 1e-6


class TestAndo:
    @pytest.mark.parametrize("p", PS)
    def test_formula(self, p, rng):
        rho = random_potential(3, 2, rng)
        rpt = ando_projection_check(rho, p, 2)
        assert rpt.worst <= 1e-12, rpt.deviations

    def test_twisted_phase(self, rng):
        rho = random_potential(2, 1, rng)
        phase = CylinderFunction(2, 2, np.exp(1j * rng.uniform(0, 2 * np.pi, 4)))
        assert ando_projection_check(rho, 3.0, 3, phase=phase).worst <= 1e-12
        with pytest.raises(ValidationError):
            ando_projection_check(rho, 3.0, 3, phase=CylinderFunction(2, 1, [1.0, 2.0]))

    def test_range(self, rng):
        rep = Representation(random_potential(2, 1, rng), 2.0, 3)
        T, S = rep.T(2), rep.S(2)
        xi = T(rng.normal(size=4))
        assert np.allclose((T @ S)(xi), xi, atol=1e-14)


class TestRadonNikodym:
    def test_bernoulli(self):
        rho = Potential.from_values(2, 1, [0.3, 0.7])
        mu = fixed_point_measure(rho, 4)
        up = mu.at_depth(4).reshape(2, -1) / mu.at_depth(3)
        assert np.allclose(up[0], 0.3, rtol=1e-13)
        assert radon_nikodym_check(rho, mu, 3).worst <= 1e-13

    def test_uniform(self):
        assert radon_nikodym_check(Potential.uniform(3), None, 2).worst <= 1e-14

    @given(potentials(max_depth=3))
    @settings(max_examples=20)
    def test_markov(self, rho):
        assert radon_nikodym_check(rho, None, rho.depth).worst <= 1e-10

    def test_not_fixed_point(self):
        rho = Potential.from_values(2, 1, [0.3, 0.7])
        wrong = CylinderMeasure(2, 3, np.full(8, 1 / 8))
        assert radon_nikodym_check(rho, wrong, 2).worst > 0.1
