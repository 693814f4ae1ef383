"""Grid-based certificate checks, with closed-form and dense-eig oracles."""

import math

import numpy as np
import pytest
import scipy.linalg

from ccmkit.certificates import (
    CertificateError,
    Grid,
    check_c1,
    check_dual_w,
    check_killing_pde,
    check_robust,
    contraction_quadratic,
    dual_flow_diagnostic,
    min_feasible_gamma0,
)
from ccmkit.linalg import generalized_sym_eig, null_space_basis
from ccmkit.model import MetricField, SystemModel, generate_reference

SQRT2 = math.sqrt(2.0)


def small_grid(sys, points=9):
    return Grid.for_system(sys, points)


class TestGrid:
    def test_row_major_order(self):
        grid = Grid([0.0, 0.0], [1.0, 1.0], (2, 2))
        pts = list(grid.points())
        assert np.allclose(pts, [[0, 0], [0, 1], [1, 0], [1, 1]])
        assert len(grid) == 4

    def test_min_samples(self):
        with pytest.raises(ValueError):
            Grid([0.0], [1.0], (1,))

    def test_point_cap(self):
        with pytest.raises(ValueError):
            Grid([0.0] * 4, [1.0] * 4, (100,) * 4)


class TestKillingPde:
    def test_numex_passes(self, numex):
        report = check_killing_pde(numex.system, numex.metric,
                                   small_grid(numex.system))
        assert report.passed
        assert report.worst_margin == 0.0

    def test_microactuator_passes(self, micro):
        report = check_killing_pde(micro.system, micro.metric,
                                   small_grid(micro.system, 5))
        assert report.passed
        assert report.worst_margin == 0.0

    def test_state_dependent_b_fails(self):
        sys = SystemModel(2, 1, ["0", "0"], [["0"], ["x1"]], [-2, -2], [2, 2])
        metric = MetricField(2, [["1", "0"], ["0", "1"]], 0.5, 1.5, 0.0)
        report = check_killing_pde(sys, metric, small_grid(sys))
        assert not report.passed
        # dB/dx has a single unit entry; symmetrizing puts 1 in both
        # off-diagonal slots, so the max-entry residual is 1
        assert report.worst_margin == pytest.approx(1.0)

    def test_requires_primal(self, numex):
        with pytest.raises(CertificateError):
            check_killing_pde(numex.system, numex.dual_metric,
                              small_grid(numex.system))


class TestC1:
    def test_numex_certified_rate(self, numex):
        grid = small_grid(numex.system, 11)
        report = check_c1(numex.system, numex.metric, grid, rate=2.0 / 3.0)
        assert report.passed
        # margin is -2(x2^2+1)/3, maximized (least negative) at x2 = 0
        assert report.certified_rate == pytest.approx(2.0 / 3.0, abs=1e-9)
        assert abs(report.witness_state[1]) <= 1e-12
        v = report.witness_direction
        assert v[0] * (-1.0) == pytest.approx(v[1] * 3.0, abs=1e-9)

    def test_numex_margin_closed_form(self, numex):
        # at each grid point the single restricted eigenvalue is
        # -2(x2^2+1)/3; cross-check via a dense generalized eigensolve
        sys, metric = numex.system, numex.metric
        for x2 in (-2.0, 0.0, 1.5):
            x = np.array([0.7, x2])
            q, m_x = contraction_quadratic(sys, metric, x)
            basis = null_space_basis((m_x @ sys.eval_b(x)).T)
            w, _ = generalized_sym_eig(basis.T @ q @ basis, basis.T @ m_x @ basis)
            assert w[-1] == pytest.approx(-2.0 * (x2 * x2 + 1.0) / 3.0, abs=1e-10)
            oracle = scipy.linalg.eigh(
                basis.T @ q @ basis, basis.T @ m_x @ basis, eigvals_only=True
            )
            assert w[-1] == pytest.approx(oracle[-1], abs=1e-10)

    def test_dual_matrix_fails_as_primal(self, numex):
        wrong = MetricField(2, [["3", "-1"], ["-1", "2"]], 1.3, 3.7,
                            0.0, role="primal")
        report = check_c1(numex.system, wrong, small_grid(numex.system))
        assert not report.passed
        assert report.worst_margin > 0.0
        v = report.witness_direction
        assert v[0] * 1.0 == pytest.approx(v[1] * 2.0, abs=1e-9)  # v prop (2,1)
        # unnormalized quadratic form along (2,1) is +10(x2^2+1)
        x = np.array([0.0, 0.0])
        q, _ = contraction_quadratic(numex.system, wrong, x)
        vv = np.array([2.0, 1.0])
        assert vv @ q @ vv == pytest.approx(10.0)

    def test_microactuator_reduced_block(self, micro):
        sys, metric = micro.system, micro.metric
        grid = small_grid(sys, 5)
        report = check_c1(sys, metric, grid)
        assert report.passed
        assert report.certified_rate == pytest.approx(2.0 - SQRT2, abs=1e-9)
        # the quadratic form restricted to span{e1, e2} is constant
        fixed = np.eye(3)[:, :2]
        for x in grid.points():
            q, _ = contraction_quadratic(sys, metric, x)
            reduced = fixed.T @ q @ fixed
            assert np.allclose(reduced, [[-2.0, -4.0], [-4.0, -10.0]], atol=1e-9)

    def test_margin_invariant_under_basis_scaling(self, numex):
        sys, metric = numex.system, numex.metric
        x = np.array([1.0, -2.0])
        q, m_x = contraction_quadratic(sys, metric, x)
        basis = null_space_basis((m_x @ sys.eval_b(x)).T)
        w1, _ = generalized_sym_eig(basis.T @ q @ basis, basis.T @ m_x @ basis)
        scaled = 7.0 * basis
        w2, _ = generalized_sym_eig(scaled.T @ q @ scaled, scaled.T @ m_x @ scaled)
        assert abs(w1[-1] - w2[-1]) < 1e-10

    def test_grid_refinement_monotonicity(self, numex):
        coarse = check_c1(numex.system, numex.metric, small_grid(numex.system, 5))
        fine = check_c1(numex.system, numex.metric, small_grid(numex.system, 9))
        assert fine.worst_margin >= coarse.worst_margin - 1e-9

    def test_metric_bound_violation_detected(self, numex):
        lying = MetricField(2, [["2/5", "1/5"], ["1/5", "3/5"]],
                            0.5, 0.73, 0.0)  # claims p_lo above true min eig
        with pytest.raises(CertificateError):
            check_c1(numex.system, lying, small_grid(numex.system))


class TestDualW:
    def test_numex_dual_passes(self, numex):
        report = check_dual_w(numex.system, numex.dual_metric,
                              small_grid(numex.system))
        assert report.passed
        # value is -2(x2^2+1), least negative at x2 = 0
        assert report.worst_margin == pytest.approx(-2.0, abs=1e-10)
        assert report.details["killing_residual"] == 0.0

    def test_value_at_sample(self, numex):
        sys, w_metric = numex.system, numex.dual_metric
        x = np.array([0.0, 1.0])
        jac = sys.jac_f(x)
        w_x = w_metric.eval(x)
        b_perp = null_space_basis(sys.eval_b(x).T)
        val = b_perp.T @ (jac @ w_x + w_x @ jac.T) @ b_perp
        assert val[0, 0] == pytest.approx(-4.0)

    def test_expanding_flow_fails(self):
        sys = SystemModel(2, 1, ["x1", "x2"], [["0"], ["1"]], [-2, -2], [2, 2])
        w = MetricField(2, [["1", "0"], ["0", "1"]], 0.5, 1.5, 0.0, role="dual")
        report = check_dual_w(sys, w, small_grid(sys))
        assert not report.passed
        assert report.worst_margin == pytest.approx(2.0)

    def test_microactuator_dual_passes(self, micro):
        report = check_dual_w(micro.system, micro.dual_metric,
                              small_grid(micro.system, 5))
        assert report.passed

    def test_role_enforced(self, numex):
        with pytest.raises(CertificateError):
            check_dual_w(numex.system, numex.metric, small_grid(numex.system))

    def test_duality_consistency_constant_metrics(self):
        # for constant metrics, primal and dual verdicts must agree
        rng = np.random.default_rng(21)
        agreements = 0
        for _ in range(10):
            n, m = 3, 1
            a = rng.standard_normal((n, n)) - 1.5 * np.eye(n)
            b = rng.standard_normal((n, m))
            p = rng.standard_normal((n, n))
            m_mat = p @ p.T + 0.5 * np.eye(n)
            w_mat = np.linalg.inv(m_mat)
            f = [
                " + ".join(f"({a[i, j]:.17g})*x{j + 1}" for j in range(n))
                for i in range(n)
            ]
            b_entries = [[f"{b[i, 0]:.17g}"] for i in range(n)]
            sys = SystemModel(n, m, f, b_entries, [-1] * n, [1] * n)
            eig_m = np.linalg.eigvalsh(m_mat)
            eig_w = np.linalg.eigvalsh(w_mat)
            primal = MetricField(
                n, [[f"{m_mat[i, j]:.17g}" for j in range(n)] for i in range(n)],
                eig_m[0] - 1e-9, eig_m[-1] + 1e-9, 0.0, role="primal",
            )
            dual = MetricField(
                n, [[f"{w_mat[i, j]:.17g}" for j in range(n)] for i in range(n)],
                eig_w[0] - 1e-9, eig_w[-1] + 1e-9, 0.0, role="dual",
            )
            grid = Grid([-1] * n, [1] * n, (2,) * n)
            r1 = check_c1(sys, primal, grid)
            r2 = check_dual_w(sys, dual, grid)
            assert r1.passed == r2.passed
            agreements += 1
        assert agreements == 10


class TestRobust:
    def test_large_gamma0_passes(self, numex, micro):
        for bundle, pts in ((numex, 7), (micro, 5)):
            gamma0 = 1e3 * bundle.metric.p_hi**2
            report = check_robust(
                bundle.system, bundle.metric, small_grid(bundle.system, pts),
                lam=0.1, gamma0=gamma0,
            )
            assert report.passed

    def test_tiny_gamma0_fails(self, numex):
        report = check_robust(numex.system, numex.metric,
                              small_grid(numex.system), lam=0.1, gamma0=1e-8)
        assert not report.passed

    def test_bisection_boundary(self, numex):
        grid = small_grid(numex.system, 5)
        gamma0_min, report = min_feasible_gamma0(numex.system, numex.metric,
                                                 grid, lam=0.1)
        assert report.passed
        assert gamma0_min > 0
        assert check_robust(numex.system, numex.metric, grid, 0.1,
                            gamma0_min * 1.01).passed
        assert not check_robust(numex.system, numex.metric, grid, 0.1,
                                gamma0_min * 0.9).passed

    def test_lambda_forms(self, numex):
        grid = small_grid(numex.system, 5)
        for form in ("identity", "metric"):
            report = check_robust(numex.system, numex.metric, grid,
                                  0.1, 100.0, lambda_form=form)
            assert report.details["lambda_form"] == form
        with pytest.raises(CertificateError):
            check_robust(numex.system, numex.metric, grid, 0.1, 100.0,
                         lambda_form="bogus")

    def test_parameter_validation(self, numex):
        grid = small_grid(numex.system, 5)
        with pytest.raises(CertificateError):
            check_robust(numex.system, numex.metric, grid, -1.0, 1.0)
        with pytest.raises(CertificateError):
            check_robust(numex.system, numex.metric, grid, 0.1, 0.0)


class TestReportInvariants:
    def test_witness_attains_worst(self, numex):
        report = check_c1(numex.system, numex.metric, small_grid(numex.system))
        assert report.margins_max == report.worst_margin
        assert report.margins_min <= report.margins_mean <= report.margins_max
        assert report.passed == (report.worst_margin < -report.tolerance)

    def test_summary_lines_parse(self, numex):
        report = check_c1(numex.system, numex.metric, small_grid(numex.system))
        lines = report.summary_lines()
        keys = [line.split(":")[0] for line in lines]
        assert "condition" in keys and "pass" in keys and "worst_margin" in keys


class TestDualFlow:
    def test_linear_decay(self):
        # f = (-x1, -x2): adjoint flow p' = -p, V = |p|^2 e^{-2t}
        sys = SystemModel(2, 1, ["-x1", "-x2"], [["0"], ["1"]], [-5, -5], [5, 5])
        metric = MetricField(2, [["1", "0"], ["0", "1"]], 0.5, 1.5, 0.0)
        times = np.linspace(0.0, 2.0, 201)
        states = np.zeros((201, 2))
        out = dual_flow_diagnostic(sys, metric, times, states, [1.0, 2.0])
        assert np.allclose(out["V"], 5.0 * np.exp(-2.0 * times), rtol=1e-8)
        # y_p = (M B)^T p = p2
        assert np.allclose(out["y_p"][:, 0], 2.0 * np.exp(-times), rtol=1e-8)

    def test_zero_initial_adjoint(self, numex):
        times = np.linspace(0.0, 1.0, 11)
        states = np.tile(numex.reference.xd0, (11, 1))
        out = dual_flow_diagnostic(numex.system, numex.metric, times, states,
                                   [0.0, 0.0])
        assert np.max(np.abs(out["V"])) == 0.0
        assert np.max(np.abs(out["y_p"])) == 0.0

    def test_numex_adjoint_against_oracle(self, numex):
        # p0 = (3, -1) annihilates (M B)^T so y_p(0) = 0; the adjoint
        # flow then leaves that subspace and the diagnostic makes no
        # decay claim, so we check it against an independent integrator
        trace = generate_reference(numex.system, numex.reference, 10.0, 1e-2)
        out = dual_flow_diagnostic(numex.system, numex.metric, trace["t"],
                                   trace["xd"], [3.0, -1.0])
        assert abs(out["y_p"][0, 0]) <= 1e-12
        assert out["V"][0] == pytest.approx(3.0, abs=1e-12)
        assert np.all(np.isfinite(out["V"]))

        from ccmkit.integrate import rk45_integrate

        def coupled(t, y):
            xd, p = y[:2], y[2:]
            ud = numex.reference.eval_ud(t, xd)
            dxd = numex.system.eval_f(xd) + numex.system.eval_b(xd) @ ud
            return np.concatenate([dxd, numex.system.jac_f(xd).T @ p])

        y0 = np.concatenate([numex.reference.xd0, [3.0, -1.0]])
        _, oracle = rk45_integrate(coupled, y0, (0.0, 10.0),
                                   t_eval=np.array([0.0, 10.0]))
        p_end = oracle[-1, 2:]
        m_end = numex.metric.eval(trace["xd"][-1])
        assert out["V"][-1] == pytest.approx(float(p_end @ m_end @ p_end),
                                             rel=1e-4)

    def test_length_mismatch(self, numex):
        with pytest.raises(ValueError):
            dual_flow_diagnostic(numex.system, numex.metric,
                                 np.linspace(0, 1, 5), np.zeros((4, 2)), [1, 0])
