"""Grid-based numerical checks of contraction-metric conditions.

Four conditions are checked over a sampled domain box: the primal
contraction condition (with certified rate), the metric-invariance PDE
along input columns, the dual-metric form projected by the input
annihilator, and the robust block condition. A dual-flow diagnostic
integrates the adjoint variable along a trajectory as a sanity
instrument (no pass/fail).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .integrate import rk4_step
from .linalg import generalized_sym_eig, null_space_basis, sym_eig

DEFAULT_TOL = 1e-8
DEFAULT_POINTS_PER_AXIS = 21
MAX_GRID_POINTS = 10**6


class CertificateError(RuntimeError):
    pass


@dataclass
class Grid:
    """Uniform sample grid over a domain box, iterated row-major."""

    lo: np.ndarray
    hi: np.ndarray
    counts: tuple

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        self.counts = tuple(int(c) for c in self.counts)
        if any(c < 2 for c in self.counts):
            raise ValueError("need at least 2 samples per axis")
        total = int(np.prod(self.counts))
        if total > MAX_GRID_POINTS:
            raise ValueError(f"grid has {total} points, cap is {MAX_GRID_POINTS}")

    @classmethod
    def for_system(cls, sys, points_per_axis=DEFAULT_POINTS_PER_AXIS):
        return cls(sys.domain_lo, sys.domain_hi, (points_per_axis,) * sys.n)

    def axes(self):
        return [
            np.linspace(self.lo[i], self.hi[i], self.counts[i])
            for i in range(len(self.counts))
        ]

    def points(self):
        for combo in itertools.product(*self.axes()):
            yield np.array(combo)

    def __len__(self):
        return int(np.prod(self.counts))


@dataclass
class CertificateReport:
    condition: str
    passed: bool
    worst_margin: float
    witness_state: np.ndarray = None
    witness_direction: np.ndarray = None
    tolerance: float = DEFAULT_TOL
    certified_rate: float = None
    margins_mean: float = None
    margins_max: float = None
    margins_min: float = None
    details: dict = field(default_factory=dict)

    def summary_lines(self):
        lines = [
            f"condition: {self.condition}",
            f"pass: {self.passed}",
            f"worst_margin: {self.worst_margin:.12g}",
            f"tolerance: {self.tolerance:.3g}",
        ]
        if self.certified_rate is not None:
            lines.append(f"certified_rate: {self.certified_rate:.12g}")
        if self.witness_state is not None:
            lines.append(
                "witness_state: " + " ".join(f"{v:.9g}" for v in self.witness_state)
            )
        if self.witness_direction is not None:
            lines.append(
                "witness_direction: "
                + " ".join(f"{v:.9g}" for v in self.witness_direction)
            )
        if self.margins_min is not None:
            lines.append(
                f"margin_stats: min={self.margins_min:.9g} "
                f"mean={self.margins_mean:.9g} max={self.margins_max:.9g}"
            )
        for key, value in self.details.items():
            lines.append(f"{key}: {value}")
        return lines


def _finish(condition, margins, witnesses, passed, tol, **kwargs):
    margins = np.asarray(margins)
    worst = int(np.argmax(margins))
    state, direction = witnesses[worst]
    return CertificateReport(
        condition=condition,
        passed=passed,
        worst_margin=float(margins[worst]),
        witness_state=state,
        witness_direction=direction,
        tolerance=tol,
        margins_mean=float(margins.mean()),
        margins_max=float(margins.max()),
        margins_min=float(margins.min()),
        **kwargs,
    )


def _check_metric_bounds(metric, x, m_x, tol=1e-9):
    w, _ = sym_eig(m_x)
    if w[0] < metric.p_lo - tol or w[-1] > metric.p_hi + tol:
        raise CertificateError(
            f"metric eigenvalue bounds violated at x={x}: "
            f"eigs in [{w[0]:.6g}, {w[-1]:.6g}], "
            f"declared [{metric.p_lo:g}, {metric.p_hi:g}]"
        )


def contraction_quadratic(sys, metric, x):
    """Symmetrized contraction matrix sym(d_f M + 2 M df/dx) at x."""
    m_x = metric.eval(x)
    jac = sys.jac_f(x)
    dm_f = metric.dir_deriv(x, sys.eval_f(x))
    return dm_f + m_x @ jac + jac.T @ m_x, m_x


def check_killing_pde(sys, metric, grid, tol=DEFAULT_TOL):
    """Residual of d_{B_i} M + (dB_i/dx)^T M + M (dB_i/dx) = 0 per column."""
    if metric.role != "primal":
        raise CertificateError("Killing check needs a primal metric")
    margins = []
    witnesses = []
    for x in grid.points():
        m_x = metric.eval(x)
        worst = 0.0
        for j in range(sys.m):
            b_col = np.zeros(sys.n)
            b_col[:] = sys.eval_b(x)[:, j]
            dbj = sys.jac_b_col(x, j)
            residual = metric.dir_deriv(x, b_col) + dbj.T @ m_x + m_x @ dbj
            worst = max(worst, float(np.max(np.abs(residual))))
        margins.append(worst)
        witnesses.append((x, None))
    passed = max(margins) <= tol
    return _finish("killing_pde", margins, witnesses, passed, tol)


def check_c1(sys, metric, grid, tol=DEFAULT_TOL, rate=None):
    """Primal contraction condition restricted to the annihilator of (MB)^T.

    Margin at x is the largest generalized eigenvalue of
    (N^T Q N, N^T M N) with N the null basis of (M(x)B(x))^T and
    Q = sym(d_f M + 2 M df/dx). The certified rate is -worst_margin.
    Pass criterion: worst_margin < -tol (asymptotic) or
    worst_margin <= -rate + tol when a rate is requested.
    """
    if metric.role != "primal":
        raise CertificateError("C1 check needs a primal metric")
    if metric.p_lo <= 0:
        raise CertificateError("C1 check needs p_lo > 0")
    margins = []
    witnesses = []
    for x in grid.points():
        q, m_x = contraction_quadratic(sys, metric, x)
        _check_metric_bounds(metric, x, m_x)
        basis = null_space_basis((m_x @ sys.eval_b(x)).T)
        if basis.shape[1] == 0:
            margins.append(-np.inf)
            witnesses.append((x, None))
            continue
        nmn = basis.T @ m_x @ basis
        try:
            w, vecs = generalized_sym_eig(basis.T @ q @ basis, nmn)
        except Exception as err:
            raise CertificateError(f"metric bound violation at x={x}: {err}")
        margins.append(float(w[-1]))
        witnesses.append((x, basis @ vecs[:, -1]))
    worst = max(margins)
    certified = -worst
    if rate is not None:
        passed = worst <= -rate + tol
    else:
        passed = worst < -tol
    report = _finish("c1", margins, witnesses, passed, tol, certified_rate=certified)
    report.details["requested_rate"] = metric.lam if rate is None else rate
    return report


def check_dual_w(sys, w_metric, grid, tol=DEFAULT_TOL):
    """Dual-metric conditions projected by the input annihilator.

    (a) largest eigenvalue of B_perp^T (d_f W + J W + W J^T) B_perp must
    be strictly negative; (b) Killing residual in W-form must vanish.
    """
    if w_metric.role != "dual":
        raise CertificateError("dual-W check needs a metric with role=dual")
    margins = []
    witnesses = []
    killing_worst = 0.0
    for x in grid.points():
        w_x = w_metric.eval(x)
        jac = sys.jac_f(x)
        b = sys.eval_b(x)
        flow = w_metric.dir_deriv(x, sys.eval_f(x)) + jac @ w_x + w_x @ jac.T
        b_perp = null_space_basis(b.T)
        if b_perp.shape[1] == 0:
            margins.append(-np.inf)
            witnesses.append((x, None))
        else:
            w_eigs, vecs = sym_eig(b_perp.T @ flow @ b_perp)
            margins.append(float(w_eigs[-1]))
            witnesses.append((x, b_perp @ vecs[:, -1]))
        for j in range(sys.m):
            dbj = sys.jac_b_col(x, j)
            residual = (
                w_metric.dir_deriv(x, b[:, j]) - dbj @ w_x - w_x @ dbj.T
            )
            killing_worst = max(killing_worst, float(np.max(np.abs(residual))))
    passed = max(margins) < -tol and killing_worst <= tol
    report = _finish("dual_w", margins, witnesses, passed, tol)
    report.details["killing_residual"] = killing_worst
    return report


def check_robust(sys, metric, grid, lam, gamma0, tol=DEFAULT_TOL, lambda_form="identity"):
    """Robust block condition on the doubled state space.

    The (1,1) block is Q + lam*I as displayed, or Q + lam*M when
    lambda_form="metric"; the test direction is restricted to
    blockdiag(N, I_n) with N the null basis of (MB)^T.
    """
    if metric.role != "primal":
        raise CertificateError("robust check needs a primal metric")
    if lam < 0 or gamma0 <= 0:
        raise CertificateError("need lam >= 0 and gamma0 > 0")
    if lambda_form not in ("identity", "metric"):
        raise CertificateError(f"unknown lambda_form {lambda_form!r}")
    n = sys.n
    margins = []
    witnesses = []
    for x in grid.points():
        q, m_x = contraction_quadratic(sys, metric, x)
        shift = lam * np.eye(n) if lambda_form == "identity" else lam * m_x
        big = np.block([[q + shift, m_x], [m_x, -gamma0 * np.eye(n)]])
        basis = null_space_basis((m_x @ sys.eval_b(x)).T)
        k = basis.shape[1]
        restricted = np.zeros((2 * n, k + n))
        restricted[:n, :k] = basis
        restricted[n:, k:] = np.eye(n)
        w, vecs = sym_eig(restricted.T @ big @ restricted)
        margins.append(float(w[-1]))
        witnesses.append((x, restricted @ vecs[:, -1]))
    passed = max(margins) < -tol
    report = _finish("robust", margins, witnesses, passed, tol)
    report.details["lambda"] = lam
    report.details["gamma0"] = gamma0
    report.details["lambda_form"] = lambda_form
    return report


def min_feasible_gamma0(sys, metric, grid, lam, tol=DEFAULT_TOL,
                        lambda_form="identity", hi=1e6, iters=60):
    """Bisect the smallest gamma0 for which check_robust passes.

    Returns (gamma0_min, report at gamma0_min) or (None, failing report)
    when even `hi` fails.
    """
    report_hi = check_robust(sys, metric, grid, lam, hi, tol, lambda_form)
    if not report_hi.passed:
        return None, report_hi
    lo = 0.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid <= 0.0:
            break
        if check_robust(sys, metric, grid, lam, mid, tol, lambda_form).passed:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-9 * max(hi, 1.0):
            break
    report = check_robust(sys, metric, grid, lam, hi, tol, lambda_form)
    report.details["gamma0_min"] = hi
    return hi, report


def dual_flow_diagnostic(sys, metric, times, states, p0):
    """Integrate the adjoint flow p' = (df/dx)^T p along a state trace.

    Returns dict with V(t) = p^T M(x) p and the detectability output
    y_p = (M B)^T p on the same time grid. Diagnostic only.
    """
    times = np.asarray(times, dtype=float)
    states = np.asarray(states, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    if times.ndim != 1 or states.shape[0] != times.size:
        raise ValueError("trace and time grid lengths differ")
    if not np.all(np.isfinite(p0)):
        raise ValueError("p0 must be finite")

    def x_at(t):
        # linear interpolation between trace samples for RK4 inner stages
        idx = np.searchsorted(times, t, side="right") - 1
        idx = min(max(idx, 0), times.size - 2)
        t0, t1 = times[idx], times[idx + 1]
        frac = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
        return (1 - frac) * states[idx] + frac * states[idx + 1]

    def field_fn(t, p):
        return sys.jac_f(x_at(t)).T @ p

    p = p0.copy()
    v_series = np.empty(times.size)
    y_series = np.empty((times.size, sys.m))
    for k, t in enumerate(times):
        x = states[k]
        m_x = metric.eval(x)
        v_series[k] = float(p @ m_x @ p)
        y_series[k] = (m_x @ sys.eval_b(x)).T @ p
        if k + 1 < times.size:
            p = rk4_step(field_fn, p, t, times[k + 1] - t)
    return {"t": times, "V": v_series, "y_p": y_series}
