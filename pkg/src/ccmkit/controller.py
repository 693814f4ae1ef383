"""Tracking-gain synthesis and controller realizations.

The differential gain is damping injection along the detectable output
(MB)^T dx: K(x) = -[gamma(x) + gamma0] R(x) (M(x)B(x))^T with damping
matrix R = [(MB)^T MB]^-1. Three realizations turn the differential
gain into an actual feedback: an exact potential when the gain field is
curl-free, a geodesic path integral (see the geodesic module), and a
dynamic extension with an observer-like state z.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .integrate import rk4_step
from .linalg import SingularMatrixError, inverse, spectral_norm
from .model import state_vars

EXACTNESS_TOL = 1e-10
QUAD_NODES = 32


class SynthesisError(RuntimeError):
    pass


class ExactnessError(RuntimeError):
    pass


_GL_CACHE = {}


def gauss_legendre_01(n=QUAD_NODES):
    """Nodes/weights on [0, 1] (cached)."""
    if n not in _GL_CACHE:
        nodes, weights = np.polynomial.legendre.leggauss(n)
        _GL_CACHE[n] = (0.5 * (nodes + 1.0), 0.5 * weights)
    return _GL_CACHE[n]


@dataclass
class DampingParams:
    """r > 1/(2*lambda) and the extra damping gamma0 > 0.

    lambda0 = min(lambda - 1/(2r), 2/p_lo) is the rate the damping
    argument guarantees; reported as metadata, never asserted.
    """

    r: float
    gamma0: float
    lam: float

    def __post_init__(self):
        if self.gamma0 <= 0:
            raise SynthesisError("gamma0 must be positive")
        if self.lam <= 0 or 2.0 * self.r * self.lam <= 1.0:
            raise SynthesisError(
                f"need r > 1/(2*lambda): r={self.r:g}, lambda={self.lam:g}"
            )

    def lambda0(self, p_lo):
        return min(self.lam - 1.0 / (2.0 * self.r), 2.0 / p_lo)


def upsilon(metric, sys, x):
    """Norm bound used for the damping magnitude:
    || d_f M + (df/dx)^T M + M (df/dx) || (spectral norm)."""
    m_x = metric.eval(x)
    jac = sys.jac_f(x)
    return spectral_norm(metric.dir_deriv(x, sys.eval_f(x)) + jac.T @ m_x + m_x @ jac)


class GainField:
    """Differential gain K(x) in R^{m x n}; user-defined or synthesized."""

    def __init__(self, n, m, evaluator, exprs=None, constant_matrix=None, meta=None):
        self.n = n
        self.m = m
        self._evaluator = evaluator
        self.exprs = exprs  # m x n expression ASTs when symbolic
        self.entry_fns = None  # m x n compiled scalar callables when symbolic
        self.constant_matrix = constant_matrix
        self.meta = meta or {}
        self._dk_fn = None

    @classmethod
    def from_exprs(cls, n, m, entries):
        variables = state_vars(n)
        exprs = [
            [e if isinstance(e, ex.Expr) else ex.parse(e, variables) for e in row]
            for row in entries
        ]
        if len(exprs) != m or any(len(row) != n for row in exprs):
            raise SynthesisError(f"gain must be {m} x {n}")
        fns = [[ex.compile_fn(e, variables) for e in row] for row in exprs]

        def evaluator(x):
            return np.array([[fn(*x) for fn in row] for row in fns])

        constant = None
        if all(not ex.free_variables(e) for row in exprs for e in row):
            constant = evaluator(np.zeros(n))
        gain = cls(n, m, evaluator, exprs=exprs, constant_matrix=constant)
        gain.entry_fns = fns
        return gain

    @classmethod
    def constant(cls, matrix):
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        m, n = matrix.shape
        return cls(n, m, lambda x: matrix, constant_matrix=matrix)

    def __call__(self, x):
        if self.constant_matrix is not None:
            return self.constant_matrix
        return self._evaluator(np.asarray(x, dtype=float))

    def is_constant(self):
        return self.constant_matrix is not None

    def partial(self, x, axis, fd_step=1e-6):
        """dK/dx_axis; symbolic when expressions exist, else central FD."""
        if self.constant_matrix is not None:
            return np.zeros((self.m, self.n))
        if self.exprs is not None:
            if self._dk_fn is None:
                variables = state_vars(self.n)
                self._dk_fn = [
                    [
                        [
                            ex.compile_fn(ex.differentiate(e, v), variables)
                            for v in variables
                        ]
                        for e in row
                    ]
                    for row in self.exprs
                ]
            return np.array(
                [
                    [self._dk_fn[i][j][axis](*x) for j in range(self.n)]
                    for i in range(self.m)
                ]
            )
        x = np.asarray(x, dtype=float)
        step = np.zeros_like(x)
        step[axis] = fd_step
        return (self(x + step) - self(x - step)) / (2.0 * fd_step)


def synthesize_gain(sys, metric, params: DampingParams, gamma_const=None):
    """Damping-injection gain K(x) = -[gamma(x)+gamma0] R(x) (MB)^T.

    gamma(x) defaults to its minimal admissible value (r/p_lo) * Up(x)^2;
    gamma_const replaces it with a fixed constant (bounded-domain mode,
    gamma0 is then folded to zero).
    """
    if metric.role != "primal":
        raise SynthesisError("gain synthesis needs a primal metric")

    def direction(x):
        mb = metric.eval(x) @ sys.eval_b(x)
        try:
            damping = inverse(mb.T @ mb)
        except SingularMatrixError:
            raise SynthesisError(
                f"(MB)^T MB singular at x={x}: input matrix loses rank"
            )
        return damping @ mb.T

    if gamma_const is not None:

        def evaluator(x):
            return -gamma_const * direction(x)

        meta = {"gamma": f"const {gamma_const:g}", "gamma0": 0.0,
                "proviso": "constant gamma relies on a bounded operating domain"}
    else:
        scale = params.r / metric.p_lo

        def evaluator(x):
            gamma = scale * upsilon(metric, sys, x) ** 2
            return -(gamma + params.gamma0) * direction(x)

        meta = {"gamma": f"(r/p_lo)*upsilon(x)^2 with r={params.r:g}",
                "gamma0": params.gamma0}

    meta["lambda0"] = params.lambda0(metric.p_lo)
    gain = GainField(sys.n, sys.m, evaluator, meta=meta)
    if metric.constant and sys.b_constant and gamma_const is not None:
        gain.constant_matrix = evaluator(np.zeros(sys.n))
    return gain


def exactness_residual(gain, grid, fd_step=1e-6):
    """Mixed-partials integrability defect of the gain field.

    Returns (max residual, witness state); zero means dK is symmetric in
    every input row, so a potential exists.
    """
    if gain.is_constant():
        lo = np.asarray(grid.lo)
        return 0.0, 0.5 * (lo + np.asarray(grid.hi))
    worst = 0.0
    witness = None
    partials = [None] * gain.n
    for x in grid.points():
        for j in range(gain.n):
            partials[j] = gain.partial(x, j, fd_step)
        for i in range(gain.n):
            for j in range(i + 1, gain.n):
                residual = float(np.max(np.abs(partials[j][:, i] - partials[i][:, j])))
                if residual > worst:
                    worst = residual
                    witness = x
    return worst, witness


def radial_potential(gain, x, nodes=QUAD_NODES):
    """beta(x) = integral_0^1 K(s x) x ds via Gauss-Legendre."""
    x = np.asarray(x, dtype=float)
    if gain.is_constant():
        return gain.constant_matrix @ x
    points, weights = gauss_legendre_01(nodes)
    out = np.zeros(gain.m)
    for s, w in zip(points, weights):
        out += w * (gain(s * x) @ x)
    return out


def static_exact_controller(gain, x, x_d, u_d, residual=None, grid=None,
                            tol=EXACTNESS_TOL):
    """u = u_d + beta(x) - beta(x_d); requires a curl-free gain field.

    Pass either a precomputed exactness residual or a grid to measure it.
    """
    if residual is None:
        if gain.is_constant():
            residual = 0.0
        elif grid is not None:
            residual, _ = exactness_residual(gain, grid)
        else:
            raise ExactnessError("provide an exactness residual or a grid")
    if residual > tol:
        raise ExactnessError(
            f"gain field is not exact (residual {residual:g} > {tol:g}); "
            "use the dynamic-extension or geodesic controller"
        )
    return np.asarray(u_d, dtype=float) + radial_potential(gain, x) - radial_potential(gain, x_d)


def dynext_beta(gain, x, z, nodes=QUAD_NODES):
    """Mixed-coordinate potential of the dynamic extension.

    beta(x, z) = sum_i integral_0^{x_i} K_col_i(z_1,..,mu,..,z_n) dmu
    with mu in the i-th slot; each 1-D integral by Gauss-Legendre.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if gain.is_constant():
        return gain.constant_matrix @ x
    points, weights = gauss_legendre_01(nodes)
    if gain.entry_fns is not None:
        # scalar fast path: stay in Python floats inside the hot loop
        args = [float(v) for v in z]
        out = [0.0] * gain.m
        for i in range(gain.n):
            xi = float(x[i])
            if xi == 0.0:
                continue
            column = [gain.entry_fns[r][i] for r in range(gain.m)]
            acc = [0.0] * gain.m
            for s, w in zip(points, weights):
                args[i] = s * xi
                for r, fn in enumerate(column):
                    acc[r] += w * fn(*args)
            for r in range(gain.m):
                out[r] += xi * acc[r]
            args[i] = float(z[i])
        return np.array(out)
    out = np.zeros(gain.m)
    arg = z.copy()
    for i in range(gain.n):
        if x[i] == 0.0:
            continue
        acc = np.zeros(gain.m)
        for s, w in zip(points, weights):
            arg[i] = s * x[i]
            acc += w * gain(arg)[:, i]
        out += x[i] * acc
        arg[i] = z[i]
    return out


def khat(gain, x, z):
    """dbeta/dx(x, z): column i of K evaluated with x_i in slot i and z
    elsewhere. khat(x, x) = K(x)."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    out = np.empty((gain.m, gain.n))
    arg = z.copy()
    for i in range(gain.n):
        arg[i] = x[i]
        out[:, i] = gain(arg)[:, i]
        arg[i] = z[i]
    return out


@dataclass
class DynExtState:
    """Observer-like state of the dynamic extension; single-owner mutable."""

    z: np.ndarray
    ell: float

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        if self.ell <= 0:
            raise SynthesisError("ell must be positive")


def dynext_control(gain, z, x, x_d, u_d, nodes=QUAD_NODES):
    """u = u_d + beta(x, z) - beta(x_d, z) with the current z."""
    return (
        np.asarray(u_d, dtype=float)
        + dynext_beta(gain, x, z, nodes)
        - dynext_beta(gain, x_d, z, nodes)
    )


def dynext_controller_step(gain, state: DynExtState, sys, x, x_d, u_d, t, h):
    """Compute u from the current z, then advance z one RK4 step of
    z' = f(x) + B(x) u - ell (z - x) with x and u held over the step."""
    u = dynext_control(gain, state.z, x, x_d, u_d)
    fx = sys.eval_f(x)
    bx = sys.eval_b(x)

    def field_fn(_t, z):
        return fx + bx @ u - state.ell * (z - x)

    state.z = rk4_step(field_fn, state.z, t, h)
    return u, state.z
