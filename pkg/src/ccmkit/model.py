"""Control-affine system models, candidate metrics and reference specs.

Everything is defined through scalar expression ASTs so that all the
Jacobians and metric derivatives consumed by the certificate checks and
the controller synthesis come from exact symbolic differentiation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .integrate import IntegrationError, rk4_step

DIVERGENCE_LIMIT = 1e9


class ModelError(ValueError):
    pass


def state_vars(n):
    return [f"x{i + 1}" for i in range(n)]


def _parse_entry(text, variables):
    if isinstance(text, ex.Expr):
        return text
    return ex.parse(text, variables)


class SystemModel:
    """x' = f(x) + B(x) u on an axis-aligned domain box."""

    def __init__(self, n, m, f_exprs, b_exprs, domain_lo, domain_hi, name=""):
        if m >= n:
            raise ModelError(f"need m < n, got n={n}, m={m}")
        self.n = int(n)
        self.m = int(m)
        self.name = name
        self.vars = state_vars(n)
        self.f_exprs = [_parse_entry(e, self.vars) for e in f_exprs]
        self.b_exprs = [[_parse_entry(e, self.vars) for e in row] for row in b_exprs]
        if len(self.f_exprs) != n or len(self.b_exprs) != n:
            raise ModelError("f must have n entries and B must have n rows")
        if any(len(row) != m for row in self.b_exprs):
            raise ModelError("B must have m columns")
        self.domain_lo = np.asarray(domain_lo, dtype=float)
        self.domain_hi = np.asarray(domain_hi, dtype=float)
        if self.domain_lo.shape != (n,) or self.domain_hi.shape != (n,):
            raise ModelError("domain bounds must have n entries")
        if np.any(self.domain_lo >= self.domain_hi):
            raise ModelError("domain box must have positive extent")

        self.df_exprs = [
            [ex.differentiate(fi, v) for v in self.vars] for fi in self.f_exprs
        ]
        self.db_exprs = [
            [[ex.differentiate(bij, v) for v in self.vars] for bij in row]
            for row in self.b_exprs
        ]
        self._f_fn = [ex.compile_fn(e, self.vars) for e in self.f_exprs]
        self._b_fn = [[ex.compile_fn(e, self.vars) for e in row] for row in self.b_exprs]
        self._df_fn = [[ex.compile_fn(e, self.vars) for e in row] for row in self.df_exprs]
        self._db_fn = [
            [[ex.compile_fn(e, self.vars) for e in col] for col in row]
            for row in self.db_exprs
        ]
        self.b_constant = all(
            not ex.free_variables(e) for row in self.b_exprs for e in row
        )

    def in_domain(self, x):
        return bool(np.all(x >= self.domain_lo - 1e-12) and np.all(x <= self.domain_hi + 1e-12))

    def eval_f(self, x):
        return np.array([fn(*x) for fn in self._f_fn])

    def eval_b(self, x):
        return np.array([[fn(*x) for fn in row] for row in self._b_fn])

    def jac_f(self, x):
        """Jacobian of the drift, (i, j) entry = d f_i / d x_j."""
        return np.array([[fn(*x) for fn in row] for row in self._df_fn])

    def jac_b_col(self, x, j):
        """Jacobian of the j-th column of B, (i, k) entry = d B_ij / d x_k."""
        return np.array([[fn(*x) for fn in self._db_fn[i][j]] for i in range(self.n)])

    def a_matrix(self, x, u):
        """Differential-dynamics matrix: jac_f + sum_j u_j * d(B col j)/dx."""
        u = np.asarray(u, dtype=float)
        a = self.jac_f(x)
        if not self.b_constant:
            for j in range(self.m):
                if u[j] != 0.0:
                    a = a + u[j] * self.jac_b_col(x, j)
        return a


class MetricField:
    """Symmetric state-dependent metric with eigenvalue bounds and rate.

    role is "primal" (M itself) or "dual" (W = M^-1). The upper triangle
    of the given entries is mirrored so symmetry is exact.
    """

    def __init__(self, n, m_exprs, p_lo, p_hi, lam, role="primal"):
        if role not in ("primal", "dual"):
            raise ModelError(f"metric role must be primal or dual, got {role!r}")
        if p_lo <= 0 or p_hi < p_lo:
            raise ModelError("need 0 < p_lo <= p_hi")
        if lam < 0:
            raise ModelError("contraction rate must be nonnegative")
        self.n = int(n)
        self.role = role
        self.p_lo = float(p_lo)
        self.p_hi = float(p_hi)
        self.lam = float(lam)
        self.vars = state_vars(n)
        parsed = [[_parse_entry(e, self.vars) for e in row] for row in m_exprs]
        if len(parsed) != n or any(len(row) != n for row in parsed):
            raise ModelError("metric must be n x n")
        # mirror the upper triangle so M(x) = M(x)^T holds exactly
        self.m_exprs = [
            [parsed[i][j] if i <= j else parsed[j][i] for j in range(n)]
            for i in range(n)
        ]
        self.dm_exprs = [
            [[ex.differentiate(mij, v) for v in self.vars] for mij in row]
            for row in self.m_exprs
        ]
        self._m_fn = [[ex.compile_fn(e, self.vars) for e in row] for row in self.m_exprs]
        self._dm_fn = [
            [[ex.compile_fn(e, self.vars) for e in col] for col in row]
            for row in self.dm_exprs
        ]
        self.constant = all(not ex.free_variables(e) for row in self.m_exprs for e in row)

    def eval(self, x):
        return np.array([[fn(*x) for fn in row] for row in self._m_fn])

    def partial(self, x, k):
        """d M / d x_k, entrywise."""
        return np.array(
            [[self._dm_fn[i][j][k](*x) for j in range(self.n)] for i in range(self.n)]
        )

    def dir_deriv(self, x, v):
        """Directional derivative sum_k v_k dM/dx_k."""
        v = np.asarray(v, dtype=float)
        out = np.zeros((self.n, self.n))
        if self.constant:
            return out
        for k in range(self.n):
            if v[k] != 0.0:
                out += v[k] * self.partial(x, k)
        return out


@dataclass
class ReferenceSpec:
    """Target initial state plus feedforward expressions over {t, xd1..xdn}."""

    xd0: np.ndarray
    ud_exprs: list
    _ud_fn: list = field(default=None, repr=False)

    @classmethod
    def from_strings(cls, n, xd0, ud_texts):
        variables = ["t"] + [f"xd{i + 1}" for i in range(n)]
        exprs = [_parse_entry(s, variables) for s in ud_texts]
        return cls(np.asarray(xd0, dtype=float), exprs)

    def ud_fns(self, n):
        if self._ud_fn is None:
            variables = ["t"] + [f"xd{i + 1}" for i in range(n)]
            self._ud_fn = [ex.compile_fn(e, variables) for e in self.ud_exprs]
        return self._ud_fn

    def eval_ud(self, t, xd):
        return np.array([fn(t, *xd) for fn in self.ud_fns(len(xd))])


def generate_reference(sys, ref, T, h):
    """Integrate the target dynamics xd' = f(xd) + B(xd) ud(t, xd).

    Returns dict with keys t, xd, ud (arrays); flags domain violations.
    """
    if T <= 0 or h <= 0:
        raise ValueError("need T > 0 and h > 0")

    def field_fn(t, xd):
        if np.max(np.abs(xd)) > DIVERGENCE_LIMIT:
            raise IntegrationError("reference diverged (forward completeness)", t)
        ud = ref.eval_ud(t, xd)
        return sys.eval_f(xd) + sys.eval_b(xd) @ ud

    n_steps = int(round(T / h))
    times = h * np.arange(n_steps + 1)
    xd = np.empty((n_steps + 1, sys.n))
    ud = np.empty((n_steps + 1, sys.m))
    xd[0] = ref.xd0
    violations = []
    for k in range(n_steps):
        ud[k] = ref.eval_ud(times[k], xd[k])
        xd[k + 1] = rk4_step(field_fn, xd[k], times[k], h)
        if not sys.in_domain(xd[k + 1]):
            violations.append(times[k + 1])
    ud[-1] = ref.eval_ud(times[-1], xd[-1])
    if violations:
        warnings.warn(
            f"reference leaves the domain box at t = {violations[0]:g} "
            f"({len(violations)} samples)",
            stacklevel=2,
        )
    return {"t": times, "xd": xd, "ud": ud, "domain_violations": violations}


@dataclass
class BuiltinBundle:
    system: SystemModel
    metric: MetricField          # primal, role-checked
    dual_metric: MetricField     # W = M^-1 where available
    reference: ReferenceSpec
    builtin_gain: list             # m x n expression strings, or None
    gamma_const: float | None = None
    notes: str = ""


def _numex():
    # planar system: x1' = x2^3/3 + x2, x2' = -x2 + u
    system = SystemModel(
        n=2,
        m=1,
        f_exprs=["(1/3)*x2^3 + x2", "-x2"],
        b_exprs=[["0"], ["1"]],
        domain_lo=[-6.0, -6.0],
        domain_hi=[6.0, 6.0],
        name="numex",
    )
    # The matrix [[3,-1],[-1,2]] satisfies the dual-form condition; its
    # inverse (1/5)[[2,1],[1,3]] is the primal metric. Eigenvalues of the
    # primal are (1 -+ 1/sqrt(5))/2, bounds below are slightly loosened.
    metric = MetricField(
        2,
        [["2/5", "1/5"], ["1/5", "3/5"]],
        p_lo=0.27,
        p_hi=0.73,
        lam=2.0 / 3.0,
        role="primal",
    )
    dual = MetricField(
        2,
        [["3", "-1"], ["-1", "2"]],
        p_lo=1.3,
        p_hi=3.7,
        lam=2.0 / 3.0,
        role="dual",
    )
    reference = ReferenceSpec.from_strings(
        2, [3.0, -1.0], ["sin(t) - cos(t)^2 * xd1"]
    )
    return BuiltinBundle(
        system=system,
        metric=metric,
        dual_metric=dual,
        reference=reference,
        builtin_gain=[["-(x2^2 + 1)", "-x2^2"]],
        notes="planar cubic system; x0 = (-5, 2), z0 = (0, 0), ell = 5",
    )


def _microactuator():
    # electrostatic microactuator, normalized parameters
    # m = 1, k = 1, b = 2, R = 1, A = 3, eps = 1/2 (so R*A*eps = 3/2)
    # state (x1, x2, x3) = (air gap q, momentum p, charge Q)
    system = SystemModel(
        n=3,
        m=1,
        f_exprs=[
            "x2",
            "-(x1 - 1) - x3^2/3 - 2*x2",
            "-(2/3)*x1*x3",
        ],
        b_exprs=[["0"], ["0"], ["1"]],
        domain_lo=[0.0, -3.0, -0.5],
        domain_hi=[2.0, 3.0, 3.0],
        name="microactuator",
    )
    # inverse of the feasible dual solution blockdiag([[3/2,-1/2],[-1/2,1/2]], 1)
    metric = MetricField(
        3,
        [["1", "1", "0"], ["1", "3", "0"], ["0", "0", "1"]],
        p_lo=0.58,
        p_hi=3.42,
        lam=0.5,
        role="primal",
    )
    dual = MetricField(
        3,
        [["3/2", "-1/2", "0"], ["-1/2", "1/2", "0"], ["0", "0", "1"]],
        p_lo=0.29,
        p_hi=1.71,
        lam=0.5,
        role="dual",
    )
    reference = ReferenceSpec.from_strings(
        3, [0.2, 0.0, 0.0], ["abs(sin(t/5) + cos(t))*0.5"]
    )
    return BuiltinBundle(
        system=system,
        metric=metric,
        dual_metric=dual,
        reference=reference,
        builtin_gain=[["0", "0", "-2"]],
        gamma_const=2.0,
        notes="charge-controlled microactuator; x0 = (1.5, 1, 2), gamma fixed at 2",
    )


_BUILTINS = {"numex": _numex, "microactuator": _microactuator}


def builtin_names():
    return sorted(_BUILTINS)


def builtin(name):
    try:
        factory = _BUILTINS[name]
    except KeyError:
        raise ModelError(
            f"unknown builtin {name!r}; available: {', '.join(builtin_names())}"
        )
    return factory()
