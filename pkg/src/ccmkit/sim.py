"""Closed-loop simulation of plant + reference (+ observer state z).

Plant, reference and z are integrated as one coupled RK4 state vector so
there is no interpolation skew between them. The feedforward u_d(t, x_d)
is evaluated at every RK4 stage; the feedback correction is evaluated at
every stage for cheap controllers (static, custom) and held constant
over the step (zero-order hold) for the geodesic and dynamic-extension
kinds, whose per-evaluation cost dominates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .controller import dynext_beta, exactness_residual, radial_potential
from .geodesic import GeodesicError, solve_geodesic
from .model import state_vars

DIVERGENCE_LIMIT = 1e9
CONTROLLER_KINDS = ("static", "dynext", "geodesic", "custom")


class SimulationError(RuntimeError):
    pass


@dataclass
class RunConfig:
    kind: str = "dynext"
    T: float = 20.0
    h: float = 1e-3
    x0: np.ndarray = None
    z0: np.ndarray = None
    ell: float = 5.0
    geodesic_segments: int = 32
    custom_u: list = None      # m expressions over {t, x*, xd*, z*}
    exactness_grid: object = None
    err_threshold: float = 1e-2

    def __post_init__(self):
        if self.kind not in CONTROLLER_KINDS:
            raise SimulationError(f"unknown controller kind {self.kind!r}")
        if self.T <= 0 or self.h <= 0:
            raise SimulationError("need T > 0 and h > 0")
        if self.T / self.h > 1e7:
            raise SimulationError("T/h exceeds the 1e7 step cap")


@dataclass
class SimTrace:
    t: np.ndarray
    x: np.ndarray
    xd: np.ndarray
    u: np.ndarray
    ud: np.ndarray
    err: np.ndarray
    z: np.ndarray = None
    flags: list = field(default_factory=list)
    completed: bool = True

    def final_err(self):
        return float(self.err[-1])

    def columns(self):
        n = self.x.shape[1]
        m = self.u.shape[1]
        names = ["t"]
        names += [f"x{i + 1}" for i in range(n)]
        names += [f"xd{i + 1}" for i in range(n)]
        if self.z is not None:
            names += [f"z{i + 1}" for i in range(n)]
        names += [f"u{i + 1}" for i in range(m)]
        names += [f"ud{i + 1}" for i in range(m)]
        names.append("err")
        blocks = [self.t[:, None], self.x, self.xd]
        if self.z is not None:
            blocks.append(self.z)
        blocks += [self.u, self.ud, self.err[:, None]]
        return names, np.hstack(blocks)

    def write_csv(self, stream):
        names, data = self.columns()
        stream.write(",".join(names) + "\n")
        for row in data:
            stream.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _custom_controller_fn(sys, exprs):
    variables = (
        ["t"]
        + state_vars(sys.n)
        + [f"xd{i + 1}" for i in range(sys.n)]
        + [f"z{i + 1}" for i in range(sys.n)]
    )
    parsed = [e if isinstance(e, ex.Expr) else ex.parse(e, variables) for e in exprs]
    if len(parsed) != sys.m:
        raise SimulationError(f"custom controller needs {sys.m} expressions")
    fns = [ex.compile_fn(e, variables) for e in parsed]

    def control(t, x, xd, z):
        args = (t, *x, *xd, *z)
        return np.array([fn(*args) for fn in fns])

    return control


def run_closed_loop(sys, metric, gain, ref, cfg: RunConfig):
    """Simulate tracking of the reference under the configured controller.

    Failures (divergence, NaN, geodesic breakdown) truncate the trace and
    set a flag instead of raising, so sweeps survive bad samples.
    """
    n, m = sys.n, sys.m
    x0 = np.asarray(cfg.x0 if cfg.x0 is not None else ref.xd0, dtype=float)
    xd0 = np.asarray(ref.xd0, dtype=float)
    use_z = cfg.kind in ("dynext", "custom")
    z0 = np.asarray(cfg.z0 if cfg.z0 is not None else xd0, dtype=float)

    static_residual = None
    if cfg.kind == "static":
        if gain.is_constant():
            static_residual = 0.0
        elif cfg.exactness_grid is not None:
            static_residual, witness = exactness_residual(gain, cfg.exactness_grid)
            if static_residual > 1e-10:
                raise SimulationError(
                    f"static controller needs an exact gain: residual "
                    f"{static_residual:g} at x={witness}; use dynext or geodesic"
                )
        else:
            raise SimulationError(
                "static controller on a non-constant gain needs exactness_grid"
            )
    custom_fn = None
    if cfg.kind == "custom":
        if not cfg.custom_u:
            raise SimulationError("custom controller needs expressions")
        custom_fn = _custom_controller_fn(sys, cfg.custom_u)

    n_steps = int(round(cfg.T / cfg.h))
    times = cfg.h * np.arange(n_steps + 1)
    xs = np.empty((n_steps + 1, n))
    xds = np.empty((n_steps + 1, n))
    zs = np.empty((n_steps + 1, n)) if use_z else None
    us = np.empty((n_steps + 1, m))
    uds = np.empty((n_steps + 1, m))
    xs[0], xds[0] = x0, xd0
    if use_z:
        zs[0] = z0

    flags = []
    completed = True
    warm_path = None
    last = n_steps

    def stage_correction(t, x, xd, z, frozen):
        if cfg.kind == "static":
            return radial_potential(gain, x) - radial_potential(gain, xd)
        if cfg.kind == "custom":
            return None  # custom defines u in full
        return frozen

    state = np.concatenate([x0, xd0, z0] if use_z else [x0, xd0])

    for k in range(n_steps + 1):
        t = times[k]
        x = state[:n]
        xd = state[n : 2 * n]
        z = state[2 * n :] if use_z else None
        xs[k], xds[k] = x, xd
        if use_z:
            zs[k] = z
        ud_k = ref.eval_ud(t, xd)
        uds[k] = ud_k

        # per-step feedback correction (ZOH for geodesic / dynext)
        frozen = None
        try:
            if cfg.kind == "dynext":
                frozen = dynext_beta(gain, x, z) - dynext_beta(gain, xd, z)
            elif cfg.kind == "geodesic":
                path = solve_geodesic(
                    metric, xd, x, cfg.geodesic_segments, init=None
                    if warm_path is None else warm_path.nodes,
                )
                if not path.converged:
                    raise GeodesicError("geodesic solve did not converge")
                warm_path = path
                if gain.is_constant():
                    frozen = gain.constant_matrix @ (x - xd)
                else:
                    frozen = np.zeros(m)
                    mids = path.midpoints()
                    for seg, delta in enumerate(path.tangents()):
                        frozen += gain(mids[seg]) @ delta
            if cfg.kind == "custom":
                us[k] = custom_fn(t, x, xd, z)
            else:
                corr = stage_correction(t, x, xd, z, frozen)
                us[k] = ud_k + corr
        except (GeodesicError, ArithmeticError, ValueError) as err:
            flags.append(f"controller failure at t={t:g}: {err}")
            completed = False
            last = k
            break

        if k == n_steps:
            break

        def rhs(tau, y):
            xx = y[:n]
            xxd = y[n : 2 * n]
            zz = y[2 * n :] if use_z else None
            ud_s = ref.eval_ud(tau, xxd)
            if cfg.kind == "custom":
                uu = custom_fn(tau, xx, xxd, zz)
            else:
                corr = stage_correction(tau, xx, xxd, zz, frozen)
                uu = ud_s + corr
            fx = sys.eval_f(xx) + sys.eval_b(xx) @ uu
            fxd = sys.eval_f(xxd) + sys.eval_b(xxd) @ ud_s
            if not use_z:
                return np.concatenate([fx, fxd])
            fz = fx - cfg.ell * (zz - xx)
            return np.concatenate([fx, fxd, fz])

        try:
            h = cfg.h
            k1 = rhs(t, state)
            k2 = rhs(t + 0.5 * h, state + 0.5 * h * k1)
            k3 = rhs(t + 0.5 * h, state + 0.5 * h * k2)
            k4 = rhs(t + h, state + h * k3)
            state = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        except (ArithmeticError, ValueError) as err:
            flags.append(f"numerical failure at t={t:g}: {err}")
            completed = False
            last = k
            break
        if not np.all(np.isfinite(state)) or np.max(np.abs(state)) > DIVERGENCE_LIMIT:
            flags.append(f"state divergence at t={times[k + 1]:g}")
            completed = False
            last = k
            break

    end = last + 1
    err = np.linalg.norm(xs[:end] - xds[:end], axis=1)
    domain_exits = [
        float(times[k]) for k in range(end) if not sys.in_domain(xs[k])
    ]
    if domain_exits:
        flags.append(
            f"plant left the domain box at t={domain_exits[0]:g} "
            f"({len(domain_exits)} samples)"
        )
    return SimTrace(
        t=times[:end],
        x=xs[:end],
        xd=xds[:end],
        u=us[:end],
        ud=uds[:end],
        err=err,
        z=zs[:end] if use_z else None,
        flags=flags,
        completed=completed,
    )


def decay_rate(trace, window):
    """Least-squares slope of -log err(t) over [t_a, t_b]."""
    t_a, t_b = window
    mask = (trace.t >= t_a) & (trace.t <= t_b)
    if not np.any(mask):
        raise ValueError(f"window [{t_a}, {t_b}] not covered by the trace")
    errs = trace.err[mask]
    if np.any(errs <= 1e-12):
        raise ValueError("err underflows 1e-12 on the window; rate fit unreliable")
    ts = trace.t[mask]
    slope, _ = np.polyfit(ts, -np.log(errs), 1)
    return float(slope)


def perturbation_sweep(sys, metric, gain, ref, cfg, radii, samples, seed=0):
    """Convergence fraction vs initial-offset radius.

    For each radius, x0 is sampled uniformly on the sphere around xd0;
    a run converges when it completes with err(T) < cfg.err_threshold.
    """
    rng = np.random.default_rng(seed)
    xd0 = np.asarray(ref.xd0, dtype=float)
    results = []
    for radius in radii:
        if radius < 0:
            raise ValueError("radii must be nonnegative")
        hits = 0
        for _ in range(samples):
            if radius == 0.0:
                x0 = xd0.copy()
            else:
                direction = rng.standard_normal(sys.n)
                direction /= np.linalg.norm(direction)
                x0 = xd0 + radius * direction
            run_cfg = RunConfig(
                kind=cfg.kind, T=cfg.T, h=cfg.h, x0=x0, z0=cfg.z0, ell=cfg.ell,
                geodesic_segments=cfg.geodesic_segments, custom_u=cfg.custom_u,
                exactness_grid=cfg.exactness_grid, err_threshold=cfg.err_threshold,
            )
            try:
                trace = run_closed_loop(sys, metric, gain, ref, run_cfg)
            except SimulationError:
                continue
            if trace.completed and trace.final_err() < cfg.err_threshold:
                hits += 1
        results.append((float(radius), hits / samples))
    return results
