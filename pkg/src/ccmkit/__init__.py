"""Numerical contraction-metric certification, damping-injection gain
synthesis, Riemannian geodesics and universal trajectory tracking for
control-affine systems."""

from .certificates import (
    CertificateReport,
    Grid,
    check_c1,
    check_dual_w,
    check_killing_pde,
    check_robust,
    dual_flow_diagnostic,
)
from .controller import (
    DampingParams,
    DynExtState,
    GainField,
    dynext_beta,
    dynext_control,
    dynext_controller_step,
    exactness_residual,
    static_exact_controller,
    synthesize_gain,
    upsilon,
)
from .geodesic import (
    GeodesicPath,
    path_integral_controller,
    riemann_energy,
    solve_geodesic,
)
from .model import (
    BuiltinBundle,
    MetricField,
    ReferenceSpec,
    SystemModel,
    builtin,
    builtin_names,
    generate_reference,
)
from .sim import RunConfig, SimTrace, decay_rate, perturbation_sweep, run_closed_loop

__version__ = "0.1.0"

__all__ = [
    "BuiltinBundle",
    "CertificateReport",
    "DampingParams",
    "DynExtState",
    "GainField",
    "GeodesicPath",
    "Grid",
    "MetricField",
    "ReferenceSpec",
    "RunConfig",
    "SimTrace",
    "SystemModel",
    "builtin",
    "builtin_names",
    "check_c1",
    "check_dual_w",
    "check_killing_pde",
    "check_robust",
    "decay_rate",
    "dual_flow_diagnostic",
    "dynext_beta",
    "dynext_control",
    "dynext_controller_step",
    "exactness_residual",
    "generate_reference",
    "path_integral_controller",
    "perturbation_sweep",
    "riemann_energy",
    "run_closed_loop",
    "solve_geodesic",
    "static_exact_controller",
    "synthesize_gain",
    "upsilon",
]
