"""Certified bounds for ergodicity of multidimensional diffusions."""
from .dsl import DomainError, ExprError, ExprSyntaxError, parse_expr, to_text
from .model import ModelSpec, ParameterRangeWarning, build_model, catalog, load_model
from .radial import (EllipticityError, RadialProfile, SphereOptConfig, build_profile,
                     gamma_at, iota_at)
from .certify import Certificate, CertifyConfig, Verdict, compute_lambda, inner_integral
from .lyapunov import (LyapunovFn, apply_generator, attach_constants, build_lyapunov, drift_check,
                       escape_bound, lyapunov_constants, radial_generator)
from .checks import AssumptionReport, Status, check_all, check_ellipticity, check_growth, \
    check_local_bound, check_onesided
from .simulate import (SimConfig, SubordinatorSpec, TVCurve, em_ensemble, fit_exponential, hitting_mc,
                       subordinate_tv, subordinator_paths, tv_estimate, uniform_tv_curve)

__version__ = "0.1.0"
