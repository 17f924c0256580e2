"""Higher-order averaging, guiding limit cycles and normally hyperbolic invariant tori."""

__version__ = "0.1.0"

from .averaging import (
    AveragingWorkspace,
    averaged_f,
    check_H1,
    first_nonvanishing_order,
    guiding_field,
    melnikov_y,
)
from .bell import bell_eval, bell_monomials
from .cycles import LimitCycle, cartesian_to_frame, find_limit_cycle, frame_to_cartesian, moving_frame
from .jerk import (
    JerkSpec,
    emit_jerk_config,
    fN_closed_form,
    jerk_field,
    jerk_section,
    jerk_standard_form,
    limiting_torus_distance,
    limiting_torus_point,
)
from .ode import IntegratorConfig, SectionSpec, integrate, integrate_variational, section_crossing
from .sysdef import PlanarField, SystemDef, build_system, emit_config, load_config
from .torus import (
    FourierCurve,
    SectionMap,
    TorusEstimate,
    contraction_estimate,
    detect_torus,
    interior_fixed_point,
    invariance_residual,
    sample_attractor,
    section_map,
)
