"""Estimation of long-range dependence from sampled traffic and active probes."""

from .errors import (
    LrdError,
    ValidationError,
    TraceFormatError,
    UnsupportedInversionError,
    AliasingError,
    DriverError,
)
from .traffic import LrdModel, Trace, TraceKind, gen_fgn, gen_onoff, fgn_autocov, store_trace, load_trace
from .sampling import (
    InterSampleSpec,
    Geometric,
    Periodic,
    Gamma,
    Uniform,
    SamplingPattern,
    draw_pattern,
    analytic_autocov,
    apply,
    spec_from_dict,
)

__version__ = "0.1.0"
