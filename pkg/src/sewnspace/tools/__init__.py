"""
Construction and measurement tools.
"""

from .convergence_lab import (
    AlmostIsometry,
    ConvergenceReport,
    StepRecord,
    build_F,
    distortion,
    gh_upper_bound,
    mm_convergence_table,
)
from .metric_core import (
    FiniteMetricSpace,
    ProbeReport,
    PulledSpace,
    SphereSample,
    ball_volume,
    check_metric,
    pull_set,
    sample_sphere3,
    scalar_probe,
)
from .revolution_geometry import GeometrySummary, TunnelSurface, build_tunnel, tunnel_summary
from .sewing_sim import SewingPlan, SewnSpace, build_sewn, place_balls, sewn_volume_report
from .tunnel_curve import (
    CurvatureProfile,
    PlaneCurve,
    build_step_profile,
    integrate_curve,
    smooth_profile,
    verify_bend_condition,
)

__all__ = [
    "CurvatureProfile",
    "PlaneCurve",
    "build_step_profile",
    "smooth_profile",
    "integrate_curve",
    "verify_bend_condition",
    "TunnelSurface",
    "GeometrySummary",
    "build_tunnel",
    "tunnel_summary",
    "FiniteMetricSpace",
    "SphereSample",
    "PulledSpace",
    "ProbeReport",
    "sample_sphere3",
    "pull_set",
    "ball_volume",
    "scalar_probe",
    "check_metric",
    "SewingPlan",
    "SewnSpace",
    "place_balls",
    "build_sewn",
    "sewn_volume_report",
    "AlmostIsometry",
    "ConvergenceReport",
    "StepRecord",
    "build_F",
    "distortion",
    "gh_upper_bound",
    "mm_convergence_table",
]
