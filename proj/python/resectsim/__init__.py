"""Supervised autonomous tumor resection simulator."""

from ._core import (
    FitReport,
    PolySurface,
    ResectsimError,
    bbox_iou,
    demonstration_pitch_table,
    estimate_pitch,
    fit_default_surface,
    fit_poly,
    model_id_for,
    pareto_front,
    phantom_for_seed,
    phantom_volume,
    plan_consistency_rmse,
    plan_cuts,
    project_depth_to_cloud,
    removal_percent,
    rmse,
    run_headless,
    select_default,
    subtract_cloud,
    summarize_pitch,
    sweep_models,
    transform_cloud,
)

__all__ = [
    "FitReport",
    "PolySurface",
    "ResectsimError",
    "bbox_iou",
    "demonstration_pitch_table",
    "estimate_pitch",
    "fit_default_surface",
    "fit_poly",
    "model_id_for",
    "pareto_front",
    "phantom_for_seed",
    "phantom_volume",
    "plan_consistency_rmse",
    "plan_cuts",
    "project_depth_to_cloud",
    "removal_percent",
    "rmse",
    "run_headless",
    "select_default",
    "subtract_cloud",
    "summarize_pitch",
    "sweep_models",
    "transform_cloud",
]
