"""Causality-informed neural networks."""

from ._core import (
    Architecture,
    CinnError,
    acyclicity_gradient,
    acyclicity_h,
    acyclicity_value,
    apply_refinement,
    cosine_similarity,
    discover,
    matrix_exp,
    partition,
    pcgrad_combine,
    project_out,
    run,
    structural_hamming_distance,
    threshold_to_dag,
)

__all__ = [
    "Architecture",
    "CinnError",
    "acyclicity_gradient",
    "acyclicity_h",
    "acyclicity_value",
    "apply_refinement",
    "cosine_similarity",
    "discover",
    "matrix_exp",
    "partition",
    "pcgrad_combine",
    "project_out",
    "run",
    "structural_hamming_distance",
    "threshold_to_dag",
]
