"""球面几何"""

from .sphere import (
    batch_angle, batch_degenerate_mask, batch_geodesic_distance, batch_project_tangent,
    batch_slerp, batch_target_velocity, fibonacci_sphere, geodesic_distance, log_uniform_density,
    normalize_rows, project_tangent, sample_uniform, sample_uniform_batch, slerp,
    target_velocity,
)

__all__ = [
    "batch_angle", "batch_degenerate_mask", "batch_geodesic_distance", "batch_project_tangent",
    "batch_slerp", "batch_target_velocity", "fibonacci_sphere", "geodesic_distance",
    "log_uniform_density",
    "normalize_rows", "project_tangent", "sample_uniform", "sample_uniform_batch", "slerp",
    "target_velocity",
]
