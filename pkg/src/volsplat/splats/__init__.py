from .project import (ALPHA_FLOOR, DILATION_2D, EXIT_TRANSMITTANCE,
                      FOOTPRINT_SIGMA, MIP_FILTER_VAR, SMOOTH_3D_SCALE,
                      ProjectedSplat, project, project_batch)
from .rasterize import (RasterCache, SceneGrads, rasterize, render_backward,
                        render_forward)
from .scene import (Gaussian3D, SplatScene, load_scene, quat_to_matrix,
                    save_scene)
from .sh import basis, basis_gradient, eval_sh, n_coeffs
from .smooth import max_sampling_rate, smooth3d

__all__ = [
    "ALPHA_FLOOR", "DILATION_2D", "EXIT_TRANSMITTANCE", "FOOTPRINT_SIGMA",
    "MIP_FILTER_VAR", "SMOOTH_3D_SCALE", "Gaussian3D", "ProjectedSplat",
    "RasterCache", "SceneGrads", "SplatScene", "basis", "basis_gradient",
    "eval_sh", "load_scene", "max_sampling_rate", "n_coeffs", "project",
    "project_batch", "quat_to_matrix", "rasterize", "render_backward",
    "render_forward", "save_scene", "smooth3d",
]
