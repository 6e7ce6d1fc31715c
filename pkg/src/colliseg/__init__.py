"""Geometry-constrained collimator shadow detection.

Known-operator image kernels (Sobel, Gaussian, Hough forward/adjoint), the
lines-to-shapes reconstruction pipeline, a synthetic shadow simulator, and
the evaluation suite (EA line matching, F1 sweeps, Dice, mm-scale Hausdorff,
composite mask + Hough losses).
"""

from .grid import (
    BinaryMask,
    HoughGeometry,
    HoughSpace,
    ImageGrid,
    Line,
    PolygonSpec,
    mask_centroid,
)
from .metrics import (
    BoxStats,
    LossWeights,
    MatchReport,
    MetricReport,
    SweepCurve,
    avg_hausdorff_mm,
    box_stats,
    dice,
    dice_loss,
    ea_score,
    evaluate_dataset,
    f1_sweep,
    match_lines,
    ms_ssim_loss,
    total_loss,
)
from .operators import (
    GaussianKernelSpec,
    GradientCheckReport,
    SobelResponse,
    finite_difference_check,
    gaussian_smooth,
    gaussian_smooth_adjoint,
    gaussian_smooth_array,
    hough_adjoint,
    hough_forward,
    sobel,
    sobel_adjoint,
)
from .reconstruct import (
    LineSet,
    PostprocessConfig,
    classical_edge_path,
    extract_lines,
    lines_to_mask,
    rasterize_lines,
    run_pipeline,
)
from .simulate import (
    SimulationConfig,
    SyntheticSample,
    apply_collimation,
    flat_field_phantom,
    generate_dataset,
    generate_sample,
    make_hough_label,
    polygon_roi_mask,
    sample_polygon,
)

__version__ = "0.1.0"
