"""Interactive 3D segmentation workbench for Gaussian-splat scenes."""

__version__ = "0.1.0"

from .types import (  # noqa: F401
    Camera,
    FeatureMap,
    Gaussian,
    GaussianScene,
    MaskBank,
    ValidationError,
    covariance_from_rs,
)
from .sceneio import (  # noqa: F401
    FileFormatError,
    load_camera,
    load_feature_map,
    load_mask_bank,
    load_scene,
    save_camera,
    save_feature_map,
    save_mask_bank,
    save_scene,
)
from .render import (  # noqa: F401
    CULLED,
    RenderOutput,
    brute_force_render,
    center_depth_map,
    project_gaussian,
    render_payload,
)
from .features import (  # noqa: F401
    PcaModel,
    PixelPairSample,
    TrainConfig,
    feature_cosine,
    fit_pca,
    grad_affinity,
    loss_com,
    loss_fe,
    mask_iou_similarity,
    train_feature_field,
)
from .sasm import (  # noqa: F401
    PromptPointMap,
    generate_prompt_points,
    grid_mean_depth,
    mean_axis_distance,
    prompt_count,
    segmentation_scale,
    sky_filter,
)
from .segmenter import (  # noqa: F401
    PromptSet,
    SegmentationResult,
    fuse_similarity,
    prompt_similarity,
    segment,
    select_gaussians,
)
from .sgc import (  # noqa: F401
    AxisSegment,
    CutRecord,
    apply_sgc,
    coverage_ratio,
    cut_gaussian,
    principal_axis,
)
from .evalbench import (  # noqa: F401
    SyntheticSpec,
    acc,
    generate_synthetic,
    iou,
    run_benchmark,
    segmentation_to_mask,
)
