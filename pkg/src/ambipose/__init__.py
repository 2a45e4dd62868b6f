"""ambipose: sampling-based camera-pose posteriors for ambiguous scenes.

A small numpy library that learns arbitrarily shaped pose distributions
with a variational encoder, a latent-to-SE(3) pose map and Winners-Take-All
Monte Carlo training, plus procedural ambiguous scenes, evaluation metrics
and heatmap emitters.
"""

from .geometry import (
    Pose,
    PoseDistanceWeights,
    PoseSampleSet,
    chordal_distance,
    chordal_l2_mean,
    geodesic_angle,
    point_prediction,
    pose_distance,
    rotation_from_6d,
)
from .model import (
    Architecture,
    GaussianLatent,
    PoseRegressor,
    SceneBounds,
    build_regressor,
    decode,
    encode,
    kl_to_standard_normal,
    load_checkpoint,
    predict_posterior,
    sample_latent,
    save_checkpoint,
)
from .scenes import (
    SceneSpec,
    builtin_scene,
    generate_dataset,
    load_dataset,
    oracle_modes,
    render_observation,
    sample_trajectory,
)
from .trainer import TrainConfig, TrainReport, per_image_loss, select_winners, train
from .evaluation import (
    EvalReport,
    RecallThreshold,
    benchmark_inference,
    evaluate,
    is_true_positive,
    median_errors,
    mode_coverage,
    recall,
)
from .viz import (
    Histogram2D,
    emit_heatmap_image,
    mollweide_project,
    orientation_heatmap,
    orientation_to_sphere,
    position_heatmap,
)

__version__ = "0.1.0"
