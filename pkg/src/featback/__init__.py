"""featback: a desk-scale laboratory for feature-shift backdoors on 3D
point clouds — poisoning, Bayesian trigger search, preprocessing and
detection defenses, and the ACC/ASR/WD evaluation harness."""

from .cloud import (
    DegenerateFeatureError,
    GuardMode,
    LabeledCloud,
    PointCloud,
    apply_guard,
    center_and_scale,
    fps_select,
    resample,
)
from .data import (
    Dataset,
    FormatError,
    SyntheticSpec,
    gen_synthetic,
    load_dataset,
    load_off_with_normals,
    load_xyzfeat_binary,
    save_dataset,
)
from .poison import (
    BallSpec,
    PoisonSpec,
    Trigger,
    all_to_all_target,
    implant_ball_trigger,
    implant_trigger,
    poison_count,
    poison_dataset,
    poison_dataset_ball,
)
from .preprocess import (
    Pipeline,
    PreprocessOp,
    dropout,
    full_defense_ops,
    jitter,
    pipeline_apply,
    rotation,
    rotation3d,
    scaling,
    shift,
    sor,
    sor_filter,
)
from .model import (
    ClassifierParams,
    TrainConfig,
    TrainingError,
    evaluate_acc,
    evaluate_asr,
    evaluate_asr_fn,
    forward,
    init_params,
    load_checkpoint,
    loss_and_grad,
    point_saliency,
    save_checkpoint,
    train,
)
from .bo import (
    BOConfig,
    GPState,
    SurrogateConfig,
    expected_improvement,
    gp_fit,
    gp_posterior,
    make_trigger_objective,
    minimize,
    search_trigger,
)
from .defenses import (
    DetectionReport,
    adaptive_noise,
    auc_score,
    detection_report,
    spectral_scores,
    strip_score,
    wasserstein_distance,
)

__version__ = "0.1.0"
