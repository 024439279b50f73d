"""Adversarial intrinsic-decomposition training for hyperspectral image
classification, plus a synthetic-scene generator for desk-scale experiments."""

from .cube import (
    HsiCube,
    PatchSample,
    SplitSpec,
    extract_patch,
    extract_patches,
    load_cube,
    make_split,
    normalize_bands,
    save_cube,
)
from .cluster import (
    EnvModel,
    assign_pseudo_class,
    kmeans_fit,
    label_samples,
    load_env_model,
    save_env_model,
)
from .synth import (
    SceneSpec,
    SyntheticScene,
    best_permutation_agreement,
    generate_scene,
    save_scene,
    scene_env_recoverability,
)
from .nets import (
    ForwardOutputs,
    NetConfig,
    NetworkParams,
    forward,
    gradients,
    init_params,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
)
from .train import (
    TrainConfig,
    TrainHistory,
    loss_C1,
    loss_C2,
    loss_L1,
    loss_L2,
    train,
    train_step,
)
from .metrics import (
    MetricsReport,
    confusion_matrix,
    eval_samples,
    metrics,
    predict_map,
    render_map,
    write_map,
)
from . import errors

__version__ = "0.1.0"
