"""Deep embedded clustering for high-dimensional feature vectors.

The pipeline pools convolutional feature maps to vectors, pretrains a
symmetric autoencoder on reconstruction, seeds cluster centroids with
k-means in the learned embedding, then jointly refines the encoder and
the centroids against a periodically sharpened target distribution.
Evaluation, baselines, 2-d projection and SVG plotting round out the
toolkit; the ``delius`` command exposes every step.
"""

__version__ = "0.1.0"

from .autoencoder import AutoencoderSpec, PretrainReport, build, encode, encoder_part, pretrain
from .baselines import BaselineRun, run_ae_kmeans, run_pca_kmeans
from .dataio import (
    ClusterAssignments,
    FeatureMapBlock,
    FeatureMatrix,
    LabelManifest,
    global_average_pool,
    labels_for,
    read_assignments,
    read_feature_maps,
    read_features,
    read_label_manifest,
    stratified_sample,
    write_assignments,
    write_feature_maps,
    write_features,
    write_label_manifest,
)
from .dec import (
    AssignmentState,
    DecConfig,
    DecHistory,
    DecResult,
    dec_fit,
    kl_grads,
    kl_loss,
    soft_assign,
    target_distribution,
)
from .errors import (
    ConfigError,
    DataError,
    DegenerateCentroidsError,
    DeliusError,
    FormatError,
    NumericError,
    ShapeError,
)
from .kmeans import KmeansResult, assign, kmeans_fit
from .metrics import (
    EvalReport,
    calinski_harabasz,
    clustering_accuracy,
    evaluate,
    silhouette,
)
from .neural import (
    AdamConfig,
    AdamState,
    Checkpoint,
    DenseLayer,
    MlpParams,
    adam_init,
    adam_step,
    backward,
    forward,
    init_params,
    load_checkpoint,
    mse_grad,
    mse_loss,
    numeric_gradient,
    save_checkpoint,
)
from .plotting import DEFAULT_PALETTE, ScatterSpec, render_scatter
from .projection import (
    PcaModel,
    TsneConfig,
    joint_affinities,
    lowdim_gradient,
    pca_fit,
    pca_inverse,
    pca_transform,
    tsne_embed,
)
from .rng import Rng
