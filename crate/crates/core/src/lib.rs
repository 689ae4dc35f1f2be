//! Certified non-uniform robustness boxes for feedforward networks.
//!
//! Given a trained network and an input point, this crate bounds the output
//! logits over an axis-aligned perturbation box, differentiates those bounds
//! with respect to the per-feature radii, and maximizes the certified box
//! volume with an augmented-Lagrangian method. A branch-and-bound oracle,
//! randomized soundness sampling, and a small training pipeline support
//! end-to-end verification at desk scale.
//!
//! Entry points:
//!
//! * [`propagation`] - interval, accumulated-relaxation, combined, and
//!   general-DAG bound estimation.
//! * [`gradient`] - bound and margin gradients w.r.t. the radii.
//! * [`certify`] - uniform binary search and non-uniform volume maximization.
//! * [`oracle`] - independent checks: sampling, branch and bound, grid
//!   prediction constancy.
//! * [`trainer`] - synthetic 2-D data, gradient-descent training, PGD.
//! * [`analysis`] - volume metrics, cosine similarity, bounding-map export.
//!
//! The `parallel` feature (on by default) backs the batch drivers with rayon;
//! without it every entry point runs sequentially with the same results.

pub mod analysis;
pub mod certify;
pub mod conv;
pub mod error;
pub mod exec;
pub mod gradient;
pub mod io;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod propagation;
pub mod relaxation;
pub mod trainer;

pub use analysis::{cosine_stats, geo_mean_volume, neg_log_volume, SimilarityStats};
pub use certify::{
    certify_dataset, certify_nonuniform, certify_uniform, shrink_to_feasible, AlConfig, CertMode,
    CertResult, EpsInit, PointReport,
};
pub use conv::lower_conv;
pub use error::{Error, Result};
pub use gradient::{bounds_with_grad, margin_and_grad, BoundGrad, Margin};
pub use linalg::Matrix;
pub use model::{
    topo_paths_check, Activation, Budget, DagEdge, DagNetwork, DataPoint, Dataset, ForwardModel,
    Layer, Model, Network,
};
pub use oracle::{exact_range_bb, prediction_constant, sample_soundness, RangeEstimate};
pub use propagation::{
    bounds_combined, bounds_general, bounds_quadratic, bounds_simple, Algorithm, LayerBounds,
};
pub use relaxation::{relax, relax_grad, Relaxation, RelaxationGrad};
pub use trainer::{
    adversarial_train, gen_synthetic_2d, init_network, pgd_attack, train, PgdConfig, TrainConfig,
};
