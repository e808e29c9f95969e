//! Two-phase training: pretraining, mixture initialisation, and the main loop
//! with prior freezing, dead-cluster handling and composite early stopping.

mod clusters;
mod data;
mod kmeans;
mod optim;
mod train;

pub use clusters::{composite_score, detect_dead_clusters, hard_counts, reinit_all, reinit_dead_cluster, DEAD_SHARE, REINIT_JITTER};
pub use data::{load_subject, prepare_subject, save_subject, SubjectData};
pub use kmeans::{bisecting_kmeans, gmm_from_labels, init_gmm_bisecting, kmeans, KMeansFit, PI_FLOOR, VAR_FLOOR};
pub use optim::{clip_grad_norm, grad_norm, Adam, Visitor};
pub use train::{
    centroid_templates, composite_of, evaluate, fit_subject, init_prior, load_checkpoint, pretrain, prior_digest,
    quick_eval, responsibilities_of, save_checkpoint, train, EpochRecord, Plateau, RunOutputs, TrainConfig,
    TrainState, TrainedModel,
};
