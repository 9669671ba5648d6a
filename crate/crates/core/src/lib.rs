//! Certified unlearning by rewinding gradient descent.
//!
//! Training runs plain full-batch gradient descent and keeps the iterate `K`
//! steps before the end. Unlearning restarts from that checkpoint, runs `K`
//! steps on the retained data and adds Gaussian noise calibrated to the
//! worst-case distance from a full retrain. When the checkpoint is missing it
//! can be reconstructed from the final weights by backward steps.

pub mod certify;
pub mod checkpoint;
pub mod error;
pub mod model;
pub mod noise;
pub mod problems;
pub mod rewind;
pub mod train;
pub mod unlearn;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use model::{
    empirical_grad, empirical_loss, split, Constants, Dataset, LossModel, ParamVector, Sample, SplitSpec,
};
pub use noise::{perturb, NoiseStream};
pub use problems::{Problem, ProblemKind, ProblemSpec};
pub use rewind::{rewind, rewind_step, ProxConfig, RewindStats};
pub use train::{init_theta, train, TrainConfig, Trajectory};
pub use unlearn::{
    calibrate_sigma, h_of_k, min_rewind_for_noise, sequential_unlearn, unlearn, Calibration, Certificate,
    PrivacyBudget,
};
