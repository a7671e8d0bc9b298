//! Supervised and unsupervised building blocks shared by the bag classifiers.

mod beta;
mod cmaes;
mod kmeans;
mod logistic;
mod matrix;
pub mod optim;
mod pca;
mod platt;
mod svm;

pub use beta::{beta_objective, fit_beta_regression, squeeze_proportions, BetaModel};
pub use cmaes::{cmaes_minimize, CmaEsConfig, CmaEsResult};
pub use kmeans::{kmeans, KMeansInit, KMeansModel, KMeansReport};
pub use logistic::{fit_logistic, fit_logistic_traced, logistic_objective, sigmoid, LinearModel};
pub(crate) use logistic::softplus;
pub use matrix::Matrix;
pub use pca::PcaTransform;
pub use platt::{platt_calibrate, platt_log_likelihood, PlattCalibration};
pub use svm::{
    fit_svm, solve_svm_dual, Kernel, SvmDualSolution, SvmModel, SvmParams, SvmSolver,
};

/// Something that maps an instance to a probability of being positive.
pub trait ProbabilisticModel {
    fn predict_proba(&self, x: &[f64]) -> crate::Result<f64>;
}
