//! Bag-level weak supervision: learn instance classifiers from bag labels
//! that are either binary (multiple instance learning) or proportions
//! (learning with label proportions), and predict the fraction of positive
//! instances in unseen bags.
//!
//! Module map:
//!
//! * [`bagcore`]: bags, labeling operators, rater fusion, splits, CSV I/O.
//! * [`features`]: volumes, patch sampling, Gaussian-derivative filter bank,
//!   quantile-equalized histogram features.
//! * [`learners`]: logistic and beta regression, SVM with Platt calibration,
//!   PCA, k-means, CMA-ES.
//! * [`weak`]: the nine bag classifiers and instance-threshold fitting.
//! * [`eval`]: agreement, prevalence, ICC, Friedman/Nemenyi, stability.
//! * [`synth`]: synthetic bags with ground truth and simulated raters.
//! * [`pipeline`]: grid search, experiment driver and the CLI.

pub mod bagcore;
pub mod error;
pub mod eval;
pub mod features;
pub mod learners;
pub mod pipeline;
pub mod seed;
pub mod synth;
pub mod weak;

pub use error::{Error, Result};
