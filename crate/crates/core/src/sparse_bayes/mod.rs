//! Sparse Bayesian learning: RVM regression and classification with ARD,
//! including the fast marginal-likelihood basis add/delete machinery used
//! for online adaptation.

pub mod classifier;
pub mod kernel;
pub mod regressor;

pub use classifier::{ClassifierSettings, RvmClassifier};
pub use kernel::{median_inverse_width, BasisSet, KernelConfig, KernelKind};
pub use regressor::{MlDelta, RvmRegressor, RvmSettings};
