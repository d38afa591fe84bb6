#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baselines;
mod error;
pub mod divergence;
pub mod features;
pub mod learning;
pub mod linalg;
pub mod mutual_info;
pub mod quadrature;
pub mod spectral;

pub use divergence::{make_divergence, nu_quadrature_integral, Divergence, DivergenceSpec};
pub use error::{Error, Result};
pub use features::{
    class_conditional_moments, compute_moments, eval_features, kronecker_moments, Basis,
    ClassMoments, ConstantMode, DatasetPair, FeatureMap, FeatureMoments, MomentSet,
};
pub use spectral::{
    debias_correction, estimate, estimate_from_moments, eval_potentials, fit_potentials, generalized_eig,
    potentials, spectral_value, EstimateReport, GeneralizedSpectrum, PotentialPair,
};
pub use mutual_info::{mi_estimate, mi_objective, softmax_fit, softmax_score, SoftmaxModel};
pub use learning::{
    mi_feature_learning, mm_linear_fit, mm_linear_step, sga_epoch, train_neural, NeuralConfig,
    SgaConfig, TangentBound,
};
pub use baselines::{kde_plugin, pearson_closed_form, softmax_newton, variational_kl, VariationalSolution};
