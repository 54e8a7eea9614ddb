//! Rank-pruned Tucker decomposition for language-model weights, with the
//! analytic cost model and design-space tooling around it.

pub mod compress;
pub mod design_space;
pub mod model;
pub mod precision;
pub mod svd;
pub mod tensor;
pub mod tucker;
