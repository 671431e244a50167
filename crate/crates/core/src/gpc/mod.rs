//! Hermite polynomial chaos surrogates of the forward solution over the
//! reduced coordinates of a conditional KL expansion.

mod hermite;
mod multiindex;
mod quadrature;
mod surrogate;

pub use hermite::{hermite, hermite_table};
pub use multiindex::MultiIndexSet;
pub use quadrature::{
    gauss_hermite_1d, gauss_hermite_tensor, gauss_hermite_tensor_with_budget, smolyak_sparse,
    QuadratureRule, RuleKind, DEFAULT_NODE_BUDGET,
};
pub use surrogate::{
    build_from_fn, build_surrogate, default_rule, fingerprint, GpcSurrogate, PointSurrogate,
    SurrogateMetadata,
};
