//! Matrix value types, the symmetric eigensolver, Lambert W, seeded random
//! inputs and the text matrix format.

mod eig;
mod feature;
pub mod io;
mod lambert;
mod matrix;
mod rng;
mod sym;

pub use eig::{sym_eig, SpectralDecomp};
pub use feature::FeatureBlock;
pub use lambert::{lambert_w, Branch};
pub use matrix::Matrix;
pub use rng::{
    random_orthogonal, random_spd, spd_from_spectrum, trace_normalized, RngStream, SpectrumLaw,
};
pub use sym::SymMatrix;
