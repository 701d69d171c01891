//! Second-order pooling and power normalization operators.
//!
//! * [`matcore`]: symmetric matrices, eigensolver, Lambert W, random SPD inputs, file I/O
//! * [`sop`]: autocorrelation pooling, β-centering, coordinate encoding, relation descriptors
//! * [`elempn`]: element-wise power normalization and its backward pass
//! * [`specpn`]: spectral power normalization with eigendecomposition backward
//! * [`fastpn`]: SVD-free MaxExp / integer Gamma by repeated squaring, Newton-Schulz
//! * [`hdp`]: heat diffusion operator, parametrizations, bound checks, FAHDP
//! * [`gradcheck`]: finite-difference gradient oracle

pub mod elempn;
pub mod error;
pub mod fastpn;
pub mod gradcheck;
pub mod hdp;
pub mod matcore;
pub mod par;
pub mod sop;
pub mod specpn;

pub use error::{PnError, Result};
pub use matcore::{FeatureBlock, Matrix, RngStream, SpectralDecomp, SymMatrix};
