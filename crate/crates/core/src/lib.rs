//! Mittag-Leffler functions, α-resolvent families, Caputo derivatives and
//! explicit solution formulas for impulsive fractional evolution equations.

// `!(x > 0.0)` rejects NaN along with non-positive values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod caputo;
pub mod error;
pub mod gamma;
pub mod mlf;
pub mod quad;
pub mod resolvent;
pub mod solutions;
pub mod verifier;

pub use error::{Error, Result};

pub use num_complex::Complex64;

pub type CVector = nalgebra::DVector<Complex64>;
pub type CMatrix = nalgebra::DMatrix<Complex64>;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/mittag-leffler.md")]
    mod mittag_leffler {}
    #[doc = include_str!("../../../book/src/resolvents.md")]
    mod resolvents {}
    #[doc = include_str!("../../../book/src/caputo.md")]
    mod caputo {}
    #[doc = include_str!("../../../book/src/solutions.md")]
    mod solutions {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
}
