//! Augmented quantile regression for first-price auctions.

// `!(x > 0.0)` style guards reject NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aqr;
pub mod bandwidth;
pub mod basis;
pub mod error;
pub mod functionals;
pub mod inference;
pub mod io;
pub mod lp;
pub mod mc;
pub mod model;
pub mod quadrature;
pub mod recover;
pub mod sieve;
pub mod simulate;

pub use error::{Error, Result};
