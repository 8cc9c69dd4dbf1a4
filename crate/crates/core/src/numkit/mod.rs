//! Deterministic numerical primitives.

mod linalg;
mod matrix;
mod rng;
pub(crate) mod stats;

pub use linalg::{determinant, sym_eigenvalues, top_singular_values, Spectrum};
pub use matrix::Matrix;
pub use rng::Rng;
pub use stats::{argmax, covariance, kl_div, softmax, softmax_rows, KL_FLOOR};

/// `libm` shims so call sites read like ordinary float math.
pub(crate) mod fmath {
    #[inline]
    pub fn exp(x: f64) -> f64 {
        libm::exp(x)
    }
    #[inline]
    pub fn ln(x: f64) -> f64 {
        libm::log(x)
    }
    #[inline]
    pub fn sqrt(x: f64) -> f64 {
        libm::sqrt(x)
    }
    #[inline]
    pub fn tanh(x: f64) -> f64 {
        libm::tanh(x)
    }
    #[inline]
    pub fn cos(x: f64) -> f64 {
        libm::cos(x)
    }
    #[inline]
    pub fn sin(x: f64) -> f64 {
        libm::sin(x)
    }
    #[inline]
    pub fn ceil(x: f64) -> f64 {
        libm::ceil(x)
    }
    #[inline]
    pub fn round(x: f64) -> f64 {
        libm::round(x)
    }
}
