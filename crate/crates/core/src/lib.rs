//! Reducibility of quasi-periodic `sl(2,R)` cocycles close to an elliptic
//! constant, in ultra-differentiable classes defined by a weight `Λ`.
//!
//! The pieces, bottom-up:
//!
//! * [`weights`]: the weight `Λ` and the arithmetic-condition classifier;
//! * [`arithmetics`]: the frequency vector and the approximating function `Ψ`;
//! * [`fourier`]: the weighted Banach algebra of matrix-valued Fourier series;
//! * [`mat2`]: elliptic normal forms in `sl(2,R)`;
//! * [`rotation`]: fibered rotation number and maximal Lyapunov exponent;
//! * [`kam`]: parameter schedule, cohomological solver, iteration and driver;
//! * [`counterexample`]: the non-reducible cocycle when `Λ` is too weak.

pub mod arithmetics;
pub mod counterexample;
pub mod error;
pub mod exec;
pub mod fourier;
pub mod kam;
pub mod mat2;
pub mod quadrature;
pub mod rotation;
pub mod weights;

pub use error::{Error, Result};
pub use exec::Execution;
