//! Contextual dynamic pricing under a linear demand model.
//!
//! The crate provides the simulated market ([`demand`]), least-squares
//! estimation ([`estimator`]), the spectrum of the limiting design and the
//! critical perturbation radius ([`spectrum`]), pricing policies and planners
//! ([`policy`]), calibration from historical sales ([`calibrate`]) and a
//! replicated experiment harness ([`harness`]). Dense linear algebra lives in
//! [`linalg`].

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod demand;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod linalg;
pub mod policy;
pub mod spectrum;

pub use demand::{Environment, Instance, ModelParams, PriceBounds};
pub use error::{Error, Result};
pub use policy::{Plan, PolicyKind, RegretTrace};
