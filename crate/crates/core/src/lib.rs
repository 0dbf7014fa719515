//! Nudging data assimilation with learned one-step surrogates.
//!
//! The crate is `no_std` (with `alloc`) unless the `std` feature is enabled.
//! It contains the model dynamics, the nudging algorithm and its convergence
//! constants, training-data generation, a bias-ordered ResNet trained with
//! L-BFGS, the online assimilation loop and the evaluation harness.

#![cfg_attr(not(feature = "std"), no_std)]
// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod assimilate;
pub mod datagen;
pub mod dynamics;
pub mod error;
pub mod evaluate;
pub mod nudging;
pub mod optim;
mod par;
pub mod resnet;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
