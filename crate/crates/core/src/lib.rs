//! Core library for privileged-information OCT classification experiments.
//!
//! The crate is organised around a small reverse-mode autodiff tape
//! ([`tensor`]), deterministic privileged-label extraction from segmentation
//! masks ([`labels`]), a synthetic multi-vendor dataset generator and PGM/CSV
//! dataset layer ([`data`]), the stochastic-encoder classifier and its
//! variational auxiliary objective ([`model`]), plain SGD/Adam optimisers
//! ([`optim`]), a deterministic training loop ([`trainer`]), and a
//! leave-one-domain-out evaluation harness ([`harness`]). Everything runs in
//! `f64` on the CPU and is reproducible bit-for-bit from a master seed.

pub mod checkpoint;
pub mod data;
pub mod harness;
pub mod labels;
pub mod model;
pub mod optim;
pub mod seed;
pub mod tensor;
pub mod trainer;
