//! Sample-pairing data augmentation for image classifiers.
//!
//! The core idea: synthesize extra training samples by averaging two images
//! pixel by pixel and keeping (by default) only the first image's label.
//! This crate implements the full pipeline around that rule:
//!
//! - [`image`] — the pixel container and the primitive transforms
//!   (mix, random/center crop, horizontal flip).
//! - [`pairing`] — partner-selection policies, mix-weight distributions,
//!   label policies, and the augment-then-mix sample pipeline.
//! - [`schedule`] — the warmup / intermittent / fine-tune phase machine
//!   that switches pairing on and off over training.
//! - [`nn`] — a minimal from-scratch trainer: conv / batch-norm / ReLU /
//!   max-pool / dropout / fully-connected layers, soft-target cross-entropy,
//!   exact backprop, Adam, and a finite-difference gradient checker.
//! - [`data`] — CIFAR-10 binary loader, class-balanced subsetting,
//!   non-training partner pools, and a synthetic dataset generator.
//! - [`harness`] — seeded, reproducible experiment runs with metrics CSV
//!   and manifest emission.

pub mod data;
pub mod dist;
pub mod error;
pub mod harness;
pub mod image;
pub mod nn;
pub mod pairing;
pub mod schedule;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
