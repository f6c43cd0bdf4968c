//! Spelling-aware token embeddings and the small transformer stack around them.
//!
//! Every token embedding is averaged with a normalized sum of the token's byte
//! embeddings, each rotated by its position inside the token. The crate also
//! carries the autograd engine, tokenizer, decoder-only model, optimizer,
//! scaling-law fitting and the spelling benchmark used to evaluate it.
//!
//! The crate is `no_std` + `alloc` when built without the default `std`
//! feature. File formats and the command line live in the `spellbee` crate.

#![cfg_attr(not(feature = "std"), no_std)]
// `!(x > 0.0)` is used deliberately so NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod beeembed;
pub mod datapipe;
mod error;
pub mod model;
pub mod numcore;
pub mod scaling;
pub mod spellbench;
pub mod tokenspell;
pub mod trainer;

pub use error::{Error, Result};
pub use numcore::{Real, Tensor};
