#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod framing;
pub mod fsig;
pub mod link;
pub mod operator;
pub mod physics;
pub mod pipeline;
pub mod receiver;
pub mod rng;
pub mod signals;
pub mod ssfm;
pub mod training;

pub use error::{Error, Result};
