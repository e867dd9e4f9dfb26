pub mod align;
pub mod corpus;
pub mod dsp;
pub mod encode;
pub mod error;
pub mod evaluate;
pub mod seq2seq;
pub mod toyworld;
pub mod voclone;

pub use error::{Error, Result};
