//! Usage-similarity estimation from contextual representations and
//! lexical substitutes.

pub mod cli;
pub mod corpus;
pub mod digest;
pub mod error;
pub mod eval;
pub mod features;
pub mod linalg;
pub mod model;
pub mod par;
pub mod repr;
pub mod subst;

pub use error::{Error, Result};
