pub mod autodiff;
pub mod config;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod exactinference;
pub mod experiment;
pub mod langmodel;
pub mod rng;
pub mod seq2seq;
pub mod subword;
pub mod synthdata;
pub mod wakesleep;

pub use error::{Error, Result};
