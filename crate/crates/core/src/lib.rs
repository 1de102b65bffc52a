//! Non-contrastive graph representation learning for link prediction.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod linkpred;
pub mod methods;
pub mod nn;
pub mod optim;
pub mod parallel;
pub mod params;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod sparse;
pub mod splits;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod transforms;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/views.md")]
    mod views {}
    #[doc = include_str!("../../../book/src/splits.md")]
    mod splits {}
    #[doc = include_str!("../../../book/src/methods.md")]
    mod methods {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
