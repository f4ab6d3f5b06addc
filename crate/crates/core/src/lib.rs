pub mod dataset;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod llm;
pub mod loss;
pub mod trainer;
pub mod vocab;

pub use error::{AceError, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/synonym-trees.md")]
    mod synonym_trees {}
    #[doc = include_str!("../../../book/src/objective.md")]
    mod objective {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/synonym-service.md")]
    mod synonym_service {}
    #[doc = include_str!("../../../book/src/synthetic-benchmark.md")]
    mod synthetic_benchmark {}
}
