//! Review-driven multi-label music style classification with label
//! representations learned over integrated statistical and knowledge
//! correlations.

pub mod checkpoint;
pub mod corr;
pub mod data;
pub mod error;
pub mod gcn;
pub mod han;
pub mod kg;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod text;
pub mod train;

pub use error::{KrfError, Result};
