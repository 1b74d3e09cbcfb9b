//! Transformers as in-context maps on probability measures: discrete
//! measures, Wasserstein-1 transport, attention layers and deep stacks, the
//! Vlasov flow in the infinite-depth limit, a finite-difference laboratory for
//! measure derivatives, and a map with no continuous in-context
//! representation.

pub mod attention;
pub mod counterexample;
pub mod derivative;
pub mod error;
pub mod flow;
pub mod gap;
pub mod io;
pub mod measure;
pub mod stack;
pub mod test_function;
pub mod transport;

pub use error::{Error, Result};
pub use measure::{iota, iota_inv, push_forward, BoundingBox, DiscreteMeasure, Point, TokenSequence};
