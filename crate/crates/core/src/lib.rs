//! RGB-thermal semantic segmentation with feature-enhanced attention.
//!
//! The crate is self-contained: a small `f64` reverse-mode engine
//! ([`tensor`]), the attention module ([`feam`]), the two-stream network
//! ([`model`]), losses and SGD ([`optim`]), segmentation metrics
//! ([`metrics`]), a synthetic RGB-T scene generator with PNM I/O ([`data`])
//! and the experiment runners behind the `feanet` binary ([`runner`]).

pub mod data;
pub mod error;
pub mod feam;
pub mod model;
pub mod metrics;
pub mod optim;
pub mod runner;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{ConvSpec, Graph, Shape, Tensor, Var};
