//! Single-event-upset fault injection and resilience analysis for
//! feedforward neural networks.
//!
//! The crate measures how far a network's performance can fall when one
//! stored parameter bit flips, explains the propagation of sign flips in
//! closed form, and simulates TMR and Hamming-code protection of the
//! parameter store together with its cost.

pub mod bitflip;
pub mod engine;
pub mod error;
pub mod model_io;
pub mod nn;
pub mod propagation;
pub mod protection;
pub mod tensor;

pub use bitflip::{BitAddress, BitClass, ParamKind};
pub use error::{Error, Result};
pub use model_io::LabeledDataset;
pub use nn::{Model, Network};
pub use tensor::Tensor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/bits.md")]
    mod bits {}
    #[doc = include_str!("../../../book/src/ssipp.md")]
    mod ssipp {}
    #[doc = include_str!("../../../book/src/seu.md")]
    mod seu {}
    #[doc = include_str!("../../../book/src/propagation.md")]
    mod propagation {}
    #[doc = include_str!("../../../book/src/protection.md")]
    mod protection {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
