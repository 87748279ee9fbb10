pub mod cli;
pub mod codes;
pub mod coding;
pub mod error;
pub mod ldpc;
pub mod sim;
pub mod stability;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/codes.md")]
    mod codes {}
    #[doc = include_str!("../../../book/src/gradient-coding.md")]
    mod gradient_coding {}
    #[doc = include_str!("../../../book/src/ldpc.md")]
    mod ldpc {}
    #[doc = include_str!("../../../book/src/stability.md")]
    mod stability {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
