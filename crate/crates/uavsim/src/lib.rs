//! System-level Monte Carlo simulator for UAV cellular networks.
//!
//! The crate covers deployment geometry, 3GPP-style aerial channel models,
//! uplink power control, massive MIMO interference suppression, cell-free
//! uplink combining, UAV-to-UAV spectrum sharing, learned handover policies,
//! and line-of-sight MIMO capacity at millimeter-wave and sub-THz bands.

pub mod cellfree;
pub mod channel;
pub mod config;
pub mod error;
pub mod linklevel;
pub mod mmimo;
pub mod mobility;
pub mod powerctrl;
pub mod scenario;
pub mod stats;
pub mod thz;
pub mod u2u;

pub use error::SimError;

// The guide's code blocks compile and run as doc-tests so they cannot
// drift from the library. One module per chapter to localize failures.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/channels.md")]
    mod channels {}
    #[doc = include_str!("../../../book/src/deployment.md")]
    mod deployment {}
    #[doc = include_str!("../../../book/src/mmimo.md")]
    mod mmimo {}
    #[doc = include_str!("../../../book/src/cellfree.md")]
    mod cellfree {}
    #[doc = include_str!("../../../book/src/u2u.md")]
    mod u2u {}
    #[doc = include_str!("../../../book/src/mobility.md")]
    mod mobility {}
    #[doc = include_str!("../../../book/src/thz.md")]
    mod thz {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
