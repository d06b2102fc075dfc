//! Simulation and control of NB-IoT uplink resource configuration.

pub mod baseline;
pub mod deep;
pub mod env;
pub mod error;
pub mod fapprox;
pub mod harness;
pub mod mac;
pub mod phy;
pub mod tabular;
pub mod traffic;
pub mod types;

// The guide's code listings run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/random-access.md")]
    mod random_access {}
    #[doc = include_str!("../../../book/src/learning.md")]
    mod learning {}
    #[doc = include_str!("../../../book/src/multi-group.md")]
    mod multi_group {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
