//! Simulation framework for evaluating software inter-VM RowHammer
//! mitigations under configurable DRAM address mappings.

pub mod addrmap;
pub mod allocator;
pub mod dram;
pub mod error;
pub mod geometry;
pub mod gf2;
pub mod harness;
pub mod hex;

pub use addrmap::{builtin_mappings, preset, AddressMapping, Translator, ValidationReport};
pub use error::{HarnessError, MapError, PlanError, TraceError};
pub use geometry::{BankTuple, CoordKind, DramCoordinate, Geometry, RowId};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/mappings.md")]
    mod mappings {}
    #[doc = include_str!("../../../book/src/dram-model.md")]
    mod dram_model {}
    #[doc = include_str!("../../../book/src/placement.md")]
    mod placement {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
