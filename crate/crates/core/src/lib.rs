//! A laboratory for skewed randomized-remapping caches with per-domain
//! logical associativity, and the contention attacks used to evaluate them.

pub mod attack;
pub mod cache;
pub mod cipher;
pub mod cli;
pub mod config;
pub mod domains;
pub mod error;
pub mod experiments;
pub mod overhead;
pub mod selftest;
pub mod tracesim;

pub use cache::{AccessResult, CacheGeometry, CacheState, ReplacementPolicy};
pub use cipher::{CipherKey, LineAddress};
pub use domains::{DomainTable, Page, PageId, Sdid, SecurityDomain};
pub use error::{Error, Result};
