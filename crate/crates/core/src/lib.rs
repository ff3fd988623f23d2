//! Kademlia-style storage overlay simulator with residual-performance data
//! placement and a closest-node baseline.

pub mod cluster;
pub mod error;
pub mod experiment;
pub mod id;
pub mod overlay;
pub mod placement;
pub mod residual;
pub mod sim;
pub mod store;

pub use error::{Error, Result};
pub use id::{hash_to_id, xor_distance, Identifier};
pub use overlay::{NodeIndex, Overlay};
