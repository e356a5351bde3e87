pub mod adversary;
pub mod atomix;
pub mod bench;
pub mod byzcuit;
pub mod error;
pub mod ledger;
pub mod message;
pub mod net;
pub mod node;
pub mod oracle;
pub mod report;
pub mod sbac;
pub mod scenario;
pub mod store;
pub mod system;
pub mod tables;

pub use error::{Error, Result};
