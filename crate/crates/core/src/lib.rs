//! Permissioned blockchain for electronic health records.

pub mod codec;
pub mod consensus;
pub mod crypto;
pub mod ehr;
pub mod ledger;
pub mod network;
pub mod exporter;
pub mod gateway;
pub mod keystore;
pub mod config;
pub mod node;
pub mod demo;
pub mod bench;
