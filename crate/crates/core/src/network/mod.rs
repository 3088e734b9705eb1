//! Block and transaction propagation: the shared node logic, a
//! deterministic network simulator and a TCP transport.

mod node_core;
pub mod sim;
pub mod tcp;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::crypto::Digest;
use crate::ledger::{Block, Transaction};

pub use node_core::{BlockEntry, NodeCore, NodeEvent, NodeStats};

/// Gossip and synchronization messages.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Message {
    AnnounceTx(Arc<Transaction>),
    AnnounceBlock(Arc<Block>),
    RequestTip,
    Tip { height: u64, digest: Digest },
    RequestBlocks { from_height: u64 },
    Blocks(Vec<Arc<Block>>),
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::AnnounceTx(_) => "AnnounceTx",
            Message::AnnounceBlock(_) => "AnnounceBlock",
            Message::RequestTip => "RequestTip",
            Message::Tip { .. } => "Tip",
            Message::RequestBlocks { .. } => "RequestBlocks",
            Message::Blocks(_) => "Blocks",
        }
    }
}

/// Where a message produced by [`NodeCore`] goes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outbound {
    /// To every peer.
    Broadcast(Message),
    /// Back to the peer that sent the message being handled.
    Reply(Message),
}
