//! Framed binary protocol between coordinators and node-shards, plus the
//! transports that carry it.
//!
//! Byte layout of a frame:
//!
//! ```text
//! +----------------------+---------+---------------------------+
//! | payload length: u32  | tag: u8 | payload (canonical, LE)    |
//! | big-endian, excludes |         |                            |
//! | the tag byte         |         |                            |
//! +----------------------+---------+---------------------------+
//! ```
//!
//! Tags run from 1 (`Hello`) to 11 (`Headers`) in the order of
//! [`MessageKind::ALL`]. Payload integers are little-endian fixed width and
//! lists carry a `u32` little-endian length prefix, the same conventions as
//! [`crate::codec`].

mod message;
pub mod tcp;
mod topology;
mod transport;

use std::collections::BTreeMap;
use std::fmt;

pub use message::{
    chunk_transactions, decode_frame, decode_message, encode_message, read_frame, write_frame, Message, MessageKind,
    Role, WireError, FRAME_HEADER, MAX_FRAME, TXS_PER_FRAME,
};
pub use topology::{random_peer_graph, NodeEndpoints, Topology};
pub use transport::{LinkClass, MemoryTransport, MessageCounters, Transport, TransportError};

use crate::sharding::{BlockShard, Salt, ShardId, Sharder};
use crate::types::BlockHash;

/// A coordinator (`shard == None`) or one node-shard of a node.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Endpoint {
    pub node: u32,
    pub shard: Option<ShardId>,
}

impl Endpoint {
    pub fn coordinator(node: u32) -> Self {
        Self { node, shard: None }
    }

    pub fn shard(node: u32, id: ShardId) -> Self {
        Self { node, shard: Some(id) }
    }

    pub fn is_coordinator(&self) -> bool {
        self.shard.is_none()
    }
}

impl fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.shard {
            None => write!(f, "n{}/coord", self.node),
            Some(s) => write!(f, "n{}/{}", self.node, s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub from: Endpoint,
    pub to: Endpoint,
    pub msg: Message,
}

impl Envelope {
    pub fn new(from: Endpoint, to: Endpoint, msg: Message) -> Self {
        Self { from, to, msg }
    }
}

/// Answers a GetBlockShard request from the serving shard's stored
/// block-shards: only transactions that map to the requester's shard under
/// the requester's salt and shard count are returned.
pub fn serve_get_block_shard(
    store: &BTreeMap<BlockHash, BlockShard>,
    block_hash: BlockHash,
    requester_shard_id: ShardId,
    requester_salt: Salt,
    requester_shard_count: u32,
) -> Vec<Message> {
    let unknown = || {
        vec![Message::Transactions {
            block_hash,
            txs: Vec::new(),
            last: true,
            unknown_block: true,
        }]
    };
    let (Some(part), Ok(sharder)) = (store.get(&block_hash), Sharder::new(requester_salt, requester_shard_count))
    else {
        return unknown();
    };
    let txs = part
        .txs
        .iter()
        .filter(|(h, _)| sharder.shard_of(h) == requester_shard_id)
        .map(|(_, tx)| tx.clone())
        .collect();
    chunk_transactions(block_hash, txs)
}
