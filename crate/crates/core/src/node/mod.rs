//! Coordinator and node-shard state machines.
//!
//! Every state machine is sans-IO: it consumes an [`Envelope`] or a
//! [`Directive`] and returns the envelopes it wants sent. The coordinator
//! issues directives to its own shards in process; everything else, including
//! traffic between sibling shards, travels through a [`crate::wire::Transport`].

mod cluster;
mod coordinator;
mod host;
mod runtime;
mod scenario;
mod shard;

use serde::{Deserialize, Serialize};

pub use cluster::{validate_block_distributed, Cluster, DistributedRun};
pub use coordinator::{
    BlockRejection, Coordinator, Decision, InventoryError, Pending, ReorgError, ShardStatus,
};
pub use host::NodeHost;
pub use runtime::{run_node, RunOptions, RunReport};
pub use scenario::{run_fork_scenario, ForkReport, ForkScenario};
pub use shard::{MempoolError, Shard, ShardError};

use crate::sharding::Salt;
use crate::types::{BlockHash, Output, Transaction};
use crate::validation::{Rules, UtxoSet};
use crate::wire::Envelope;

/// Instruction from a coordinator to one of its shards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Directive {
    /// Obtain this shard's part of the block from every shard of `peer`, then
    /// validate it once every earlier block has been decided.
    Fetch {
        block_hash: BlockHash,
        peer: u32,
        peer_shard_count: u32,
    },
    Commit {
        block_hash: BlockHash,
    },
    Discard {
        block_hash: BlockHash,
    },
    /// Undo applied blocks, newest first.
    Rollback {
        block_hashes: Vec<BlockHash>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub node_id: u32,
    pub salt: Salt,
    pub shard_count: u32,
    #[serde(default)]
    pub rules: Rules,
    /// Every accepted header must carry exactly this validity stamp.
    #[serde(default)]
    pub stamp_target: [u8; 8],
    /// Blocks deeper than this lose their spent-output records.
    #[serde(default = "default_reorg_depth")]
    pub reorg_depth: usize,
    /// Ticks a queued request or an incomplete fetch may wait before the
    /// block is declared unavailable.
    #[serde(default = "default_timeout_ticks")]
    pub timeout_ticks: u64,
}

fn default_reorg_depth() -> usize {
    100
}

fn default_timeout_ticks() -> u64 {
    50
}

impl NodeConfig {
    pub fn new(node_id: u32, salt: Salt, shard_count: u32) -> Self {
        Self {
            node_id,
            salt,
            shard_count,
            rules: Rules::default(),
            stamp_target: [0; 8],
            reorg_depth: default_reorg_depth(),
            timeout_ticks: default_timeout_ticks(),
        }
    }
}

/// The outputs of a zero-input transaction with nonce 0.
pub fn genesis_utxo(outputs: &[Output]) -> UtxoSet {
    genesis_tx(outputs).output_points().collect()
}

pub fn genesis_tx(outputs: &[Output]) -> Transaction {
    Transaction::new(Vec::new(), outputs.to_vec(), 0)
}

pub(crate) type Outbox = Vec<Envelope>;
