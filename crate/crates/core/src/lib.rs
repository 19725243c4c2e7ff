//! Sharded UTXO validation: canonical types, single-machine and distributed
//! block validation, a wire protocol for node-shards, closed-form analysis and
//! a discrete-event throughput simulator.

pub mod analysis;
pub mod codec;
pub mod fuzz;
pub mod merkle;
pub mod node;
pub mod sim;
pub mod sharding;
pub mod types;
pub mod validation;
pub mod wire;

pub use sharding::{partition_block, partition_utxo, shard_of, BlockShard, Salt, ShardId, Sharder};
pub use types::{Block, BlockHash, BlockHeader, Input, OutPoint, Output, Transaction, TxHash};
pub use validation::{
    validate_block_topological, validate_block_unordered, validate_tx, RejectReason, Rules, UtxoSet,
    ValidationResult,
};
