//! Salted assignment of transactions and outputs to node-shards.
//!
//! Each node draws a random [`Salt`] once. A transaction's salted hash is
//! `SHA-256(tx_hash || salt)` and its shard is the first eight bytes of that
//! digest, read big-endian, modulo the shard count. Outputs live on the shard
//! of the transaction that created them, so an outpoint is routed by its
//! `tx_hash` alone.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{sha256_concat, Block, BlockHash, Transaction, TxHash};
use crate::validation::UtxoSet;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Salt(#[serde(with = "crate::types::hex_bytes")] pub [u8; 32]);

impl Salt {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; 32];
        rng.fill(&mut bytes);
        Self(bytes)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s.trim(), &mut out)?;
        Ok(Self(out))
    }
}

impl fmt::Debug for Salt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Salt({}..)", &self.to_hex()[..12])
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Default, Serialize, Deserialize)]
pub struct ShardId(pub u32);

impl ShardId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ShardId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "shard{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ShardingError {
    #[error("shard count must be at least one")]
    ZeroShards,
}

pub fn new_tx_hash(tx_hash: &TxHash, salt: &Salt) -> [u8; 32] {
    sha256_concat(&[&tx_hash.0, &salt.0])
}

pub fn shard_of(tx_hash: &TxHash, salt: &Salt, shard_count: u32) -> Result<ShardId, ShardingError> {
    if shard_count == 0 {
        return Err(ShardingError::ZeroShards);
    }
    Ok(ShardId(shard_of_unchecked(tx_hash, salt, shard_count)))
}

#[inline]
pub(crate) fn shard_of_unchecked(tx_hash: &TxHash, salt: &Salt, shard_count: u32) -> u32 {
    let salted = new_tx_hash(tx_hash, salt);
    let prefix = u64::from_be_bytes(salted[..8].try_into().unwrap());
    (prefix % shard_count as u64) as u32
}

/// Routing for one node: its salt and shard count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sharder {
    pub salt: Salt,
    pub shard_count: u32,
}

impl Sharder {
    pub fn new(salt: Salt, shard_count: u32) -> Result<Self, ShardingError> {
        if shard_count == 0 {
            return Err(ShardingError::ZeroShards);
        }
        Ok(Self { salt, shard_count })
    }

    pub fn shard_of(&self, tx_hash: &TxHash) -> ShardId {
        ShardId(shard_of_unchecked(tx_hash, &self.salt, self.shard_count))
    }

    pub fn shards(&self) -> impl Iterator<Item = ShardId> {
        (0..self.shard_count).map(ShardId)
    }
}

/// The transactions of one block that belong to one shard.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockShard {
    pub block_hash: BlockHash,
    pub shard_id: ShardId,
    /// Sorted by hash.
    pub txs: Vec<(TxHash, Transaction)>,
}

impl BlockShard {
    pub fn empty(block_hash: BlockHash, shard_id: ShardId) -> Self {
        Self {
            block_hash,
            shard_id,
            txs: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.txs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txs.is_empty()
    }

    pub fn transactions(&self) -> impl Iterator<Item = &Transaction> + '_ {
        self.txs.iter().map(|(_, t)| t)
    }
}

pub fn partition_block(block: &Block, salt: &Salt, shard_count: u32) -> Result<Vec<BlockShard>, ShardingError> {
    let sharder = Sharder::new(*salt, shard_count)?;
    let hash = block.hash();
    let mut parts: Vec<BlockShard> = sharder.shards().map(|id| BlockShard::empty(hash, id)).collect();
    for (h, tx) in block.keyed_txs() {
        parts[sharder.shard_of(h).index()].txs.push((*h, tx.clone()));
    }
    Ok(parts)
}

pub fn partition_utxo(utxo: &UtxoSet, salt: &Salt, shard_count: u32) -> Result<Vec<UtxoSet>, ShardingError> {
    let sharder = Sharder::new(*salt, shard_count)?;
    let mut parts = vec![UtxoSet::new(); shard_count as usize];
    for (point, out) in utxo.iter() {
        parts[sharder.shard_of(&point.tx_hash).index()]
            .insert(*point, *out)
            .expect("source set has unique keys");
    }
    Ok(parts)
}
