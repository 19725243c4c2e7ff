//! Merkle root over a transaction set.
//!
//! Leaves are transaction hashes sorted ascending by byte value, so the root
//! depends only on the set. Internal nodes are `SHA-256(left || right)`; an
//! odd node at the end of a level is paired with itself. A single-leaf tree
//! has the leaf itself as root.

use thiserror::Error;

use crate::types::{hash_tx, sha256_concat, Transaction, TxHash};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MerkleError {
    #[error("cannot compute the Merkle root of an empty block")]
    EmptyBlock,
}

pub fn merkle_root(txs: &[Transaction]) -> Result<[u8; 32], MerkleError> {
    let hashes: Vec<TxHash> = txs.iter().map(hash_tx).collect();
    merkle_root_of_hashes(&hashes)
}

/// Root over leaf hashes given in any order.
pub fn merkle_root_of_hashes(hashes: &[TxHash]) -> Result<[u8; 32], MerkleError> {
    if hashes.is_empty() {
        return Err(MerkleError::EmptyBlock);
    }
    let mut level: Vec<[u8; 32]> = hashes.iter().map(|h| h.0).collect();
    level.sort_unstable();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| {
                let right = pair.get(1).unwrap_or(&pair[0]);
                sha256_concat(&[&pair[0], right])
            })
            .collect();
    }
    Ok(level[0])
}
