//! Domain types of the UTXO model and their canonical encodings.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{put_bytes, put_list, put_u32, put_u64, Canonical, DecodeError, Reader};

pub fn sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

/// SHA-256 over the concatenation of `parts`, without an intermediate buffer.
pub fn sha256_concat(parts: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
    }
    hasher.finalize().into()
}

macro_rules! digest_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
        pub struct $name(pub [u8; 32]);

        impl $name {
            pub const ZERO: Self = Self([0u8; 32]);

            pub fn as_bytes(&self) -> &[u8; 32] {
                &self.0
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

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({}..)", stringify!($name), &self.to_hex()[..12])
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl Canonical for $name {
            fn encode_to(&self, out: &mut Vec<u8>) {
                put_bytes(out, &self.0);
            }

            fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
                Ok(Self(r.array()?))
            }
        }
    };
}

digest_newtype!(
    /// SHA-256 of a transaction's canonical encoding.
    TxHash
);
digest_newtype!(
    /// SHA-256 of a block header's canonical encoding.
    BlockHash
);

/// Reference to the `index`-th output of transaction `tx_hash`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct OutPoint {
    pub tx_hash: TxHash,
    pub index: u32,
}

impl OutPoint {
    pub const ENCODED_LEN: usize = 36;

    pub fn new(tx_hash: TxHash, index: u32) -> Self {
        Self { tx_hash, index }
    }
}

impl Canonical for OutPoint {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.tx_hash.encode_to(out);
        put_u32(out, self.index);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            tx_hash: TxHash::decode_from(r)?,
            index: r.u32()?,
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Output {
    pub value: u64,
    /// Authorization tag; an input spending this output must carry it as witness.
    #[serde(with = "hex_bytes")]
    pub owner: [u8; 32],
}

impl Output {
    pub const ENCODED_LEN: usize = 40;

    pub fn new(value: u64, owner: [u8; 32]) -> Self {
        Self { value, owner }
    }
}

impl Canonical for Output {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_u64(out, self.value);
        put_bytes(out, &self.owner);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            value: r.u64()?,
            owner: r.array()?,
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Input {
    pub prev: OutPoint,
    pub witness: [u8; 32],
}

impl Input {
    pub const ENCODED_LEN: usize = 68;

    pub fn new(prev: OutPoint, witness: [u8; 32]) -> Self {
        Self { prev, witness }
    }
}

impl Canonical for Input {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.prev.encode_to(out);
        put_bytes(out, &self.witness);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            prev: OutPoint::decode_from(r)?,
            witness: r.array()?,
        })
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Transaction {
    pub inputs: Vec<Input>,
    pub outputs: Vec<Output>,
    /// Free field used for uniqueness and for grinding.
    pub nonce: [u8; 8],
}

impl Transaction {
    pub fn new(inputs: Vec<Input>, outputs: Vec<Output>, nonce: u64) -> Self {
        Self {
            inputs,
            outputs,
            nonce: nonce.to_le_bytes(),
        }
    }

    pub fn hash(&self) -> TxHash {
        hash_tx(self)
    }

    /// Number of inputs plus outputs, the quantity bounded by the size limit.
    pub fn size(&self) -> usize {
        self.inputs.len() + self.outputs.len()
    }

    pub fn output_points(&self) -> impl Iterator<Item = (OutPoint, Output)> + '_ {
        let hash = self.hash();
        self.outputs
            .iter()
            .enumerate()
            .map(move |(i, o)| (OutPoint::new(hash, i as u32), *o))
    }

    pub fn encoded_len(&self) -> usize {
        4 + self.inputs.len() * Input::ENCODED_LEN + 4 + self.outputs.len() * Output::ENCODED_LEN + 8
    }
}

impl Canonical for Transaction {
    fn encode_to(&self, out: &mut Vec<u8>) {
        put_list(out, &self.inputs);
        put_list(out, &self.outputs);
        put_bytes(out, &self.nonce);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            inputs: r.list(Input::ENCODED_LEN)?,
            outputs: r.list(Output::ENCODED_LEN)?,
            nonce: r.array()?,
        })
    }
}

pub fn encode_tx(tx: &Transaction) -> Vec<u8> {
    tx.to_bytes()
}

pub fn decode_tx(bytes: &[u8]) -> Result<Transaction, DecodeError> {
    Transaction::from_bytes(bytes)
}

pub fn hash_tx(tx: &Transaction) -> TxHash {
    let mut buf = Vec::with_capacity(tx.encoded_len());
    tx.encode_to(&mut buf);
    TxHash(sha256(&buf))
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct BlockHeader {
    pub prev_hash: BlockHash,
    pub merkle_root: [u8; 32],
    pub height: u64,
    /// Opaque proof-of-work placeholder, compared against a configured target.
    pub validity_stamp: [u8; 8],
    pub tx_count: u32,
}

impl BlockHeader {
    pub const ENCODED_LEN: usize = 32 + 32 + 8 + 8 + 4;

    pub fn hash(&self) -> BlockHash {
        BlockHash(sha256(&self.to_bytes()))
    }
}

impl Canonical for BlockHeader {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.prev_hash.encode_to(out);
        put_bytes(out, &self.merkle_root);
        put_u64(out, self.height);
        put_bytes(out, &self.validity_stamp);
        put_u32(out, self.tx_count);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Self {
            prev_hash: BlockHash::decode_from(r)?,
            merkle_root: r.array()?,
            height: r.u64()?,
            validity_stamp: r.array()?,
            tx_count: r.u32()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BlockError {
    #[error("block contains no transactions")]
    EmptyBlock,
    #[error("transaction {0} appears twice")]
    DuplicateTx(TxHash),
    #[error("header declares {declared} transactions, block has {actual}")]
    CountMismatch { declared: u32, actual: usize },
}

/// A header plus an unordered set of transactions.
///
/// Transactions are kept sorted by hash so that equality and encoding do not
/// depend on the order they were supplied in.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Block {
    header: BlockHeader,
    txs: Vec<(TxHash, Transaction)>,
}

impl Block {
    pub fn new(header: BlockHeader, txs: Vec<Transaction>) -> Result<Self, BlockError> {
        let mut keyed: Vec<(TxHash, Transaction)> = txs.into_iter().map(|t| (t.hash(), t)).collect();
        keyed.sort_by_key(|k| k.0);
        if let Some(w) = keyed.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(BlockError::DuplicateTx(w[0].0));
        }
        if header.tx_count as usize != keyed.len() {
            return Err(BlockError::CountMismatch {
                declared: header.tx_count,
                actual: keyed.len(),
            });
        }
        Ok(Self { header, txs: keyed })
    }

    /// Builds a block on top of `prev` whose header commits to `txs`.
    pub fn assemble(
        prev_hash: BlockHash,
        height: u64,
        validity_stamp: [u8; 8],
        txs: Vec<Transaction>,
    ) -> Result<Self, BlockError> {
        let hashes: Vec<TxHash> = txs.iter().map(hash_tx).collect();
        let merkle_root = crate::merkle::merkle_root_of_hashes(&hashes).map_err(|_| BlockError::EmptyBlock)?;
        let header = BlockHeader {
            prev_hash,
            merkle_root,
            height,
            validity_stamp,
            tx_count: txs.len() as u32,
        };
        Self::new(header, txs)
    }

    pub fn header(&self) -> &BlockHeader {
        &self.header
    }

    pub fn hash(&self) -> BlockHash {
        self.header.hash()
    }

    pub fn txs(&self) -> impl ExactSizeIterator<Item = &Transaction> + '_ {
        self.txs.iter().map(|(_, t)| t)
    }

    pub fn keyed_txs(&self) -> &[(TxHash, Transaction)] {
        &self.txs
    }

    pub fn tx_hashes(&self) -> BTreeSet<TxHash> {
        self.txs.iter().map(|(h, _)| *h).collect()
    }

    pub fn into_txs(self) -> Vec<Transaction> {
        self.txs.into_iter().map(|(_, t)| t).collect()
    }
}

impl Canonical for Block {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.header.encode_to(out);
        crate::codec::put_len(out, self.txs.len());
        for (_, tx) in &self.txs {
            tx.encode_to(out);
        }
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let header = BlockHeader::decode_from(r)?;
        let txs: Vec<Transaction> = r.list(16)?;
        let count = txs.len();
        Block::new(header, txs).map_err(|_| DecodeError::InvalidValue {
            field: "block transactions",
            value: count as u64,
        })
    }
}

pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let mut out = [0u8; 32];
        hex::decode_to_slice(s.trim(), &mut out).map_err(serde::de::Error::custom)?;
        Ok(out)
    }
}
