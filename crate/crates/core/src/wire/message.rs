use std::io::{self, Read, Write};

use thiserror::Error;

use crate::codec::{put_bytes, put_len, put_list, put_u32, put_u8, Canonical, DecodeError, Reader};
use crate::sharding::{Salt, ShardId};
use crate::types::{BlockHash, BlockHeader, OutPoint, Output, Transaction, TxHash};
use crate::validation::RejectReason;

/// Largest frame accepted or produced, including the five header bytes.
pub const MAX_FRAME: usize = 4 * 1024 * 1024;
/// Transactions messages carry at most this many transactions.
pub const TXS_PER_FRAME: usize = 1000;
pub const FRAME_HEADER: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Coordinator,
    Shard,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Hello {
        role: Role,
        node_id: u32,
        shard_id: Option<ShardId>,
        salt: Salt,
        shard_count: u32,
    },
    Inventory {
        block_hash: BlockHash,
    },
    GetBlockShard {
        block_hash: BlockHash,
        requester_shard_id: ShardId,
        requester_salt: Salt,
        requester_shard_count: u32,
    },
    Transactions {
        block_hash: BlockHash,
        txs: Vec<Transaction>,
        /// Last message of the stream for this request.
        last: bool,
        /// The serving shard does not know the block.
        unknown_block: bool,
    },
    TxHashes {
        block_hash: BlockHash,
        shard_id: ShardId,
        hashes: Vec<TxHash>,
    },
    OutputRequest {
        block_hash: BlockHash,
        requester_shard_id: ShardId,
        outpoints: Vec<OutPoint>,
    },
    OutputResponse {
        block_hash: BlockHash,
        entries: Vec<(OutPoint, Output)>,
    },
    BadBlock {
        block_hash: BlockHash,
        reason: RejectReason,
    },
    BlockDone {
        block_hash: BlockHash,
        shard_id: ShardId,
    },
    GetHeaders {
        from_hash: BlockHash,
    },
    Headers {
        headers: Vec<BlockHeader>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MessageKind {
    Hello = 1,
    Inventory = 2,
    GetBlockShard = 3,
    Transactions = 4,
    TxHashes = 5,
    OutputRequest = 6,
    OutputResponse = 7,
    BadBlock = 8,
    BlockDone = 9,
    GetHeaders = 10,
    Headers = 11,
}

impl MessageKind {
    pub const ALL: [MessageKind; 11] = [
        MessageKind::Hello,
        MessageKind::Inventory,
        MessageKind::GetBlockShard,
        MessageKind::Transactions,
        MessageKind::TxHashes,
        MessageKind::OutputRequest,
        MessageKind::OutputResponse,
        MessageKind::BadBlock,
        MessageKind::BlockDone,
        MessageKind::GetHeaders,
        MessageKind::Headers,
    ];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get((tag as usize).wrapping_sub(1)).copied()
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("frame of {size} bytes exceeds the {MAX_FRAME}-byte limit")]
    FrameTooLarge { size: usize },
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
    #[error("malformed payload: {0}")]
    Decode(#[from] DecodeError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

impl Canonical for (OutPoint, Output) {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.0.encode_to(out);
        self.1.encode_to(out);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok((OutPoint::decode_from(r)?, Output::decode_from(r)?))
    }
}

fn put_shard(out: &mut Vec<u8>, id: ShardId) {
    put_u32(out, id.0);
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Hello { .. } => MessageKind::Hello,
            Message::Inventory { .. } => MessageKind::Inventory,
            Message::GetBlockShard { .. } => MessageKind::GetBlockShard,
            Message::Transactions { .. } => MessageKind::Transactions,
            Message::TxHashes { .. } => MessageKind::TxHashes,
            Message::OutputRequest { .. } => MessageKind::OutputRequest,
            Message::OutputResponse { .. } => MessageKind::OutputResponse,
            Message::BadBlock { .. } => MessageKind::BadBlock,
            Message::BlockDone { .. } => MessageKind::BlockDone,
            Message::GetHeaders { .. } => MessageKind::GetHeaders,
            Message::Headers { .. } => MessageKind::Headers,
        }
    }

    /// Block the message refers to, when it refers to one.
    pub fn block_hash(&self) -> Option<BlockHash> {
        match self {
            Message::Inventory { block_hash }
            | Message::GetBlockShard { block_hash, .. }
            | Message::Transactions { block_hash, .. }
            | Message::TxHashes { block_hash, .. }
            | Message::OutputRequest { block_hash, .. }
            | Message::OutputResponse { block_hash, .. }
            | Message::BadBlock { block_hash, .. }
            | Message::BlockDone { block_hash, .. } => Some(*block_hash),
            Message::GetHeaders { from_hash } => Some(*from_hash),
            Message::Hello { .. } | Message::Headers { .. } => None,
        }
    }

    fn encode_payload(&self, out: &mut Vec<u8>) {
        match self {
            Message::Hello {
                role,
                node_id,
                shard_id,
                salt,
                shard_count,
            } => {
                put_u8(out, matches!(role, Role::Shard) as u8);
                put_u32(out, *node_id);
                match shard_id {
                    Some(id) => {
                        put_u8(out, 1);
                        put_shard(out, *id);
                    }
                    None => put_u8(out, 0),
                }
                put_bytes(out, &salt.0);
                put_u32(out, *shard_count);
            }
            Message::Inventory { block_hash } => block_hash.encode_to(out),
            Message::GetBlockShard {
                block_hash,
                requester_shard_id,
                requester_salt,
                requester_shard_count,
            } => {
                block_hash.encode_to(out);
                put_shard(out, *requester_shard_id);
                put_bytes(out, &requester_salt.0);
                put_u32(out, *requester_shard_count);
            }
            Message::Transactions {
                block_hash,
                txs,
                last,
                unknown_block,
            } => {
                block_hash.encode_to(out);
                put_u8(out, *last as u8);
                put_u8(out, *unknown_block as u8);
                put_list(out, txs);
            }
            Message::TxHashes {
                block_hash,
                shard_id,
                hashes,
            } => {
                block_hash.encode_to(out);
                put_shard(out, *shard_id);
                put_list(out, hashes);
            }
            Message::OutputRequest {
                block_hash,
                requester_shard_id,
                outpoints,
            } => {
                block_hash.encode_to(out);
                put_shard(out, *requester_shard_id);
                put_list(out, outpoints);
            }
            Message::OutputResponse { block_hash, entries } => {
                block_hash.encode_to(out);
                put_len(out, entries.len());
                for e in entries {
                    e.encode_to(out);
                }
            }
            Message::BadBlock { block_hash, reason } => {
                block_hash.encode_to(out);
                put_u8(out, reason.code());
            }
            Message::BlockDone { block_hash, shard_id } => {
                block_hash.encode_to(out);
                put_shard(out, *shard_id);
            }
            Message::GetHeaders { from_hash } => from_hash.encode_to(out),
            Message::Headers { headers } => put_list(out, headers),
        }
    }

    fn decode_payload(kind: MessageKind, r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        let shard = |r: &mut Reader<'_>| r.u32().map(ShardId);
        Ok(match kind {
            MessageKind::Hello => {
                let role = match r.u8()? {
                    0 => Role::Coordinator,
                    1 => Role::Shard,
                    v => {
                        return Err(DecodeError::InvalidValue {
                            field: "role",
                            value: v as u64,
                        })
                    }
                };
                let node_id = r.u32()?;
                let shard_id = if r.bool("shard id flag")? { Some(shard(r)?) } else { None };
                Message::Hello {
                    role,
                    node_id,
                    shard_id,
                    salt: Salt(r.array()?),
                    shard_count: r.u32()?,
                }
            }
            MessageKind::Inventory => Message::Inventory {
                block_hash: BlockHash::decode_from(r)?,
            },
            MessageKind::GetBlockShard => Message::GetBlockShard {
                block_hash: BlockHash::decode_from(r)?,
                requester_shard_id: shard(r)?,
                requester_salt: Salt(r.array()?),
                requester_shard_count: r.u32()?,
            },
            MessageKind::Transactions => Message::Transactions {
                block_hash: BlockHash::decode_from(r)?,
                last: r.bool("last")?,
                unknown_block: r.bool("unknown block")?,
                txs: r.list(16)?,
            },
            MessageKind::TxHashes => Message::TxHashes {
                block_hash: BlockHash::decode_from(r)?,
                shard_id: shard(r)?,
                hashes: r.list(32)?,
            },
            MessageKind::OutputRequest => Message::OutputRequest {
                block_hash: BlockHash::decode_from(r)?,
                requester_shard_id: shard(r)?,
                outpoints: r.list(OutPoint::ENCODED_LEN)?,
            },
            MessageKind::OutputResponse => Message::OutputResponse {
                block_hash: BlockHash::decode_from(r)?,
                entries: r.list(OutPoint::ENCODED_LEN + Output::ENCODED_LEN)?,
            },
            MessageKind::BadBlock => {
                let block_hash = BlockHash::decode_from(r)?;
                let code = r.u8()?;
                let reason = RejectReason::from_code(code).ok_or(DecodeError::InvalidValue {
                    field: "reason",
                    value: code as u64,
                })?;
                Message::BadBlock { block_hash, reason }
            }
            MessageKind::BlockDone => Message::BlockDone {
                block_hash: BlockHash::decode_from(r)?,
                shard_id: shard(r)?,
            },
            MessageKind::GetHeaders => Message::GetHeaders {
                from_hash: BlockHash::decode_from(r)?,
            },
            MessageKind::Headers => Message::Headers {
                headers: r.list(BlockHeader::ENCODED_LEN)?,
            },
        })
    }

    /// Size of the encoded frame in bytes.
    pub fn frame_len(&self) -> usize {
        let mut payload = Vec::new();
        self.encode_payload(&mut payload);
        FRAME_HEADER + payload.len()
    }
}

/// Frame layout: payload length (`u32`, big-endian, excluding the tag),
/// message tag (`u8`), canonical payload.
pub fn encode_message(msg: &Message) -> Result<Vec<u8>, WireError> {
    let mut frame = vec![0u8; FRAME_HEADER];
    msg.encode_payload(&mut frame);
    let size = frame.len();
    if size > MAX_FRAME {
        return Err(WireError::FrameTooLarge { size });
    }
    let payload_len = (size - FRAME_HEADER) as u32;
    frame[..4].copy_from_slice(&payload_len.to_be_bytes());
    frame[4] = msg.kind().tag();
    Ok(frame)
}

/// Decodes one frame from the front of `buf`. Returns `None` while the frame
/// is incomplete, otherwise the message and the number of bytes consumed.
pub fn decode_frame(buf: &[u8]) -> Result<Option<(Message, usize)>, WireError> {
    if buf.len() < FRAME_HEADER {
        return Ok(None);
    }
    let payload_len = u32::from_be_bytes(buf[..4].try_into().unwrap()) as usize;
    let size = FRAME_HEADER + payload_len;
    if size > MAX_FRAME {
        return Err(WireError::FrameTooLarge { size });
    }
    let kind = MessageKind::from_tag(buf[4]).ok_or(WireError::UnknownTag(buf[4]))?;
    if buf.len() < size {
        return Ok(None);
    }
    let mut reader = Reader::new(&buf[FRAME_HEADER..size]);
    let msg = Message::decode_payload(kind, &mut reader)?;
    reader.finish()?;
    Ok(Some((msg, size)))
}

pub fn decode_message(frame: &[u8]) -> Result<Message, WireError> {
    match decode_frame(frame)? {
        Some((msg, used)) if used == frame.len() => Ok(msg),
        Some((_, used)) => Err(DecodeError::Trailing(frame.len() - used).into()),
        None => Err(DecodeError::Truncated {
            needed: FRAME_HEADER.saturating_sub(frame.len()).max(1),
        }
        .into()),
    }
}

pub fn write_frame<W: Write>(w: &mut W, msg: &Message) -> Result<(), WireError> {
    w.write_all(&encode_message(msg)?)?;
    Ok(())
}

/// Blocking read of one frame. `Ok(None)` on clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Message>, WireError> {
    let mut header = [0u8; FRAME_HEADER];
    match r.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let payload_len = u32::from_be_bytes(header[..4].try_into().unwrap()) as usize;
    let size = FRAME_HEADER + payload_len;
    if size > MAX_FRAME {
        return Err(WireError::FrameTooLarge { size });
    }
    let kind = MessageKind::from_tag(header[4]).ok_or(WireError::UnknownTag(header[4]))?;
    let mut payload = vec![0u8; payload_len];
    r.read_exact(&mut payload)?;
    let mut reader = Reader::new(&payload);
    let msg = Message::decode_payload(kind, &mut reader)?;
    reader.finish()?;
    Ok(Some(msg))
}

/// Splits a block-shard into Transactions messages that respect both the
/// per-frame transaction count and the frame size limit. Always yields at
/// least one message, the last one flagged `last`.
pub fn chunk_transactions(block_hash: BlockHash, txs: Vec<Transaction>) -> Vec<Message> {
    // hash + two flags + list length
    const BASE: usize = FRAME_HEADER + 32 + 2 + 4;
    let mut out = Vec::new();
    let mut current = Vec::new();
    let mut size = BASE;
    for tx in txs {
        let len = tx.encoded_len();
        if !current.is_empty() && (current.len() == TXS_PER_FRAME || size + len > MAX_FRAME) {
            out.push(std::mem::take(&mut current));
            size = BASE;
        }
        size += len;
        current.push(tx);
    }
    out.push(current);
    let n = out.len();
    out.into_iter()
        .enumerate()
        .map(|(i, txs)| Message::Transactions {
            block_hash,
            txs,
            last: i + 1 == n,
            unknown_block: false,
        })
        .collect()
}
