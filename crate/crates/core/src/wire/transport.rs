use std::collections::{BTreeMap, VecDeque};
use std::time::Duration;

use thiserror::Error;

use super::{decode_message, encode_message, Endpoint, Envelope, MessageKind, WireError};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("no route to {0:?}")]
    NoRoute(Endpoint),
    #[error("connection to {0:?} closed")]
    Closed(Endpoint),
}

/// Moves envelopes between endpoints. Delivery must be reliable and keep the
/// order of messages sent from one endpoint to another.
pub trait Transport {
    fn send(&mut self, env: Envelope) -> Result<(), TransportError>;

    /// Next delivered envelope, waiting at most `timeout` where the transport
    /// can block.
    fn recv(&mut self, timeout: Duration) -> Result<Option<Envelope>, TransportError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LinkClass {
    /// Coordinator to one of its own shards, either direction.
    Local,
    /// Between two shards of the same node.
    Sibling,
    /// Between different nodes.
    Remote,
}

impl LinkClass {
    pub fn of(from: &Endpoint, to: &Endpoint) -> Self {
        if from.node != to.node {
            LinkClass::Remote
        } else if from.is_coordinator() || to.is_coordinator() {
            LinkClass::Local
        } else {
            LinkClass::Sibling
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MessageCounters {
    pub by_class: BTreeMap<LinkClass, u64>,
    pub by_kind: BTreeMap<MessageKind, u64>,
    pub bytes: u64,
}

impl MessageCounters {
    pub fn record(&mut self, env: &Envelope, frame_len: usize) {
        *self.by_class.entry(LinkClass::of(&env.from, &env.to)).or_default() += 1;
        *self.by_kind.entry(env.msg.kind()).or_default() += 1;
        self.bytes += frame_len as u64;
    }

    pub fn class(&self, class: LinkClass) -> u64 {
        self.by_class.get(&class).copied().unwrap_or(0)
    }

    pub fn kind(&self, kind: MessageKind) -> u64 {
        self.by_kind.get(&kind).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.by_class.values().sum()
    }
}

/// In-memory transport with a single FIFO queue. Every message is encoded to
/// a frame and decoded again so that in-process runs exercise the codec.
#[derive(Debug, Default)]
pub struct MemoryTransport {
    queue: VecDeque<Envelope>,
    pub counters: MessageCounters,
}

impl MemoryTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn try_recv(&mut self) -> Option<Envelope> {
        self.queue.pop_front()
    }
}

impl Transport for MemoryTransport {
    fn send(&mut self, env: Envelope) -> Result<(), TransportError> {
        let frame = encode_message(&env.msg)?;
        self.counters.record(&env, frame.len());
        let msg = decode_message(&frame)?;
        self.queue.push_back(Envelope { msg, ..env });
        Ok(())
    }

    fn recv(&mut self, _timeout: Duration) -> Result<Option<Envelope>, TransportError> {
        Ok(self.queue.pop_front())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sharding::ShardId;
    use crate::types::BlockHash;
    use crate::wire::Message;

    #[test]
    fn fifo_and_counters() {
        let mut t = MemoryTransport::new();
        let a = Endpoint::shard(0, ShardId(0));
        let b = Endpoint::shard(0, ShardId(1));
        let c = Endpoint::coordinator(1);
        for i in 0..3u8 {
            t.send(Envelope::new(a, b, Message::Inventory { block_hash: BlockHash([i; 32]) }))
                .unwrap();
        }
        t.send(Envelope::new(a, c, Message::GetHeaders { from_hash: BlockHash::ZERO }))
            .unwrap();
        assert_eq!(t.counters.class(LinkClass::Sibling), 3);
        assert_eq!(t.counters.class(LinkClass::Remote), 1);
        assert_eq!(t.counters.kind(MessageKind::Inventory), 3);
        for i in 0..3u8 {
            let env = t.try_recv().unwrap();
            assert_eq!(env.msg, Message::Inventory { block_hash: BlockHash([i; 32]) });
        }
        assert_eq!(t.try_recv().unwrap().to, c);
        assert!(t.try_recv().is_none());
    }
}
