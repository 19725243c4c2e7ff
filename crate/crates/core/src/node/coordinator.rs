use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use super::{Directive, NodeConfig, Outbox};
use crate::merkle::merkle_root_of_hashes;
use crate::sharding::{Salt, ShardId};
use crate::types::{BlockHash, BlockHeader, TxHash};
use crate::validation::RejectReason;
use crate::wire::{Endpoint, Envelope, Message, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum InventoryError {
    #[error("block {0} is already known")]
    DuplicateBlock(BlockHash),
    #[error("node {0} is not a peer")]
    UnknownPeer(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ReorgError {
    #[error("block {0} is unknown")]
    UnknownBlock(BlockHash),
    #[error("the blocks to roll back are not the tip of the main chain")]
    NotASuffix,
    #[error("the replacement branch is not longer than the branch it replaces")]
    NotHeavier,
    #[error("rollback depth {depth} exceeds the retained depth {limit}")]
    TooDeep { depth: usize, limit: usize },
    #[error("blocks are still being validated")]
    Busy,
    #[error("node {0} is not a peer")]
    UnknownPeer(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum BlockRejection {
    #[error("a shard rejected the block: {0:?}")]
    Shard(RejectReason),
    #[error("merkle root does not match the transactions")]
    MerkleMismatch,
    #[error("header does not extend the current tip")]
    BadPrevHash,
    #[error("header height is not one above the tip")]
    BadHeight,
    #[error("header validity stamp is wrong")]
    BadStamp,
    #[error("header transaction count is wrong")]
    CountMismatch,
    #[error("not every shard has reported")]
    Incomplete,
}

impl BlockRejection {
    /// The block may still be valid on another branch.
    pub fn is_contextual(self) -> bool {
        matches!(self, BlockRejection::BadPrevHash | BlockRejection::BadHeight)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShardStatus {
    Awaiting,
    Done,
    Bad(RejectReason),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pending {
    pub peer: u32,
    pub header: Option<BlockHeader>,
    pub statuses: Vec<ShardStatus>,
    pub hashes: Vec<Vec<TxHash>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub block_hash: BlockHash,
    pub outcome: Result<(), BlockRejection>,
}

struct ReorgPlan {
    replaced: Vec<BlockHash>,
    remaining: BTreeSet<BlockHash>,
    applied: Vec<BlockHash>,
    failed: bool,
}

/// Tracks headers and the main chain and orchestrates the node's shards.
pub struct Coordinator {
    node_id: u32,
    salt: Salt,
    shard_count: u32,
    stamp_target: [u8; 8],
    reorg_depth: usize,
    headers: BTreeMap<BlockHash, BlockHeader>,
    main_chain: Vec<BlockHash>,
    on_chain: BTreeSet<BlockHash>,
    peers: BTreeMap<u32, u32>,
    pending: BTreeMap<BlockHash, Pending>,
    order: VecDeque<BlockHash>,
    invalid: BTreeSet<BlockHash>,
    /// Blocks that did not extend the tip when decided, keyed by parent.
    orphans: BTreeMap<BlockHash, Vec<(BlockHash, u32)>>,
    reorg: Option<ReorgPlan>,
    decisions: Vec<Decision>,
}

impl Coordinator {
    pub fn new(cfg: &NodeConfig) -> Self {
        Self {
            node_id: cfg.node_id,
            salt: cfg.salt,
            shard_count: cfg.shard_count,
            stamp_target: cfg.stamp_target,
            reorg_depth: cfg.reorg_depth,
            headers: BTreeMap::new(),
            main_chain: Vec::new(),
            on_chain: BTreeSet::new(),
            peers: BTreeMap::new(),
            pending: BTreeMap::new(),
            order: VecDeque::new(),
            invalid: BTreeSet::new(),
            orphans: BTreeMap::new(),
            reorg: None,
            decisions: Vec::new(),
        }
    }

    pub fn endpoint(&self) -> Endpoint {
        Endpoint::coordinator(self.node_id)
    }

    pub fn hello(&self) -> Message {
        Message::Hello {
            role: Role::Coordinator,
            node_id: self.node_id,
            shard_id: None,
            salt: self.salt,
            shard_count: self.shard_count,
        }
    }

    pub fn main_chain(&self) -> &[BlockHash] {
        &self.main_chain
    }

    pub fn tip(&self) -> BlockHash {
        self.main_chain.last().copied().unwrap_or(BlockHash::ZERO)
    }

    pub fn header(&self, hash: &BlockHash) -> Option<&BlockHeader> {
        self.headers.get(hash)
    }

    pub fn pending(&self, hash: &BlockHash) -> Option<&Pending> {
        self.pending.get(hash)
    }

    pub fn is_idle(&self) -> bool {
        self.pending.is_empty() && self.reorg.is_none()
    }

    pub fn decisions(&self) -> &[Decision] {
        &self.decisions
    }

    pub fn peers(&self) -> impl Iterator<Item = u32> + '_ {
        self.peers.keys().copied()
    }

    pub fn add_peer(&mut self, node: u32, shard_count: u32) {
        self.peers.insert(node, shard_count);
    }

    /// Makes a header known without validating it, for blocks this node
    /// produced.
    pub fn seed_header(&mut self, header: BlockHeader) {
        self.headers.insert(header.hash(), header);
    }

    fn broadcast(&self, directive: Directive) -> Vec<(ShardId, Directive)> {
        (0..self.shard_count).map(|i| (ShardId(i), directive.clone())).collect()
    }

    pub fn on_inventory(&mut self, block_hash: BlockHash, peer: u32) -> Result<Vec<(ShardId, Directive)>, InventoryError> {
        let &peer_shard_count = self.peers.get(&peer).ok_or(InventoryError::UnknownPeer(peer))?;
        if self.on_chain.contains(&block_hash)
            || self.pending.contains_key(&block_hash)
            || self.invalid.contains(&block_hash)
        {
            return Err(InventoryError::DuplicateBlock(block_hash));
        }
        Ok(self.begin(block_hash, peer, peer_shard_count))
    }

    fn begin(&mut self, block_hash: BlockHash, peer: u32, peer_shard_count: u32) -> Vec<(ShardId, Directive)> {
        let n = self.shard_count as usize;
        self.pending.insert(block_hash, Pending {
            peer,
            header: self.headers.get(&block_hash).copied(),
            statuses: vec![ShardStatus::Awaiting; n],
            hashes: vec![Vec::new(); n],
        });
        self.order.push_back(block_hash);
        self.broadcast(Directive::Fetch {
            block_hash,
            peer,
            peer_shard_count,
        })
    }

    /// Header checks against the current tip plus the veto and Merkle checks
    /// over the shard reports.
    pub fn finalize(
        &self,
        header: &BlockHeader,
        statuses: &[ShardStatus],
        hashes: &[Vec<TxHash>],
    ) -> Result<(), BlockRejection> {
        if statuses.len() != self.shard_count as usize || statuses.contains(&ShardStatus::Awaiting) {
            return Err(BlockRejection::Incomplete);
        }
        if header.prev_hash != self.tip() {
            return Err(BlockRejection::BadPrevHash);
        }
        if header.height != self.main_chain.len() as u64 + 1 {
            return Err(BlockRejection::BadHeight);
        }
        if let Some(reason) = statuses.iter().find_map(|s| match s {
            ShardStatus::Bad(r) => Some(*r),
            _ => None,
        }) {
            return Err(BlockRejection::Shard(reason));
        }
        if header.validity_stamp != self.stamp_target {
            return Err(BlockRejection::BadStamp);
        }
        let leaves: Vec<TxHash> = hashes.iter().flatten().copied().collect();
        if leaves.len() != header.tx_count as usize {
            return Err(BlockRejection::CountMismatch);
        }
        match merkle_root_of_hashes(&leaves) {
            Ok(root) if root == header.merkle_root => Ok(()),
            _ => Err(BlockRejection::MerkleMismatch),
        }
    }

    /// Handles a message and returns envelopes to send plus directives for
    /// the local shards.
    pub fn on_message(&mut self, env: &Envelope) -> (Outbox, Vec<(ShardId, Directive)>) {
        let mut out = Vec::new();
        let mut directives = Vec::new();
        let local_shard = (env.from.node == self.node_id)
            .then_some(env.from.shard)
            .flatten()
            .filter(|s| s.0 < self.shard_count);
        match (&env.msg, local_shard) {
            (
                Message::Hello {
                    role: Role::Coordinator,
                    node_id,
                    shard_count,
                    ..
                },
                None,
            ) if *node_id != self.node_id => {
                self.add_peer(*node_id, *shard_count);
            }
            (Message::Inventory { block_hash }, None) if env.from.is_coordinator() => {
                if let Ok(d) = self.on_inventory(*block_hash, env.from.node) {
                    directives = d;
                    if !self.headers.contains_key(block_hash) {
                        out.push(Envelope::new(self.endpoint(), env.from, Message::GetHeaders {
                            from_hash: *block_hash,
                        }));
                    }
                }
            }
            (Message::GetHeaders { from_hash }, _) => {
                out.push(Envelope::new(self.endpoint(), env.from, Message::Headers {
                    headers: self.headers_from(from_hash),
                }));
            }
            (Message::Headers { headers }, None) => {
                for h in headers {
                    let hash = h.hash();
                    self.headers.insert(hash, *h);
                    if let Some(p) = self.pending.get_mut(&hash) {
                        p.header = Some(*h);
                    }
                }
            }
            (Message::TxHashes { block_hash, hashes, .. }, Some(s)) => {
                if let Some(p) = self.pending.get_mut(block_hash) {
                    p.hashes[s.index()] = hashes.clone();
                }
            }
            (Message::BlockDone { block_hash, .. }, Some(s)) => self.set_status(block_hash, s, ShardStatus::Done),
            (Message::BadBlock { block_hash, reason }, Some(s)) => {
                self.set_status(block_hash, s, ShardStatus::Bad(*reason))
            }
            _ => {}
        }
        let (more_out, more_directives) = self.try_finalize();
        out.extend(more_out);
        directives.extend(more_directives);
        (out, directives)
    }

    fn set_status(&mut self, block_hash: &BlockHash, shard: ShardId, status: ShardStatus) {
        if let Some(p) = self.pending.get_mut(block_hash) {
            let slot = &mut p.statuses[shard.index()];
            if *slot == ShardStatus::Awaiting {
                *slot = status;
            }
        }
    }

    fn headers_from(&self, from: &BlockHash) -> Vec<BlockHeader> {
        let mut out: Vec<BlockHeader> = self.headers.get(from).copied().into_iter().collect();
        if let Some(pos) = self.main_chain.iter().position(|h| h == from) {
            out.extend(self.main_chain[pos + 1..].iter().filter_map(|h| self.headers.get(h)));
        }
        out
    }

    /// Decides blocks in the order their validation was requested.
    fn try_finalize(&mut self) -> (Outbox, Vec<(ShardId, Directive)>) {
        let mut out = Vec::new();
        let mut directives = Vec::new();
        while let Some(&block_hash) = self.order.front() {
            let p = &self.pending[&block_hash];
            let Some(header) = p.header else { break };
            if p.statuses.contains(&ShardStatus::Awaiting) {
                break;
            }
            let outcome = self.finalize(&header, &p.statuses, &p.hashes);
            let p = self.pending.remove(&block_hash).unwrap();
            self.order.pop_front();
            self.decisions.push(Decision { block_hash, outcome });
            match outcome {
                Ok(()) => {
                    self.main_chain.push(block_hash);
                    self.on_chain.insert(block_hash);
                    directives.extend(self.broadcast(Directive::Commit { block_hash }));
                    for &peer in self.peers.keys() {
                        if peer != p.peer {
                            out.push(Envelope::new(self.endpoint(), Endpoint::coordinator(peer), Message::Inventory {
                                block_hash,
                            }));
                        }
                    }
                    if let Some(children) = self.orphans.remove(&block_hash) {
                        for (child, peer) in children {
                            if !self.pending.contains_key(&child) && !self.on_chain.contains(&child) {
                                let count = self.peers.get(&peer).copied().unwrap_or(0);
                                directives.extend(self.begin(child, peer, count));
                            }
                        }
                    }
                }
                Err(rejection) => {
                    directives.extend(self.broadcast(Directive::Discard { block_hash }));
                    if rejection.is_contextual() {
                        let entry = self.orphans.entry(header.prev_hash).or_default();
                        if !entry.iter().any(|(h, _)| *h == block_hash) {
                            entry.push((block_hash, p.peer));
                        }
                    } else {
                        self.invalid.insert(block_hash);
                    }
                }
            }
            if let Some(plan) = self.reorg.as_mut() {
                if plan.remaining.remove(&block_hash) {
                    match outcome {
                        Ok(()) => plan.applied.push(block_hash),
                        Err(_) => plan.failed = true,
                    }
                }
                if plan.remaining.is_empty() {
                    let plan = self.reorg.take().unwrap();
                    if plan.failed {
                        directives.extend(self.restore(plan));
                    }
                }
            }
        }
        (out, directives)
    }

    /// Returns to the replaced branch after the replacement failed.
    fn restore(&mut self, plan: ReorgPlan) -> Vec<(ShardId, Directive)> {
        let mut directives = Vec::new();
        if !plan.applied.is_empty() {
            for h in &plan.applied {
                self.on_chain.remove(h);
            }
            self.main_chain.truncate(self.main_chain.len() - plan.applied.len());
            directives.extend(self.broadcast(Directive::Rollback {
                block_hashes: plan.applied.iter().rev().copied().collect(),
            }));
        }
        for h in plan.replaced {
            directives.extend(self.begin(h, self.node_id, self.shard_count));
        }
        directives
    }

    /// Switches the main chain to a heavier branch: `rollback` lists the
    /// current tip blocks oldest first, `replacement` the new branch oldest
    /// first, to be fetched from `peer`.
    pub fn reorg(
        &mut self,
        rollback: &[BlockHash],
        replacement: &[BlockHash],
        peer: u32,
    ) -> Result<(Outbox, Vec<(ShardId, Directive)>), ReorgError> {
        if !self.is_idle() {
            return Err(ReorgError::Busy);
        }
        let &peer_shard_count = self.peers.get(&peer).ok_or(ReorgError::UnknownPeer(peer))?;
        if let Some(h) = rollback.iter().find(|h| !self.headers.contains_key(h)) {
            return Err(ReorgError::UnknownBlock(*h));
        }
        if rollback.len() > self.main_chain.len() || !self.main_chain.ends_with(rollback) {
            return Err(ReorgError::NotASuffix);
        }
        if rollback.len() > self.reorg_depth {
            return Err(ReorgError::TooDeep {
                depth: rollback.len(),
                limit: self.reorg_depth,
            });
        }
        if replacement.len() <= rollback.len() {
            return Err(ReorgError::NotHeavier);
        }

        let mut directives = Vec::new();
        if !rollback.is_empty() {
            self.main_chain.truncate(self.main_chain.len() - rollback.len());
            for h in rollback {
                self.on_chain.remove(h);
            }
            directives.extend(self.broadcast(Directive::Rollback {
                block_hashes: rollback.iter().rev().copied().collect(),
            }));
        }
        let mut out = Vec::new();
        for h in replacement {
            self.invalid.remove(h);
            directives.extend(self.begin(*h, peer, peer_shard_count));
        }
        if let Some(first) = replacement.first().filter(|h| !self.headers.contains_key(h)) {
            out.push(Envelope::new(self.endpoint(), Endpoint::coordinator(peer), Message::GetHeaders {
                from_hash: *first,
            }));
        }
        for h in replacement.iter().skip(1).filter(|h| !self.headers.contains_key(h)) {
            out.push(Envelope::new(self.endpoint(), Endpoint::coordinator(peer), Message::GetHeaders {
                from_hash: *h,
            }));
        }
        self.reorg = Some(ReorgPlan {
            replaced: rollback.to_vec(),
            remaining: replacement.iter().copied().collect(),
            applied: Vec::new(),
            failed: false,
        });
        Ok((out, directives))
    }
}
