use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use super::{Directive, NodeConfig, Outbox};
use crate::sharding::{BlockShard, ShardId, Sharder};
use crate::types::{BlockHash, OutPoint, Output, Transaction, TxHash};
use crate::validation::{validate_tx, RejectReason, Rules, UtxoSet};
use crate::wire::{serve_get_block_shard, Endpoint, Envelope, Message};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MempoolError {
    #[error("transaction belongs to {actual}, not {expected}")]
    WrongShard { expected: ShardId, actual: ShardId },
    #[error("transaction {0} is already in the mempool")]
    Duplicate(TxHash),
    #[error("transaction size {size} exceeds the limit {limit}")]
    OversizeTx { size: usize, limit: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShardError {
    #[error("no finished validation for block {0} to decide")]
    UnexpectedDecision(BlockHash),
    #[error("block {0} is not the most recently applied block")]
    NotLatest(BlockHash),
    #[error("spent outputs of block {0} are no longer recorded")]
    MissingLog(BlockHash),
    #[error("cannot roll back while a block is being validated")]
    Busy,
    #[error("rollback of block {0} found inconsistent state")]
    Inconsistent(BlockHash),
}

struct Fetch {
    remaining: BTreeSet<ShardId>,
    txs: BTreeMap<TxHash, Transaction>,
    unavailable: bool,
    started: u64,
}

/// Validation of one block-shard in progress.
struct Round {
    block_hash: BlockHash,
    txs: Vec<(TxHash, Transaction)>,
    verdict: Option<RejectReason>,
    produced: Vec<OutPoint>,
    spent: Vec<(OutPoint, Output)>,
    consumed: BTreeSet<OutPoint>,
    requests: BTreeMap<ShardId, Vec<OutPoint>>,
    served: bool,
    responses: BTreeMap<ShardId, Vec<(OutPoint, Output)>>,
    finished: bool,
}

impl Round {
    fn fail(&mut self, reason: RejectReason) {
        self.verdict.get_or_insert(reason);
    }

    fn miss(&self, point: &OutPoint) -> RejectReason {
        if self.consumed.contains(point) {
            RejectReason::DoubleSpend
        } else {
            RejectReason::MissingInput
        }
    }
}

struct QueuedRequest {
    from: ShardId,
    outpoints: Vec<OutPoint>,
    arrived: u64,
}

/// One node-shard: a slice of the UTXO set, mempool and block storage.
pub struct Shard {
    node_id: u32,
    id: ShardId,
    sharder: Sharder,
    rules: Rules,
    reorg_depth: usize,
    timeout_ticks: u64,
    utxo: UtxoSet,
    mempool: BTreeMap<TxHash, Transaction>,
    block_shards: BTreeMap<BlockHash, BlockShard>,
    servable: BTreeSet<BlockHash>,
    spent_log: BTreeMap<BlockHash, Vec<(OutPoint, Output)>>,
    applied: Vec<BlockHash>,
    queue: VecDeque<BlockHash>,
    fetches: BTreeMap<BlockHash, Fetch>,
    round: Option<Round>,
    early: BTreeMap<BlockHash, Vec<QueuedRequest>>,
    now: u64,
}

impl Shard {
    pub fn new(cfg: &NodeConfig, id: ShardId, utxo: UtxoSet) -> Self {
        let sharder = Sharder::new(cfg.salt, cfg.shard_count).expect("node has at least one shard");
        Self {
            node_id: cfg.node_id,
            id,
            sharder,
            rules: cfg.rules,
            reorg_depth: cfg.reorg_depth,
            timeout_ticks: cfg.timeout_ticks,
            utxo,
            mempool: BTreeMap::new(),
            block_shards: BTreeMap::new(),
            servable: BTreeSet::new(),
            spent_log: BTreeMap::new(),
            applied: Vec::new(),
            queue: VecDeque::new(),
            fetches: BTreeMap::new(),
            round: None,
            early: BTreeMap::new(),
            now: 0,
        }
    }

    pub fn id(&self) -> ShardId {
        self.id
    }

    pub fn endpoint(&self) -> Endpoint {
        Endpoint::shard(self.node_id, self.id)
    }

    pub fn utxo(&self) -> &UtxoSet {
        &self.utxo
    }

    pub fn spent_log(&self, block_hash: &BlockHash) -> Option<&[(OutPoint, Output)]> {
        self.spent_log.get(block_hash).map(Vec::as_slice)
    }

    pub fn block_shard(&self, block_hash: &BlockHash) -> Option<&BlockShard> {
        self.block_shards.get(block_hash)
    }

    pub fn applied(&self) -> &[BlockHash] {
        &self.applied
    }

    pub fn mempool(&self) -> impl Iterator<Item = &Transaction> + '_ {
        self.mempool.values()
    }

    /// Nothing queued, fetching or under validation.
    pub fn is_idle(&self) -> bool {
        self.round.is_none() && self.queue.is_empty() && self.fetches.is_empty()
    }

    pub fn mempool_accept(&mut self, tx: Transaction) -> Result<TxHash, MempoolError> {
        let hash = tx.hash();
        let actual = self.sharder.shard_of(&hash);
        if actual != self.id {
            return Err(MempoolError::WrongShard {
                expected: self.id,
                actual,
            });
        }
        if tx.size() > self.rules.tx_size_limit {
            return Err(MempoolError::OversizeTx {
                size: tx.size(),
                limit: self.rules.tx_size_limit,
            });
        }
        if self.mempool.contains_key(&hash) {
            return Err(MempoolError::Duplicate(hash));
        }
        self.mempool.insert(hash, tx);
        Ok(hash)
    }

    /// Stores a block-shard this node produced itself so it can be served.
    pub fn seed(&mut self, part: BlockShard) {
        self.servable.insert(part.block_hash);
        self.block_shards.insert(part.block_hash, part);
    }

    pub fn on_directive(&mut self, directive: &Directive) -> Result<Outbox, ShardError> {
        match directive {
            Directive::Fetch {
                block_hash,
                peer,
                peer_shard_count,
            } => Ok(self.fetch(*block_hash, *peer, *peer_shard_count)),
            Directive::Commit { block_hash } => self.commit(*block_hash),
            Directive::Discard { block_hash } => self.discard(*block_hash),
            Directive::Rollback { block_hashes } => {
                for h in block_hashes {
                    self.rollback_one(*h)?;
                }
                Ok(Vec::new())
            }
        }
    }

    pub fn on_message(&mut self, env: &Envelope) -> Outbox {
        let Some(from_shard) = env.from.shard else {
            return Vec::new();
        };
        match &env.msg {
            Message::GetBlockShard {
                block_hash,
                requester_shard_id,
                requester_salt,
                requester_shard_count,
            } => {
                let empty = BTreeMap::new();
                let store = if self.servable.contains(block_hash) {
                    &self.block_shards
                } else {
                    &empty
                };
                serve_get_block_shard(store, *block_hash, *requester_shard_id, *requester_salt, *requester_shard_count)
                    .into_iter()
                    .map(|msg| Envelope::new(self.endpoint(), env.from, msg))
                    .collect()
            }
            Message::Transactions {
                block_hash,
                txs,
                last,
                unknown_block,
            } => self.on_transactions(*block_hash, from_shard, txs, *last, *unknown_block),
            Message::OutputRequest {
                block_hash,
                requester_shard_id,
                outpoints,
            } if env.from.node == self.node_id => self.on_request(*block_hash, *requester_shard_id, outpoints.clone()),
            Message::OutputResponse { block_hash, entries } if env.from.node == self.node_id => {
                match &mut self.round {
                    Some(r) if r.block_hash == *block_hash && !r.finished => {
                        r.responses.entry(from_shard).or_insert_with(|| entries.clone());
                        self.progress()
                    }
                    _ => Vec::new(),
                }
            }
            _ => Vec::new(),
        }
    }

    /// Advances the local clock by one tick and gives up on stale waits.
    pub fn tick(&mut self) -> Outbox {
        self.now += 1;
        let deadline = self.now.saturating_sub(self.timeout_ticks);
        let mut out = Vec::new();
        for f in self.fetches.values_mut() {
            if !f.remaining.is_empty() && f.started < deadline {
                f.remaining.clear();
                f.unavailable = true;
            }
        }
        let stale: Vec<BlockHash> = self
            .early
            .iter()
            .filter(|(h, reqs)| !self.queue.contains(h) && reqs.iter().any(|r| r.arrived < deadline))
            .map(|(h, _)| *h)
            .collect();
        for h in stale {
            for req in self.early.remove(&h).unwrap_or_default() {
                out.push(self.to_sibling(req.from, Message::OutputResponse {
                    block_hash: h,
                    entries: Vec::new(),
                }));
            }
            out.push(self.to_coordinator(Message::BadBlock {
                block_hash: h,
                reason: RejectReason::Unavailable,
            }));
        }
        out.extend(self.advance());
        out
    }

    fn to_coordinator(&self, msg: Message) -> Envelope {
        Envelope::new(self.endpoint(), Endpoint::coordinator(self.node_id), msg)
    }

    fn to_sibling(&self, id: ShardId, msg: Message) -> Envelope {
        Envelope::new(self.endpoint(), Endpoint::shard(self.node_id, id), msg)
    }

    fn siblings(&self) -> impl Iterator<Item = ShardId> + '_ {
        self.sharder.shards().filter(move |s| *s != self.id)
    }

    fn fetch(&mut self, block_hash: BlockHash, peer: u32, peer_shard_count: u32) -> Outbox {
        let busy = self.round.as_ref().is_some_and(|r| r.block_hash == block_hash);
        if busy || self.queue.contains(&block_hash) {
            return Vec::new();
        }
        self.queue.push_back(block_hash);
        let mut out = Vec::new();
        if !self.block_shards.contains_key(&block_hash) && !self.fetches.contains_key(&block_hash) {
            let remaining: BTreeSet<ShardId> = (0..peer_shard_count).map(ShardId).collect();
            self.fetches.insert(block_hash, Fetch {
                unavailable: remaining.is_empty(),
                remaining,
                txs: BTreeMap::new(),
                started: self.now,
            });
            for j in 0..peer_shard_count {
                out.push(Envelope::new(self.endpoint(), Endpoint::shard(peer, ShardId(j)), Message::GetBlockShard {
                    block_hash,
                    requester_shard_id: self.id,
                    requester_salt: self.sharder.salt,
                    requester_shard_count: self.sharder.shard_count,
                }));
            }
        }
        out.extend(self.advance());
        out
    }

    fn on_transactions(
        &mut self,
        block_hash: BlockHash,
        from: ShardId,
        txs: &[Transaction],
        last: bool,
        unknown_block: bool,
    ) -> Outbox {
        let Some(f) = self.fetches.get_mut(&block_hash) else {
            return Vec::new();
        };
        if !f.remaining.contains(&from) {
            return Vec::new();
        }
        f.unavailable |= unknown_block;
        for tx in txs {
            let h = tx.hash();
            // A transaction that is not ours was served wrongly; leaving it out
            // makes the Merkle check fail.
            if self.sharder.shard_of(&h) == self.id {
                f.txs.insert(h, tx.clone());
            }
        }
        if last {
            f.remaining.remove(&from);
        }
        self.advance()
    }

    fn on_request(&mut self, block_hash: BlockHash, from: ShardId, outpoints: Vec<OutPoint>) -> Outbox {
        match &mut self.round {
            Some(r) if r.block_hash == block_hash => {
                if !r.served {
                    r.requests.entry(from).or_insert(outpoints);
                }
                self.progress()
            }
            _ => {
                self.early.entry(block_hash).or_default().push(QueuedRequest {
                    from,
                    outpoints,
                    arrived: self.now,
                });
                Vec::new()
            }
        }
    }

    /// Starts validating the next queued block once its data is complete.
    fn advance(&mut self) -> Outbox {
        if self.round.is_some() {
            return Vec::new();
        }
        let Some(&block_hash) = self.queue.front() else {
            return Vec::new();
        };
        let mut unavailable = false;
        if !self.block_shards.contains_key(&block_hash) {
            match self.fetches.get(&block_hash) {
                Some(f) if f.remaining.is_empty() => {}
                _ => return Vec::new(),
            }
            let f = self.fetches.remove(&block_hash).unwrap();
            if f.unavailable {
                unavailable = true;
            } else {
                self.block_shards.insert(block_hash, BlockShard {
                    block_hash,
                    shard_id: self.id,
                    txs: f.txs.into_iter().collect(),
                });
            }
        }
        let txs = self
            .block_shards
            .get(&block_hash)
            .map(|b| b.txs.clone())
            .unwrap_or_default();
        self.start_round(block_hash, txs, unavailable)
    }

    fn start_round(&mut self, block_hash: BlockHash, txs: Vec<(TxHash, Transaction)>, unavailable: bool) -> Outbox {
        let mut round = Round {
            block_hash,
            txs,
            verdict: unavailable.then_some(RejectReason::Unavailable),
            produced: Vec::new(),
            spent: Vec::new(),
            consumed: BTreeSet::new(),
            requests: BTreeMap::new(),
            served: false,
            responses: BTreeMap::new(),
            finished: false,
        };

        for (_, tx) in &round.txs {
            for (point, out) in tx.output_points() {
                if self.utxo.insert(point, out).is_ok() {
                    round.produced.push(point);
                } else {
                    round.verdict.get_or_insert(RejectReason::DuplicateOutput);
                }
            }
        }

        let mut wanted: BTreeMap<ShardId, BTreeSet<OutPoint>> = self.siblings().map(|s| (s, BTreeSet::new())).collect();
        for (_, tx) in &round.txs {
            for input in &tx.inputs {
                let owner = self.sharder.shard_of(&input.prev.tx_hash);
                if owner != self.id {
                    wanted.entry(owner).or_default().insert(input.prev);
                }
            }
        }
        let mut out: Outbox = wanted
            .into_iter()
            .map(|(sib, points)| {
                self.to_sibling(sib, Message::OutputRequest {
                    block_hash,
                    requester_shard_id: self.id,
                    outpoints: points.into_iter().collect(),
                })
            })
            .collect();

        for req in self.early.remove(&block_hash).unwrap_or_default() {
            round.requests.entry(req.from).or_insert(req.outpoints);
        }
        self.round = Some(round);
        out.extend(self.progress());
        out
    }

    fn progress(&mut self) -> Outbox {
        let siblings = self.sharder.shard_count as usize - 1;
        let me = self.endpoint();
        let coordinator = Endpoint::coordinator(self.node_id);
        let Some(round) = self.round.as_mut() else {
            return Vec::new();
        };
        let mut out = Vec::new();

        // Serve every sibling before touching local transactions.
        if !round.served && round.requests.len() == siblings {
            for (sib, points) in std::mem::take(&mut round.requests) {
                let mut entries = Vec::with_capacity(points.len());
                for p in points {
                    match self.utxo.remove(&p) {
                        Ok(o) => {
                            round.consumed.insert(p);
                            round.spent.push((p, o));
                            entries.push((p, o));
                        }
                        Err(_) => {
                            let reason = round.miss(&p);
                            round.fail(reason);
                        }
                    }
                }
                out.push(Envelope::new(me, Endpoint::shard(self.node_id, sib), Message::OutputResponse {
                    block_hash: round.block_hash,
                    entries,
                }));
            }
            round.served = true;
        }

        if round.served && !round.finished && round.responses.len() == siblings {
            let mut fetched: BTreeMap<OutPoint, Output> = std::mem::take(&mut round.responses)
                .into_values()
                .flatten()
                .collect();
            let mut used_remote = BTreeSet::new();
            let txs = std::mem::take(&mut round.txs);
            'txs: for (_, tx) in &txs {
                if round.verdict.is_some() {
                    break;
                }
                let mut resolved = Vec::with_capacity(tx.inputs.len());
                for input in &tx.inputs {
                    let p = input.prev;
                    if self.sharder.shard_of(&p.tx_hash) == self.id {
                        match self.utxo.remove(&p) {
                            Ok(o) => {
                                round.consumed.insert(p);
                                round.spent.push((p, o));
                                resolved.push(o);
                            }
                            Err(_) => {
                                let reason = round.miss(&p);
                                round.fail(reason);
                                break 'txs;
                            }
                        }
                    } else {
                        match fetched.remove(&p) {
                            Some(o) => {
                                used_remote.insert(p);
                                resolved.push(o);
                            }
                            None => {
                                let reason = if used_remote.contains(&p) {
                                    RejectReason::DoubleSpend
                                } else {
                                    RejectReason::MissingInput
                                };
                                round.fail(reason);
                                break 'txs;
                            }
                        }
                    }
                }
                if !matches!(validate_tx(tx, &resolved, &self.rules), Ok(true)) {
                    round.fail(RejectReason::TxInvalid);
                }
            }
            round.txs = txs;
            round.finished = true;

            let block_hash = round.block_hash;
            match round.verdict {
                None => {
                    out.push(Envelope::new(me, coordinator, Message::TxHashes {
                        block_hash,
                        shard_id: self.id,
                        hashes: round.txs.iter().map(|(h, _)| *h).collect(),
                    }));
                    out.push(Envelope::new(me, coordinator, Message::BlockDone {
                        block_hash,
                        shard_id: self.id,
                    }));
                }
                Some(reason) => out.push(Envelope::new(me, coordinator, Message::BadBlock { block_hash, reason })),
            }
        }
        out
    }

    fn take_finished(&mut self, block_hash: BlockHash) -> Result<Round, ShardError> {
        match &self.round {
            Some(r) if r.block_hash == block_hash && r.finished => {}
            _ => return Err(ShardError::UnexpectedDecision(block_hash)),
        }
        self.queue.pop_front();
        Ok(self.round.take().unwrap())
    }

    fn commit(&mut self, block_hash: BlockHash) -> Result<Outbox, ShardError> {
        let round = self.take_finished(block_hash)?;
        for (h, _) in &round.txs {
            self.mempool.remove(h);
        }
        self.spent_log.insert(block_hash, round.spent);
        self.servable.insert(block_hash);
        self.applied.push(block_hash);
        if self.applied.len() > self.reorg_depth {
            let old = self.applied[self.applied.len() - self.reorg_depth - 1];
            self.spent_log.remove(&old);
        }
        Ok(self.advance())
    }

    fn discard(&mut self, block_hash: BlockHash) -> Result<Outbox, ShardError> {
        if self.round.as_ref().map(|r| r.block_hash) != Some(block_hash) {
            // Discarded before validation began.
            if let Some(pos) = self.queue.iter().position(|h| *h == block_hash) {
                self.queue.remove(pos);
                self.fetches.remove(&block_hash);
                return Ok(self.advance());
            }
        }
        let round = self.take_finished(block_hash)?;
        for (p, o) in round.spent.into_iter().rev() {
            self.utxo
                .insert(p, o)
                .map_err(|_| ShardError::Inconsistent(block_hash))?;
        }
        for p in round.produced {
            self.utxo.remove(&p).map_err(|_| ShardError::Inconsistent(block_hash))?;
        }
        Ok(self.advance())
    }

    fn rollback_one(&mut self, block_hash: BlockHash) -> Result<(), ShardError> {
        if self.round.is_some() {
            return Err(ShardError::Busy);
        }
        if self.applied.last() != Some(&block_hash) {
            return Err(ShardError::NotLatest(block_hash));
        }
        let spent = self
            .spent_log
            .remove(&block_hash)
            .ok_or(ShardError::MissingLog(block_hash))?;
        for (p, o) in spent {
            self.utxo
                .insert(p, o)
                .map_err(|_| ShardError::Inconsistent(block_hash))?;
        }
        if let Some(part) = self.block_shards.get(&block_hash) {
            for tx in part.transactions() {
                for (p, _) in tx.output_points() {
                    self.utxo.remove(&p).map_err(|_| ShardError::Inconsistent(block_hash))?;
                }
            }
        }
        self.applied.pop();
        Ok(())
    }
}
