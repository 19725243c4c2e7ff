use std::collections::BTreeMap;

use super::{Decision, NodeConfig, NodeHost};
use crate::sharding::Salt;
use crate::types::{sha256_concat, Block, BlockError, BlockHash, Transaction};
use crate::validation::{RejectReason, Rules, UtxoSet, ValidationResult};
use crate::wire::{Envelope, MemoryTransport, MessageCounters, Transport};

/// Several nodes exchanging messages over one in-memory transport.
#[derive(Default)]
pub struct Cluster {
    pub nodes: BTreeMap<u32, NodeHost>,
    pub net: MemoryTransport,
}

impl Cluster {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, host: NodeHost) {
        self.nodes.insert(host.node_id(), host);
    }

    pub fn node(&self, id: u32) -> &NodeHost {
        &self.nodes[&id]
    }

    pub fn node_mut(&mut self, id: u32) -> &mut NodeHost {
        self.nodes.get_mut(&id).expect("node exists")
    }

    /// Exchanges coordinator hellos so that `a` and `b` become peers.
    pub fn connect(&mut self, a: u32, b: u32) {
        for (from, to) in [(a, b), (b, a)] {
            let c = &self.nodes[&from].coordinator;
            let env = Envelope::new(c.endpoint(), self.nodes[&to].coordinator.endpoint(), c.hello());
            self.send(env);
        }
        self.run();
    }

    pub fn send(&mut self, env: Envelope) {
        self.net.send(env).expect("in-memory frames stay within limits");
    }

    pub fn send_all(&mut self, envs: impl IntoIterator<Item = Envelope>) {
        for env in envs {
            self.send(env);
        }
    }

    /// Delivers messages until the queue drains; returns how many were handled.
    pub fn run(&mut self) -> usize {
        let mut handled = 0;
        while let Some(env) = self.net.try_recv() {
            handled += 1;
            let out = match self.nodes.get_mut(&env.to.node) {
                Some(host) => host.handle(env),
                None => continue,
            };
            self.send_all(out);
        }
        handled
    }

    pub fn counters(&self) -> &MessageCounters {
        &self.net.counters
    }
}

pub struct DistributedRun {
    pub result: ValidationResult,
    pub decision: Option<Decision>,
    pub counters: MessageCounters,
    /// Union of the validating node's shards after the decision.
    pub state: UtxoSet,
}

const VALIDATOR: u32 = 0;
const SOURCE: u32 = 1;
const SOURCE_SHARDS: u32 = 3;

/// Runs the full shard pipeline on one block: a source node with its own salt
/// announces the block and a validating node with `shard_count` shards and
/// `salt` fetches and validates it against `utxo`.
pub fn validate_block_distributed(
    txs: &[Transaction],
    utxo: &UtxoSet,
    salt: Salt,
    shard_count: u32,
    rules: &Rules,
) -> DistributedRun {
    let unchanged = |result| DistributedRun {
        result,
        decision: None,
        counters: MessageCounters::default(),
        state: utxo.clone(),
    };
    let mut cfg = NodeConfig::new(VALIDATOR, salt, shard_count);
    cfg.rules = *rules;
    let block = match Block::assemble(BlockHash::ZERO, 1, cfg.stamp_target, txs.to_vec()) {
        Ok(b) => b,
        Err(BlockError::DuplicateTx(_)) => return unchanged(ValidationResult::Rejected(RejectReason::DuplicateTx)),
        Err(_) => return unchanged(ValidationResult::NewUtxoSet(utxo.clone())),
    };

    let source_salt = Salt(sha256_concat(&[&salt.0, b"source"]));
    let mut cluster = Cluster::new();
    cluster.add(NodeHost::new(cfg, utxo));
    cluster.add(NodeHost::new(NodeConfig::new(SOURCE, source_salt, SOURCE_SHARDS), &UtxoSet::new()));
    cluster.connect(VALIDATOR, SOURCE);
    cluster.node_mut(SOURCE).seed(&block);
    let announce = cluster.node(SOURCE).announce(block.hash());
    cluster.send_all(announce);
    cluster.run();

    let validator = cluster.node(VALIDATOR);
    let decision = validator.coordinator.decisions().last().copied();
    let state = validator.utxo_union();
    let result = match decision.map(|d| d.outcome) {
        Some(Ok(())) => ValidationResult::NewUtxoSet(state.clone()),
        Some(Err(super::BlockRejection::Shard(r))) => ValidationResult::Rejected(r),
        _ => ValidationResult::Rejected(RejectReason::Unavailable),
    };
    DistributedRun {
        result,
        decision,
        counters: cluster.net.counters.clone(),
        state,
    }
}
