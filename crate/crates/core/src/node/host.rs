use super::{Coordinator, Directive, NodeConfig, Outbox, ReorgError, Shard, ShardError};
use crate::sharding::{partition_block, partition_utxo, ShardId};
use crate::types::{Block, BlockHash};
use crate::validation::UtxoSet;
use crate::wire::{Endpoint, Envelope, Message, Role};

/// A coordinator and its shards running in one process. Directives are
/// delivered in process; every other message leaves through the returned
/// envelopes, including messages between the node's own processes.
pub struct NodeHost {
    cfg: NodeConfig,
    pub coordinator: Coordinator,
    pub shards: Vec<Shard>,
    faults: Vec<ShardError>,
}

impl NodeHost {
    pub fn new(cfg: NodeConfig, genesis: &UtxoSet) -> Self {
        let parts = partition_utxo(genesis, &cfg.salt, cfg.shard_count).expect("node has at least one shard");
        let shards = parts
            .into_iter()
            .enumerate()
            .map(|(i, part)| Shard::new(&cfg, ShardId(i as u32), part))
            .collect();
        Self {
            coordinator: Coordinator::new(&cfg),
            shards,
            faults: Vec::new(),
            cfg,
        }
    }

    pub fn config(&self) -> &NodeConfig {
        &self.cfg
    }

    pub fn node_id(&self) -> u32 {
        self.cfg.node_id
    }

    /// Endpoints hosted here paired with the `Hello` each sends first.
    pub fn hellos(&self) -> Vec<(Endpoint, Message)> {
        let mut out = vec![(self.coordinator.endpoint(), self.coordinator.hello())];
        for s in &self.shards {
            out.push((s.endpoint(), Message::Hello {
                role: Role::Shard,
                node_id: self.cfg.node_id,
                shard_id: Some(s.id()),
                salt: self.cfg.salt,
                shard_count: self.cfg.shard_count,
            }));
        }
        out
    }

    pub fn handle(&mut self, env: Envelope) -> Outbox {
        if env.to.node != self.cfg.node_id {
            return Vec::new();
        }
        match env.to.shard {
            None => {
                let (mut out, directives) = self.coordinator.on_message(&env);
                out.extend(self.apply(directives));
                out
            }
            Some(id) => match self.shards.get_mut(id.index()) {
                Some(shard) => shard.on_message(&env),
                None => Vec::new(),
            },
        }
    }

    fn apply(&mut self, directives: Vec<(ShardId, Directive)>) -> Outbox {
        let mut out = Vec::new();
        for (id, d) in directives {
            match self.shards[id.index()].on_directive(&d) {
                Ok(envs) => out.extend(envs),
                Err(e) => self.faults.push(e),
            }
        }
        out
    }

    /// Errors shards reported for directives that did not fit their state.
    pub fn faults(&self) -> &[ShardError] {
        &self.faults
    }

    /// Registers a block this node produced so peers can fetch it.
    pub fn seed(&mut self, block: &Block) {
        self.coordinator.seed_header(*block.header());
        let parts = partition_block(block, &self.cfg.salt, self.cfg.shard_count).expect("node has at least one shard");
        for (shard, part) in self.shards.iter_mut().zip(parts) {
            shard.seed(part);
        }
    }

    /// Inventory messages announcing `block_hash` to every known peer.
    pub fn announce(&self, block_hash: BlockHash) -> Outbox {
        self.coordinator
            .peers()
            .map(|p| Envelope::new(self.coordinator.endpoint(), Endpoint::coordinator(p), Message::Inventory { block_hash }))
            .collect()
    }

    pub fn reorg(&mut self, rollback: &[BlockHash], replacement: &[BlockHash], peer: u32) -> Result<Outbox, ReorgError> {
        let (mut out, directives) = self.coordinator.reorg(rollback, replacement, peer)?;
        out.extend(self.apply(directives));
        Ok(out)
    }

    pub fn tick(&mut self) -> Outbox {
        self.shards.iter_mut().flat_map(Shard::tick).collect()
    }

    pub fn is_idle(&self) -> bool {
        self.coordinator.is_idle() && self.shards.iter().all(Shard::is_idle)
    }

    pub fn utxo_union(&self) -> UtxoSet {
        UtxoSet::union(self.shards.iter().map(Shard::utxo)).expect("shards own disjoint outpoints")
    }
}
