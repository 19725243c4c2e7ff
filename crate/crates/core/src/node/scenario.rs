//! Randomized chain forks resolved by a reorg on a sharded node.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Cluster, Directive, NodeConfig, NodeHost};
use crate::analysis::point_seed;
use crate::fuzz::{random_genesis, Wallet};
use crate::sharding::Salt;
use crate::types::{Block, BlockHash, Transaction};
use crate::validation::{validate_block_unordered, Rules, UtxoSet, ValidationResult};
use crate::wire::{LinkClass, MessageCounters};

/// A common prefix followed by two competing branches; `new` is longer.
#[derive(Debug, Clone)]
pub struct ForkScenario {
    pub genesis: UtxoSet,
    pub prefix: Vec<Block>,
    pub old: Vec<Block>,
    pub new: Vec<Block>,
    pub salt: Salt,
    pub shard_count: u32,
}

fn build_chain<R: Rng + ?Sized>(rng: &mut R, wallet: &mut Wallet, prev: BlockHash, height: u64, len: usize) -> Vec<Block> {
    let mut prev = prev;
    let mut out = Vec::with_capacity(len);
    for i in 0..len as u64 {
        let n = rng.random_range(1..=12);
        let txs: Vec<Transaction> = wallet.block(rng, n);
        let block = Block::assemble(prev, height + i, [0; 8], txs).expect("wallet transactions are distinct");
        prev = block.hash();
        out.push(block);
    }
    out
}

impl ForkScenario {
    /// Old branch depth in `1..=max_depth`; the new branch is up to two
    /// blocks longer.
    pub fn random(seed: u64, max_depth: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(point_seed(seed, "fork", &[]));
        let outputs = rng.random_range(8..40);
        let genesis = random_genesis(&mut rng, outputs);
        let mut wallet = Wallet::from_utxo(&genesis);
        let prefix_len = rng.random_range(0..=3);
        let prefix = build_chain(&mut rng, &mut wallet, BlockHash::ZERO, 1, prefix_len);
        let fork_tip = prefix.last().map_or(BlockHash::ZERO, Block::hash);
        let fork_height = prefix.len() as u64 + 1;
        let depth = rng.random_range(1..=max_depth);
        let extra = rng.random_range(1..=2);
        let old = build_chain(&mut rng, &mut wallet.clone(), fork_tip, fork_height, depth);
        let new = build_chain(&mut rng, &mut wallet, fork_tip, fork_height, depth + extra);
        let shard_count = [1, 2, 3, 4, 8][rng.random_range(0..5)];
        Self {
            genesis,
            prefix,
            old,
            new,
            salt: Salt::random(&mut rng),
            shard_count,
        }
    }

    /// State after applying `blocks` one by one to the genesis set.
    pub fn replay<'a>(&self, blocks: impl IntoIterator<Item = &'a Block>) -> Result<UtxoSet, String> {
        let rules = Rules::default();
        let mut state = self.genesis.clone();
        for b in blocks {
            let txs: Vec<Transaction> = b.txs().cloned().collect();
            match validate_block_unordered(&txs, &state, &rules) {
                ValidationResult::NewUtxoSet(s) => state = s,
                ValidationResult::Rejected(r) => return Err(format!("replay rejected {}: {r:?}", b.hash())),
            }
        }
        Ok(state)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForkReport {
    pub depth: usize,
    /// Messages and shard outputs produced while rolling back.
    pub rollback_messages: u64,
    pub rollback_sibling_messages: u64,
}

const VALIDATOR: u32 = 0;
const SOURCE: u32 = 1;

/// Accepts the old branch, reorganizes onto the new one and checks the
/// node's state against a replay of the winning chain.
pub fn run_fork_scenario(s: &ForkScenario) -> Result<ForkReport, String> {
    let mut cluster = Cluster::new();
    cluster.add(NodeHost::new(NodeConfig::new(VALIDATOR, s.salt, s.shard_count), &s.genesis));
    let source_salt = Salt(crate::types::sha256_concat(&[&s.salt.0, b"fork source"]));
    cluster.add(NodeHost::new(NodeConfig::new(SOURCE, source_salt, 3), &UtxoSet::new()));
    cluster.connect(VALIDATOR, SOURCE);
    for b in s.prefix.iter().chain(&s.old).chain(&s.new) {
        cluster.node_mut(SOURCE).seed(b);
    }
    for b in s.prefix.iter().chain(&s.old) {
        let inv = cluster.node(SOURCE).announce(b.hash());
        cluster.send_all(inv);
        cluster.run();
    }
    let first: Vec<BlockHash> = s.prefix.iter().chain(&s.old).map(Block::hash).collect();
    if cluster.node(VALIDATOR).coordinator.main_chain() != first.as_slice() {
        return Err("old branch was not accepted".into());
    }
    let before_state = cluster.node(VALIDATOR).utxo_union();
    if before_state != s.replay(s.prefix.iter().chain(&s.old))? {
        return Err("state before the reorg differs from replay".into());
    }

    let rollback: Vec<BlockHash> = s.old.iter().map(Block::hash).collect();
    let replacement: Vec<BlockHash> = s.new.iter().map(Block::hash).collect();
    let counters_before: MessageCounters = cluster.net.counters.clone();
    let host = cluster.node_mut(VALIDATOR);
    let (out, directives) = host
        .coordinator
        .reorg(&rollback, &replacement, SOURCE)
        .map_err(|e| format!("reorg refused: {e}"))?;
    let (rollbacks, rest): (Vec<_>, Vec<_>) =
        directives.into_iter().partition(|(_, d)| matches!(d, Directive::Rollback { .. }));
    let mut rollback_out = Vec::new();
    for (id, d) in &rollbacks {
        let envs = host.shards[id.index()].on_directive(d).map_err(|e| format!("rollback failed: {e:?}"))?;
        rollback_out.extend(envs);
    }
    let rollback_sibling_messages = rollback_out
        .iter()
        .filter(|e| LinkClass::of(&e.from, &e.to) == LinkClass::Sibling)
        .count() as u64;
    let rolled_back = host.utxo_union();
    let mut later = out;
    for (id, d) in &rest {
        let envs = host.shards[id.index()].on_directive(d).map_err(|e| format!("fetch failed: {e:?}"))?;
        later.extend(envs);
    }
    let rollback_messages = rollback_out.len() as u64 + (cluster.net.counters.total() - counters_before.total());
    if rolled_back != s.replay(&s.prefix)? {
        return Err("rollback did not restore the fork point".into());
    }
    cluster.send_all(rollback_out);
    cluster.send_all(later);
    cluster.run();

    let v = cluster.node(VALIDATOR);
    let want: Vec<BlockHash> = s.prefix.iter().chain(&s.new).map(Block::hash).collect();
    if v.coordinator.main_chain() != want.as_slice() {
        return Err(format!(
            "main chain has {} blocks, expected {}",
            v.coordinator.main_chain().len(),
            want.len()
        ));
    }
    if !v.faults().is_empty() {
        return Err(format!("shard faults: {:?}", v.faults()));
    }
    if v.utxo_union() != s.replay(s.prefix.iter().chain(&s.new))? {
        return Err("state after the reorg differs from replay".into());
    }
    Ok(ForkReport {
        depth: s.old.len(),
        rollback_messages,
        rollback_sibling_messages,
    })
}
