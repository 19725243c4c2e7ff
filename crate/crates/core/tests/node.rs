use std::thread;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ostraka_core::fuzz::{random_genesis, Wallet};
use ostraka_core::node::{
    run_fork_scenario, run_node, BlockRejection, Cluster, Directive, ForkScenario, InventoryError, MempoolError,
    NodeConfig, NodeHost, ReorgError, RunOptions,
};
use ostraka_core::types::sha256;
use ostraka_core::validation::{RejectReason, ValidationResult};
use ostraka_core::wire::{LinkClass, NodeEndpoints, Topology};
use ostraka_core::{
    shard_of, Block, BlockHash, BlockHeader, Input, OutPoint, Output, Salt, ShardId, Transaction, TxHash, UtxoSet,
};

const V: u32 = 0;
const SRC: u32 = 1;

struct Net {
    cluster: Cluster,
    genesis: UtxoSet,
    wallet: Wallet,
    rng: ChaCha8Rng,
}

fn salt(tag: u8) -> Salt {
    Salt(sha256(&[tag]))
}

fn net_with(cfg: NodeConfig) -> Net {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.node_id as u64 + 100 * cfg.shard_count as u64);
    let genesis = random_genesis(&mut rng, 24);
    let mut cluster = Cluster::new();
    cluster.add(NodeHost::new(cfg, &genesis));
    cluster.add(NodeHost::new(NodeConfig::new(SRC, salt(9), 3), &UtxoSet::new()));
    cluster.connect(V, SRC);
    Net {
        cluster,
        wallet: Wallet::from_utxo(&genesis),
        genesis,
        rng,
    }
}

fn net(shards: u32) -> Net {
    net_with(NodeConfig::new(V, salt(1), shards))
}

impl Net {
    fn next_block(&mut self, prev: BlockHash, height: u64) -> Block {
        let txs = self.wallet.block(&mut self.rng, 8);
        Block::assemble(prev, height, [0; 8], txs).unwrap()
    }

    fn deliver(&mut self, block: &Block) {
        self.cluster.node_mut(SRC).seed(block);
        let inv = self.cluster.node(SRC).announce(block.hash());
        self.cluster.send_all(inv);
        self.cluster.run();
    }

    fn outcome(&self, hash: BlockHash) -> Option<Result<(), BlockRejection>> {
        let d = self.cluster.node(V).coordinator.decisions();
        d.iter().rev().find(|d| d.block_hash == hash).map(|d| d.outcome)
    }

    fn validator(&self) -> &NodeHost {
        self.cluster.node(V)
    }
}

fn replay(genesis: &UtxoSet, blocks: &[Block]) -> UtxoSet {
    let mut state = genesis.clone();
    for b in blocks {
        let txs: Vec<Transaction> = b.txs().cloned().collect();
        state = match ostraka_core::validate_block_topological(&txs, &state, &Default::default()) {
            ValidationResult::NewUtxoSet(s) => s,
            ValidationResult::Rejected(r) => panic!("replay rejected: {r:?}"),
        };
    }
    state
}

#[test]
fn chain_is_accepted_and_matches_replay() {
    for l in [1, 2, 4] {
        let mut n = net(l);
        let mut chain = Vec::new();
        let mut prev = BlockHash::ZERO;
        for h in 1..=3 {
            let b = n.next_block(prev, h);
            prev = b.hash();
            n.deliver(&b);
            assert_eq!(n.outcome(b.hash()), Some(Ok(())));
            chain.push(b);
        }
        let hashes: Vec<BlockHash> = chain.iter().map(Block::hash).collect();
        assert_eq!(n.validator().coordinator.main_chain(), hashes.as_slice());
        assert_eq!(n.validator().utxo_union(), replay(&n.genesis, &chain));
        assert!(n.validator().is_idle() && n.validator().faults().is_empty());
        if l > 1 {
            assert!(n.cluster.counters().class(LinkClass::Sibling) > 0);
        }
    }
}

#[test]
fn accepted_blocks_are_relayed_to_other_peers() {
    let mut n = net(2);
    let genesis = n.genesis.clone();
    n.cluster.add(NodeHost::new(NodeConfig::new(2, salt(2), 3), &genesis));
    n.cluster.connect(V, 2);
    let b = n.next_block(BlockHash::ZERO, 1);
    n.deliver(&b);
    let far = n.cluster.node(2);
    assert_eq!(far.coordinator.main_chain(), &[b.hash()]);
    assert_eq!(far.utxo_union(), n.validator().utxo_union());
}

#[test]
fn tampered_merkle_root_is_rejected() {
    let mut n = net(3);
    let good = n.next_block(BlockHash::ZERO, 1);
    let mut header = *good.header();
    header.merkle_root[0] ^= 1;
    let bad = Block::new(header, good.txs().cloned().collect()).unwrap();
    n.deliver(&bad);
    assert_eq!(n.outcome(bad.hash()), Some(Err(BlockRejection::MerkleMismatch)));
    assert_eq!(n.validator().utxo_union(), n.genesis);
    assert!(n.validator().coordinator.main_chain().is_empty());
    let again = n.cluster.node_mut(V).coordinator.on_inventory(bad.hash(), SRC);
    assert_eq!(again, Err(InventoryError::DuplicateBlock(bad.hash())));
}

#[test]
fn wrong_stamp_is_rejected() {
    let mut cfg = NodeConfig::new(V, salt(1), 2);
    cfg.stamp_target = [7; 8];
    let mut n = net_with(cfg);
    let b = n.next_block(BlockHash::ZERO, 1);
    n.deliver(&b);
    assert_eq!(n.outcome(b.hash()), Some(Err(BlockRejection::BadStamp)));
    assert_eq!(n.validator().utxo_union(), n.genesis);
}

#[test]
fn cross_shard_double_spend_is_rejected_and_state_restored() {
    let mut n = net(4);
    let (point, out) = n.genesis.iter().map(|(p, o)| (*p, *o)).next().unwrap();
    let spend = |nonce| Transaction::new(vec![Input::new(point, out.owner)], vec![Output::new(1, [3; 32])], nonce);
    let s = salt(1);
    let mut nonce = 0;
    let a = spend(nonce);
    let b = loop {
        nonce += 1;
        let t = spend(nonce);
        if shard_of(&t.hash(), &s, 4).unwrap() != shard_of(&a.hash(), &s, 4).unwrap() {
            break t;
        }
    };
    let block = Block::assemble(BlockHash::ZERO, 1, [0; 8], vec![a, b]).unwrap();
    n.deliver(&block);
    assert_eq!(n.outcome(block.hash()), Some(Err(BlockRejection::Shard(RejectReason::DoubleSpend))));
    assert_eq!(n.validator().utxo_union(), n.genesis);
    assert!(n.validator().is_idle());
}

#[test]
fn missing_input_is_rejected() {
    let mut n = net(2);
    let ghost = OutPoint::new(TxHash([5; 32]), 0);
    let tx = Transaction::new(vec![Input::new(ghost, [0; 32])], vec![Output::new(1, [0; 32])], 0);
    let block = Block::assemble(BlockHash::ZERO, 1, [0; 8], vec![tx]).unwrap();
    n.deliver(&block);
    assert_eq!(n.outcome(block.hash()), Some(Err(BlockRejection::Shard(RejectReason::MissingInput))));
}

#[test]
fn orphan_is_validated_once_its_parent_arrives() {
    let mut n = net(2);
    let parent = n.next_block(BlockHash::ZERO, 1);
    let child = n.next_block(parent.hash(), 2);
    n.deliver(&child);
    assert_eq!(n.outcome(child.hash()), Some(Err(BlockRejection::BadPrevHash)));
    n.deliver(&parent);
    assert_eq!(n.validator().coordinator.main_chain(), &[parent.hash(), child.hash()]);
    assert_eq!(n.validator().utxo_union(), replay(&n.genesis, &[parent, child]));
}

#[test]
fn block_without_shard_data_is_unavailable() {
    let mut n = net(2);
    let b = n.next_block(BlockHash::ZERO, 1);
    n.cluster.node_mut(SRC).coordinator.seed_header(*b.header());
    let inv = n.cluster.node(SRC).announce(b.hash());
    n.cluster.send_all(inv);
    n.cluster.run();
    assert_eq!(n.outcome(b.hash()), Some(Err(BlockRejection::Shard(RejectReason::Unavailable))));
}

#[test]
fn inventory_from_a_stranger_is_refused() {
    let mut n = net(2);
    let r = n.cluster.node_mut(V).coordinator.on_inventory(BlockHash([1; 32]), 42);
    assert_eq!(r, Err(InventoryError::UnknownPeer(42)));
}

#[test]
fn spent_log_records_consumed_outputs() {
    let mut n = net(3);
    let b = n.next_block(BlockHash::ZERO, 1);
    n.deliver(&b);
    let mut logged: Vec<(OutPoint, Output)> = n
        .validator()
        .shards
        .iter()
        .flat_map(|s| s.spent_log(&b.hash()).unwrap().to_vec())
        .collect();
    logged.sort_by_key(|(p, _)| *p);
    let created: UtxoSet = b.txs().flat_map(Transaction::output_points).collect();
    let mut consumed: Vec<(OutPoint, Output)> = b
        .txs()
        .flat_map(|t| t.inputs.iter().map(|i| i.prev))
        .map(|p| (p, *n.genesis.get(&p).or(created.get(&p)).unwrap()))
        .collect();
    consumed.sort_by_key(|(p, _)| *p);
    assert!(!consumed.is_empty());
    assert_eq!(logged, consumed);
}

#[test]
fn mempool_admission_rules() {
    let mut n = net(2);
    let shard = &mut n.cluster.node_mut(V).shards[0];
    let s = salt(1);
    let mut nonce = 0;
    let mut make = |target: u32, outputs: usize| loop {
        nonce += 1;
        let t = Transaction::new(vec![], vec![Output::new(1, [0; 32]); outputs], nonce);
        if shard_of(&t.hash(), &s, 2).unwrap() == ShardId(target) {
            break t;
        }
    };
    let mine = make(0, 1);
    let other = make(1, 1);
    let huge = make(0, 300);
    assert!(shard.mempool_accept(mine.clone()).is_ok());
    assert_eq!(shard.mempool_accept(mine.clone()), Err(MempoolError::Duplicate(mine.hash())));
    assert_eq!(
        shard.mempool_accept(other),
        Err(MempoolError::WrongShard {
            expected: ShardId(0),
            actual: ShardId(1)
        })
    );
    assert!(matches!(shard.mempool_accept(huge), Err(MempoolError::OversizeTx { .. })));
    assert_eq!(shard.mempool().count(), 1);
}

fn two_block_chain() -> (Net, Vec<Block>) {
    let mut n = net(2);
    let a = n.next_block(BlockHash::ZERO, 1);
    let b = n.next_block(a.hash(), 2);
    n.deliver(&a);
    n.deliver(&b);
    (n, vec![a, b])
}

#[test]
fn reorg_preconditions() {
    let (mut n, chain) = two_block_chain();
    let (a, b) = (chain[0].hash(), chain[1].hash());
    let other = [BlockHash([8; 32]), BlockHash([9; 32])];
    let c = &mut n.cluster.node_mut(V).coordinator;
    assert_eq!(c.reorg(&[a], &other, SRC).unwrap_err(), ReorgError::NotASuffix);
    assert_eq!(c.reorg(&[b], &other[..1], SRC).unwrap_err(), ReorgError::NotHeavier);
    assert_eq!(c.reorg(&[b], &other, 77).unwrap_err(), ReorgError::UnknownPeer(77));
    assert_eq!(c.reorg(&[BlockHash([3; 32])], &other, SRC).unwrap_err(), ReorgError::UnknownBlock(BlockHash([3; 32])));

    let mut cfg = NodeConfig::new(V, salt(1), 2);
    cfg.reorg_depth = 1;
    let mut shallow = net_with(cfg);
    let x = shallow.next_block(BlockHash::ZERO, 1);
    let y = shallow.next_block(x.hash(), 2);
    shallow.deliver(&x);
    shallow.deliver(&y);
    let three = [BlockHash([1; 32]), BlockHash([2; 32]), BlockHash([4; 32])];
    let c = &mut shallow.cluster.node_mut(V).coordinator;
    assert_eq!(
        c.reorg(&[x.hash(), y.hash()], &three, SRC).unwrap_err(),
        ReorgError::TooDeep { depth: 2, limit: 1 }
    );
}

#[test]
fn rollback_is_the_inverse_of_apply_without_messages() {
    let (mut n, chain) = two_block_chain();
    let before = n.cluster.counters().total();
    let host = n.cluster.node_mut(V);
    for s in host.shards.iter_mut() {
        let out = s
            .on_directive(&Directive::Rollback {
                block_hashes: vec![chain[1].hash(), chain[0].hash()],
            })
            .unwrap();
        assert!(out.is_empty());
    }
    assert_eq!(n.cluster.counters().total(), before);
    assert_eq!(n.validator().utxo_union(), n.genesis);
}

#[test]
fn random_forks_resolve_to_the_longer_chain() {
    for seed in 0..60 {
        let s = ForkScenario::random(seed, 5);
        let report = run_fork_scenario(&s).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        assert_eq!(report.rollback_messages, 0);
        assert!(report.depth >= 1 && report.depth <= 5);
    }
}

#[test]
fn failed_replacement_restores_the_old_branch() {
    let (mut n, old) = two_block_chain();
    let genesis = n.genesis.clone();
    let mut fork_wallet = Wallet::from_utxo(&genesis);
    let r1 = Block::assemble(BlockHash::ZERO, 1, [0; 8], fork_wallet.block(&mut n.rng, 4)).unwrap();
    let ghost = OutPoint::new(TxHash([6; 32]), 0);
    let bad = Transaction::new(vec![Input::new(ghost, [0; 32])], vec![Output::new(1, [0; 32])], 0);
    let r2 = Block::assemble(r1.hash(), 2, [0; 8], vec![bad]).unwrap();
    let r3 = Block::assemble(r2.hash(), 3, [0; 8], fork_wallet.block(&mut n.rng, 2)).unwrap();
    for b in [&r1, &r2, &r3] {
        n.cluster.node_mut(SRC).seed(b);
    }
    let rollback: Vec<BlockHash> = old.iter().map(Block::hash).collect();
    let out = n
        .cluster
        .node_mut(V)
        .reorg(&rollback, &[r1.hash(), r2.hash(), r3.hash()], SRC)
        .unwrap();
    n.cluster.send_all(out);
    n.cluster.run();
    assert_eq!(n.validator().coordinator.main_chain(), rollback.as_slice());
    assert_eq!(n.validator().utxo_union(), replay(&genesis, &old));
    assert!(n.validator().faults().is_empty());
}

#[test]
fn header_chain_is_served() {
    let (n, chain) = two_block_chain();
    let c = &n.validator().coordinator;
    let h: &BlockHeader = c.header(&chain[1].hash()).unwrap();
    assert_eq!(h.prev_hash, chain[0].hash());
    assert_eq!(c.tip(), chain[1].hash());
}

#[test]
fn two_nodes_over_tcp() {
    let port = 47_400;
    let addr = |p: u16| format!("127.0.0.1:{p}");
    let mut topology = Topology {
        nodes: vec![
            NodeEndpoints {
                node: V,
                coordinator: addr(port),
                shards: (1..=2).map(|i| addr(port + i)).collect(),
            },
            NodeEndpoints {
                node: SRC,
                coordinator: addr(port + 10),
                shards: (11..=13).map(|i| addr(port + i)).collect(),
            },
        ],
        ..Default::default()
    };
    topology.connect(V, SRC);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let genesis = random_genesis(&mut rng, 16);
    let mut wallet = Wallet::from_utxo(&genesis);
    let a = Block::assemble(BlockHash::ZERO, 1, [0; 8], wallet.block(&mut rng, 10)).unwrap();
    let b = Block::assemble(a.hash(), 2, [0; 8], wallet.block(&mut rng, 10)).unwrap();
    let expected = replay(&genesis, &[a.clone(), b.clone()]);

    let validator = NodeHost::new(NodeConfig::new(V, salt(1), 2), &genesis);
    let t = topology.clone();
    let v = thread::spawn(move || {
        run_node(validator, t, RunOptions {
            duration: Duration::from_secs(20),
            target_height: Some(2),
            tick: Duration::from_millis(20),
            blocks: Vec::new(),
        })
    });
    thread::sleep(Duration::from_millis(200));
    let source = NodeHost::new(NodeConfig::new(SRC, salt(9), 3), &UtxoSet::new());
    let s = thread::spawn(move || {
        run_node(source, topology, RunOptions {
            duration: Duration::from_secs(3),
            target_height: None,
            tick: Duration::from_millis(20),
            blocks: vec![a, b],
        })
    });
    let report = v.join().unwrap().expect("validator runs");
    s.join().unwrap().expect("source runs");
    assert_eq!(report.host.coordinator.main_chain().len(), 2);
    assert_eq!(report.host.utxo_union(), expected);
    assert!(report.counters.class(LinkClass::Remote) > 0);
}
