//! Random blocks and UTXO sets for equivalence testing of the validation
//! algorithms.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::node::validate_block_distributed;
use crate::sharding::Salt;
use crate::types::{sha256, Input, OutPoint, Output, Transaction, TxHash};
use crate::validation::{validate_block_topological, validate_block_unordered, Rules, UtxoSet, ValidationResult};

pub const OWNERS: usize = 8;

pub fn owner_key(i: usize) -> [u8; 32] {
    sha256(&(i as u64).to_le_bytes())
}

/// Adversarial edits applied to an otherwise valid block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Mutation {
    /// An input points at an outpoint nobody created.
    DanglingInput,
    /// An extra transaction spends an output another transaction spends.
    DoubleSpend,
    /// One transaction lists the same input twice.
    RepeatedInput,
    /// A consumer is listed before its producer.
    ForwardDependency,
    /// An input already consumed by an earlier block.
    SpentInput,
    BadWitness,
    Overspend,
    /// A produced outpoint is already in the UTXO set.
    ExistingOutput,
}

impl Mutation {
    pub const ALL: [Mutation; 8] = [
        Mutation::DanglingInput,
        Mutation::DoubleSpend,
        Mutation::RepeatedInput,
        Mutation::ForwardDependency,
        Mutation::SpentInput,
        Mutation::BadWitness,
        Mutation::Overspend,
        Mutation::ExistingOutput,
    ];
}

impl fmt::Display for Mutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Spendable outputs known to the generator.
#[derive(Debug, Clone, Default)]
pub struct Wallet {
    pub pool: Vec<(OutPoint, Output)>,
}

impl Wallet {
    pub fn from_utxo(utxo: &UtxoSet) -> Self {
        Self {
            pool: utxo.iter().map(|(p, o)| (*p, *o)).collect(),
        }
    }

    /// A valid transaction spending up to three random pool entries. Its
    /// outputs join the pool.
    pub fn spend<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Transaction {
        let k = rng.random_range(0..=self.pool.len().min(3));
        let mut inputs = Vec::with_capacity(k);
        let mut total = 0u64;
        for _ in 0..k {
            let (p, o) = self.pool.swap_remove(rng.random_range(0..self.pool.len()));
            total += o.value;
            inputs.push(Input::new(p, o.owner));
        }
        let m = rng.random_range(1..=3usize);
        let budget = if total == 0 { 0 } else { total - rng.random_range(0..=total / 10) };
        let mut cuts: Vec<u64> = (0..m - 1).map(|_| rng.random_range(0..=budget)).collect();
        cuts.push(0);
        cuts.push(budget);
        cuts.sort_unstable();
        let outputs = cuts
            .windows(2)
            .map(|w| Output::new(w[1] - w[0], owner_key(rng.random_range(0..OWNERS))))
            .collect();
        let tx = Transaction::new(inputs, outputs, rng.random());
        self.pool.extend(tx.output_points());
        tx
    }

    pub fn block<R: Rng + ?Sized>(&mut self, rng: &mut R, n: usize) -> Vec<Transaction> {
        (0..n).map(|_| self.spend(rng)).collect()
    }
}

pub fn random_genesis<R: Rng + ?Sized>(rng: &mut R, outputs: usize) -> UtxoSet {
    (0..outputs)
        .map(|i| {
            let point = OutPoint::new(TxHash(sha256(&rng.random::<u64>().to_le_bytes())), i as u32 % 4);
            (point, Output::new(rng.random_range(1..=1_000_000), owner_key(rng.random_range(0..OWNERS))))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct FuzzCase {
    pub utxo: UtxoSet,
    pub txs: Vec<Transaction>,
    pub mutation: Option<Mutation>,
}

#[derive(Debug, Clone, Copy)]
pub struct CaseParams {
    pub max_txs: usize,
    pub adversarial_rate: f64,
}

impl Default for CaseParams {
    fn default() -> Self {
        Self {
            max_txs: 200,
            adversarial_rate: 0.3,
        }
    }
}

pub fn generate_case<R: Rng + ?Sized>(rng: &mut R, params: &CaseParams) -> FuzzCase {
    let outputs = rng.random_range(1..=64);
    let mut utxo = random_genesis(rng, outputs);
    let mut wallet = Wallet::from_utxo(&utxo);
    let mut consumed_earlier = Vec::new();
    if rng.random_bool(0.5) {
        // An earlier block leaves some spent outputs behind to reference.
        let n = rng.random_range(1..=8);
        let earlier = wallet.block(rng, n);
        if let ValidationResult::NewUtxoSet(next) = validate_block_unordered(&earlier, &utxo, &Rules::default()) {
            consumed_earlier = earlier.iter().flat_map(|t| t.inputs.iter().map(|i| i.prev)).collect();
            utxo = next;
            wallet = Wallet::from_utxo(&utxo);
        }
    }
    let n = rng.random_range(1..=params.max_txs.max(1));
    let mut txs = wallet.block(rng, n);
    let mutation = rng
        .random_bool(params.adversarial_rate)
        .then(|| Mutation::ALL[rng.random_range(0..Mutation::ALL.len())]);
    if let Some(m) = mutation {
        mutate(rng, m, &mut txs, &mut utxo, &consumed_earlier);
    }
    if mutation != Some(Mutation::ForwardDependency) {
        txs.shuffle(rng);
    }
    FuzzCase { utxo, txs, mutation }
}

/// Transactions with inputs whose outputs nothing else in the block spends,
/// so editing them does not dangle other references.
fn leaf_spenders(txs: &[Transaction]) -> Vec<usize> {
    let parents: BTreeSet<TxHash> = txs.iter().flat_map(|t| t.inputs.iter().map(|i| i.prev.tx_hash)).collect();
    (0..txs.len())
        .filter(|&i| !txs[i].inputs.is_empty() && !parents.contains(&txs[i].hash()))
        .collect()
}

fn mutate<R: Rng + ?Sized>(
    rng: &mut R,
    m: Mutation,
    txs: &mut Vec<Transaction>,
    utxo: &mut UtxoSet,
    consumed_earlier: &[OutPoint],
) {
    let with_inputs = leaf_spenders(txs);
    let pick_input = |rng: &mut R, txs: &[Transaction]| {
        let i = with_inputs[rng.random_range(0..with_inputs.len())];
        (i, rng.random_range(0..txs[i].inputs.len()))
    };
    match m {
        Mutation::DanglingInput => {
            let dangling = if rng.random_bool(0.5) {
                OutPoint::new(TxHash(rng.random()), 0)
            } else {
                let parent = &txs[rng.random_range(0..txs.len())];
                OutPoint::new(parent.hash(), parent.outputs.len() as u32 + rng.random_range(0..3))
            };
            let j = with_inputs.first().copied().unwrap_or(0);
            txs[j].inputs.push(Input::new(dangling, owner_key(0)));
        }
        Mutation::DoubleSpend if !with_inputs.is_empty() => {
            let (i, k) = pick_input(rng, txs);
            let input = txs[i].inputs[k];
            txs.push(Transaction::new(vec![input], vec![Output::new(0, owner_key(1))], rng.random()));
        }
        Mutation::RepeatedInput if !with_inputs.is_empty() => {
            let (i, k) = pick_input(rng, txs);
            let input = txs[i].inputs[k];
            txs[i].inputs.push(input);
        }
        Mutation::SpentInput if !consumed_earlier.is_empty() => {
            let p = consumed_earlier[rng.random_range(0..consumed_earlier.len())];
            let j = rng.random_range(0..txs.len());
            txs[j].inputs.push(Input::new(p, owner_key(0)));
        }
        Mutation::BadWitness if !with_inputs.is_empty() => {
            let (i, k) = pick_input(rng, txs);
            txs[i].inputs[k].witness[0] ^= 0x01;
        }
        Mutation::Overspend => {
            let j = with_inputs.last().copied().unwrap_or(0);
            let bump = rng.random_range(1..=1_000_000_000u64);
            txs[j].outputs[0].value = txs[j].outputs[0].value.saturating_add(bump);
        }
        Mutation::ExistingOutput => {
            let j = rng.random_range(0..txs.len());
            let point = OutPoint::new(txs[j].hash(), rng.random_range(0..txs[j].outputs.len() as u32));
            let _ = utxo.insert(point, Output::new(rng.random_range(1..=100), owner_key(2)));
        }
        // Forward dependencies, and edits that found nothing to act on.
        _ => {
            if let Some(i) = (1..txs.len())
                .rev()
                .find(|&i| txs[i].inputs.iter().any(|inp| txs[..i].iter().any(|t| t.hash() == inp.prev.tx_hash)))
            {
                let tx = txs.remove(i);
                txs.insert(0, tx);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Divergence {
    pub iteration: u64,
    pub shard_count: u32,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct EquivalenceReport {
    pub iterations: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub mutations: BTreeMap<String, u64>,
    pub divergences: Vec<Divergence>,
}

fn outcome(r: &ValidationResult) -> &'static str {
    if r.is_accepted() {
        "accept"
    } else {
        "reject"
    }
}

/// Compares the topological, unordered and distributed algorithms on one case.
pub fn check_case(case: &FuzzCase, salt: Salt, shard_counts: &[u32], rules: &Rules) -> Vec<(u32, String)> {
    let mut out = Vec::new();
    let topo = validate_block_topological(&case.txs, &case.utxo, rules);
    let unordered = validate_block_unordered(&case.txs, &case.utxo, rules);
    if !topo.same_outcome(&unordered) {
        out.push((0, format!("topological {} vs unordered {}", outcome(&topo), outcome(&unordered))));
    }
    for &l in shard_counts {
        let run = validate_block_distributed(&case.txs, &case.utxo, salt, l, rules);
        if !run.result.same_outcome(&unordered) {
            out.push((l, format!("distributed {} vs unordered {}", outcome(&run.result), outcome(&unordered))));
        } else if !run.result.is_accepted() && run.state != case.utxo {
            out.push((l, "rejected block left the shard state modified".to_string()));
        }
    }
    out
}

pub fn case_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(iteration);
    rng
}

pub fn run_equivalence(iterations: u64, seed: u64, params: &CaseParams, shard_counts: &[u32]) -> EquivalenceReport {
    let rules = Rules::default();
    let per_case: Vec<(bool, Option<Mutation>, Vec<Divergence>)> = (0..iterations)
        .into_par_iter()
        .map(|it| {
            let mut rng = case_rng(seed, it);
            let case = generate_case(&mut rng, params);
            let salt = Salt::random(&mut rng);
            let accepted = validate_block_unordered(&case.txs, &case.utxo, &rules).is_accepted();
            let divergences = check_case(&case, salt, shard_counts, &rules)
                .into_iter()
                .map(|(shard_count, detail)| Divergence {
                    iteration: it,
                    shard_count,
                    detail,
                })
                .collect();
            (accepted, case.mutation, divergences)
        })
        .collect();

    let mut report = EquivalenceReport {
        iterations,
        ..Default::default()
    };
    for (accepted, mutation, divergences) in per_case {
        if accepted {
            report.accepted += 1;
        } else {
            report.rejected += 1;
        }
        let key = mutation.map_or("none".to_string(), |m| m.to_string());
        *report.mutations.entry(key).or_default() += 1;
        report.divergences.extend(divergences);
    }
    report
}
