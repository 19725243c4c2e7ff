//! Single-machine block validation.
//!
//! Two algorithms take a transaction set and a UTXO set and return either the
//! updated set or a rejection:
//!
//! * [`validate_block_topological`] sorts the transactions so that every
//!   producer precedes its consumers and applies them one at a time.
//! * [`validate_block_unordered`] first inserts every produced output and then
//!   consumes references in whatever order the transactions are given.
//!
//! They accept exactly the same inputs and produce the same sets; the
//! distributed pipeline in [`crate::node`] is checked against both.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{OutPoint, Output, Transaction, TxHash};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum UtxoError {
    #[error("outpoint {0:?} is not in the set")]
    Absent(OutPoint),
    #[error("outpoint {0:?} is already in the set")]
    Present(OutPoint),
}

/// Map from outpoint to unspent output.
#[derive(Clone, Default, PartialEq, Eq, Debug)]
pub struct UtxoSet {
    entries: BTreeMap<OutPoint, Output>,
}

impl UtxoSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, point: &OutPoint) -> Option<&Output> {
        self.entries.get(point)
    }

    pub fn contains(&self, point: &OutPoint) -> bool {
        self.entries.contains_key(point)
    }

    pub fn insert(&mut self, point: OutPoint, output: Output) -> Result<(), UtxoError> {
        use std::collections::btree_map::Entry;
        match self.entries.entry(point) {
            Entry::Occupied(_) => Err(UtxoError::Present(point)),
            Entry::Vacant(v) => {
                v.insert(output);
                Ok(())
            }
        }
    }

    pub fn remove(&mut self, point: &OutPoint) -> Result<Output, UtxoError> {
        self.entries.remove(point).ok_or(UtxoError::Absent(*point))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&OutPoint, &Output)> + '_ {
        self.entries.iter()
    }

    pub fn total_value(&self) -> u128 {
        self.entries.values().map(|o| o.value as u128).sum()
    }

    /// Union of disjoint sets.
    pub fn union<'a>(parts: impl IntoIterator<Item = &'a UtxoSet>) -> Result<UtxoSet, UtxoError> {
        let mut out = UtxoSet::new();
        for part in parts {
            for (p, o) in part.iter() {
                out.insert(*p, *o)?;
            }
        }
        Ok(out)
    }
}

impl FromIterator<(OutPoint, Output)> for UtxoSet {
    fn from_iter<I: IntoIterator<Item = (OutPoint, Output)>>(iter: I) -> Self {
        Self {
            entries: iter.into_iter().collect(),
        }
    }
}

/// Why a block was rejected. The code never influences accept/reject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RejectReason {
    /// A referenced output is neither in the UTXO set nor produced by the block.
    MissingInput,
    /// A referenced output was already consumed while validating this block.
    DoubleSpend,
    /// A transaction failed its value, authorization or size check.
    TxInvalid,
    /// A produced output already exists in the UTXO set.
    DuplicateOutput,
    /// The same transaction appears twice in the set.
    DuplicateTx,
    /// The block data could not be obtained.
    Unavailable,
}

impl RejectReason {
    pub const ALL: [RejectReason; 6] = [
        RejectReason::MissingInput,
        RejectReason::DoubleSpend,
        RejectReason::TxInvalid,
        RejectReason::DuplicateOutput,
        RejectReason::DuplicateTx,
        RejectReason::Unavailable,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationResult {
    NewUtxoSet(UtxoSet),
    Rejected(RejectReason),
}

impl ValidationResult {
    pub fn is_accepted(&self) -> bool {
        matches!(self, ValidationResult::NewUtxoSet(_))
    }

    pub fn utxo(&self) -> Option<&UtxoSet> {
        match self {
            ValidationResult::NewUtxoSet(s) => Some(s),
            ValidationResult::Rejected(_) => None,
        }
    }

    /// Equality ignoring the rejection reason.
    pub fn same_outcome(&self, other: &ValidationResult) -> bool {
        match (self, other) {
            (ValidationResult::NewUtxoSet(a), ValidationResult::NewUtxoSet(b)) => a == b,
            (ValidationResult::Rejected(_), ValidationResult::Rejected(_)) => true,
            _ => false,
        }
    }
}

/// Consensus parameters that apply to single transactions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rules {
    /// Upper bound on inputs plus outputs of one transaction.
    pub tx_size_limit: usize,
}

impl Default for Rules {
    fn default() -> Self {
        Self { tx_size_limit: 256 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TxCheckError {
    #[error("transaction has {inputs} inputs but {resolved} resolved outputs were supplied")]
    ArityMismatch { inputs: usize, resolved: usize },
}

/// Checks value conservation, authorization and size of one transaction whose
/// inputs have already been resolved to the outputs they spend.
pub fn validate_tx(tx: &Transaction, resolved_inputs: &[Output], rules: &Rules) -> Result<bool, TxCheckError> {
    if resolved_inputs.len() != tx.inputs.len() {
        return Err(TxCheckError::ArityMismatch {
            inputs: tx.inputs.len(),
            resolved: resolved_inputs.len(),
        });
    }
    if tx.size() > rules.tx_size_limit {
        return Ok(false);
    }
    let authorized = tx
        .inputs
        .iter()
        .zip(resolved_inputs)
        .all(|(input, out)| input.witness == out.owner);
    if !authorized {
        return Ok(false);
    }
    let spent: u128 = resolved_inputs.iter().map(|o| o.value as u128).sum();
    let created: u128 = tx.outputs.iter().map(|o| o.value as u128).sum();
    Ok(spent >= created)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopoError {
    #[error("transaction dependency graph contains a cycle through {0} transactions")]
    CycleDetected(usize),
    #[error("transaction {0} appears twice")]
    DuplicateTx(TxHash),
}

/// Orders `txs` so that each transaction follows every transaction in the set
/// whose outputs it consumes. Independent transactions come out in ascending
/// hash order.
pub fn topo_sort(txs: &[Transaction]) -> Result<Vec<Transaction>, TopoError> {
    let hashes: Vec<TxHash> = txs.iter().map(Transaction::hash).collect();
    let mut index: HashMap<TxHash, usize> = HashMap::with_capacity(txs.len());
    for (i, h) in hashes.iter().enumerate() {
        if index.insert(*h, i).is_some() {
            return Err(TopoError::DuplicateTx(*h));
        }
    }

    let mut indegree = vec![0usize; txs.len()];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); txs.len()];
    for (i, tx) in txs.iter().enumerate() {
        let parents: BTreeSet<usize> = tx
            .inputs
            .iter()
            .filter_map(|inp| index.get(&inp.prev.tx_hash).copied())
            .collect();
        for p in parents {
            children[p].push(i);
            indegree[i] += 1;
        }
    }

    let mut ready: BinaryHeap<Reverse<(TxHash, usize)>> = indegree
        .iter()
        .enumerate()
        .filter(|(_, d)| **d == 0)
        .map(|(i, _)| Reverse((hashes[i], i)))
        .collect();
    let mut order = Vec::with_capacity(txs.len());
    while let Some(Reverse((_, i))) = ready.pop() {
        order.push(txs[i].clone());
        for &c in &children[i] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(Reverse((hashes[c], c)));
            }
        }
    }
    if order.len() != txs.len() {
        return Err(TopoError::CycleDetected(txs.len() - order.len()));
    }
    Ok(order)
}

/// Removes `point` from `working`, classifying a miss as double spend when the
/// output was consumed earlier in the same block.
fn consume(
    working: &mut UtxoSet,
    consumed: &mut BTreeSet<OutPoint>,
    point: &OutPoint,
) -> Result<Output, RejectReason> {
    match working.remove(point) {
        Ok(out) => {
            consumed.insert(*point);
            Ok(out)
        }
        Err(_) if consumed.contains(point) => Err(RejectReason::DoubleSpend),
        Err(_) => Err(RejectReason::MissingInput),
    }
}

fn produce(working: &mut UtxoSet, tx: &Transaction) -> Result<(), RejectReason> {
    for (point, out) in tx.output_points() {
        working.insert(point, out).map_err(|_| RejectReason::DuplicateOutput)?;
    }
    Ok(())
}

fn check_tx(tx: &Transaction, resolved: &[Output], rules: &Rules) -> Result<(), RejectReason> {
    match validate_tx(tx, resolved, rules) {
        Ok(true) => Ok(()),
        _ => Err(RejectReason::TxInvalid),
    }
}

/// Topological-order validation.
pub fn validate_block_topological(txs: &[Transaction], utxo: &UtxoSet, rules: &Rules) -> ValidationResult {
    let ordered = match topo_sort(txs) {
        Ok(o) => o,
        Err(TopoError::DuplicateTx(_)) => return ValidationResult::Rejected(RejectReason::DuplicateTx),
        // Unreachable for hash-linked references; a cyclic set has no valid order.
        Err(TopoError::CycleDetected(_)) => return ValidationResult::Rejected(RejectReason::MissingInput),
    };
    let mut working = utxo.clone();
    let mut consumed = BTreeSet::new();
    let mut run = || -> Result<(), RejectReason> {
        for tx in &ordered {
            let mut resolved = Vec::with_capacity(tx.inputs.len());
            for input in &tx.inputs {
                resolved.push(consume(&mut working, &mut consumed, &input.prev)?);
            }
            produce(&mut working, tx)?;
            check_tx(tx, &resolved, rules)?;
        }
        Ok(())
    };
    match run() {
        Ok(()) => ValidationResult::NewUtxoSet(working),
        Err(r) => ValidationResult::Rejected(r),
    }
}

/// Unordered validation: all outputs first, then every reference, in the
/// order given.
pub fn validate_block_unordered(txs: &[Transaction], utxo: &UtxoSet, rules: &Rules) -> ValidationResult {
    let mut seen = BTreeSet::new();
    if txs.iter().any(|t| !seen.insert(t.hash())) {
        return ValidationResult::Rejected(RejectReason::DuplicateTx);
    }
    let mut working = utxo.clone();
    let mut consumed = BTreeSet::new();
    let mut run = || -> Result<(), RejectReason> {
        for tx in txs {
            produce(&mut working, tx)?;
        }
        for tx in txs {
            let mut resolved = Vec::with_capacity(tx.inputs.len());
            for input in &tx.inputs {
                resolved.push(consume(&mut working, &mut consumed, &input.prev)?);
            }
            check_tx(tx, &resolved, rules)?;
        }
        Ok(())
    };
    match run() {
        Ok(()) => ValidationResult::NewUtxoSet(working),
        Err(r) => ValidationResult::Rejected(r),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Input;

    const ALICE: [u8; 32] = [0xa1; 32];
    const BOB: [u8; 32] = [0xb0; 32];

    fn genesis() -> (UtxoSet, OutPoint) {
        let point = OutPoint::new(TxHash([0x11; 32]), 0);
        let utxo: UtxoSet = [(point, Output::new(100, ALICE))].into_iter().collect();
        (utxo, point)
    }

    fn spend(from: OutPoint, witness: [u8; 32], value: u64, owner: [u8; 32], nonce: u64) -> Transaction {
        Transaction::new(vec![Input::new(from, witness)], vec![Output::new(value, owner)], nonce)
    }

    #[test]
    fn validate_tx_cases() {
        let rules = Rules::default();
        let tx = Transaction::new(
            vec![
                Input::new(OutPoint::new(TxHash::ZERO, 0), ALICE),
                Input::new(OutPoint::new(TxHash::ZERO, 1), BOB),
            ],
            vec![Output::new(10, BOB)],
            0,
        );
        let ok = [Output::new(4, ALICE), Output::new(6, BOB)];
        assert_eq!(validate_tx(&tx, &ok, &rules), Ok(true));

        let short = [Output::new(2, ALICE), Output::new(3, BOB)];
        let mut tx6 = tx.clone();
        tx6.outputs[0].value = 6;
        assert_eq!(validate_tx(&tx6, &short, &rules), Ok(false));

        let wrong_owner = [Output::new(4, BOB), Output::new(6, BOB)];
        assert_eq!(validate_tx(&tx, &wrong_owner, &rules), Ok(false));

        assert_eq!(
            validate_tx(&tx, &ok[..1], &rules),
            Err(TxCheckError::ArityMismatch { inputs: 2, resolved: 1 })
        );

        let tight = Rules { tx_size_limit: 2 };
        assert_eq!(validate_tx(&tx, &ok, &tight), Ok(false));
    }

    #[test]
    fn topo_sort_two_chain_and_ties() {
        let (_, u1) = genesis();
        let a = spend(u1, ALICE, 90, BOB, 1);
        let b = spend(OutPoint::new(a.hash(), 0), BOB, 80, ALICE, 2);
        let sorted = topo_sort(&[b.clone(), a.clone()]).unwrap();
        assert_eq!(sorted, vec![a, b]);

        let x = spend(OutPoint::new(TxHash([1; 32]), 0), ALICE, 1, BOB, 3);
        let y = spend(OutPoint::new(TxHash([2; 32]), 0), ALICE, 1, BOB, 4);
        let sorted = topo_sort(&[x.clone(), y.clone()]).unwrap();
        let mut expected = vec![x, y];
        expected.sort_by_key(Transaction::hash);
        assert_eq!(sorted, expected);
    }

    #[test]
    fn empty_block_is_identity() {
        let (utxo, _) = genesis();
        let rules = Rules::default();
        assert_eq!(
            validate_block_topological(&[], &utxo, &rules),
            ValidationResult::NewUtxoSet(utxo.clone())
        );
        assert_eq!(
            validate_block_unordered(&[], &utxo, &rules),
            ValidationResult::NewUtxoSet(utxo)
        );
    }

    #[test]
    fn intra_block_chain_hand_traced() {
        let (utxo, u1) = genesis();
        let a = spend(u1, ALICE, 90, BOB, 1);
        let o1 = OutPoint::new(a.hash(), 0);
        let b = spend(o1, BOB, 80, ALICE, 2);
        let rules = Rules::default();

        let expected: UtxoSet = [(OutPoint::new(b.hash(), 0), Output::new(80, ALICE))].into_iter().collect();
        let topo = validate_block_topological(&[a.clone(), b.clone()], &utxo, &rules);
        assert_eq!(topo, ValidationResult::NewUtxoSet(expected.clone()));
        // child listed before parent
        let unordered = validate_block_unordered(&[b, a], &utxo, &rules);
        assert_eq!(unordered, ValidationResult::NewUtxoSet(expected));
    }

    #[test]
    fn double_spend_rejected_by_both() {
        let (utxo, u1) = genesis();
        let a = spend(u1, ALICE, 50, BOB, 1);
        let b = spend(u1, ALICE, 40, BOB, 2);
        let rules = Rules::default();
        assert_eq!(
            validate_block_topological(&[a.clone(), b.clone()], &utxo, &rules),
            ValidationResult::Rejected(RejectReason::DoubleSpend)
        );
        assert_eq!(
            validate_block_unordered(&[a, b], &utxo, &rules),
            ValidationResult::Rejected(RejectReason::DoubleSpend)
        );
    }

    #[test]
    fn dangling_and_invalid() {
        let (utxo, u1) = genesis();
        let rules = Rules::default();
        let dangling = spend(OutPoint::new(TxHash([0x55; 32]), 0), ALICE, 1, BOB, 1);
        assert_eq!(
            validate_block_unordered(std::slice::from_ref(&dangling), &utxo, &rules),
            ValidationResult::Rejected(RejectReason::MissingInput)
        );
        assert_eq!(
            validate_block_topological(&[dangling], &utxo, &rules),
            ValidationResult::Rejected(RejectReason::MissingInput)
        );
        let overspend = spend(u1, ALICE, 101, BOB, 1);
        assert_eq!(
            validate_block_unordered(&[overspend], &utxo, &rules),
            ValidationResult::Rejected(RejectReason::TxInvalid)
        );
    }

    #[test]
    fn reproduced_output_rejected() {
        let seed = Transaction::new(vec![], vec![Output::new(0, BOB)], 9);
        let utxo: UtxoSet = seed.output_points().collect();
        let rules = Rules::default();
        assert_eq!(
            validate_block_unordered(std::slice::from_ref(&seed), &utxo, &rules),
            ValidationResult::Rejected(RejectReason::DuplicateOutput)
        );
        assert_eq!(
            validate_block_topological(&[seed], &utxo, &rules),
            ValidationResult::Rejected(RejectReason::DuplicateOutput)
        );
    }

    #[test]
    fn duplicate_tx_rejected() {
        let (utxo, u1) = genesis();
        let a = spend(u1, ALICE, 50, BOB, 1);
        let rules = Rules::default();
        assert!(!validate_block_unordered(&[a.clone(), a.clone()], &utxo, &rules).is_accepted());
        assert!(!validate_block_topological(&[a.clone(), a], &utxo, &rules).is_accepted());
    }

    #[test]
    fn utxo_remove_absent_is_error() {
        let mut s = UtxoSet::new();
        let p = OutPoint::new(TxHash::ZERO, 0);
        assert_eq!(s.remove(&p), Err(UtxoError::Absent(p)));
        s.insert(p, Output::new(1, ALICE)).unwrap();
        assert_eq!(s.insert(p, Output::new(1, ALICE)), Err(UtxoError::Present(p)));
    }

    #[test]
    fn reason_codes_round_trip() {
        for r in RejectReason::ALL {
            assert_eq!(RejectReason::from_code(r.code()), Some(r));
        }
        assert_eq!(RejectReason::from_code(200), None);
    }
}
