//! Single-hop measurements run on a two- or three-node engine.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::engine::{BlockKind, Engine, EngineParams, Hop};
use super::node_salts;
use crate::analysis::{bandwidth_label, bpt_intra, capacity, grind_transactions, point_seed, Bandwidth, GrindTarget, PerfParams};
use crate::sharding::{Salt, ShardId};
use crate::types::{Input, OutPoint, Output, Transaction, TxHash};

fn perf(p: &EngineParams) -> PerfParams {
    PerfParams {
        block_size: p.tx_size,
        tx_size: p.tx_size,
        shard_tps: p.shard_tps,
        shard_count: p.shard_count,
        total_bw: p.total_bw,
        intra_bw: p.intra_bw,
        tx_out_size: p.tx_out_size,
    }
}

/// Sends one block from node 0 to node 1 over a zero-latency link and
/// returns node 1's hop.
pub fn single_hop(p: &EngineParams, txs: u64, hashes: Option<Vec<TxHash>>) -> Hop {
    let salts = node_salts(p.seed, 2);
    let mut engine = Engine::new(p.clone(), vec![vec![1], vec![0]], salts);
    let id = engine.produce(0, 0, BlockKind::Plain, txs, hashes);
    engine.run_to_idle();
    engine.hop(id, 1).expect("block reaches the peer")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityPoint {
    pub shards: u32,
    pub total_bw: Bandwidth,
    /// Transactions per second sustained with a 10 s hop.
    pub measured: f64,
    pub predicted: f64,
}

impl CapacityPoint {
    pub fn relative_error(&self) -> f64 {
        (self.measured - self.predicted).abs() / self.predicted
    }
}

const HOP_BUDGET: f64 = 10.0;
const PILOT_TXS: u64 = 10_000;
const REGRESSION_POINTS: [f64; 5] = [0.6, 0.8, 1.0, 1.2, 1.4];

/// Least-squares fit of `y = a + b x`.
fn fit_line(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let b = sxy / sxx;
    (my - b * mx, b)
}

/// Estimates how many transactions one hop handles in ten seconds by
/// regressing hop time on block size around a pilot estimate.
pub fn measure_capacity(base: &EngineParams, shards: u32, total_bw: Bandwidth) -> CapacityPoint {
    let p = EngineParams {
        shard_count: shards,
        total_bw,
        latency: super::LatencyModel::Fixed { seconds: 0.0 },
        ..base.clone()
    };
    let pilot = single_hop(&p, PILOT_TXS, None).t_hop();
    let estimate = PILOT_TXS as f64 * HOP_BUDGET / pilot;
    let points: Vec<(f64, f64)> = REGRESSION_POINTS
        .iter()
        .map(|f| {
            let n = (estimate * f).round().max(1.0);
            (n, single_hop(&p, n as u64, None).t_hop())
        })
        .collect();
    let (a, b) = fit_line(&points);
    CapacityPoint {
        shards,
        total_bw,
        measured: (HOP_BUDGET - a) / b / HOP_BUDGET,
        predicted: capacity(&perf(&p)),
    }
}

pub fn capacity_points(base: &EngineParams, shards: &[u32], bws: &[Bandwidth]) -> Vec<CapacityPoint> {
    use rayon::prelude::*;
    let grid: Vec<(Bandwidth, u32)> = bws.iter().flat_map(|&bw| shards.iter().map(move |&l| (bw, l))).collect();
    grid.par_iter().map(|&(bw, l)| measure_capacity(base, l, bw)).collect()
}

pub fn capacity_points_csv(points: &[CapacityPoint]) -> String {
    let mut out = String::from("bandwidth_bps,shards,simulated_tps,predicted_tps\n");
    for c in points {
        writeln!(out, "{},{},{:.1},{:.1}", bandwidth_label(c.total_bw), c.shards, c.measured, c.predicted).unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntraBwPoint {
    pub shards: u32,
    pub intra_bw: Bandwidth,
    pub txs: u64,
    /// Simulated block processing time.
    pub bpt: f64,
    pub predicted_bpt: f64,
    pub throughput: f64,
}

impl IntraBwPoint {
    pub fn relative_error(&self) -> f64 {
        (self.bpt - self.predicted_bpt).abs() / self.predicted_bpt
    }
}

/// Processing time of a `txs`-transaction block when the inter-node link is
/// unconstrained and sibling exchange runs at `intra_bw` per shard.
pub fn measure_intra_bw(base: &EngineParams, shards: u32, intra_bw: Bandwidth, txs: u64) -> IntraBwPoint {
    let p = EngineParams {
        shard_count: shards,
        intra_bw,
        total_bw: Bandwidth::INFINITE,
        latency: super::LatencyModel::Fixed { seconds: 0.0 },
        ..base.clone()
    };
    let hop = single_hop(&p, txs, None);
    let model = PerfParams {
        block_size: txs as f64 * p.tx_size,
        ..perf(&p)
    };
    IntraBwPoint {
        shards,
        intra_bw,
        txs,
        bpt: hop.bpt,
        predicted_bpt: bpt_intra(&model),
        throughput: txs as f64 / hop.bpt,
    }
}

pub fn intra_bw_points_csv(points: &[IntraBwPoint]) -> String {
    let mut out = String::from("intra_bw_bps,shards,txs,simulated_bpt_s,predicted_bpt_s,throughput_tps\n");
    for c in points {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.1}",
            bandwidth_label(c.intra_bw),
            c.shards,
            c.txs,
            c.bpt,
            c.predicted_bpt,
            c.throughput
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlowdownReport {
    pub shards: u32,
    pub txs: usize,
    pub grind_attempts: u64,
    /// Ground-block Bpt over random-block Bpt on the node whose salt is known.
    pub target_ratio: f64,
    /// The same ratio on a node with an independent salt.
    pub independent_ratio: f64,
}

fn synthetic_template<R: Rng + ?Sized>(rng: &mut R) -> Transaction {
    let inputs = (0..2)
        .map(|i| Input::new(OutPoint::new(TxHash(rng.random()), i), rng.random()))
        .collect();
    let outputs = (0..2).map(|_| Output::new(rng.random_range(1..1_000_000), rng.random())).collect();
    Transaction::new(inputs, outputs, 0)
}

/// Node 0 relays to node 1, whose salt the attacker knows, and to node 2.
/// Compares a block ground onto shard 0 of node 1 with a block of random
/// hashes of the same size.
pub fn slowdown_under_attack(base: &EngineParams, shards: u32, txs: usize) -> SlowdownReport {
    let p = EngineParams {
        shard_count: shards,
        intra_bw: Bandwidth::INFINITE,
        latency: super::LatencyModel::Fixed { seconds: 0.0 },
        ..base.clone()
    };
    let salts = node_salts(p.seed, 3);
    let target_salt: Salt = salts[1];
    let mut rng = ChaCha8Rng::seed_from_u64(point_seed(p.seed, "attack", &[shards as u64]));
    let template = synthetic_template(&mut rng);
    let ground = grind_transactions(
        &template,
        &[GrindTarget {
            salt: target_salt,
            shard_count: shards,
            shard: ShardId(0),
        }],
        txs,
        0,
    );
    let ground_hashes: Vec<TxHash> = ground.txs.iter().map(Transaction::hash).collect();
    let random_hashes: Vec<TxHash> = (0..txs).map(|_| TxHash(rng.random())).collect();

    let bpt = |hashes: Vec<TxHash>| {
        let mut engine = Engine::new(p.clone(), vec![vec![1, 2], vec![0], vec![0]], salts.clone());
        let id = engine.produce(0, 0, BlockKind::Plain, 0, Some(hashes));
        engine.run_to_idle();
        let at = |n| engine.hop(id, n).expect("block reaches every peer").bpt;
        (at(1), at(2))
    };
    let (ground_target, ground_other) = bpt(ground_hashes);
    let (random_target, random_other) = bpt(random_hashes);
    SlowdownReport {
        shards,
        txs,
        grind_attempts: ground.total_attempts(),
        target_ratio: ground_target / random_target,
        independent_ratio: ground_other / random_other,
    }
}
