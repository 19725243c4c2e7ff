//! Deterministic discrete-event simulation of a network of sharded nodes.
//!
//! Every node has one upload and one download port of `total_bw`, and each of
//! its shards an intra-node port pair of `intra_bw`. Concurrent transfers on
//! a port share it equally; a transfer runs at the smaller of its two shares.
//! A node validates one block at a time and forwards only after validating.

mod engine;
mod measure;

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use engine::{multinomial_uniform, BlockKind, Engine, EngineParams, External, Hop, SimBlock};
pub use measure::{
    capacity_points, capacity_points_csv, intra_bw_points_csv, measure_capacity, measure_intra_bw, single_hop,
    slowdown_under_attack, CapacityPoint, IntraBwPoint, SlowdownReport,
};

use crate::analysis::{bpt_intra, point_seed, Bandwidth, PerfParams};
use crate::sharding::Salt;
use crate::wire::random_peer_graph;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatencyModel {
    Fixed { seconds: f64 },
    /// Drawn once per peer link.
    Uniform { min: f64, max: f64 },
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel::Fixed { seconds: 0.05 }
    }
}

impl LatencyModel {
    pub fn sample(&self, seed: u64) -> f64 {
        match *self {
            LatencyModel::Fixed { seconds } => seconds,
            LatencyModel::Uniform { min, max } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                if max > min {
                    rng.random_range(min..max)
                } else {
                    min
                }
            }
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let ok = match *self {
            LatencyModel::Fixed { seconds } => seconds >= 0.0 && seconds.is_finite(),
            LatencyModel::Uniform { min, max } => min >= 0.0 && max >= min && max.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::InvalidConfig("latency must be finite and non-negative".into()))
        }
    }
}

/// Microblock size: a fixed transaction count or sized from the cost model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BlockTxs {
    Count(u64),
    Auto(AutoSize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoSize {
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workload {
    /// Mean seconds between leader elections.
    #[serde(default = "default_keyblock_interval")]
    pub keyblock_interval: f64,
    #[serde(default = "default_microblock_interval")]
    pub microblock_interval: f64,
    #[serde(default = "default_microblock_txs")]
    pub microblock_txs: BlockTxs,
    /// Fraction of one node's modeled capacity used by automatic sizing.
    #[serde(default = "default_fill")]
    pub fill: f64,
    /// Block uploads per node assumed by automatic sizing; defaults to
    /// `peers_per_node`.
    #[serde(default)]
    pub fanout: Option<f64>,
}

fn default_keyblock_interval() -> f64 {
    600.0
}
fn default_microblock_interval() -> f64 {
    10.0
}
fn default_microblock_txs() -> BlockTxs {
    BlockTxs::Auto(AutoSize::Auto)
}
fn default_fill() -> f64 {
    0.5
}

impl Default for Workload {
    fn default() -> Self {
        Self {
            keyblock_interval: default_keyblock_interval(),
            microblock_interval: default_microblock_interval(),
            microblock_txs: default_microblock_txs(),
            fill: default_fill(),
            fanout: None,
        }
    }
}

/// Axes swept by `run_sweep`; unset axes keep the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default)]
    pub shards_per_node: Vec<u32>,
    #[serde(default)]
    pub total_bw: Vec<Bandwidth>,
    #[serde(default)]
    pub intra_bw: Vec<Bandwidth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub seed: u64,
    pub node_count: usize,
    pub shards_per_node: u32,
    #[serde(default = "default_peers")]
    pub peers_per_node: usize,
    pub total_bw: Bandwidth,
    #[serde(default = "infinite")]
    pub intra_bw: Bandwidth,
    #[serde(default)]
    pub latency: LatencyModel,
    #[serde(default = "default_tps")]
    pub shard_tps: f64,
    #[serde(default = "default_tx_size")]
    pub tx_size: f64,
    #[serde(default = "default_tx_out")]
    pub tx_out_size: f64,
    #[serde(default = "default_inputs")]
    pub inputs_per_tx: u32,
    #[serde(default = "default_header")]
    pub header_bytes: f64,
    /// Simulated seconds.
    pub duration: f64,
    #[serde(default)]
    pub workload: Workload,
    #[serde(default)]
    pub sweep: Option<Sweep>,
}

fn default_peers() -> usize {
    8
}
fn infinite() -> Bandwidth {
    Bandwidth::INFINITE
}
fn default_tps() -> f64 {
    1700.0
}
fn default_tx_size() -> f64 {
    250.0
}
fn default_tx_out() -> f64 {
    112.0
}
fn default_inputs() -> u32 {
    2
}
fn default_header() -> f64 {
    200.0
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if self.node_count < 2 {
            return bad("node_count must be at least 2");
        }
        if self.shards_per_node == 0 {
            return bad("shards_per_node must be positive");
        }
        if !(self.shard_tps > 0.0 && self.tx_size > 0.0 && self.tx_out_size > 0.0 && self.header_bytes >= 0.0) {
            return bad("shard_tps, tx_size and tx_out_size must be positive");
        }
        if self.inputs_per_tx == 0 {
            return bad("inputs_per_tx must be positive");
        }
        if !(self.total_bw.as_bytes_per_sec() > 0.0 && self.intra_bw.as_bytes_per_sec() > 0.0) {
            return bad("bandwidths must be positive");
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad("duration must be positive");
        }
        let w = &self.workload;
        if !(w.keyblock_interval > 0.0 && w.microblock_interval > 0.0 && w.fill > 0.0 && w.fanout.is_none_or(|f| f > 0.0)) {
            return bad("workload intervals, fill and fanout must be positive");
        }
        self.latency.validate()
    }

    pub fn perf_params(&self) -> PerfParams {
        PerfParams {
            block_size: self.tx_size,
            tx_size: self.tx_size,
            shard_tps: self.shard_tps,
            shard_count: self.shards_per_node,
            total_bw: self.total_bw,
            intra_bw: self.intra_bw,
            tx_out_size: self.tx_out_size,
        }
    }

    pub fn engine_params(&self) -> EngineParams {
        EngineParams {
            shard_count: self.shards_per_node,
            shard_tps: self.shard_tps,
            tx_size: self.tx_size,
            tx_out_size: self.tx_out_size,
            inputs_per_tx: self.inputs_per_tx,
            total_bw: self.total_bw,
            intra_bw: self.intra_bw,
            latency: self.latency,
            header_bytes: self.header_bytes,
            seed: self.seed,
        }
    }

    /// Transactions per microblock.
    pub fn microblock_txs(&self) -> u64 {
        match self.workload.microblock_txs {
            BlockTxs::Count(n) => n,
            BlockTxs::Auto(_) => {
                let w = &self.workload;
                let p = self.perf_params();
                let fanout = w.fanout.unwrap_or(self.peers_per_node as f64);
                let per_tx = p.total_bw.transfer_time(self.tx_size) * fanout + bpt_intra(&p);
                (w.fill * w.microblock_interval / per_tx).floor().max(1.0) as u64
            }
        }
    }

    /// Every point of the sweep; the base configuration when there is none.
    pub fn expand(&self) -> Vec<SimConfig> {
        let Some(sweep) = &self.sweep else {
            return vec![self.clone()];
        };
        let or = |v: &Vec<Bandwidth>, d: Bandwidth| if v.is_empty() { vec![d] } else { v.clone() };
        let shards = if sweep.shards_per_node.is_empty() {
            vec![self.shards_per_node]
        } else {
            sweep.shards_per_node.clone()
        };
        let mut out = Vec::new();
        for &total_bw in &or(&sweep.total_bw, self.total_bw) {
            for &intra_bw in &or(&sweep.intra_bw, self.intra_bw) {
                for &l in &shards {
                    out.push(SimConfig {
                        shards_per_node: l,
                        total_bw,
                        intra_bw,
                        sweep: None,
                        ..self.clone()
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockMetrics {
    pub id: usize,
    pub kind: &'static str,
    pub producer: usize,
    pub gen_time: f64,
    pub txs: u64,
    pub on_main_chain: bool,
    /// Nodes other than the producer that validated the block.
    pub reached: usize,
    pub mean_btt: f64,
    pub mean_bpt: f64,
    pub p50_delay: f64,
    pub p90_delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub shards_per_node: u32,
    pub total_bw: Bandwidth,
    pub intra_bw: Bandwidth,
    pub duration: f64,
    pub microblock_txs: u64,
    pub txs_generated: u64,
    pub txs_confirmed: u64,
    pub throughput_tps: f64,
    pub keyblocks: usize,
    pub microblocks: usize,
    pub orphaned_microblocks: usize,
    pub p50_propagation: f64,
    pub p90_propagation: f64,
    pub events: u64,
    pub blocks: Vec<BlockMetrics>,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Salts drawn from the configuration seed, one per node.
pub fn node_salts(seed: u64, count: usize) -> Vec<Salt> {
    let mut rng = ChaCha8Rng::seed_from_u64(point_seed(seed, "salts", &[]));
    (0..count).map(|_| Salt::random(&mut rng)).collect()
}

/// Bitcoin-NG: a uniformly chosen leader emits a keyblock at exponential
/// intervals, then microblocks at a fixed interval on its own tip until the
/// next leader is elected.
pub fn run_simulation(cfg: &SimConfig) -> Result<Metrics, SimError> {
    cfg.validate()?;
    let mut topo_rng = ChaCha8Rng::seed_from_u64(point_seed(cfg.seed, "topology", &[]));
    let adjacency = random_peer_graph(cfg.node_count, cfg.peers_per_node, &mut topo_rng);
    let mut engine = Engine::new(cfg.engine_params(), adjacency, node_salts(cfg.seed, cfg.node_count));

    let micro_txs = cfg.microblock_txs();
    let mut key_rng = ChaCha8Rng::seed_from_u64(point_seed(cfg.seed, "keyblocks", &[]));
    let gap = Exp::new(1.0 / cfg.workload.keyblock_interval).expect("positive rate");
    let interval = cfg.workload.microblock_interval;
    let duration = cfg.duration;

    engine.schedule_external(0.0, External::KeyBlock);
    let mut epoch = 0u64;
    engine.run_until(duration, |e, ev| match ev {
        External::KeyBlock => {
            epoch += 1;
            let leader = e.random_node(&mut key_rng);
            let parent = e.best_tip(leader);
            e.produce(leader, parent, BlockKind::Key, 0, None);
            let next = e.now() + gap.sample(&mut key_rng);
            e.schedule_external(next, External::KeyBlock);
            e.schedule_external(e.now() + interval, External::MicroBlock { leader, epoch });
        }
        External::MicroBlock { leader, epoch: at } => {
            if at == epoch {
                let parent = e.best_tip(leader);
                e.produce(leader, parent, BlockKind::Micro, micro_txs, None);
                e.schedule_external(e.now() + interval, External::MicroBlock { leader, epoch: at });
            }
        }
    });
    Ok(collect_metrics(cfg, &engine, micro_txs))
}

fn collect_metrics(cfg: &SimConfig, engine: &Engine, micro_txs: u64) -> Metrics {
    // The tip held by the most nodes; ties go to the higher-ranked block.
    let mut votes = std::collections::BTreeMap::<usize, usize>::new();
    for n in 0..engine.node_count() {
        *votes.entry(engine.best_tip(n)).or_default() += 1;
    }
    let blocks = engine.blocks();
    let tip = votes
        .iter()
        .max_by_key(|(b, c)| (**c, blocks[**b].key_height, blocks[**b].height))
        .map(|(b, _)| *b)
        .unwrap_or(0);
    let mut main = vec![false; blocks.len()];
    for b in engine.chain(tip) {
        main[b] = true;
    }

    let mut all_delays = Vec::new();
    let mut out_blocks = Vec::with_capacity(blocks.len());
    for b in blocks.iter().skip(1) {
        let relayed: Vec<Hop> = engine
            .hops(b.id)
            .iter()
            .enumerate()
            .filter(|(n, _)| *n != b.producer)
            .filter_map(|(_, h)| h.filter(|h| !h.validated.is_nan()))
            .collect();
        let mut delays: Vec<f64> = relayed.iter().map(|h| h.validated - b.gen_time).collect();
        delays.sort_by(f64::total_cmp);
        let mean = |f: fn(&Hop) -> f64| {
            if relayed.is_empty() {
                0.0
            } else {
                relayed.iter().map(f).sum::<f64>() / relayed.len() as f64
            }
        };
        out_blocks.push(BlockMetrics {
            id: b.id,
            kind: match b.kind {
                BlockKind::Key => "key",
                BlockKind::Micro => "micro",
                BlockKind::Plain => "plain",
                BlockKind::Genesis => "genesis",
            },
            producer: b.producer,
            gen_time: b.gen_time,
            txs: b.txs,
            on_main_chain: main[b.id],
            reached: delays.len(),
            mean_btt: mean(|h| h.btt),
            mean_bpt: mean(|h| h.bpt),
            p50_delay: percentile(&delays, 0.5),
            p90_delay: percentile(&delays, 0.9),
        });
        all_delays.extend(delays);
    }
    all_delays.sort_by(f64::total_cmp);

    let micro: Vec<&SimBlock> = blocks.iter().filter(|b| b.kind == BlockKind::Micro).collect();
    let txs_generated = micro.iter().map(|b| b.txs).sum();
    let txs_confirmed = micro.iter().filter(|b| main[b.id]).map(|b| b.txs).sum::<u64>();
    Metrics {
        shards_per_node: cfg.shards_per_node,
        total_bw: cfg.total_bw,
        intra_bw: cfg.intra_bw,
        duration: cfg.duration,
        microblock_txs: micro_txs,
        txs_generated,
        txs_confirmed,
        throughput_tps: txs_confirmed as f64 / cfg.duration,
        keyblocks: blocks.iter().filter(|b| b.kind == BlockKind::Key).count(),
        microblocks: micro.len(),
        orphaned_microblocks: micro.iter().filter(|b| !main[b.id]).count(),
        p50_propagation: percentile(&all_delays, 0.5),
        p90_propagation: percentile(&all_delays, 0.9),
        events: engine.events_processed(),
        blocks: out_blocks,
    }
}

pub const SUMMARY_HEADER: &str = "shards,total_bw_bps,intra_bw_bps,microblock_txs,txs_generated,txs_confirmed,throughput_tps,keyblocks,microblocks,orphaned_microblocks,p50_propagation_s,p90_propagation_s";

pub fn summary_row(m: &Metrics) -> String {
    use crate::analysis::bandwidth_label;
    format!(
        "{},{},{},{},{},{},{:.3},{},{},{},{:.6},{:.6}",
        m.shards_per_node,
        bandwidth_label(m.total_bw),
        bandwidth_label(m.intra_bw),
        m.microblock_txs,
        m.txs_generated,
        m.txs_confirmed,
        m.throughput_tps,
        m.keyblocks,
        m.microblocks,
        m.orphaned_microblocks,
        m.p50_propagation,
        m.p90_propagation
    )
}

pub const BLOCKS_HEADER: &str =
    "block,kind,producer,gen_time_s,txs,on_main_chain,reached,mean_btt_s,mean_bpt_s,p50_delay_s,p90_delay_s";

pub fn blocks_csv(m: &Metrics) -> String {
    let mut out = String::from(BLOCKS_HEADER);
    out.push('\n');
    for b in &m.blocks {
        writeln!(
            out,
            "{},{},{},{:.6},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            b.id,
            b.kind,
            b.producer,
            b.gen_time,
            b.txs,
            b.on_main_chain as u8,
            b.reached,
            b.mean_btt,
            b.mean_bpt,
            b.p50_delay,
            b.p90_delay
        )
        .unwrap();
    }
    out
}

/// Runs every point of the configuration's sweep.
pub fn run_sweep(cfg: &SimConfig) -> Result<Vec<Metrics>, SimError> {
    use rayon::prelude::*;
    cfg.validate()?;
    cfg.expand().par_iter().map(run_simulation).collect()
}

pub fn summary_csv(metrics: &[Metrics]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for m in metrics {
        out.push_str(&summary_row(m));
        out.push('\n');
    }
    out
}
