//! Event loop, bandwidth model and per-node block pipeline.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::analysis::{point_seed, Bandwidth};
use crate::sharding::{Salt, Sharder};
use crate::types::TxHash;

use super::LatencyModel;

/// Static parameters shared by every simulated node.
#[derive(Debug, Clone)]
pub struct EngineParams {
    pub shard_count: u32,
    pub shard_tps: f64,
    pub tx_size: f64,
    pub tx_out_size: f64,
    pub inputs_per_tx: u32,
    pub total_bw: Bandwidth,
    pub intra_bw: Bandwidth,
    pub latency: LatencyModel,
    pub header_bytes: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Genesis,
    Key,
    Micro,
    Plain,
}

#[derive(Debug, Clone)]
pub struct SimBlock {
    pub id: usize,
    pub parent: Option<usize>,
    pub kind: BlockKind,
    pub key_height: u32,
    pub height: u32,
    pub txs: u64,
    /// When set, shard loads follow these hashes instead of being sampled.
    pub hashes: Option<Vec<TxHash>>,
    pub producer: usize,
    pub gen_time: f64,
}

impl SimBlock {
    fn rank(&self) -> (u32, u32) {
        (self.key_height, self.height)
    }
}

/// What one node experienced for one block.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Hop {
    /// Time the block finished arriving.
    pub received: f64,
    /// Transfer duration plus link latency.
    pub btt: f64,
    /// Validation start to finish, including sibling output exchange.
    pub bpt: f64,
    /// NaN until validation completes.
    pub validated: f64,
}

impl Hop {
    pub fn t_hop(&self) -> f64 {
        self.btt + self.bpt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Unknown,
    Requested,
    Downloaded,
    Validated,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Time(f64);

impl Eq for Time {}

impl PartialOrd for Time {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Time {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum External {
    KeyBlock,
    MicroBlock { leader: usize, epoch: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Ev {
    Inventory { to: usize, from: usize, block: usize },
    GetData { to: usize, from: usize, block: usize },
    TransferDone { transfer: usize, version: u64 },
    Arrive { node: usize, from: usize, block: usize, started: Time },
    ValidationDone { node: usize, block: usize },
    External(External),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Scheduled {
    at: Time,
    seq: u64,
    ev: Ev,
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so that BinaryHeap pops the earliest event, then the oldest.
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        other.at.cmp(&self.at).then_with(|| other.seq.cmp(&self.seq))
    }
}

struct Port {
    capacity: f64,
    active: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
enum Purpose {
    Block { from: usize, to: usize, block: usize },
    Exchange { node: usize, shard: usize },
}

struct Transfer {
    up: usize,
    down: usize,
    remaining: f64,
    rate: f64,
    last: f64,
    version: u64,
    started: f64,
    purpose: Purpose,
    done: bool,
}

struct Job {
    block: usize,
    started: f64,
    loads: Vec<u64>,
    pending: Vec<u32>,
    finish: Vec<f64>,
}

struct SimNode {
    sharder: Sharder,
    up: usize,
    down: usize,
    intra: Vec<(usize, usize)>,
    peers: Vec<usize>,
    status: Vec<Status>,
    source: Vec<Option<usize>>,
    ready: VecDeque<usize>,
    job: Option<Job>,
    best: usize,
}

pub struct Engine {
    p: EngineParams,
    now: f64,
    seq: u64,
    queue: BinaryHeap<Scheduled>,
    ports: Vec<Port>,
    transfers: Vec<Transfer>,
    nodes: Vec<SimNode>,
    blocks: Vec<SimBlock>,
    hops: Vec<Vec<Option<Hop>>>,
    latency: BTreeMap<(usize, usize), f64>,
    events: u64,
}

impl Engine {
    /// Builds nodes with independent random salts and the given adjacency.
    pub fn new(p: EngineParams, adjacency: Vec<Vec<usize>>, salts: Vec<Salt>) -> Self {
        assert_eq!(adjacency.len(), salts.len());
        let mut ports = Vec::new();
        let mut port = |capacity: Bandwidth| {
            ports.push(Port {
                capacity: capacity.as_bytes_per_sec(),
                active: Vec::new(),
            });
            ports.len() - 1
        };
        let mut nodes = Vec::with_capacity(adjacency.len());
        for (peers, salt) in adjacency.into_iter().zip(salts) {
            let up = port(p.total_bw);
            let down = port(p.total_bw);
            let intra = (0..p.shard_count).map(|_| (port(p.intra_bw), port(p.intra_bw))).collect();
            nodes.push(SimNode {
                sharder: Sharder::new(salt, p.shard_count).expect("at least one shard"),
                up,
                down,
                intra,
                peers,
                status: vec![Status::Validated],
                source: vec![None],
                ready: VecDeque::new(),
                job: None,
                best: 0,
            });
        }
        let mut latency = BTreeMap::new();
        for (a, n) in nodes.iter().enumerate() {
            for &b in &n.peers {
                let key = (a.min(b), a.max(b));
                latency
                    .entry(key)
                    .or_insert_with(|| p.latency.sample(point_seed(p.seed, "latency", &[key.0 as u64, key.1 as u64])));
            }
        }
        let node_count = nodes.len();
        Self {
            p,
            now: 0.0,
            seq: 0,
            queue: BinaryHeap::new(),
            ports,
            transfers: Vec::new(),
            nodes,
            blocks: vec![SimBlock {
                id: 0,
                parent: None,
                kind: BlockKind::Genesis,
                key_height: 0,
                height: 0,
                txs: 0,
                hashes: None,
                producer: 0,
                gen_time: 0.0,
            }],
            hops: vec![vec![None; node_count]],
            latency,
            events: 0,
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn params(&self) -> &EngineParams {
        &self.p
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn blocks(&self) -> &[SimBlock] {
        &self.blocks
    }

    pub fn hop(&self, block: usize, node: usize) -> Option<Hop> {
        self.hops[block][node]
    }

    pub fn hops(&self, block: usize) -> &[Option<Hop>] {
        &self.hops[block]
    }

    pub fn best_tip(&self, node: usize) -> usize {
        self.nodes[node].best
    }

    pub fn events_processed(&self) -> u64 {
        self.events
    }

    pub fn salt(&self, node: usize) -> Salt {
        self.nodes[node].sharder.salt
    }

    fn link_latency(&self, a: usize, b: usize) -> f64 {
        self.latency.get(&(a.min(b), a.max(b))).copied().unwrap_or(0.0)
    }

    fn schedule(&mut self, at: f64, ev: Ev) {
        self.seq += 1;
        self.queue.push(Scheduled {
            at: Time(at),
            seq: self.seq,
            ev,
        });
    }

    pub fn schedule_external(&mut self, at: f64, ev: External) {
        self.schedule(at, Ev::External(ev));
    }

    pub fn block_bytes(&self, block: usize) -> f64 {
        self.p.header_bytes + self.blocks[block].txs as f64 * self.p.tx_size
    }

    /// Creates a block at `producer`, which holds it as validated and
    /// announces it to its peers.
    pub fn produce(
        &mut self,
        producer: usize,
        parent: usize,
        kind: BlockKind,
        txs: u64,
        hashes: Option<Vec<TxHash>>,
    ) -> usize {
        let id = self.blocks.len();
        let parent_block = &self.blocks[parent];
        let (key_height, height) = match kind {
            BlockKind::Key => (parent_block.key_height + 1, parent_block.height + 1),
            _ => (parent_block.key_height, parent_block.height + 1),
        };
        let txs = hashes.as_ref().map_or(txs, |h| h.len() as u64);
        self.blocks.push(SimBlock {
            id,
            parent: Some(parent),
            kind,
            key_height,
            height,
            txs,
            hashes,
            producer,
            gen_time: self.now,
        });
        self.hops.push(vec![None; self.nodes.len()]);
        for n in &mut self.nodes {
            n.status.push(Status::Unknown);
            n.source.push(None);
        }
        self.nodes[producer].status[id] = Status::Validated;
        self.hops[id][producer] = Some(Hop {
            received: self.now,
            btt: 0.0,
            bpt: 0.0,
            validated: self.now,
        });
        self.update_best(producer, id);
        self.announce(producer, id);
        id
    }

    fn update_best(&mut self, node: usize, block: usize) {
        let best = self.nodes[node].best;
        if self.blocks[block].rank() > self.blocks[best].rank() {
            self.nodes[node].best = block;
        }
    }

    fn announce(&mut self, node: usize, block: usize) {
        let source = self.nodes[node].source[block];
        let peers = self.nodes[node].peers.clone();
        for p in peers {
            if Some(p) != source {
                let at = self.now + self.link_latency(node, p);
                self.schedule(at, Ev::Inventory { to: p, from: node, block });
            }
        }
    }

    /// Processes events up to and including time `until`; returns `false`
    /// once the queue is empty.
    pub fn run_until<F: FnMut(&mut Engine, External)>(&mut self, until: f64, mut external: F) -> bool {
        while let Some(top) = self.queue.peek() {
            if top.at.0 > until {
                self.now = until;
                return true;
            }
            let Scheduled { at, ev, .. } = self.queue.pop().unwrap();
            self.now = at.0;
            self.events += 1;
            match ev {
                Ev::External(e) => external(self, e),
                other => self.dispatch(other),
            }
        }
        false
    }

    /// Runs until no events remain.
    pub fn run_to_idle(&mut self) {
        self.run_until(f64::INFINITY, |_, _| {});
    }

    fn dispatch(&mut self, ev: Ev) {
        match ev {
            Ev::Inventory { to, from, block } => {
                if self.nodes[to].status[block] == Status::Unknown {
                    self.nodes[to].status[block] = Status::Requested;
                    let at = self.now + self.link_latency(to, from);
                    self.schedule(at, Ev::GetData { to: from, from: to, block });
                }
            }
            Ev::GetData { to, from, block } => {
                let bytes = self.block_bytes(block);
                let (up, down) = (self.nodes[to].up, self.nodes[from].down);
                self.start_transfer(up, down, bytes, Purpose::Block { from: to, to: from, block });
            }
            Ev::TransferDone { transfer, version } => {
                let t = &self.transfers[transfer];
                if t.done || t.version != version {
                    return;
                }
                self.finish_transfer(transfer);
            }
            Ev::Arrive {
                node,
                from,
                block,
                started,
            } => {
                let n = &mut self.nodes[node];
                n.status[block] = Status::Downloaded;
                n.source[block] = Some(from);
                n.ready.push_back(block);
                self.hops[block][node] = Some(Hop {
                    received: self.now,
                    btt: self.now - started.0,
                    bpt: 0.0,
                    validated: f64::NAN,
                });
                self.try_validate(node);
            }
            Ev::ValidationDone { node, block } => {
                let job = self.nodes[node].job.take().expect("validation in progress");
                debug_assert_eq!(job.block, block);
                self.nodes[node].status[block] = Status::Validated;
                if let Some(h) = self.hops[block][node].as_mut() {
                    h.bpt = self.now - job.started;
                    h.validated = self.now;
                }
                self.update_best(node, block);
                self.announce(node, block);
                self.try_validate(node);
            }
            Ev::External(_) => unreachable!("handled by the caller"),
        }
    }

    fn rate(&self, t: &Transfer) -> f64 {
        let up = &self.ports[t.up];
        let down = &self.ports[t.down];
        (up.capacity / up.active.len() as f64).min(down.capacity / down.active.len() as f64)
    }

    /// Brings the progress of every transfer on `port` up to now and
    /// reschedules its completion under the current sharing.
    fn reshare(&mut self, port: usize) {
        let ids = self.ports[port].active.clone();
        for id in ids {
            let rate = self.rate(&self.transfers[id]);
            let now = self.now;
            let t = &mut self.transfers[id];
            if t.rate.is_finite() {
                t.remaining = (t.remaining - t.rate * (now - t.last)).max(0.0);
            } else {
                t.remaining = 0.0;
            }
            t.last = now;
            t.rate = rate;
            t.version += 1;
            let eta = if rate.is_infinite() { 0.0 } else { t.remaining / rate };
            let (transfer, version) = (id, t.version);
            self.schedule(now + eta, Ev::TransferDone { transfer, version });
        }
    }

    fn start_transfer(&mut self, up: usize, down: usize, bytes: f64, purpose: Purpose) {
        let id = self.transfers.len();
        self.transfers.push(Transfer {
            up,
            down,
            remaining: bytes,
            rate: 0.0,
            last: self.now,
            version: 0,
            started: self.now,
            purpose,
            done: false,
        });
        self.ports[up].active.push(id);
        self.ports[down].active.push(id);
        self.reshare(up);
        self.reshare(down);
    }

    fn finish_transfer(&mut self, id: usize) {
        let (up, down, purpose, started) = {
            let t = &mut self.transfers[id];
            t.done = true;
            (t.up, t.down, t.purpose, t.started)
        };
        self.ports[up].active.retain(|&x| x != id);
        self.ports[down].active.retain(|&x| x != id);
        self.reshare(up);
        self.reshare(down);
        match purpose {
            Purpose::Block { from, to, block } => {
                let at = self.now + self.link_latency(from, to);
                self.schedule(at, Ev::Arrive {
                    node: to,
                    from,
                    block,
                    started: Time(started),
                });
            }
            Purpose::Exchange { node, shard } => {
                let tps = self.p.shard_tps;
                let now = self.now;
                let job = self.nodes[node].job.as_mut().expect("exchange belongs to a job");
                job.pending[shard] -= 1;
                if job.pending[shard] == 0 {
                    job.finish[shard] = now + job.loads[shard] as f64 / tps;
                    self.maybe_complete(node);
                }
            }
        }
    }

    fn maybe_complete(&mut self, node: usize) {
        let job = self.nodes[node].job.as_ref().expect("job present");
        if job.pending.iter().all(|&p| p == 0) {
            let end = job.finish.iter().copied().fold(job.started, f64::max);
            let block = job.block;
            self.schedule(end, Ev::ValidationDone { node, block });
        }
    }

    fn try_validate(&mut self, node: usize) {
        if self.nodes[node].job.is_some() {
            return;
        }
        let n = &self.nodes[node];
        let pos = n.ready.iter().position(|&b| match self.blocks[b].parent {
            Some(parent) => n.status[parent] == Status::Validated,
            None => true,
        });
        let Some(pos) = pos else { return };
        let block = self.nodes[node].ready.remove(pos).unwrap();
        self.start_job(node, block);
    }

    /// Transactions of `block` handled by each shard of `node`.
    pub fn shard_loads(&self, node: usize, block: usize) -> Vec<u64> {
        let l = self.p.shard_count as usize;
        let b = &self.blocks[block];
        let mut loads = vec![0u64; l];
        match &b.hashes {
            Some(hashes) => {
                let sharder = &self.nodes[node].sharder;
                for h in hashes {
                    loads[sharder.shard_of(h).index()] += 1;
                }
            }
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(point_seed(self.p.seed, "load", &[node as u64, block as u64]));
                multinomial_uniform(&mut rng, b.txs, &mut loads);
            }
        }
        loads
    }

    fn start_job(&mut self, node: usize, block: usize) {
        let l = self.p.shard_count as usize;
        let loads = self.shard_loads(node, block);
        let tps = self.p.shard_tps;
        let exchange = l > 1 && !self.p.intra_bw.is_infinite() && self.blocks[block].hashes.is_none();
        let mut job = Job {
            block,
            started: self.now,
            pending: vec![0; l],
            finish: loads.iter().map(|&x| self.now + x as f64 / tps).collect(),
            loads,
        };
        let mut transfers = Vec::new();
        if exchange {
            // Each referenced input is owned by a uniformly chosen shard; the
            // remote ones are split evenly at random across the siblings.
            let mut rng = ChaCha8Rng::seed_from_u64(point_seed(self.p.seed, "exchange", &[node as u64, block as u64]));
            let remote_p = (l as f64 - 1.0) / l as f64;
            let per_input = self.p.tx_out_size / self.p.inputs_per_tx as f64;
            for i in 0..l {
                let trials = job.loads[i] * self.p.inputs_per_tx as u64;
                let remote = Binomial::new(trials, remote_p).expect("valid binomial").sample(&mut rng);
                let mut from_sibling = vec![0u64; l - 1];
                multinomial_uniform(&mut rng, remote, &mut from_sibling);
                for (k, &count) in from_sibling.iter().enumerate() {
                    if count == 0 {
                        continue;
                    }
                    let j = if k >= i { k + 1 } else { k };
                    job.pending[i] += 1;
                    transfers.push((j, i, count as f64 * per_input));
                }
            }
        }
        self.nodes[node].job = Some(job);
        if transfers.is_empty() {
            self.maybe_complete(node);
            return;
        }
        for (j, i, bytes) in transfers {
            let up = self.nodes[node].intra[j].0;
            let down = self.nodes[node].intra[i].1;
            self.start_transfer(up, down, bytes, Purpose::Exchange { node, shard: i });
        }
    }

    /// Chain from genesis to `tip`, genesis first.
    pub fn chain(&self, tip: usize) -> Vec<usize> {
        let mut out = vec![tip];
        let mut cur = tip;
        while let Some(p) = self.blocks[cur].parent {
            out.push(p);
            cur = p;
        }
        out.reverse();
        out
    }

    pub fn random_node<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(0..self.nodes.len())
    }
}

/// Splits `total` items uniformly at random over `bins` by sequential
/// binomial draws.
pub fn multinomial_uniform<R: Rng + ?Sized>(rng: &mut R, total: u64, bins: &mut [u64]) {
    let mut left = total;
    let k = bins.len();
    for (i, slot) in bins.iter_mut().enumerate() {
        let remaining_bins = (k - i) as f64;
        *slot = if i + 1 == k || left == 0 {
            left
        } else {
            Binomial::new(left, 1.0 / remaining_bins).expect("valid binomial").sample(rng)
        };
        left -= *slot;
    }
}
