use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use ostraka_core::analysis::{
    affected_fraction_csv, grind_transactions, grinding_attempts, grinding_std_err, miner_alpha_csv, parse_bandwidth,
    point_seed, Bandwidth, GrindTarget,
};
use ostraka_core::fuzz::{random_genesis, run_equivalence, CaseParams, Wallet};
use ostraka_core::node::{run_node, NodeConfig, NodeHost, RunOptions};
use ostraka_core::sim::{
    blocks_csv, capacity_points, capacity_points_csv, intra_bw_points_csv, measure_intra_bw, run_sweep, summary_csv,
    EngineParams, LatencyModel, SimConfig,
};
use ostraka_core::wire::Topology;
use ostraka_core::{Block, BlockHash, Input, Output, Salt, ShardId, Transaction};

/// A whole list in one argument, such as `1..32` or `1,2,4`.
type List = Vec<u32>;

#[derive(Parser)]
#[command(name = "ostraka", version, about = "Sharded node analysis, simulation and fuzzing tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fraction of subchains touched by a transaction, and the miner share needed per subchain.
    AnalyzeSubchain {
        #[arg(long, default_value = "1..32", value_parser = parse_list)]
        n: List,
        #[arg(long, default_value = "1..5", value_parser = parse_list)]
        k: List,
        /// Subchain sizes for the miner-share table.
        #[arg(long = "s", default_value = "300,600", value_delimiter = ',')]
        s: Vec<f64>,
        /// Target probability that every subchain is covered.
        #[arg(long, default_value_t = 0.9)]
        r: f64,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        alpha_out: Option<PathBuf>,
    },
    /// Simulated single-hop capacity against the closed form.
    Capacity {
        #[arg(long, default_value = "1,2,4,8,16,32", value_parser = parse_list)]
        shards: List,
        #[arg(long, default_value = "40M,160M,inf", value_delimiter = ',', value_parser = parse_bandwidth)]
        bw: Vec<Bandwidth>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Block processing time under restricted shard-to-shard bandwidth.
    IntraBw {
        #[arg(long, default_value = "1,2,4,8", value_parser = parse_list)]
        shards: List,
        #[arg(long, default_value = "256k,1M,5M", value_delimiter = ',', value_parser = parse_bandwidth)]
        intra_bw: Vec<Bandwidth>,
        #[arg(long, default_value_t = 20_000)]
        txs: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs a network simulation, or every point of its sweep.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-block rows of a single run.
        #[arg(long)]
        blocks_out: Option<PathBuf>,
    },
    /// Checks that all validation algorithms agree on random blocks.
    FuzzEquivalence {
        #[arg(long, default_value_t = 10_000)]
        iterations: u64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        max_txs: usize,
        #[arg(long, default_value = "1,2,3,4,8", value_parser = parse_list)]
        shards: List,
        #[arg(long, default_value_t = 0.3)]
        adversarial_rate: f64,
    },
    /// Finds transactions that land on one shard at every listed salt.
    Grind {
        /// One 64-hex-character salt per line.
        #[arg(long)]
        salts: PathBuf,
        #[arg(long)]
        shards: u32,
        #[arg(long, default_value_t = 1_000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        target_shard: u32,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs one node over TCP.
    RunNode {
        #[arg(long)]
        config: PathBuf,
    },
}

enum Failure {
    Usage(anyhow::Error),
    Check(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Check(e)
    }
}

fn usage<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Usage(e.into())
}

/// Accepts `a..b` (inclusive) or a comma-separated list.
fn parse_list(text: &str) -> Result<Vec<u32>, String> {
    if let Some((a, b)) = text.split_once("..") {
        let a: u32 = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
        let b: u32 = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
        if a > b {
            return Err(format!("empty range {text}"));
        }
        return Ok((a..=b).collect());
    }
    text.split(',')
        .map(|t| t.trim().parse::<u32>().map_err(|e| format!("{t}: {e}")))
        .collect()
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn engine_base(seed: u64) -> EngineParams {
    EngineParams {
        shard_count: 1,
        shard_tps: 1700.0,
        tx_size: 250.0,
        tx_out_size: 112.0,
        inputs_per_tx: 2,
        total_bw: Bandwidth::INFINITE,
        intra_bw: Bandwidth::INFINITE,
        latency: LatencyModel::Fixed { seconds: 0.0 },
        header_bytes: 200.0,
        seed,
    }
}

fn read_salts(path: &Path) -> Result<Vec<Salt>, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(usage)?;
    let salts = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| Salt::from_hex(l).with_context(|| format!("line {}: bad salt", i + 1)))
        .collect::<anyhow::Result<Vec<_>>>()
        .map_err(usage)?;
    if salts.is_empty() {
        return Err(usage(anyhow::anyhow!("no salts in {}", path.display())));
    }
    Ok(salts)
}

#[derive(Debug, Deserialize, PartialEq, Eq, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum Role {
    /// Builds a chain on the shared genesis and announces it.
    Source,
    Validator,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeFile {
    role: Role,
    #[serde(default = "default_duration")]
    duration_secs: f64,
    target_height: Option<usize>,
    #[serde(default = "default_tick")]
    tick_ms: u64,
    #[serde(default)]
    genesis_seed: u64,
    #[serde(default = "default_genesis_outputs")]
    genesis_outputs: usize,
    #[serde(default)]
    blocks: usize,
    #[serde(default = "default_block_txs")]
    txs_per_block: usize,
    node: NodeConfig,
    topology: Topology,
}

fn default_duration() -> f64 {
    10.0
}
fn default_tick() -> u64 {
    100
}
fn default_genesis_outputs() -> usize {
    64
}
fn default_block_txs() -> usize {
    20
}

fn source_chain(file: &NodeFile, wallet: &mut Wallet) -> anyhow::Result<Vec<Block>> {
    let mut rng = ChaCha8Rng::seed_from_u64(point_seed(file.genesis_seed, "source", &[]));
    let mut prev = BlockHash::ZERO;
    let mut out = Vec::with_capacity(file.blocks);
    for height in 1..=file.blocks as u64 {
        let txs = wallet.block(&mut rng, file.txs_per_block.max(1));
        let block = Block::assemble(prev, height, file.node.stamp_target, txs)?;
        prev = block.hash();
        out.push(block);
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::AnalyzeSubchain {
            n,
            k,
            s,
            r,
            trials,
            seed,
            out,
            alpha_out,
        } => {
            if n.contains(&0) {
                return Err(usage(anyhow::anyhow!("--n values must be positive")));
            }
            emit(out.as_deref(), &affected_fraction_csv(&n, &k, trials, seed))?;
            if let Some(path) = alpha_out {
                let csv = miner_alpha_csv(&n, &s, r, trials, seed).map_err(usage)?;
                emit(Some(&path), &csv)?;
            }
            eprintln!("analyze-subchain: {} rows of n, {} values of k", n.len(), k.len());
        }
        Command::Capacity { shards, bw, seed, out } => {
            if shards.contains(&0) {
                return Err(usage(anyhow::anyhow!("--shards values must be positive")));
            }
            let points = capacity_points(&engine_base(seed), &shards, &bw);
            emit(out.as_deref(), &capacity_points_csv(&points))?;
            let worst = points.iter().map(|p| p.relative_error()).fold(0.0, f64::max);
            eprintln!("capacity: {} points, largest deviation from the model {:.2}%", points.len(), 100.0 * worst);
        }
        Command::IntraBw {
            shards,
            intra_bw,
            txs,
            seed,
            out,
        } => {
            if shards.contains(&0) || txs == 0 {
                return Err(usage(anyhow::anyhow!("--shards and --txs must be positive")));
            }
            let base = engine_base(seed);
            let points: Vec<_> = intra_bw
                .iter()
                .flat_map(|&bw| shards.iter().map(move |&l| (bw, l)))
                .map(|(bw, l)| measure_intra_bw(&base, l, bw, txs))
                .collect();
            emit(out.as_deref(), &intra_bw_points_csv(&points))?;
            eprintln!("intra-bw: {} points", points.len());
        }
        Command::Simulate {
            config,
            seed,
            out,
            blocks_out,
        } => {
            let text = fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))
                .map_err(usage)?;
            let mut cfg = SimConfig::from_toml(&text).map_err(usage)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let metrics = run_sweep(&cfg).map_err(usage)?;
            emit(out.as_deref(), &summary_csv(&metrics))?;
            if let Some(path) = blocks_out {
                if metrics.len() != 1 {
                    return Err(usage(anyhow::anyhow!("--blocks-out needs a configuration without a sweep")));
                }
                emit(Some(&path), &blocks_csv(&metrics[0]))?;
            }
            let best = metrics.iter().map(|m| m.throughput_tps).fold(0.0, f64::max);
            eprintln!("simulate: {} runs, peak throughput {best:.1} tx/s", metrics.len());
        }
        Command::FuzzEquivalence {
            iterations,
            seed,
            max_txs,
            shards,
            adversarial_rate,
        } => {
            if shards.contains(&0) || max_txs == 0 || !(0.0..=1.0).contains(&adversarial_rate) {
                return Err(usage(anyhow::anyhow!("invalid fuzz parameters")));
            }
            let params = CaseParams {
                max_txs,
                adversarial_rate,
            };
            let report = run_equivalence(iterations, seed, &params, &shards);
            println!(
                "{} iterations, {} accepted, {} rejected, {} divergences",
                report.iterations,
                report.accepted,
                report.rejected,
                report.divergences.len()
            );
            for d in report.divergences.iter().take(10) {
                eprintln!("iteration {} with {} shards: {}", d.iteration, d.shard_count, d.detail);
            }
            if !report.divergences.is_empty() {
                return Err(anyhow::anyhow!("validation algorithms disagree").into());
            }
        }
        Command::Grind {
            salts,
            shards,
            count,
            target_shard,
            seed,
            out,
        } => {
            if shards == 0 || target_shard >= shards || count == 0 {
                return Err(usage(anyhow::anyhow!("need count > 0 and target shard below --shards")));
            }
            let salts = read_salts(&salts)?;
            let targets: Vec<GrindTarget> = salts
                .iter()
                .map(|&salt| GrindTarget {
                    salt,
                    shard_count: shards,
                    shard: ShardId(target_shard),
                })
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let wallet_seed = random_genesis(&mut rng, 2);
            let inputs = wallet_seed.iter().map(|(p, o)| Input::new(*p, o.owner)).collect();
            let template = Transaction::new(inputs, vec![Output::new(1, [0; 32]); 2], 0);
            let result = grind_transactions(&template, &targets, count, 0);
            let mut csv = String::from("nonce,tx_hash,attempts\n");
            for (tx, attempts) in result.txs.iter().zip(&result.attempts) {
                csv.push_str(&format!("{},{},{attempts}\n", u64::from_le_bytes(tx.nonce), tx.hash().to_hex()));
            }
            emit(out.as_deref(), &csv)?;
            let k = salts.len() as u32;
            let mean = result.total_attempts() as f64 / count as f64;
            eprintln!(
                "grind: mean {mean:.2} attempts per tx, expected {:.2} +/- {:.2}",
                grinding_attempts(shards, k),
                grinding_std_err(shards, k, count)
            );
        }
        Command::RunNode { config } => {
            let text = fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))
                .map_err(usage)?;
            let file: NodeFile = toml::from_str(&text).context("parsing node config").map_err(usage)?;
            let mut rng = ChaCha8Rng::seed_from_u64(file.genesis_seed);
            let genesis = random_genesis(&mut rng, file.genesis_outputs);
            let blocks = if file.role == Role::Source {
                source_chain(&file, &mut Wallet::from_utxo(&genesis))?
            } else {
                Vec::new()
            };
            let host = NodeHost::new(file.node.clone(), &genesis);
            let opts = RunOptions {
                duration: Duration::from_secs_f64(file.duration_secs),
                target_height: file.target_height,
                tick: Duration::from_millis(file.tick_ms.max(1)),
                blocks,
            };
            let report = run_node(host, file.topology, opts).context("node transport")?;
            let chain = report.host.coordinator.main_chain();
            println!(
                "node {}: height {}, tip {}",
                report.host.node_id(),
                chain.len(),
                report.host.coordinator.tip().to_hex()
            );
            if let Some(h) = file.target_height {
                if chain.len() < h {
                    return Err(anyhow::anyhow!("reached height {} of {h}", chain.len()).into());
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Check(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
