//! Acceptance criteria, one PASS/FAIL line each.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ostraka_core::analysis::{
    affected_fraction, expected_occupancy, grind_transactions, grinding_attempts, grinding_std_err,
    mc_affected_fraction, mc_miner_alpha, miner_alpha, point_seed, Bandwidth, GrindTarget,
};
use ostraka_core::fuzz::{random_genesis, run_equivalence, CaseParams};
use ostraka_core::node::{run_fork_scenario, ForkScenario};
use ostraka_core::sim::{
    capacity_points, measure_intra_bw, run_sweep, slowdown_under_attack, EngineParams, LatencyModel, SimConfig,
};
use ostraka_core::{Input, Output, Salt, ShardId, Transaction};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn base() -> EngineParams {
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
        seed: 1,
    }
}

fn tier(bw: Bandwidth) -> String {
    if bw.is_infinite() {
        "inf".into()
    } else {
        format!("{}M", bw.as_bits_per_sec() / 1e6)
    }
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Splits `items` across the available cores, keeping input order.
fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let chunk = items.len().div_ceil(workers).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| scope.spawn(|| c.iter().map(&f).collect::<Vec<U>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    })
}

fn equivalence() -> Outcome {
    let params = CaseParams {
        max_txs: 200,
        adversarial_rate: 0.3,
    };
    let r = run_equivalence(10_000, 7, &params, &[1, 2, 3, 4, 8]);
    let summary = format!(
        "{} blocks, {} accepted, {} rejected, {} divergences",
        r.iterations,
        r.accepted,
        r.rejected,
        r.divergences.len()
    );
    if r.iterations == 10_000 && r.divergences.is_empty() && r.accepted > 0 && r.rejected > 0 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn subchain_dos() -> Outcome {
    if affected_fraction(2, 3) != 0.9375 {
        return Err(format!("affected_fraction(2,3) = {}", affected_fraction(2, 3)));
    }
    let points: Vec<(u32, u32)> = (1..=32).flat_map(|n| (1..=5).map(move |k| (n, k))).collect();
    let z = par_map(&points, |&(n, k)| {
        mc_affected_fraction(n, k, 1_000_000, point_seed(1, "affected", &[n as u64, k as u64]))
            .z_score(affected_fraction(n, k))
    });
    let (worst, at) = z
        .iter()
        .zip(&points)
        .map(|(z, p)| (z.abs(), *p))
        .fold((0.0, (0, 0)), |a, b| if b.0 > a.0 { b } else { a });
    let summary = format!("{} points, largest |z| {worst:.2} at n={} k={}", points.len(), at.0, at.1);
    if worst <= 3.0 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn miner_share() -> Outcome {
    let a = miner_alpha(32, 300.0, 0.9).map_err(|e| e.to_string())?;
    if !(0.0070..=0.0082).contains(&a) {
        return Err(format!("miner_alpha(32,300,0.9) = {a}"));
    }
    let points: Vec<(u32, f64)> = [300.0, 600.0].iter().flat_map(|&s| (2..=32).map(move |n| (n, s))).collect();
    let checks = par_map(&points, |&(n, s)| -> Result<(f64, f64), String> {
        let closed = miner_alpha(n, s, 0.9).map_err(|e| e.to_string())?;
        let residual = (expected_occupancy(n, s, closed) / n as f64 - 0.9).abs();
        let mc = mc_miner_alpha(n, s, 0.9, 10_000, point_seed(1, "alpha", &[n as u64, s.to_bits()]))
            .map_err(|e| e.to_string())?;
        Ok((residual, (mc - closed).abs() / closed))
    });
    let mut worst_residual = 0.0f64;
    let mut worst_rel = 0.0f64;
    for c in checks {
        let (res, rel) = c?;
        worst_residual = worst_residual.max(res);
        worst_rel = worst_rel.max(rel);
    }
    let summary = format!(
        "alpha(32,300) = {a:.6}, max residual {worst_residual:.1e}, max Monte-Carlo deviation {:.2}%",
        100.0 * worst_rel
    );
    if worst_residual < 1e-9 && worst_rel <= 0.05 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn capacity_model() -> Outcome {
    let bws = [Bandwidth::mbit(40.0), Bandwidth::mbit(160.0), Bandwidth::INFINITE];
    let points = capacity_points(&base(), &[1, 2, 4, 8, 16, 32], &bws);
    let worst = points.iter().map(|p| p.relative_error()).fold(0.0, f64::max);
    let inf = |l: u32| {
        points
            .iter()
            .find(|p| p.shards == l && p.total_bw.is_infinite())
            .map(|p| p.measured)
            .unwrap()
    };
    let ratio = inf(8) / inf(1);
    let summary = format!(
        "{} points, largest deviation {:.2}%, infinite-bandwidth 8/1 ratio {ratio:.3}",
        points.len(),
        100.0 * worst
    );
    if worst <= 0.10 && (7.2..=8.0).contains(&ratio) {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn intra_bandwidth() -> Outcome {
    let grid: Vec<(Bandwidth, u32)> = [Bandwidth::kbit(256.0), Bandwidth::mbit(1.0), Bandwidth::mbit(5.0)]
        .iter()
        .flat_map(|&bw| [1, 2, 4, 8].map(|l| (bw, l)))
        .collect();
    let points = par_map(&grid, |&(bw, l)| measure_intra_bw(&base(), l, bw, 20_000));
    let at = |kbit: f64, l: u32| {
        points
            .iter()
            .find(|p| p.shards == l && p.intra_bw == Bandwidth::kbit(kbit))
            .map(|p| p.throughput)
            .unwrap()
    };
    let worst = points.iter().map(|p| p.relative_error()).fold(0.0, f64::max);
    let (dip1, dip2) = (at(256.0, 1), at(256.0, 2));
    let (fast1, fast8) = (at(5000.0, 1), at(5000.0, 8));
    let summary = format!(
        "256k: {dip1:.0} -> {dip2:.0} tx/s, 5M: {fast1:.0} -> {fast8:.0} tx/s, largest Bpt deviation {:.2}%",
        100.0 * worst
    );
    if dip2 < dip1 && fast8 > fast1 && worst <= 0.15 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn salt_grinding() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for (l, k) in [(2u32, 1u32), (2, 3), (4, 2)] {
        let mut rng = ChaCha8Rng::seed_from_u64(point_seed(1, "grind", &[l as u64, k as u64]));
        let targets: Vec<GrindTarget> = (0..k)
            .map(|_| GrindTarget {
                salt: Salt::random(&mut rng),
                shard_count: l,
                shard: ShardId(0),
            })
            .collect();
        let inputs = random_genesis(&mut rng, 2).iter().map(|(p, o)| Input::new(*p, o.owner)).collect();
        let template = Transaction::new(inputs, vec![Output::new(1, [0; 32]); 2], 0);
        let txs = 1_000;
        let r = grind_transactions(&template, &targets, txs, 0);
        let mean = r.total_attempts() as f64 / txs as f64;
        let z = (mean - grinding_attempts(l, k)) / grinding_std_err(l, k, txs);
        ok &= z.abs() <= 3.0;
        notes.push(format!("({l},{k}) mean {mean:.2} z {z:.2}"));
    }
    for l in [2u32, 4, 8] {
        let s = slowdown_under_attack(&base(), l, 20_000);
        ok &= s.target_ratio >= 0.9 * l as f64 && s.independent_ratio <= 1.1;
        notes.push(format!(
            "l={l} slowdown {:.2} target {:.3} independent",
            s.target_ratio, s.independent_ratio
        ));
    }
    let summary = notes.join(", ");
    if ok {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn reorg() -> Outcome {
    let seeds: Vec<u64> = (0..1_000).collect();
    let reports = par_map(&seeds, |&seed| run_fork_scenario(&ForkScenario::random(seed, 5)).map_err(|e| format!("seed {seed}: {e}")));
    let mut deepest = 0;
    let mut messages = 0;
    for r in reports {
        let r = r?;
        deepest = deepest.max(r.depth);
        messages += r.rollback_messages + r.rollback_sibling_messages;
    }
    let summary = format!("1000 forks up to depth {deepest}, {messages} messages during rollback");
    if messages == 0 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn run_cli(args: &[&str]) -> Result<(Vec<u8>, Vec<u8>), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ostraka"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} exited with {}", out.status));
    }
    Ok((out.stdout, out.stderr))
}

fn determinism() -> Outcome {
    let dir = std::env::temp_dir().join(format!("ostraka-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let config = repo_root().join("configs/ng.toml");
    let files: Vec<Vec<u8>> = (0..2)
        .map(|i| -> Result<Vec<u8>, String> {
            let out = dir.join(format!("ng-{i}.csv"));
            run_cli(&[
                "simulate",
                "--config",
                config.to_str().unwrap(),
                "--seed",
                "1",
                "--out",
                out.to_str().unwrap(),
            ])?;
            std::fs::read(&out).map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    let fuzz: Vec<Vec<u8>> = (0..2)
        .map(|_| run_cli(&["fuzz-equivalence", "--iterations", "1000", "--seed", "11"]).map(|o| o.0))
        .collect::<Result<_, _>>()?;
    let analysis: Vec<Vec<u8>> = (0..2)
        .map(|_| run_cli(&["analyze-subchain", "--trials", "20000", "--seed", "5"]).map(|o| o.0))
        .collect::<Result<_, _>>()?;
    std::fs::remove_dir_all(&dir).ok();
    let summary = format!(
        "simulate {} bytes, fuzz {} bytes, analyze-subchain {} bytes",
        files[0].len(),
        fuzz[0].len(),
        analysis[0].len()
    );
    if files[0] == files[1] && fuzz[0] == fuzz[1] && analysis[0] == analysis[1] && !files[0].is_empty() {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn ng_trend() -> Outcome {
    let text = std::fs::read_to_string(repo_root().join("configs/ng.toml")).map_err(|e| e.to_string())?;
    let cfg = SimConfig::from_toml(&text).map_err(|e| e.to_string())?;
    if cfg.node_count != 100 || cfg.peers_per_node != 8 {
        return Err("ng.toml is not the 100-node, 8-peer network".into());
    }
    let metrics = run_sweep(&cfg).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut notes = Vec::new();
    let tiers = [Bandwidth::mbit(40.0), Bandwidth::mbit(160.0), Bandwidth::INFINITE];
    for bw in tiers {
        let row: Vec<f64> = [1, 2, 4, 8]
            .iter()
            .map(|&l| {
                metrics
                    .iter()
                    .find(|m| m.shards_per_node == l && m.total_bw == bw)
                    .map(|m| m.throughput_tps)
                    .ok_or_else(|| format!("missing point l={l} bw={}", tier(bw)))
            })
            .collect::<Result<_, _>>()?;
        ok &= row.windows(2).all(|w| w[1] >= w[0]);
        notes.push(format!(
            "{}: {}",
            tier(bw),
            row.iter().map(|t| format!("{t:.0}")).collect::<Vec<_>>().join("/")
        ));
    }
    let top = |l: u32| {
        metrics
            .iter()
            .find(|m| m.shards_per_node == l && m.total_bw.is_infinite())
            .map(|m| m.throughput_tps)
            .unwrap()
    };
    let gain = top(8) / top(1);
    ok &= gain >= 4.0;
    let summary = format!("{} tx/s, top tier gain {gain:.2}x", notes.join(", "));
    if ok {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("algorithm equivalence", equivalence),
        ("subchain DoS fraction", subchain_dos),
        ("miner share", miner_share),
        ("capacity model", capacity_model),
        ("intra-node bandwidth", intra_bandwidth),
        ("salt grinding", salt_grinding),
        ("reorg correctness", reorg),
        ("determinism", determinism),
        ("NG throughput trend", ng_trend),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} ({secs:.1}s)", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
